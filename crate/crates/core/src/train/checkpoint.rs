use std::path::Path;

use crate::autodiff::{pgrw, NdArray, ParamStore, Real};
use crate::models::ModelSpec;

use super::{TrainError, Velocity};

pub const CHECKPOINT_FILE: &str = "checkpoint.pgrw";
pub const MODEL_CONFIG_FILE: &str = "model.cfg";
/// Name prefix of momentum buffers inside the weight file.
pub const VELOCITY_PREFIX: &str = "optim.velocity.";

/// Model plan, weights with running statistics, and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub spec: ModelSpec,
    pub params: ParamStore<T>,
    pub velocity: Velocity<T>,
}

/// Write `model.cfg` and `checkpoint.pgrw` into `dir`.
pub fn save_checkpoint<T: Real>(
    dir: &Path,
    spec: &ModelSpec,
    params: &ParamStore<T>,
    velocity: &Velocity<T>,
) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
    let cfg = dir.join(MODEL_CONFIG_FILE);
    std::fs::write(&cfg, spec.to_config()).map_err(|e| TrainError::io(&cfg, e))?;
    let mut entries = params.to_named();
    entries.extend(
        velocity
            .iter()
            .map(|(k, v)| (format!("{VELOCITY_PREFIX}{k}"), v.clone())),
    );
    pgrw::write_file(&dir.join(CHECKPOINT_FILE), &entries)?;
    Ok(())
}

/// Read a checkpoint directory, converting the stored weights to `T`.
pub fn load_checkpoint<T: Real>(dir: &Path) -> Result<Checkpoint<T>, TrainError> {
    let cfg = dir.join(MODEL_CONFIG_FILE);
    let text = std::fs::read_to_string(&cfg).map_err(|e| TrainError::io(&cfg, e))?;
    let spec = ModelSpec::from_config(&text).map_err(|m| TrainError::Config(format!("{}: {m}", cfg.display())))?;
    let entries: Vec<(String, NdArray<T>)> = pgrw::read_file(&dir.join(CHECKPOINT_FILE))?;
    let (vel, weights): (Vec<_>, Vec<_>) = entries.into_iter().partition(|(n, _)| n.starts_with(VELOCITY_PREFIX));
    let mut params: ParamStore<T> = spec.init_params(0)?;
    params.load_named(&weights)?;
    let mut velocity = Velocity::new();
    for (name, v) in vel {
        let name = name[VELOCITY_PREFIX.len()..].to_string();
        let shape_ok = params.is_trainable(&name) && params.get(&name)?.shape() == v.shape();
        if !shape_ok {
            return Err(TrainError::Config(format!("velocity entry `{name}` does not match a trainable parameter")));
        }
        velocity.insert(name, v);
    }
    Ok(Checkpoint { spec, params, velocity })
}
