use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::autodiff::{NdArray, ParamStore, Real};

use super::TrainError;

/// Momentum buffers keyed by parameter name.
pub type Velocity<T> = BTreeMap<String, NdArray<T>>;

/// `v ← μ·v + g; p ← p − lr·v` for every trainable parameter. Parameters
/// without a gradient are treated as having a zero gradient. Nothing is
/// modified when any gradient is non-finite.
pub fn sgd_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &BTreeMap<String, NdArray<T>>,
    lr: f64,
    momentum: f64,
    velocity: &mut Velocity<T>,
) -> Result<(), TrainError> {
    for (name, g) in grads {
        if !params.is_trainable(name) {
            return Err(TrainError::Config(format!("gradient for non-trainable `{name}`")));
        }
        if g.shape() != params.get(name)?.shape() {
            return Err(TrainError::Config(format!(
                "gradient for `{name}` has shape {:?}, parameter has {:?}",
                g.shape(),
                params.get(name)?.shape()
            )));
        }
        if let Some(pos) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteGradient {
                param: name.clone(),
                index: pos,
            });
        }
    }
    let (lr, mu) = (T::from_f64(lr), T::from_f64(momentum));
    let names: Vec<String> = params.trainable_names().map(String::from).collect();
    for name in names {
        let p = params.get_mut(&name)?;
        let v = velocity
            .entry(name.clone())
            .or_insert_with(|| NdArray::zeros(p.shape()));
        if v.shape() != p.shape() {
            return Err(TrainError::Config(format!("velocity for `{name}` does not match its parameter")));
        }
        match grads.get(&name) {
            Some(g) => {
                for ((vi, &gi), pi) in v.data_mut().iter_mut().zip(g.data()).zip(p.data_mut()) {
                    *vi = mu * *vi + gi;
                    *pi = *pi - lr * *vi;
                }
            }
            None => {
                for (vi, pi) in v.data_mut().iter_mut().zip(p.data_mut()) {
                    *vi = mu * *vi;
                    *pi = *pi - lr * *vi;
                }
            }
        }
    }
    Ok(())
}

/// `lr_min + ½(lr_max − lr_min)(1 + cos(π·t/T))`; `lr_max` when `T == 0`.
pub fn cosine_lr(t: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr_max;
    }
    let frac = t.min(total) as f64 / total as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * frac).cos())
}
