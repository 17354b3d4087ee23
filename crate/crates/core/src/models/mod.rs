//! The three task networks built from one PRE block and a stack of FLN
//! blocks, plus parameter bookkeeping.
//!
//! Backbone: PRE → FLN × L → concat of every stage's output → per-point
//! linear to `aggregate_width` → global pooling over points. The classifier
//! maps the pooled vector through an FC stack; the segmentation heads
//! broadcast it back to every point next to the concatenated skip features
//! (and, for parts, a category embedding).

mod spec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdError, NdArray, ParamStore, Real, Var};
use crate::blocks::{fln_forward, init_fln, init_linear, init_pre, pre_forward, FlnConfig, Forward, NetError, PreConfig, LEAKY_SLOPE};
use crate::data::Task;

pub use spec::{GlobalPool, ModelSpec};

impl ModelSpec {
    fn pre_config(&self) -> PreConfig {
        PreConfig {
            in_channels: self.in_channels,
            hidden: self.pre_hidden,
            out: self.pre_out,
            k: self.k,
        }
    }

    fn fln_configs(&self) -> Vec<FlnConfig> {
        let mut cin = self.pre_out;
        self.fln_plan
            .iter()
            .map(|&out| {
                let c = FlnConfig {
                    in_channels: cin,
                    out_channels: out,
                    k: self.k,
                };
                cin = out;
                c
            })
            .collect()
    }

    /// Fresh parameters drawn from `seed`.
    pub fn init_params<T: Real>(&self, seed: u64) -> Result<ParamStore<T>, NetError> {
        self.validate().map_err(NetError::Config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        init_pre(&mut s, "pre", &self.pre_config(), &mut rng)?;
        for (i, cfg) in self.fln_configs().iter().enumerate() {
            init_fln(&mut s, &format!("fln{}", i + 1), cfg, &mut rng)?;
        }
        init_linear(&mut s, "aggregate", self.concat_width(), self.aggregate_width, false, &mut rng)?;
        s.insert_batch_norm("aggregate.bn", self.aggregate_width)?;
        let mut cin = match self.task {
            Task::Classification => self.global_width(),
            Task::PartSeg => {
                init_linear(&mut s, "label", self.categories, self.label_embed_width, false, &mut rng)?;
                s.insert_batch_norm("label.bn", self.label_embed_width)?;
                self.global_width() + self.label_embed_width + self.concat_width()
            }
            Task::SceneSeg => self.global_width() + self.concat_width(),
        };
        for (i, &h) in self.head.iter().enumerate() {
            init_linear(&mut s, &format!("head{}", i + 1), cin, h, false, &mut rng)?;
            s.insert_batch_norm(&format!("head{}.bn", i + 1), h)?;
            cin = h;
        }
        init_linear(&mut s, "out", cin, self.classes, true, &mut rng)?;
        Ok(s)
    }

    /// Check that `params` holds exactly this plan's entries and shapes.
    pub fn check_params<T: Real>(&self, params: &ParamStore<T>) -> Result<(), NetError> {
        let template: ParamStore<T> = self.init_params(0)?;
        let mut probe = template.clone();
        probe.load_named(&params.to_named())?;
        Ok(())
    }
}

/// Trainable scalars: weights, biases and BN γ/β; running statistics excluded.
pub fn count_trainable<T: Real>(params: &ParamStore<T>) -> usize {
    params.count_trainable()
}

fn dense<T: Real>(f: &mut Forward<'_, T>, x: Var, prefix: &str) -> Result<Var, AdError> {
    let h = f.linear(x, prefix)?;
    let h = f.batch_norm(h, &format!("{prefix}.bn"))?;
    f.tape.leaky_relu(h, LEAKY_SLOPE)
}

struct Backbone {
    /// `[B, N, concat_width]`
    skip: Var,
    /// `[B, global_width]`
    global: Var,
}

fn backbone<T: Real>(f: &mut Forward<'_, T>, spec: &ModelSpec, x: Var) -> Result<Backbone, NetError> {
    let s = f.tape.shape(x).to_vec();
    if s.len() != 3 || s[2] != spec.in_channels {
        return Err(NetError::Input(format!(
            "expected [B, N, {}] input, got {s:?}",
            spec.in_channels
        )));
    }
    let mut stages = vec![pre_forward(f, x, &spec.pre_config(), "pre")?];
    for (i, cfg) in spec.fln_configs().iter().enumerate() {
        let prev = *stages.last().unwrap();
        stages.push(fln_forward(f, prev, cfg, &format!("fln{}", i + 1))?);
    }
    let skip = f.tape.concat(&stages, 2)?;
    let agg = dense(f, skip, "aggregate")?;
    let max = f.tape.max_over_axis(agg, 1)?;
    let global = match spec.global_pool {
        GlobalPool::Max => max,
        GlobalPool::MaxMean => {
            let mean = f.tape.mean_over_axis(agg, 1)?;
            f.tape.concat(&[max, mean], 1)?
        }
    };
    Ok(Backbone { skip, global })
}

fn head<T: Real>(f: &mut Forward<'_, T>, spec: &ModelSpec, mut h: Var) -> Result<Var, NetError> {
    for i in 0..spec.head.len() {
        h = dense(f, h, &format!("head{}", i + 1))?;
        h = f.dropout(h, spec.dropout)?;
    }
    Ok(f.linear(h, "out")?)
}

fn expect_task(spec: &ModelSpec, task: Task) -> Result<(), NetError> {
    if spec.task != task {
        return Err(NetError::Config(format!("model is {}, not {task}", spec.task)));
    }
    Ok(())
}

/// `[B, N, 3]` → logits `[B, classes]`.
pub fn classify<T: Real>(f: &mut Forward<'_, T>, spec: &ModelSpec, x: Var) -> Result<Var, NetError> {
    expect_task(spec, Task::Classification)?;
    let b = backbone(f, spec, x)?;
    head(f, spec, b.global)
}

/// Global vector broadcast to every point, next to the skip features.
fn per_point_features<T: Real>(f: &mut Forward<'_, T>, b: &Backbone, extra: Option<Var>) -> Result<Var, AdError> {
    let n = f.tape.shape(b.skip)[1];
    let mut parts = vec![b.global];
    parts.extend(extra);
    let g = f.tape.concat(&parts, 1)?;
    let g = f.tape.expand(g, 1, n)?;
    f.tape.concat(&[g, b.skip], 2)
}

/// `[B, N, 3]` plus one category per cloud → logits `[B, N, parts]`.
pub fn part_segment<T: Real>(
    f: &mut Forward<'_, T>,
    spec: &ModelSpec,
    x: Var,
    categories: &[usize],
) -> Result<Var, NetError> {
    expect_task(spec, Task::PartSeg)?;
    let batch = f.tape.shape(x)[0];
    if categories.len() != batch {
        return Err(NetError::Input(format!(
            "{} categories for a batch of {batch}",
            categories.len()
        )));
    }
    let mut onehot = vec![T::ZERO; batch * spec.categories];
    for (i, &c) in categories.iter().enumerate() {
        if c >= spec.categories {
            return Err(NetError::Input(format!(
                "category {c} out of range [0, {})",
                spec.categories
            )));
        }
        onehot[i * spec.categories + c] = T::ONE;
    }
    let b = backbone(f, spec, x)?;
    let label = f.input(NdArray::new(vec![batch, spec.categories], onehot)?);
    let label = dense(f, label, "label")?;
    let h = per_point_features(f, &b, Some(label))?;
    head(f, spec, h)
}

/// `[B, N, 9]` → logits `[B, N, classes]`.
pub fn scene_segment<T: Real>(f: &mut Forward<'_, T>, spec: &ModelSpec, x: Var) -> Result<Var, NetError> {
    expect_task(spec, Task::SceneSeg)?;
    let b = backbone(f, spec, x)?;
    let h = per_point_features(f, &b, None)?;
    head(f, spec, h)
}

/// Dispatch on the spec's task. `categories` is required for part
/// segmentation and ignored otherwise.
pub fn forward<T: Real>(
    f: &mut Forward<'_, T>,
    spec: &ModelSpec,
    x: Var,
    categories: Option<&[usize]>,
) -> Result<Var, NetError> {
    match spec.task {
        Task::Classification => classify(f, spec, x),
        Task::PartSeg => {
            let cats = categories.ok_or_else(|| NetError::Input("part segmentation needs categories".into()))?;
            part_segment(f, spec, x, cats)
        }
        Task::SceneSeg => scene_segment(f, spec, x),
    }
}
