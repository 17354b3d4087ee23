use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::autodiff::Real;
use crate::data::{Dataset, Task};
use crate::models::ModelSpec;

use super::{evaluate, load_checkpoint, train, Checkpoint, MetricReport, TrainConfig, TrainError};
use crate::data::Split;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    /// Neighbors per point.
    K,
    /// Points per cloud.
    Points,
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationAxis::K => "k",
            AblationAxis::Points => "points",
        })
    }
}

impl FromStr for AblationAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "k" => Ok(AblationAxis::K),
            "points" => Ok(AblationAxis::Points),
            other => Err(format!("axis must be `k` or `points`, got `{other}`")),
        }
    }
}

/// How a value of the ablated knob reaches the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationMode {
    /// Train a fresh classifier at every value.
    Retrain,
    /// Train once at the config's own setting, then score that checkpoint at
    /// every value.
    Evaluate,
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationMode::Retrain => "retrain",
            AblationMode::Evaluate => "evaluate",
        })
    }
}

impl FromStr for AblationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "retrain" => Ok(AblationMode::Retrain),
            "evaluate" => Ok(AblationMode::Evaluate),
            other => Err(format!("mode must be `retrain` or `evaluate`, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub axis: AblationAxis,
    pub value: usize,
    pub overall_acc: f64,
    pub mean_acc: f64,
}

/// Score the classifier at each value of `axis` on the test split (the
/// training split when there is no test split).
///
/// In [`AblationMode::Retrain`] every value gets its own run under
/// `work_dir/<axis>_<value>` and the final epoch is scored. In
/// [`AblationMode::Evaluate`] one run goes to `work_dir/trained` and its saved
/// checkpoint is scored with the knob changed.
pub fn ablate<T: Real>(
    dataset: &Dataset,
    base: &ModelSpec,
    cfg: &TrainConfig,
    axis: AblationAxis,
    mode: AblationMode,
    values: &[usize],
    work_dir: &Path,
) -> Result<Vec<AblationRow>, TrainError> {
    if base.task != Task::Classification {
        return Err(TrainError::Config(format!("ablation runs the classifier, got a {} model", base.task)));
    }
    if values.is_empty() {
        return Err(TrainError::Config("no ablation values".into()));
    }
    if values.contains(&0) {
        return Err(TrainError::Config("ablation values must be >= 1".into()));
    }
    if cfg.epochs == 0 {
        return Err(TrainError::Config("ablation needs at least one epoch".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    match mode {
        AblationMode::Retrain => {
            for &value in values {
                let c = with_value(cfg, axis, value);
                let summary = train::<T>(dataset, base, &c, &work_dir.join(format!("{axis}_{value}")))?;
                let last = summary.history.last().expect("at least one epoch");
                rows.push(row(axis, value, &last.test.as_ref().unwrap_or(&last.train).report));
            }
        }
        AblationMode::Evaluate => {
            let dir = work_dir.join("trained");
            train::<T>(dataset, base, cfg, &dir)?;
            rows = score_checkpoint(dataset, &load_checkpoint::<T>(&dir)?, cfg, axis, values)?;
        }
    }
    Ok(rows)
}

fn with_value(cfg: &TrainConfig, axis: AblationAxis, value: usize) -> TrainConfig {
    let mut c = cfg.clone();
    match axis {
        AblationAxis::K => c.k = Some(value),
        AblationAxis::Points => c.n_points = Some(value),
    }
    c
}

fn row(axis: AblationAxis, value: usize, r: &MetricReport) -> AblationRow {
    AblationRow {
        axis,
        value,
        overall_acc: r.overall_accuracy,
        mean_acc: r.mean_class_accuracy,
    }
}

/// Score a trained classifier with `axis` set to each value, on the test
/// split or, when that is empty, the training split. Batching and resampling
/// follow `cfg.batch` and `cfg.seed`.
pub fn score_checkpoint<T: Real>(
    dataset: &Dataset,
    ck: &Checkpoint<T>,
    cfg: &TrainConfig,
    axis: AblationAxis,
    values: &[usize],
) -> Result<Vec<AblationRow>, TrainError> {
    if values.contains(&0) {
        return Err(TrainError::Config("ablation values must be >= 1".into()));
    }
    let split = if dataset.split(Split::Test).is_empty() { Split::Train } else { Split::Test };
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let spec = with_value(cfg, axis, value).model_spec(&ck.spec);
        let res = evaluate(dataset, split, &spec, &ck.params, cfg.batch, cfg.seed)?
            .ok_or_else(|| TrainError::Config("dataset has no samples to score".into()))?;
        rows.push(row(axis, value, &res.report));
    }
    Ok(rows)
}

pub const ABLATION_CSV_HEADER: &str = "axis,value,overall_acc,mean_acc";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = format!("{ABLATION_CSV_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{},{},{:.6},{:.6}\n", r.axis, r.value, r.overall_acc, r.mean_acc));
    }
    s
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<(), TrainError> {
    std::fs::write(path, ablation_csv(rows)).map_err(|e| TrainError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_text_round_trip() {
        for a in [AblationAxis::K, AblationAxis::Points] {
            assert_eq!(a.to_string().parse::<AblationAxis>().unwrap(), a);
        }
        assert!("depth".parse::<AblationAxis>().is_err());
        for m in [AblationMode::Retrain, AblationMode::Evaluate] {
            assert_eq!(m.to_string().parse::<AblationMode>().unwrap(), m);
        }
        assert!("both".parse::<AblationMode>().is_err());
    }

    #[test]
    fn csv_layout() {
        let rows = [AblationRow {
            axis: AblationAxis::K,
            value: 5,
            overall_acc: 0.5,
            mean_acc: 0.25,
        }];
        assert_eq!(ablation_csv(&rows), "axis,value,overall_acc,mean_acc\nk,5,0.500000,0.250000\n");
    }
}
