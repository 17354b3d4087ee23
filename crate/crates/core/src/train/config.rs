use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::autodiff::DType;
use crate::data::Task;

use super::TrainError;

/// Optimization recipe plus the two model knobs the ablations vary.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub precision: DType,
    pub label_smoothing: f64,
    /// Points per sample fed to the model; the task default when `None`.
    pub n_points: Option<usize>,
    /// Neighbors per point; the task default when `None`.
    pub k: Option<usize>,
}

const KEYS: [&str; 10] = [
    "lr",
    "lr_min",
    "momentum",
    "batch",
    "epochs",
    "seed",
    "precision",
    "label_smoothing",
    "n_points",
    "k",
];

impl TrainConfig {
    /// 0.1 for classification, 0.01 for segmentation; cosine floor at lr/100.
    pub fn for_task(task: Task) -> Self {
        let lr = match task {
            Task::Classification => 0.1,
            Task::PartSeg | Task::SceneSeg => 0.01,
        };
        TrainConfig {
            lr,
            lr_min: lr / 100.0,
            momentum: 0.9,
            batch: 32,
            epochs: 100,
            seed: 0,
            precision: DType::F32,
            label_smoothing: 0.0,
            n_points: None,
            k: None,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr.is_finite() && self.lr_min.is_finite() && self.lr > self.lr_min && self.lr_min >= 0.0) {
            return bad(format!("need lr > lr_min >= 0, got lr = {}, lr_min = {}", self.lr, self.lr_min));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch == 0 {
            return bad("batch must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing must be in [0, 1), got {}", self.label_smoothing));
        }
        if self.n_points == Some(0) || self.k == Some(0) {
            return bad("n_points and k must be >= 1".into());
        }
        Ok(())
    }

    /// Overlay `key = value` lines on the defaults of `task`. Blank lines and
    /// `#` comments are skipped; unknown keys are rejected. Setting `lr`
    /// without `lr_min` moves the floor to lr/100.
    pub fn parse(text: &str, task: Task) -> Result<Self, TrainError> {
        let mut cfg = Self::for_task(task);
        let mut seen = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("line {}: expected `key = value`", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(TrainError::Config(format!("line {}: unknown key `{k}`", no + 1)));
            }
            if seen.insert(k.to_string(), no + 1).is_some() {
                return Err(TrainError::Config(format!("line {}: duplicate key `{k}`", no + 1)));
            }
            let err = |e: String| TrainError::Config(format!("line {}: key `{k}`: {e}", no + 1));
            let float = || v.parse::<f64>().map_err(|e| err(e.to_string()));
            let int = || v.parse::<usize>().map_err(|e| err(e.to_string()));
            match k {
                "lr" => cfg.lr = float()?,
                "lr_min" => cfg.lr_min = float()?,
                "momentum" => cfg.momentum = float()?,
                "batch" => cfg.batch = int()?,
                "epochs" => cfg.epochs = int()?,
                "seed" => cfg.seed = v.parse().map_err(|e: std::num::ParseIntError| err(e.to_string()))?,
                "precision" => cfg.precision = parse_precision(v).map_err(err)?,
                "label_smoothing" => cfg.label_smoothing = float()?,
                "n_points" => cfg.n_points = Some(int()?),
                "k" => cfg.k = Some(int()?),
                _ => unreachable!(),
            }
        }
        if seen.contains_key("lr") && !seen.contains_key("lr_min") {
            cfg.lr_min = cfg.lr / 100.0;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_config(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "lr_min = {}", self.lr_min);
        let _ = writeln!(s, "momentum = {}", self.momentum);
        let _ = writeln!(s, "batch = {}", self.batch);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "precision = {}", precision_name(self.precision));
        let _ = writeln!(s, "label_smoothing = {}", self.label_smoothing);
        if let Some(n) = self.n_points {
            let _ = writeln!(s, "n_points = {n}");
        }
        if let Some(k) = self.k {
            let _ = writeln!(s, "k = {k}");
        }
        s
    }
}

pub fn parse_precision(v: &str) -> Result<DType, String> {
    match v {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(format!("precision must be f32 or f64, got `{other}`")),
    }
}

pub fn precision_name(d: DType) -> &'static str {
    match d {
        DType::F32 => "f32",
        DType::F64 => "f64",
    }
}
