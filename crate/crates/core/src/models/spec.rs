use std::fmt;
use std::str::FromStr;

use crate::data::Task;

/// How per-point features are reduced to one vector per cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalPool {
    Max,
    /// Max and mean pooling concatenated (twice the width).
    MaxMean,
}

impl GlobalPool {
    pub fn factor(self) -> usize {
        match self {
            GlobalPool::Max => 1,
            GlobalPool::MaxMean => 2,
        }
    }
}

impl fmt::Display for GlobalPool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GlobalPool::Max => "max",
            GlobalPool::MaxMean => "max+mean",
        })
    }
}

impl FromStr for GlobalPool {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "max" => Ok(GlobalPool::Max),
            "max+mean" => Ok(GlobalPool::MaxMean),
            other => Err(format!("unknown pooling `{other}` (expected max or max+mean)")),
        }
    }
}

/// Layer plan of one network. The same structure describes all three tasks;
/// `categories` and `label_embed_width` only matter for part segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub task: Task,
    pub n_points: usize,
    pub in_channels: usize,
    pub k: usize,
    pub pre_hidden: usize,
    pub pre_out: usize,
    pub fln_plan: Vec<usize>,
    pub aggregate_width: usize,
    /// Hidden widths of the classifier FC stack or the per-point head.
    pub head: Vec<usize>,
    /// Classes, parts, or semantic classes.
    pub classes: usize,
    pub categories: usize,
    pub label_embed_width: usize,
    pub dropout: f64,
    pub global_pool: GlobalPool,
}

impl ModelSpec {
    pub fn classifier(classes: usize) -> Self {
        ModelSpec {
            task: Task::Classification,
            n_points: 1024,
            in_channels: 3,
            k: 20,
            pre_hidden: 64,
            pre_out: 6,
            fln_plan: vec![64, 128, 256],
            aggregate_width: 1024,
            head: vec![512, 256],
            classes,
            categories: 0,
            label_embed_width: 0,
            dropout: 0.5,
            global_pool: GlobalPool::MaxMean,
        }
    }

    pub fn part_seg(parts: usize, categories: usize) -> Self {
        ModelSpec {
            task: Task::PartSeg,
            n_points: 2048,
            k: 40,
            head: vec![256, 128],
            classes: parts,
            categories,
            label_embed_width: 64,
            global_pool: GlobalPool::Max,
            ..Self::classifier(parts)
        }
    }

    pub fn scene_seg(classes: usize) -> Self {
        ModelSpec {
            task: Task::SceneSeg,
            n_points: 4096,
            in_channels: 9,
            k: 20,
            head: vec![256, 128],
            classes,
            global_pool: GlobalPool::Max,
            ..Self::classifier(classes)
        }
    }

    /// Default plan for a task with `classes` outputs (and `categories` object
    /// categories for part segmentation).
    pub fn for_task(task: Task, classes: usize, categories: usize) -> Self {
        match task {
            Task::Classification => Self::classifier(classes),
            Task::PartSeg => Self::part_seg(classes, categories),
            Task::SceneSeg => Self::scene_seg(classes),
        }
    }

    /// Width of the concatenated skip features fed to the aggregation layer.
    pub fn concat_width(&self) -> usize {
        self.pre_out + self.fln_plan.iter().sum::<usize>()
    }

    pub fn global_width(&self) -> usize {
        self.aggregate_width * self.global_pool.factor()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.in_channels < 3 {
            return Err(format!("in_channels must be >= 3, got {}", self.in_channels));
        }
        if self.task == Task::SceneSeg && self.in_channels != 9 {
            return Err(format!("scene segmentation needs 9 input channels, got {}", self.in_channels));
        }
        if self.classes < 2 {
            return Err(format!("classes must be >= 2, got {}", self.classes));
        }
        if self.k == 0 || self.k > self.n_points {
            return Err(format!("k must be in 1..={}, got {}", self.n_points, self.k));
        }
        if self.pre_out == 0 || self.pre_hidden < self.pre_out {
            return Err("pre_hidden must be >= pre_out >= 1".into());
        }
        if self.fln_plan.is_empty() || self.fln_plan.contains(&0) {
            return Err("fln_plan needs at least one non-zero width".into());
        }
        if self.aggregate_width == 0 || self.head.contains(&0) {
            return Err("layer widths must be non-zero".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.task == Task::PartSeg && (self.categories == 0 || self.label_embed_width == 0) {
            return Err("part segmentation needs categories and label_embed_width".into());
        }
        Ok(())
    }

    /// `key = value` lines.
    pub fn to_config(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "task = {}\nn_points = {}\nin_channels = {}\nk = {}\npre_hidden = {}\npre_out = {}\n\
             fln_plan = {}\naggregate_width = {}\nhead = {}\nclasses = {}\ncategories = {}\n\
             label_embed_width = {}\ndropout = {}\nglobal_pool = {}\n",
            self.task,
            self.n_points,
            self.in_channels,
            self.k,
            self.pre_hidden,
            self.pre_out,
            list(&self.fln_plan),
            self.aggregate_width,
            list(&self.head),
            self.classes,
            self.categories,
            self.label_embed_width,
            self.dropout,
            self.global_pool,
        )
    }

    /// Parse [`to_config`](Self::to_config) output. Every key is required.
    pub fn from_config(text: &str) -> Result<Self, String> {
        let mut map = std::collections::BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", no + 1))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |key: &str| map.get(key).cloned().ok_or_else(|| format!("missing key `{key}`"));
        let num = |key: &str| -> Result<usize, String> {
            get(key)?.parse().map_err(|e| format!("key `{key}`: {e}"))
        };
        let list = |key: &str| -> Result<Vec<usize>, String> {
            get(key)?
                .split(',')
                .map(|s| s.trim().parse().map_err(|e| format!("key `{key}`: {e}")))
                .collect()
        };
        let known = [
            "task",
            "n_points",
            "in_channels",
            "k",
            "pre_hidden",
            "pre_out",
            "fln_plan",
            "aggregate_width",
            "head",
            "classes",
            "categories",
            "label_embed_width",
            "dropout",
            "global_pool",
        ];
        if let Some(extra) = map.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(format!("unknown key `{extra}`"));
        }
        let spec = ModelSpec {
            task: get("task")?.parse()?,
            n_points: num("n_points")?,
            in_channels: num("in_channels")?,
            k: num("k")?,
            pre_hidden: num("pre_hidden")?,
            pre_out: num("pre_out")?,
            fln_plan: list("fln_plan")?,
            aggregate_width: num("aggregate_width")?,
            head: list("head")?,
            classes: num("classes")?,
            categories: num("categories")?,
            label_embed_width: num("label_embed_width")?,
            dropout: get("dropout")?.parse().map_err(|e| format!("key `dropout`: {e}"))?,
            global_pool: get("global_pool")?.parse()?,
        };
        spec.validate()?;
        Ok(spec)
    }
}
