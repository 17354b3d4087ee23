//! Line-oriented dataset manifest.
//!
//! ```text
//! task=classification
//! classes=3
//! channels=3
//!
//! sample_00000.pgrc<TAB>train
//! ```
//! Part-segmentation manifests also carry `category_parts=0,1;2,3` (the part
//! ids of each object category, categories separated by `;`). Sample paths are
//! relative to the manifest's directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::pgrc::{read_sample, write_sample};
use super::{DataError, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classification,
    PartSeg,
    SceneSeg,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Classification => "classification",
            Task::PartSeg => "partseg",
            Task::SceneSeg => "sceneseg",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "classification" => Ok(Task::Classification),
            "partseg" => Ok(Task::PartSeg),
            "sceneseg" => Ok(Task::SceneSeg),
            other => Err(format!(
                "unknown task `{other}` (expected classification, partseg or sceneseg)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// Part ids belonging to each object category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryParts(pub Vec<Vec<u16>>);

impl CategoryParts {
    pub fn parts_of(&self, category: usize) -> Option<&[u16]> {
        self.0.get(category).map(|v| v.as_slice())
    }

    pub fn categories(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Display for CategoryParts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let groups: Vec<String> = self
            .0
            .iter()
            .map(|g| g.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(","))
            .collect();
        f.write_str(&groups.join(";"))
    }
}

impl FromStr for CategoryParts {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(';')
            .map(|g| {
                g.split(',')
                    .map(|p| p.trim().parse::<u16>().map_err(|e| format!("bad part id `{p}`: {e}")))
                    .collect()
            })
            .collect::<Result<Vec<_>, _>>()
            .map(CategoryParts)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub path: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub task: Task,
    /// Classes for classification / scenes, total part count for part segmentation.
    pub num_classes: usize,
    pub channels: usize,
    pub category_parts: Option<CategoryParts>,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "task={}\nclasses={}\nchannels={}\n",
            self.task, self.num_classes, self.channels
        );
        if let Some(cp) = &self.category_parts {
            s.push_str(&format!("category_parts={cp}\n"));
        }
        s.push('\n');
        for r in &self.records {
            s.push_str(&format!("{}\t{}\n", r.path, r.split));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        let err = |line: usize, msg: String| DataError::Manifest { line, msg };
        let (mut task, mut classes, mut channels, mut category_parts) = (None, None, None, None);
        let mut records = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some((path, split)) = line.split_once('\t') {
                records.push(SampleRecord {
                    path: path.to_string(),
                    split: split.trim().parse().map_err(|m| err(line_no, m))?,
                });
                continue;
            }
            if !records.is_empty() {
                return Err(err(line_no, format!("expected `path<TAB>split`, got `{line}`")));
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(line_no, format!("expected `key=value`, got `{line}`")))?;
            let value = value.trim();
            match key.trim() {
                "task" => task = Some(value.parse::<Task>().map_err(|m| err(line_no, m))?),
                "classes" => {
                    classes = Some(
                        value
                            .parse::<usize>()
                            .map_err(|e| err(line_no, format!("classes: {e}")))?,
                    )
                }
                "channels" => {
                    channels = Some(
                        value
                            .parse::<usize>()
                            .map_err(|e| err(line_no, format!("channels: {e}")))?,
                    )
                }
                "category_parts" => {
                    category_parts = Some(value.parse::<CategoryParts>().map_err(|m| err(line_no, m))?)
                }
                other => return Err(err(line_no, format!("unknown header key `{other}`"))),
            }
        }
        let missing = |k: &str| err(0, format!("missing header key `{k}`"));
        Ok(DatasetManifest {
            task: task.ok_or_else(|| missing("task"))?,
            num_classes: classes.ok_or_else(|| missing("classes"))?,
            channels: channels.ok_or_else(|| missing("channels"))?,
            category_parts,
            records,
        })
    }

    /// Check a sample against the manifest's declared task, class count and
    /// channel count.
    pub fn check_sample(&self, cloud: &PointCloud, path: &str) -> Result<(), DataError> {
        let bad = |msg: String| DataError::Sample {
            path: path.to_string(),
            msg,
        };
        if cloud.channels() != self.channels {
            return Err(bad(format!(
                "{} channels, manifest declares {}",
                cloud.channels(),
                self.channels
            )));
        }
        match self.task {
            Task::Classification => {
                let l = cloud.class_label.ok_or_else(|| bad("missing class label".into()))?;
                if l as usize >= self.num_classes {
                    return Err(bad(format!("class {l} >= classes={}", self.num_classes)));
                }
            }
            Task::PartSeg | Task::SceneSeg => {
                let labels = cloud
                    .part_labels
                    .as_ref()
                    .ok_or_else(|| bad("missing per-point labels".into()))?;
                if let Some(&l) = labels.iter().find(|&&l| l as usize >= self.num_classes) {
                    return Err(bad(format!("label {l} >= classes={}", self.num_classes)));
                }
                if self.task == Task::PartSeg {
                    let cat = cloud.category.ok_or_else(|| bad("missing category".into()))?;
                    if let Some(cp) = &self.category_parts {
                        let parts = cp
                            .parts_of(cat as usize)
                            .ok_or_else(|| bad(format!("category {cat} not in category_parts")))?;
                        if let Some(l) = labels.iter().find(|l| !parts.contains(l)) {
                            return Err(bad(format!("part {l} does not belong to category {cat}")));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// A manifest together with its decoded samples (same order as the records).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<PointCloud>,
}

pub const MANIFEST_FILE: &str = "manifest.txt";

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples of one split, in manifest order.
    pub fn split(&self, split: Split) -> Vec<&PointCloud> {
        self.manifest
            .records
            .iter()
            .zip(&self.samples)
            .filter(|(r, _)| r.split == split)
            .map(|(_, s)| s)
            .collect()
    }

    /// Write `manifest.txt` plus one PGRC file per record into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, DataError> {
        std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        for (rec, cloud) in self.manifest.records.iter().zip(&self.samples) {
            write_sample(cloud, &dir.join(&rec.path))?;
        }
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.manifest.to_text()).map_err(|e| DataError::io(&path, e))?;
        Ok(path)
    }

    /// Read a manifest and every sample it references, validating each.
    pub fn load(manifest_path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(manifest_path).map_err(|e| DataError::io(manifest_path, e))?;
        let manifest = DatasetManifest::parse(&text).map_err(|e| match e {
            DataError::Manifest { line, msg } => DataError::Manifest {
                line,
                msg: format!("{}: {msg}", manifest_path.display()),
            },
            other => other,
        })?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mut samples = Vec::with_capacity(manifest.records.len());
        for rec in &manifest.records {
            let path = base.join(&rec.path);
            let cloud = read_sample(&path)?;
            manifest.check_sample(&cloud, &path.display().to_string())?;
            samples.push(cloud);
        }
        Ok(Dataset { manifest, samples })
    }
}
