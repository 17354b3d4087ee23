//! Point-cloud samples, their on-disk format, dataset manifests, synthetic
//! generators and room-to-block preprocessing.

mod cloud;
mod manifest;
pub mod pgrc;
mod sampling;
mod scene;
pub mod synthetic;

pub use cloud::PointCloud;
pub use manifest::{CategoryParts, Dataset, DatasetManifest, SampleRecord, Split, Task};
pub use pgrc::{read_sample, write_sample, SampleHeader};
pub use sampling::uniform_sample;
pub use scene::{split_room_into_blocks, SceneBlock, BLOCK_CHANNELS, MIN_BLOCK_POINTS, SCENE_CLASSES};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("bad magic {0:?}, expected \"PGRC\"")]
    BadMagic([u8; 4]),
    #[error("unsupported PGRC version {0}")]
    Version(u16),
    #[error("truncated sample: {needed} bytes missing at offset {offset}")]
    Truncated { needed: usize, offset: usize },
    #[error("invalid point cloud: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("{path}: {msg}")]
    Sample { path: String, msg: String },
    #[error("room produced no block with at least {min} points")]
    NoBlocks { min: usize },
}

impl DataError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
