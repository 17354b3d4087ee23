//! kNN graph construction and edge-feature assembly.
//!
//! Neighbor rows always start with the query point itself (distance 0), then
//! the remaining `k - 1` points by ascending squared Euclidean distance, ties
//! broken by ascending index. Both search paths compute distances with the
//! same [`squared_distance`] routine so their results agree bit for bit.

mod edge;
mod kdtree;
mod knn;

pub use edge::{build_edge_features, multiscale_graph, EdgeFeatureBlock};
pub use kdtree::KdTree;
pub use knn::{knn_bruteforce, knn_indexed, squared_distance};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("k must be in 1..={n}, got {k}")]
    InvalidK { k: usize, n: usize },
    #[error("point array of {len} values is not a whole number of {dims}-dim rows")]
    BadDims { len: usize, dims: usize },
    #[error("indexed search needs 3-D coordinates, got {0} dims")]
    NotSpatial(usize),
    #[error("neighbor index {index} out of range for {points} points")]
    IndexOutOfRange { index: usize, points: usize },
    #[error("graph has {graph} points but features have {features}")]
    SizeMismatch { graph: usize, features: usize },
}

/// N×k neighbor table, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    n: usize,
    k: usize,
    indices: Vec<u32>,
}

impl NeighborGraph {
    /// Wrap a raw table, checking its size and index range.
    pub fn from_indices(n: usize, k: usize, indices: Vec<u32>) -> Result<Self, GraphError> {
        if k == 0 || k > n {
            return Err(GraphError::InvalidK { k, n });
        }
        if indices.len() != n * k {
            return Err(GraphError::BadDims {
                len: indices.len(),
                dims: k,
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i as usize >= n) {
            return Err(GraphError::IndexOutOfRange {
                index: bad as usize,
                points: n,
            });
        }
        Ok(NeighborGraph { n, k, indices })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> {
        self.indices.chunks_exact(self.k)
    }
}
