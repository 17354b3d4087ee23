use super::{knn_bruteforce, GraphError, NeighborGraph};
use crate::autodiff::Real;

/// N×k×2C edge features laid out as `[x_i ‖ x_i − x_j]` along the last axis.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFeatureBlock<T> {
    pub n: usize,
    pub k: usize,
    pub channels: usize,
    pub features: Vec<T>,
}

impl<T: Real> EdgeFeatureBlock<T> {
    /// Feature vector of edge `j` of point `i` (length 2C).
    pub fn edge(&self, i: usize, j: usize) -> &[T] {
        let w = 2 * self.channels;
        let start = (i * self.k + j) * w;
        &self.features[start..start + w]
    }

    /// The `x_i` half of an edge.
    pub fn point_part(&self, i: usize, j: usize) -> &[T] {
        &self.edge(i, j)[..self.channels]
    }

    /// The `x_i − x_j` half of an edge.
    pub fn offset_part(&self, i: usize, j: usize) -> &[T] {
        &self.edge(i, j)[self.channels..]
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.n, self.k, 2 * self.channels]
    }
}

/// Assemble `[x_i, x_i − x_{graph[i][j]}]` for every edge.
pub fn build_edge_features<T: Real>(
    x: &[T],
    channels: usize,
    graph: &NeighborGraph,
) -> Result<EdgeFeatureBlock<T>, GraphError> {
    if channels == 0 || x.len() % channels != 0 {
        return Err(GraphError::BadDims {
            len: x.len(),
            dims: channels,
        });
    }
    let n = x.len() / channels;
    if n != graph.n() {
        return Err(GraphError::SizeMismatch {
            graph: graph.n(),
            features: n,
        });
    }
    let k = graph.k();
    let mut features = Vec::with_capacity(n * k * 2 * channels);
    for i in 0..n {
        let xi = &x[i * channels..(i + 1) * channels];
        for &j in graph.row(i) {
            let j = j as usize;
            if j >= n {
                return Err(GraphError::IndexOutOfRange { index: j, points: n });
            }
            let xj = &x[j * channels..(j + 1) * channels];
            features.extend_from_slice(xi);
            features.extend(xi.iter().zip(xj).map(|(&a, &b)| a - b));
        }
    }
    Ok(EdgeFeatureBlock {
        n,
        k,
        channels,
        features,
    })
}

/// Feature-space graph: brute-force kNN in the current C-dim features, then
/// edge assembly over the same features.
pub fn multiscale_graph<T: Real>(
    x: &[T],
    channels: usize,
    k: usize,
) -> Result<(NeighborGraph, EdgeFeatureBlock<T>), GraphError> {
    let graph = knn_bruteforce(x, channels, k)?;
    let block = build_edge_features(x, channels, &graph)?;
    Ok((graph, block))
}
