use std::cmp::Ordering;

use super::{GraphError, KdTree, NeighborGraph};
use crate::autodiff::Real;

/// Squared Euclidean distance. Channels are folded into eight partial sums
/// (channel `c` into lane `c % 8`), which are then added in lane order.
#[inline]
pub fn squared_distance<T: Real>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::ZERO; 8];
    let (ca, ra) = (a.chunks_exact(8), a.len() - a.len() % 8);
    for (u, v) in ca.zip(b.chunks_exact(8)) {
        for l in 0..8 {
            let d = u[l] - v[l];
            lanes[l] += d * d;
        }
    }
    for (l, (&u, &v)) in a[ra..].iter().zip(&b[ra..]).enumerate() {
        let d = u - v;
        lanes[l] += d * d;
    }
    let mut acc = T::ZERO;
    for v in lanes {
        acc += v;
    }
    acc
}

#[inline]
pub(crate) fn cmp_candidate<T: Real>(a: &(T, u32), b: &(T, u32)) -> Ordering {
    a.0.partial_cmp(&b.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

pub(crate) fn check_dims<T>(x: &[T], dims: usize, k: usize) -> Result<usize, GraphError> {
    if dims == 0 || x.len() % dims != 0 {
        return Err(GraphError::BadDims { len: x.len(), dims });
    }
    let n = x.len() / dims;
    if k == 0 || k > n {
        return Err(GraphError::InvalidK { k, n });
    }
    Ok(n)
}

/// Exact kNN over `dims`-dimensional rows by exhaustive distance evaluation.
///
/// Works in any dimension, so it also serves the feature-space graphs that are
/// rebuilt in every feature-learning block.
pub fn knn_bruteforce<T: Real>(x: &[T], dims: usize, k: usize) -> Result<NeighborGraph, GraphError> {
    let n = check_dims(x, dims, k)?;
    let mut indices = Vec::with_capacity(n * k);
    let mut cand: Vec<(T, u32)> = Vec::with_capacity(n);
    let want = k - 1;
    for i in 0..n {
        let q = &x[i * dims..(i + 1) * dims];
        cand.clear();
        for j in (0..n).filter(|&j| j != i) {
            cand.push((squared_distance(q, &x[j * dims..(j + 1) * dims]), j as u32));
        }
        if want > 0 && want < cand.len() {
            cand.select_nth_unstable_by(want - 1, cmp_candidate);
            cand.truncate(want);
        }
        cand.sort_unstable_by(cmp_candidate);
        indices.push(i as u32);
        indices.extend(cand.iter().take(want).map(|c| c.1));
    }
    Ok(NeighborGraph { n, k, indices })
}

/// Exact kNN over 3-D coordinates through a kd-tree. Returns exactly what
/// [`knn_bruteforce`] returns on the same input.
pub fn knn_indexed<T: Real>(x: &[T], dims: usize, k: usize) -> Result<NeighborGraph, GraphError> {
    if dims != 3 {
        return Err(GraphError::NotSpatial(dims));
    }
    let n = check_dims(x, dims, k)?;
    let tree = KdTree::build(x);
    let mut indices = Vec::with_capacity(n * k);
    let mut scratch = Vec::with_capacity(k);
    for i in 0..n {
        tree.knn_excluding_self(i, k - 1, &mut scratch);
        indices.push(i as u32);
        indices.extend(scratch.iter().map(|c| c.1));
    }
    Ok(NeighborGraph { n, k, indices })
}
