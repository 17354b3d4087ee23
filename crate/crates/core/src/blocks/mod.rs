//! Residual edge-convolution blocks: the point residual embedding (PRE) that
//! opens every network and the feature-learning (FLN) block stacked after it.

mod forward;

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{AdError, NdArray, ParamStore, Real, Var};
use crate::graph::{knn_bruteforce, knn_indexed, GraphError, NeighborGraph};

pub use forward::{Forward, Mode};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
}

/// Slope of the leaky activation used outside the PRE block.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreConfig {
    pub in_channels: usize,
    pub hidden: usize,
    pub out: usize,
    pub k: usize,
}

impl PreConfig {
    pub fn new(in_channels: usize, k: usize) -> Self {
        PreConfig {
            in_channels,
            hidden: 64,
            out: 6,
            k,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.in_channels < 3 {
            return Err(NetError::Config(format!(
                "PRE needs xyz input, got {} channels",
                self.in_channels
            )));
        }
        if self.out == 0 || self.hidden < self.out {
            return Err(NetError::Config(format!(
                "PRE needs hidden >= out >= 1, got hidden={} out={}",
                self.hidden, self.out
            )));
        }
        if self.k == 0 {
            return Err(NetError::Config("k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn edge_width(&self) -> usize {
        2 * self.in_channels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlnConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub k: usize,
}

impl FlnConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.in_channels == 0 || self.out_channels == 0 || self.k == 0 {
            return Err(NetError::Config(format!("degenerate FLN config {self:?}")));
        }
        Ok(())
    }
}

/// Uniform `±1/√fan_in` initialization.
pub fn init_linear<T: Real>(
    store: &mut ParamStore<T>,
    prefix: &str,
    cin: usize,
    cout: usize,
    bias: bool,
    rng: &mut impl Rng,
) -> Result<(), AdError> {
    let bound = 1.0 / (cin as f64).sqrt();
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
    store.insert(
        format!("{prefix}.weight"),
        NdArray::from_f64(&[cin, cout], &draw(cin * cout))?,
        true,
    )?;
    if bias {
        store.insert(format!("{prefix}.bias"), NdArray::from_f64(&[cout], &draw(cout))?, true)?;
    }
    Ok(())
}

pub fn init_pre<T: Real>(
    store: &mut ParamStore<T>,
    prefix: &str,
    cfg: &PreConfig,
    rng: &mut impl Rng,
) -> Result<(), NetError> {
    cfg.validate()?;
    let e = cfg.edge_width();
    init_linear(store, &format!("{prefix}.conv1"), e, cfg.hidden, false, rng)?;
    store.insert_batch_norm(&format!("{prefix}.bn1"), cfg.hidden)?;
    init_linear(store, &format!("{prefix}.conv2"), cfg.hidden, e, false, rng)?;
    store.insert_batch_norm(&format!("{prefix}.bn2"), e)?;
    init_linear(store, &format!("{prefix}.point"), e, cfg.out, true, rng)?;
    Ok(())
}

pub fn init_fln<T: Real>(
    store: &mut ParamStore<T>,
    prefix: &str,
    cfg: &FlnConfig,
    rng: &mut impl Rng,
) -> Result<(), NetError> {
    cfg.validate()?;
    init_linear(
        store,
        &format!("{prefix}.conv"),
        2 * cfg.in_channels,
        cfg.out_channels,
        false,
        rng,
    )?;
    store.insert_batch_norm(&format!("{prefix}.bn"), cfg.out_channels)?;
    Ok(())
}

fn check_input<T: Real>(f: &Forward<'_, T>, x: Var, channels: usize, k: usize) -> Result<(usize, usize), NetError> {
    let s = f.tape.shape(x);
    if s.len() != 3 || s[2] != channels {
        return Err(NetError::Input(format!("expected [B, N, {channels}], got {s:?}")));
    }
    if s[1] < k {
        return Err(GraphError::InvalidK { k, n: s[1] }.into());
    }
    Ok((s[0], s[1]))
}

/// Coordinate-space graphs over the first three channels of each batch item.
pub fn coordinate_graphs<T: Real>(x: &NdArray<T>, k: usize) -> Result<Arc<[NeighborGraph]>, GraphError> {
    let s = x.shape();
    let (n, c) = (s[1], s[2]);
    x.data()
        .chunks_exact(n * c)
        .map(|item| {
            let xyz: Vec<T> = item.chunks_exact(c).flat_map(|p| [p[0], p[1], p[2]]).collect();
            knn_indexed(&xyz, 3, k)
        })
        .collect()
}

/// Feature-space graphs over all channels of each batch item.
pub fn feature_graphs<T: Real>(x: &NdArray<T>, k: usize) -> Result<Arc<[NeighborGraph]>, GraphError> {
    let s = x.shape();
    let (n, c) = (s[1], s[2]);
    x.data()
        .chunks_exact(n * c)
        .map(|item| knn_bruteforce(item, c, k))
        .collect()
}

/// PRE block on `[B, N, C]` input: edge branch `2C → hidden → 2C` with BN and
/// ReLU, residual add of the raw edge features, ReLU, max over neighbors, then
/// a per-point map `2C → out`. Neighbors are found on the xyz channels.
pub fn pre_forward<T: Real>(f: &mut Forward<'_, T>, x: Var, cfg: &PreConfig, prefix: &str) -> Result<Var, NetError> {
    cfg.validate()?;
    check_input(f, x, cfg.in_channels, cfg.k)?;
    let graphs = f.graph(x, |v| coordinate_graphs(v, cfg.k))?;
    pre_with_graphs(f, x, graphs, prefix)
}

/// [`pre_forward`] with caller-supplied neighbor graphs.
pub fn pre_with_graphs<T: Real>(
    f: &mut Forward<'_, T>,
    x: Var,
    graphs: Arc<[NeighborGraph]>,
    prefix: &str,
) -> Result<Var, NetError> {
    let skip = f.tape.edge_features(x, graphs.clone())?;
    let h = f.edge_linear(x, graphs, &format!("{prefix}.conv1"))?;
    let h = f.batch_norm(h, &format!("{prefix}.bn1"))?;
    let h = f.tape.relu(h)?;
    let h = f.linear(h, &format!("{prefix}.conv2"))?;
    let h = f.batch_norm(h, &format!("{prefix}.bn2"))?;
    let h = f.tape.add(h, skip)?;
    let h = f.tape.relu(h)?;
    let pooled = f.tape.max_over_axis(h, 2)?;
    Ok(f.linear(pooled, &format!("{prefix}.point"))?)
}

/// FLN block on `[B, N, C]` input: graph rebuilt in feature space, edge map
/// `2C → out`, BN, leaky ReLU, max over neighbors.
pub fn fln_forward<T: Real>(f: &mut Forward<'_, T>, x: Var, cfg: &FlnConfig, prefix: &str) -> Result<Var, NetError> {
    cfg.validate()?;
    check_input(f, x, cfg.in_channels, cfg.k)?;
    let graphs = f.graph(x, |v| feature_graphs(v, cfg.k))?;
    fln_with_graphs(f, x, graphs, prefix)
}

pub fn fln_with_graphs<T: Real>(
    f: &mut Forward<'_, T>,
    x: Var,
    graphs: Arc<[NeighborGraph]>,
    prefix: &str,
) -> Result<Var, NetError> {
    Ok(f.edge_conv_max(x, graphs, &format!("{prefix}.conv"), &format!("{prefix}.bn"), LEAKY_SLOPE)?)
}
