use std::sync::Arc;

use rand::Rng;

use super::array::{axis_extents, NdArray, Real};
use super::params::BnStats;
use super::{AdError, BN_EPS};
use crate::graph::NeighborGraph;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    EdgeLinear {
        x: Var,
        w: Var,
        b: Option<Var>,
        graphs: Arc<[NeighborGraph]>,
    },
    EdgeFeatures {
        x: Var,
        graphs: Arc<[NeighborGraph]>,
    },
    EdgeConvMax {
        x: Var,
        w: Var,
        gamma: Var,
        beta: Var,
        graphs: Arc<[NeighborGraph]>,
        p: Vec<T>,
        q: Vec<T>,
        mean: Vec<T>,
        inv_std: Vec<T>,
        /// Neighbor slot chosen by the pooling, per output element.
        arg: Vec<u32>,
        xhat: Vec<T>,
        slope: T,
        batch_stats: bool,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu {
        x: Var,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Add {
        a: Var,
        b: Var,
    },
    MaxAxis {
        x: Var,
        axis: usize,
        argmax: Vec<u32>,
    },
    MeanAxis {
        x: Var,
        axis: usize,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Expand {
        x: Var,
        axis: usize,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    SoftmaxXent {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<usize>,
        smoothing: T,
    },
    WeightedSum {
        x: Var,
        weights: Vec<T>,
    },
    Reshape {
        x: Var,
    },
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Linear { x, w, b } | Op::EdgeLinear { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::EdgeConvMax { x, w, gamma, beta, .. } => vec![*x, *w, *gamma, *beta],
            Op::Add { a, b } => vec![*a, *b],
            Op::Concat { xs, .. } => xs.clone(),
            Op::SoftmaxXent { logits, .. } => vec![*logits],
            Op::EdgeFeatures { x, .. }
            | Op::Relu { x }
            | Op::LeakyRelu { x, .. }
            | Op::MaxAxis { x, .. }
            | Op::MeanAxis { x, .. }
            | Op::Expand { x, .. }
            | Op::Dropout { x, .. }
            | Op::WeightedSum { x, .. }
            | Op::Reshape { x } => vec![*x],
        }
    }
}

struct Node<T> {
    value: NdArray<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Record of one forward computation. Nodes are appended in evaluation order,
/// so the tape is topologically sorted by construction.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of leaf nodes after [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<NdArray<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&NdArray<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<NdArray<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> AdError {
    AdError::Shape(format!("{what}: {a:?} vs {b:?}"))
}

fn check_graphs(graphs: &[NeighborGraph], batch: usize, n: usize) -> Result<usize, AdError> {
    if graphs.len() != batch {
        return Err(AdError::Shape(format!(
            "{} neighbor graphs for a batch of {}",
            graphs.len(),
            batch
        )));
    }
    let k = graphs.first().map(|g| g.k()).unwrap_or(1);
    for g in graphs {
        if g.n() != n || g.k() != k {
            return Err(AdError::Shape(format!(
                "neighbor graph {}×{} does not fit {} points with k={}",
                g.n(),
                g.k(),
                n,
                k
            )));
        }
    }
    Ok(k)
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T]) {
    for row in out.chunks_exact_mut(bias.len()) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

fn grad_buf<'g, T: Real>(nodes: &[Node<T>], grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let len = node.value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![T::ZERO; len]))
}

/// Gradients of `x` and `w` from the gradients of the projections `p = x·(w_top
/// + w_bot)` and `q = x·w_bot`.
fn edge_projection_backward<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: Var,
    w: Var,
    dp: &[T],
    mut dq: Vec<T>,
) {
    let c = nodes[x.0].value.shape()[2];
    let rows = nodes[x.0].value.len() / c.max(1);
    let cout = nodes[w.0].value.shape()[1];
    let wv = nodes[w.0].value.data();
    let (w_top, w_bot) = wv.split_at(c * cout);
    if let Some(dx) = grad_buf(nodes, grads, x) {
        let w_sum: Vec<T> = w_top.iter().zip(w_bot).map(|(&a, &b)| a + b).collect();
        T::gemm(rows, cout, c, T::ONE, dp, false, &w_sum, true, T::ONE, dx);
        T::gemm(rows, cout, c, T::ONE, &dq, false, w_bot, true, T::ONE, dx);
    }
    if let Some(dw) = grad_buf(nodes, grads, w) {
        let xv = nodes[x.0].value.data();
        let (dtop, dbot) = dw.split_at_mut(c * cout);
        T::gemm(c, rows, cout, T::ONE, xv, true, dp, false, T::ONE, dtop);
        for (a, &b) in dq.iter_mut().zip(dp) {
            *a += b;
        }
        T::gemm(c, rows, cout, T::ONE, xv, true, &dq, false, T::ONE, dbot);
    }
}

/// Per-column sums of `f(value, column)` over rows of width `cols`, added in
/// `T` within blocks of 64 rows and across blocks in `f64`.
fn blocked_column_sums<T: Real>(x: &[T], cols: usize, f: impl Fn(T, usize) -> T) -> Vec<f64> {
    let mut total = vec![0.0f64; cols];
    let mut block = vec![T::ZERO; cols];
    for rows in x.chunks(64 * cols) {
        block.fill(T::ZERO);
        for row in rows.chunks_exact(cols) {
            for (ch, (b, &v)) in block.iter_mut().zip(row).enumerate() {
                *b += f(v, ch);
            }
        }
        for (t, b) in total.iter_mut().zip(&block) {
            *t += b.to_f64();
        }
    }
    total
}

fn column_sums<T: Real>(g: &[T], cols: usize, acc: &mut [T]) {
    for row in g.chunks_exact(cols) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &NdArray<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A leaf whose gradient is tracked (a parameter).
    pub fn param(&mut self, value: NdArray<T>) -> Var {
        self.leaf(value, true)
    }

    /// A leaf with no gradient (input data).
    pub fn constant(&mut self, value: NdArray<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: NdArray<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: NdArray<T>, op: Op<T>, name: &'static str) -> Result<Var, AdError> {
        if !value.all_finite() {
            return Err(AdError::NonFinite { op: name });
        }
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn check_weight(&self, w: Var, b: Option<Var>) -> Result<(usize, usize), AdError> {
        let ws = self.shape(w);
        if ws.len() != 2 {
            return Err(AdError::Shape(format!("weight must be rank 2, got {ws:?}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[1]] {
                return Err(shape_err("bias vs weight", self.shape(b), ws));
            }
        }
        Ok((ws[0], ws[1]))
    }

    /// `y[..., j] = Σ_i x[..., i]·w[i, j] + b[j]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, AdError> {
        let (cin, cout) = self.check_weight(w, b)?;
        let xs = self.shape(x).to_vec();
        if xs.last() != Some(&cin) {
            return Err(shape_err("linear input vs weight", &xs, self.shape(w)));
        }
        let rows = self.value(x).len() / cin;
        let mut out = vec![T::ZERO; rows * cout];
        T::gemm(
            rows,
            cin,
            cout,
            T::ONE,
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            T::ZERO,
            &mut out,
        );
        if let Some(b) = b {
            add_bias(&mut out, self.value(b).data());
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = cout;
        self.push(NdArray::new(shape, out)?, Op::Linear { x, w, b }, "linear")
    }

    /// Linear map applied to the edge features `[x_i ‖ x_i − x_j]` of every
    /// edge, without materialising them: with `w = [w_top; w_bot]` the result
    /// is `x_i·(w_top + w_bot) − x_j·w_bot + b`.
    ///
    /// `x` is `[B, N, C]`, `w` is `[2C, out]`, output is `[B, N, k, out]`.
    pub fn edge_linear(
        &mut self,
        x: Var,
        graphs: Arc<[NeighborGraph]>,
        w: Var,
        b: Option<Var>,
    ) -> Result<Var, AdError> {
        let (win, cout) = self.check_weight(w, b)?;
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || 2 * xs[2] != win {
            return Err(shape_err("edge input [B,N,C] vs weight [2C,out]", &xs, self.shape(w)));
        }
        let (batch, n) = (xs[0], xs[1]);
        let k = check_graphs(&graphs, batch, n)?;
        let (p, q) = self.edge_projections(x, w);
        let rows = batch * n;
        let bias = b.map(|b| self.value(b).data());
        let mut out = vec![T::ZERO; rows * k * cout];
        for (bi, g) in graphs.iter().enumerate() {
            for i in 0..n {
                let pi = &p[(bi * n + i) * cout..(bi * n + i + 1) * cout];
                for (j, &nb) in g.row(i).iter().enumerate() {
                    let qj = &q[(bi * n + nb as usize) * cout..(bi * n + nb as usize + 1) * cout];
                    let o = &mut out[((bi * n + i) * k + j) * cout..((bi * n + i) * k + j + 1) * cout];
                    match bias {
                        Some(bias) => {
                            for c in 0..cout {
                                o[c] = pi[c] - qj[c] + bias[c];
                            }
                        }
                        None => {
                            for c in 0..cout {
                                o[c] = pi[c] - qj[c];
                            }
                        }
                    }
                }
            }
        }
        self.push(
            NdArray::new(vec![batch, n, k, cout], out)?,
            Op::EdgeLinear { x, w, b, graphs },
            "edge_linear",
        )
    }

    /// `p = x·(w_top + w_bot)` and `q = x·w_bot`, so that the edge response is
    /// `p_i − q_j`.
    fn edge_projections(&self, x: Var, w: Var) -> (Vec<T>, Vec<T>) {
        let xs = self.shape(x);
        let (rows, c) = (xs[0] * xs[1], xs[2]);
        let cout = self.shape(w)[1];
        let wv = self.value(w).data();
        let (w_top, w_bot) = wv.split_at(c * cout);
        let w_sum: Vec<T> = w_top.iter().zip(w_bot).map(|(&a, &b)| a + b).collect();
        let xv = self.value(x).data();
        let mut p = vec![T::ZERO; rows * cout];
        let mut q = vec![T::ZERO; rows * cout];
        T::gemm(rows, c, cout, T::ONE, xv, false, &w_sum, false, T::ZERO, &mut p);
        T::gemm(rows, c, cout, T::ONE, xv, false, w_bot, false, T::ZERO, &mut q);
        (p, q)
    }

    /// Edge linear map, batch norm over all edges, leaky ReLU and max over
    /// the neighbor axis in one pass, without the `[B, N, k, out]` edge
    /// tensor: `[B, N, C]` → `[B, N, out]`. The normalization is monotone per
    /// channel, so the pooled entry is the largest raw edge response, or the
    /// smallest where `γ < 0`.
    #[allow(clippy::too_many_arguments)]
    pub fn edge_conv_max(
        &mut self,
        x: Var,
        graphs: Arc<[NeighborGraph]>,
        w: Var,
        gamma: Var,
        beta: Var,
        running: &BnStats<T>,
        train: bool,
        slope: f64,
    ) -> Result<(Var, Option<BnStats<T>>), AdError> {
        let (win, cout) = self.check_weight(w, None)?;
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || 2 * xs[2] != win {
            return Err(shape_err("edge input [B,N,C] vs weight [2C,out]", &xs, self.shape(w)));
        }
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [cout] {
                return Err(shape_err(name, self.shape(v), self.shape(w)));
            }
        }
        if running.mean.len() != cout || running.var.len() != cout {
            return Err(AdError::Shape(format!(
                "running stats have {} channels, layer has {}",
                running.mean.len(),
                cout
            )));
        }
        let (batch, n) = (xs[0], xs[1]);
        let k = check_graphs(&graphs, batch, n)?;
        let (p, q) = self.edge_projections(x, w);
        let rows = batch * n;
        let mut hi = vec![T::ZERO; rows * cout];
        let mut lo = vec![T::ZERO; rows * cout];
        let mut arg_hi = vec![0u32; rows * cout];
        let mut arg_lo = vec![0u32; rows * cout];
        let mut sum = vec![0.0f64; cout];
        let mut sq = vec![0.0f64; cout];
        let mut row_sum = vec![T::ZERO; cout];
        let mut row_sq = vec![T::ZERO; cout];
        let mut e = vec![T::ZERO; cout];
        for (bi, gr) in graphs.iter().enumerate() {
            for i in 0..n {
                let r = bi * n + i;
                let pr = &p[r * cout..(r + 1) * cout];
                let span = r * cout..(r + 1) * cout;
                let (h, l) = (&mut hi[span.clone()], &mut lo[span.clone()]);
                let (ah, al) = (&mut arg_hi[span.clone()], &mut arg_lo[span]);
                row_sum.fill(T::ZERO);
                row_sq.fill(T::ZERO);
                for (j, &nb) in gr.row(i).iter().enumerate() {
                    let qn = &q[(bi * n + nb as usize) * cout..(bi * n + nb as usize + 1) * cout];
                    for ((ev, &a), &b) in e.iter_mut().zip(pr).zip(qn) {
                        *ev = a - b;
                    }
                    for ((s, s2), &ev) in row_sum.iter_mut().zip(row_sq.iter_mut()).zip(&e) {
                        *s += ev;
                        *s2 += ev * ev;
                    }
                    if j == 0 {
                        h.copy_from_slice(&e);
                        l.copy_from_slice(&e);
                        continue;
                    }
                    let j = j as u32;
                    for ((hv, av), &ev) in h.iter_mut().zip(ah.iter_mut()).zip(&e) {
                        let up = ev > *hv;
                        *av = if up { j } else { *av };
                        *hv = if up { ev } else { *hv };
                    }
                    for ((lv, av), &ev) in l.iter_mut().zip(al.iter_mut()).zip(&e) {
                        let down = ev < *lv;
                        *av = if down { j } else { *av };
                        *lv = if down { ev } else { *lv };
                    }
                }
                for ch in 0..cout {
                    sum[ch] += row_sum[ch].to_f64();
                    sq[ch] += row_sq[ch].to_f64();
                }
            }
        }
        let (mean, var, stats) = if train {
            let m = (rows * k) as f64;
            let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
            let var: Vec<f64> = sq.iter().zip(&mean).map(|(s, mu)| (s / m - mu * mu).max(0.0)).collect();
            let unbiased = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            let stats = BnStats {
                mean: mean.iter().map(|&v| T::from_f64(v)).collect(),
                var: var.iter().map(|&v| T::from_f64(v * unbiased)).collect(),
            };
            (mean, var, Some(stats))
        } else {
            (
                running.mean.iter().map(|v| v.to_f64()).collect(),
                running.var.iter().map(|v| v.to_f64()).collect(),
                None,
            )
        };
        let mean: Vec<T> = mean.into_iter().map(T::from_f64).collect();
        let inv_std: Vec<T> = var.iter().map(|&v| T::from_f64(1.0 / (v + BN_EPS).sqrt())).collect();
        let gm = self.value(gamma).data();
        let bt = self.value(beta).data();
        let s = T::from_f64(slope);
        let mut out = vec![T::ZERO; rows * cout];
        let mut xhat = vec![T::ZERO; rows * cout];
        let mut arg = vec![0u32; rows * cout];
        for idx in 0..rows * cout {
            let ch = idx % cout;
            let (sel, a) = if gm[ch] >= T::ZERO {
                (hi[idx], arg_hi[idx])
            } else {
                (lo[idx], arg_lo[idx])
            };
            let h = (sel - mean[ch]) * inv_std[ch];
            let z = gm[ch] * h + bt[ch];
            out[idx] = if z > T::ZERO { z } else { z * s };
            xhat[idx] = h;
            arg[idx] = a;
        }
        let y = self.push(
            NdArray::new(vec![batch, n, cout], out)?,
            Op::EdgeConvMax {
                x,
                w,
                gamma,
                beta,
                graphs,
                p,
                q,
                mean,
                inv_std,
                arg,
                xhat,
                slope: s,
                batch_stats: train,
            },
            "edge_conv_max",
        )?;
        Ok((y, stats))
    }

    /// Gather `[x_i ‖ x_i − x_j]` for every edge: `[B, N, C]` → `[B, N, k, 2C]`.
    pub fn edge_features(&mut self, x: Var, graphs: Arc<[NeighborGraph]>) -> Result<Var, AdError> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(AdError::Shape(format!("edge features need [B,N,C], got {xs:?}")));
        }
        let (batch, n, c) = (xs[0], xs[1], xs[2]);
        let k = check_graphs(&graphs, batch, n)?;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(batch * n * k * 2 * c);
        for (bi, g) in graphs.iter().enumerate() {
            let base = bi * n * c;
            for i in 0..n {
                let xi = &xv[base + i * c..base + (i + 1) * c];
                for &nb in g.row(i) {
                    let xj = &xv[base + nb as usize * c..base + (nb as usize + 1) * c];
                    out.extend_from_slice(xi);
                    out.extend(xi.iter().zip(xj).map(|(&a, &b)| a - b));
                }
            }
        }
        self.push(
            NdArray::new(vec![batch, n, k, 2 * c], out)?,
            Op::EdgeFeatures { x, graphs },
            "edge_features",
        )
    }

    /// Per-channel normalization over every axis but the last.
    ///
    /// With `train` the batch statistics are used and returned (mean and
    /// unbiased variance) so the caller can fold them into its running
    /// estimates; otherwise `running` is used.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &BnStats<T>,
        train: bool,
    ) -> Result<(Var, Option<BnStats<T>>), AdError> {
        let c = self.value(x).last_dim();
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(shape_err(name, self.shape(v), self.shape(x)));
            }
        }
        if running.mean.len() != c || running.var.len() != c {
            return Err(AdError::Shape(format!(
                "running stats have {} channels, input has {}",
                running.mean.len(),
                c
            )));
        }
        let xv = self.value(x).data();
        let rows = xv.len() / c;
        let eps = BN_EPS;
        let (mean, var, out_stats) = if train {
            let m = rows.max(1) as f64;
            let sum = blocked_column_sums(xv, c, |v, _| v);
            let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
            let mean_t: Vec<T> = mean.iter().map(|&v| T::from_f64(v)).collect();
            // second pass for a stable variance
            let sq = blocked_column_sums(xv, c, |v, ch| {
                let d = v - mean_t[ch];
                d * d
            });
            let var: Vec<f64> = sq.iter().map(|v| v / m).collect();
            let unbiased = if rows > 1 { m / (m - 1.0) } else { 1.0 };
            let stats = BnStats {
                mean: mean.iter().map(|&v| T::from_f64(v)).collect(),
                var: var.iter().map(|&v| T::from_f64(v * unbiased)).collect(),
            };
            (mean, var, Some(stats))
        } else {
            (
                running.mean.iter().map(|v| v.to_f64()).collect(),
                running.var.iter().map(|v| v.to_f64()).collect(),
                None,
            )
        };
        let mean: Vec<T> = mean.into_iter().map(T::from_f64).collect();
        let inv_std: Vec<T> = var.iter().map(|&v| T::from_f64(1.0 / (v + eps).sqrt())).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![T::ZERO; xv.len()];
        let mut out = vec![T::ZERO; xv.len()];
        for ((row, hr), or) in xv
            .chunks_exact(c)
            .zip(xhat.chunks_exact_mut(c))
            .zip(out.chunks_exact_mut(c))
        {
            for ch in 0..c {
                let h = (row[ch] - mean[ch]) * inv_std[ch];
                hr[ch] = h;
                or[ch] = g[ch] * h + bt[ch];
            }
        }
        let shape = self.shape(x).to_vec();
        let v = self.push(
            NdArray::new(shape, out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: train,
            },
            "batch_norm",
        )?;
        Ok((v, out_stats))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AdError> {
        let out = self.value(x).map(|v| if v > T::ZERO { v } else { T::ZERO });
        self.push(out, Op::Relu { x }, "relu")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var, AdError> {
        let s = T::from_f64(slope);
        let out = self.value(x).map(|v| if v > T::ZERO { v } else { v * s });
        self.push(out, Op::LeakyRelu { x, slope: s }, "leaky_relu")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", self.shape(a), self.shape(b)));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add { a, b }, "add")
    }

    fn reduced_shape(&self, x: Var, axis: usize) -> Result<(Vec<usize>, (usize, usize, usize)), AdError> {
        let shape = self.shape(x);
        if axis >= shape.len() {
            return Err(AdError::Shape(format!("axis {axis} out of range for {shape:?}")));
        }
        if shape[axis] == 0 {
            return Err(AdError::EmptyAxis {
                axis,
                shape: shape.to_vec(),
            });
        }
        let ext = axis_extents(shape, axis);
        let mut out = shape.to_vec();
        out.remove(axis);
        Ok((out, ext))
    }

    /// Max over one axis. The gradient goes to the first maximal element.
    pub fn max_over_axis(&mut self, x: Var, axis: usize) -> Result<Var, AdError> {
        let (shape, (outer, len, inner)) = self.reduced_shape(x, axis)?;
        let xv = self.value(x).data();
        let mut out = vec![T::ZERO; outer * inner];
        let mut argmax = vec![0u32; outer * inner];
        for o in 0..outer {
            let block = &xv[o * len * inner..(o + 1) * len * inner];
            let dst = &mut out[o * inner..(o + 1) * inner];
            let arg = &mut argmax[o * inner..(o + 1) * inner];
            dst.copy_from_slice(&block[..inner]);
            for l in 1..len {
                let src = &block[l * inner..(l + 1) * inner];
                for i in 0..inner {
                    if src[i] > dst[i] {
                        dst[i] = src[i];
                        arg[i] = l as u32;
                    }
                }
            }
        }
        self.push(NdArray::new(shape, out)?, Op::MaxAxis { x, axis, argmax }, "max_over_axis")
    }

    pub fn mean_over_axis(&mut self, x: Var, axis: usize) -> Result<Var, AdError> {
        let (shape, (outer, len, inner)) = self.reduced_shape(x, axis)?;
        let xv = self.value(x).data();
        let scale = T::from_f64(1.0 / len as f64);
        let mut out = vec![T::ZERO; outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for l in 0..len {
                let src = &xv[(o * len + l) * inner..(o * len + l + 1) * inner];
                for i in 0..inner {
                    dst[i] += src[i];
                }
            }
            for d in dst.iter_mut() {
                *d *= scale;
            }
        }
        self.push(NdArray::new(shape, out)?, Op::MeanAxis { x, axis }, "mean_over_axis")
    }

    /// Join along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var, AdError> {
        let first = xs
            .first()
            .ok_or_else(|| AdError::Shape("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(AdError::Shape(format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let chunk = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(
            NdArray::new(shape, out)?,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            "concat",
        )
    }

    /// Insert a new axis of extent `n` at `axis`, repeating the input.
    pub fn expand(&mut self, x: Var, axis: usize, n: usize) -> Result<Var, AdError> {
        let xs = self.shape(x).to_vec();
        if axis > xs.len() {
            return Err(AdError::Shape(format!("cannot insert axis {axis} into {xs:?}")));
        }
        let outer: usize = xs[..axis].iter().product();
        let inner: usize = xs[axis..].iter().product();
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            let src = &xv[o * inner..(o + 1) * inner];
            for _ in 0..n {
                out.extend_from_slice(src);
            }
        }
        let mut shape = xs;
        shape.insert(axis, n);
        self.push(NdArray::new(shape, out)?, Op::Expand { x, axis }, "expand")
    }

    /// Inverted dropout with drop probability `p`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut impl Rng) -> Result<Var, AdError> {
        if p <= 0.0 {
            return Ok(x);
        }
        if p >= 1.0 {
            return Err(AdError::Shape(format!("dropout probability {p} must be < 1")));
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let xv = self.value(x);
        let mask: Vec<T> = (0..xv.len())
            .map(|_| if rng.random::<f64>() < p { T::ZERO } else { keep })
            .collect();
        let out: Vec<T> = xv.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let shape = xv.shape().to_vec();
        self.push(NdArray::new(shape, out)?, Op::Dropout { x, mask }, "dropout")
    }

    /// Mean softmax cross-entropy over rows of `logits` (`[..., m]`).
    /// `smoothing` mixes the one-hot target with the uniform distribution.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize], smoothing: f64) -> Result<Var, AdError> {
        let m = self.value(logits).last_dim();
        let lv = self.value(logits).data();
        let rows = lv.len() / m.max(1);
        if m == 0 || rows == 0 {
            return Err(AdError::EmptyAxis {
                axis: self.shape(logits).len().saturating_sub(1),
                shape: self.shape(logits).to_vec(),
            });
        }
        if labels.len() != rows {
            return Err(AdError::Shape(format!(
                "{} labels for {} logit rows",
                labels.len(),
                rows
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
            return Err(AdError::LabelOutOfRange { label: bad, classes: m });
        }
        let eps = smoothing;
        let mut probs = Vec::with_capacity(lv.len());
        let mut loss = 0.0f64;
        for (row, &label) in lv.chunks_exact(m).zip(labels) {
            let mx = row.iter().fold(row[0].to_f64(), |a, v| a.max(v.to_f64()));
            let z: f64 = row.iter().map(|v| (v.to_f64() - mx).exp()).sum();
            let log_z = z.ln() + mx;
            for (c, v) in row.iter().enumerate() {
                let logp = v.to_f64() - log_z;
                probs.push(T::from_f64(logp.exp()));
                let target = if c == label { 1.0 - eps } else { 0.0 } + eps / m as f64;
                loss -= target * logp;
            }
        }
        let loss = T::from_f64(loss / rows as f64);
        self.push(
            NdArray::scalar(loss),
            Op::SoftmaxXent {
                logits,
                probs,
                labels: labels.to_vec(),
                smoothing: T::from_f64(smoothing),
            },
            "softmax_cross_entropy",
        )
    }

    /// `Σ x ⊙ weights` for a constant weight array; reduces any node to a
    /// scalar, which is what gradient checks need.
    pub fn weighted_sum(&mut self, x: Var, weights: &NdArray<T>) -> Result<Var, AdError> {
        if self.shape(x) != weights.shape() {
            return Err(shape_err("weighted_sum", self.shape(x), weights.shape()));
        }
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .fold(T::ZERO, |acc, (&a, &b)| acc + a * b);
        self.push(
            NdArray::scalar(s),
            Op::WeightedSum {
                x,
                weights: weights.data().to_vec(),
            },
            "weighted_sum",
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AdError> {
        let out = self.value(x).clone().reshaped(shape)?;
        self.push(out, Op::Reshape { x }, "reshape")
    }

    /// Reverse sweep from a scalar `loss`. Only leaf gradients are retained.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, AdError> {
        let ls = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(AdError::NotScalar(ls.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![T::ONE]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backward_node(node, &g, &mut grads);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                g.map(|data| {
                    NdArray::new(node.value.shape().to_vec(), data).expect("gradient shape matches value")
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        macro_rules! grad_of {
            ($v:expr) => {
                grad_buf(nodes, grads, $v)
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (cin, cout) = {
                    let s = nodes[w.0].value.shape();
                    (s[0], s[1])
                };
                let rows = g.len() / cout;
                if let Some(dx) = grad_of!(*x) {
                    T::gemm(rows, cout, cin, T::ONE, g, false, nodes[w.0].value.data(), true, T::ONE, dx);
                }
                if let Some(dw) = grad_of!(*w) {
                    T::gemm(cin, rows, cout, T::ONE, nodes[x.0].value.data(), true, g, false, T::ONE, dw);
                }
                if let Some(b) = b {
                    if let Some(db) = grad_of!(*b) {
                        column_sums(g, cout, db);
                    }
                }
            }
            Op::EdgeLinear { x, w, b, graphs } => {
                let xs = nodes[x.0].value.shape();
                let (batch, n) = (xs[0], xs[1]);
                let cout = nodes[w.0].value.shape()[1];
                let k = graphs[0].k();
                let rows = batch * n;
                let mut dp = vec![T::ZERO; rows * cout];
                let mut dq = vec![T::ZERO; rows * cout];
                for (bi, gr) in graphs.iter().enumerate() {
                    for i in 0..n {
                        let r = bi * n + i;
                        for (j, &nb) in gr.row(i).iter().enumerate() {
                            let ge = &g[(r * k + j) * cout..(r * k + j + 1) * cout];
                            let qn = bi * n + nb as usize;
                            for ch in 0..cout {
                                dp[r * cout + ch] += ge[ch];
                                dq[qn * cout + ch] -= ge[ch];
                            }
                        }
                    }
                }
                edge_projection_backward(nodes, grads, *x, *w, &dp, dq);
                if let Some(b) = b {
                    if let Some(db) = grad_of!(*b) {
                        column_sums(g, cout, db);
                    }
                }
            }
            Op::EdgeConvMax {
                x,
                w,
                gamma,
                beta,
                graphs,
                p,
                q,
                mean,
                inv_std,
                arg,
                xhat,
                slope,
                batch_stats,
            } => {
                let cout = inv_std.len();
                let rows = g.len() / cout;
                let y = node.value.data();
                let gz: Vec<T> = g
                    .iter()
                    .zip(y)
                    .map(|(&gv, &yv)| if yv > T::ZERO { gv } else { gv * *slope })
                    .collect();
                let mut sum_g = vec![T::ZERO; cout];
                let mut sum_gx = vec![T::ZERO; cout];
                for (gr, hr) in gz.chunks_exact(cout).zip(xhat.chunks_exact(cout)) {
                    for ch in 0..cout {
                        sum_g[ch] += gr[ch];
                        sum_gx[ch] += gr[ch] * hr[ch];
                    }
                }
                if let Some(dg) = grad_of!(*gamma) {
                    for ch in 0..cout {
                        dg[ch] += sum_gx[ch];
                    }
                }
                if let Some(db) = grad_of!(*beta) {
                    for ch in 0..cout {
                        db[ch] += sum_g[ch];
                    }
                }
                let needs_x = nodes[x.0].requires_grad || nodes[w.0].requires_grad;
                if !needs_x {
                    return;
                }
                let n = nodes[x.0].value.shape()[1];
                let k = graphs[0].k();
                let gm = nodes[gamma.0].value.data();
                let mut dp = vec![T::ZERO; rows * cout];
                let mut dq = vec![T::ZERO; rows * cout];
                for (bi, gr) in graphs.iter().enumerate() {
                    for i in 0..n {
                        let r = bi * n + i;
                        let nbrs = gr.row(i);
                        for ch in 0..cout {
                            let idx = r * cout + ch;
                            let d = gm[ch] * inv_std[ch] * gz[idx];
                            let qn = bi * n + nbrs[arg[idx] as usize] as usize;
                            dp[idx] += d;
                            dq[qn * cout + ch] -= d;
                        }
                    }
                }
                if *batch_stats {
                    // dense part of the normalization gradient, affine in the edge response
                    let inv_m = T::from_f64(1.0 / (rows * k) as f64);
                    let s1: Vec<T> = (0..cout).map(|ch| gm[ch] * sum_g[ch]).collect();
                    let s2: Vec<T> = (0..cout).map(|ch| gm[ch] * sum_gx[ch]).collect();
                    let slope_e: Vec<T> = (0..cout)
                        .map(|ch| T::ZERO - inv_std[ch] * inv_std[ch] * s2[ch] * inv_m)
                        .collect();
                    let offset: Vec<T> = (0..cout)
                        .map(|ch| T::ZERO - inv_std[ch] * inv_m * (s1[ch] - mean[ch] * inv_std[ch] * s2[ch]))
                        .collect();
                    for (bi, gr) in graphs.iter().enumerate() {
                        for i in 0..n {
                            let r = bi * n + i;
                            let pr = &p[r * cout..(r + 1) * cout];
                            for &nb in gr.row(i) {
                                let qi = (bi * n + nb as usize) * cout;
                                for ch in 0..cout {
                                    let d = offset[ch] + slope_e[ch] * (pr[ch] - q[qi + ch]);
                                    dp[r * cout + ch] += d;
                                    dq[qi + ch] -= d;
                                }
                            }
                        }
                    }
                }
                edge_projection_backward(nodes, grads, *x, *w, &dp, dq);
            }
            Op::EdgeFeatures { x, graphs } => {
                if let Some(dx) = grad_of!(*x) {
                    let xs = nodes[x.0].value.shape();
                    let (n, c) = (xs[1], xs[2]);
                    let k = graphs[0].k();
                    for (bi, gr) in graphs.iter().enumerate() {
                        for i in 0..n {
                            let r = bi * n + i;
                            for (j, &nb) in gr.row(i).iter().enumerate() {
                                let ge = &g[(r * k + j) * 2 * c..(r * k + j + 1) * 2 * c];
                                let qn = bi * n + nb as usize;
                                for ch in 0..c {
                                    dx[r * c + ch] += ge[ch] + ge[c + ch];
                                    dx[qn * c + ch] -= ge[c + ch];
                                }
                            }
                        }
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let c = inv_std.len();
                let rows = g.len() / c;
                let mut sum_g = vec![T::ZERO; c];
                let mut sum_gx = vec![T::ZERO; c];
                for (gr, hr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for ch in 0..c {
                        sum_g[ch] += gr[ch];
                        sum_gx[ch] += gr[ch] * hr[ch];
                    }
                }
                if let Some(dg) = grad_of!(*gamma) {
                    for ch in 0..c {
                        dg[ch] += sum_gx[ch];
                    }
                }
                if let Some(db) = grad_of!(*beta) {
                    for ch in 0..c {
                        db[ch] += sum_g[ch];
                    }
                }
                if let Some(dx) = grad_of!(*x) {
                    let gm = nodes[gamma.0].value.data();
                    let scale: Vec<T> = (0..c).map(|ch| gm[ch] * inv_std[ch]).collect();
                    if *batch_stats {
                        let inv_m = T::from_f64(1.0 / rows as f64);
                        let mean_g: Vec<T> = sum_g.iter().map(|&s| s * inv_m).collect();
                        let mean_gx: Vec<T> = sum_gx.iter().map(|&s| s * inv_m).collect();
                        for ((d, gr), hr) in dx.chunks_exact_mut(c).zip(g.chunks_exact(c)).zip(xhat.chunks_exact(c)) {
                            for ch in 0..c {
                                d[ch] += scale[ch] * (gr[ch] - mean_g[ch] - hr[ch] * mean_gx[ch]);
                            }
                        }
                    } else {
                        for (d, gr) in dx.chunks_exact_mut(c).zip(g.chunks_exact(c)) {
                            for ch in 0..c {
                                d[ch] += scale[ch] * gr[ch];
                            }
                        }
                    }
                }
            }
            Op::Relu { x } => {
                if let Some(dx) = grad_of!(*x) {
                    let xv = nodes[x.0].value.data();
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xv) {
                        if v > T::ZERO {
                            *d += gv;
                        }
                    }
                }
            }
            Op::LeakyRelu { x, slope } => {
                if let Some(dx) = grad_of!(*x) {
                    let xv = nodes[x.0].value.data();
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xv) {
                        *d += if v > T::ZERO { gv } else { gv * *slope };
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(d) = grad_of!(v) {
                        for (d, &gv) in d.iter_mut().zip(g) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::MaxAxis { x, axis, argmax } => {
                if let Some(dx) = grad_of!(*x) {
                    let (outer, len, inner) = axis_extents(nodes[x.0].value.shape(), *axis);
                    for o in 0..outer {
                        for i in 0..inner {
                            let l = argmax[o * inner + i] as usize;
                            dx[(o * len + l) * inner + i] += g[o * inner + i];
                        }
                    }
                }
            }
            Op::MeanAxis { x, axis } => {
                if let Some(dx) = grad_of!(*x) {
                    let (outer, len, inner) = axis_extents(nodes[x.0].value.shape(), *axis);
                    let scale = T::from_f64(1.0 / len as f64);
                    for o in 0..outer {
                        for l in 0..len {
                            for i in 0..inner {
                                dx[(o * len + l) * inner + i] += g[o * inner + i] * scale;
                            }
                        }
                    }
                }
            }
            Op::Concat { xs, axis } => {
                let out_shape = node.value.shape();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let total = out_shape[*axis] * inner;
                let mut offset = 0;
                for &v in xs {
                    let chunk = nodes[v.0].value.shape()[*axis] * inner;
                    if let Some(d) = grad_of!(v) {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + chunk];
                            for (a, &b) in d[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                *a += b;
                            }
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Expand { x, axis } => {
                if let Some(dx) = grad_of!(*x) {
                    let xs = nodes[x.0].value.shape();
                    let outer: usize = xs[..*axis].iter().product();
                    let inner: usize = xs[*axis..].iter().product();
                    let n = node.value.shape()[*axis];
                    for o in 0..outer {
                        for r in 0..n {
                            let src = &g[(o * n + r) * inner..(o * n + r + 1) * inner];
                            for (a, &b) in dx[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                                *a += b;
                            }
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(dx) = grad_of!(*x) {
                    for ((d, &gv), &m) in dx.iter_mut().zip(g).zip(mask) {
                        *d += gv * m;
                    }
                }
            }
            Op::SoftmaxXent {
                logits,
                probs,
                labels,
                smoothing,
            } => {
                if let Some(dl) = grad_of!(*logits) {
                    let m = nodes[logits.0].value.last_dim();
                    let rows = labels.len();
                    let scale = g[0] / T::from_f64(rows as f64);
                    let uniform = *smoothing / T::from_f64(m as f64);
                    for (r, &label) in labels.iter().enumerate() {
                        for c in 0..m {
                            let target = if c == label { T::ONE - *smoothing } else { T::ZERO } + uniform;
                            dl[r * m + c] += (probs[r * m + c] - target) * scale;
                        }
                    }
                }
            }
            Op::WeightedSum { x, weights } => {
                if let Some(dx) = grad_of!(*x) {
                    for (d, &w) in dx.iter_mut().zip(weights) {
                        *d += w * g[0];
                    }
                }
            }
            Op::Reshape { x } => {
                if let Some(dx) = grad_of!(*x) {
                    for (d, &gv) in dx.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
            }
        }
    }
}
