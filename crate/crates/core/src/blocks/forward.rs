use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdError, BnStats, NdArray, ParamStore, Real, Tape, Var};
use crate::graph::NeighborGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: a fresh tape, read-only parameters, and the batch-norm
/// statistics gathered in training mode.
pub struct Forward<'p, T> {
    pub tape: Tape<T>,
    params: &'p ParamStore<T>,
    mode: Mode,
    vars: BTreeMap<String, Var>,
    stat_updates: Vec<(String, BnStats<T>)>,
    rng: ChaCha8Rng,
    graphs: Vec<Arc<[NeighborGraph]>>,
    replay: Option<Vec<Arc<[NeighborGraph]>>>,
}

impl<'p, T: Real> Forward<'p, T> {
    pub fn new(params: &'p ParamStore<T>, mode: Mode, seed: u64) -> Self {
        Forward {
            tape: Tape::new(),
            params,
            mode,
            vars: BTreeMap::new(),
            stat_updates: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            graphs: Vec::new(),
            replay: None,
        }
    }

    /// Reuse the neighbor graphs of an earlier pass, in the order they were
    /// built, instead of searching again.
    pub fn with_graphs(mut self, graphs: Vec<Arc<[NeighborGraph]>>) -> Self {
        self.replay = Some(graphs);
        self
    }

    /// Graphs built (or replayed) so far in this pass.
    pub fn graphs(&self) -> &[Arc<[NeighborGraph]>] {
        &self.graphs
    }

    /// Next neighbor graph of the pass: replayed if available, else built
    /// from the value of `x`.
    pub fn graph<E>(
        &mut self,
        x: Var,
        build: impl FnOnce(&NdArray<T>) -> Result<Arc<[NeighborGraph]>, E>,
    ) -> Result<Arc<[NeighborGraph]>, E> {
        let g = match self.replay.as_ref().and_then(|r| r.get(self.graphs.len())) {
            Some(g) => g.clone(),
            None => build(self.tape.value(x))?,
        };
        self.graphs.push(g.clone());
        Ok(g)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn params(&self) -> &ParamStore<T> {
        self.params
    }

    pub fn input(&mut self, value: NdArray<T>) -> Var {
        self.tape.constant(value)
    }

    /// Tape leaf for a stored parameter, created on first use.
    pub fn param(&mut self, name: &str) -> Result<Var, AdError> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let value = self.params.get(name)?.clone();
        let v = self.tape.leaf(value, self.params.is_trainable(name));
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    /// Leaf created for `name` during this pass, if any.
    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// `prefix.weight` and, when stored, `prefix.bias`.
    pub fn linear(&mut self, x: Var, prefix: &str) -> Result<Var, AdError> {
        let (w, b) = self.weight_and_bias(prefix)?;
        self.tape.linear(x, w, b)
    }

    pub fn edge_linear(&mut self, x: Var, graphs: Arc<[NeighborGraph]>, prefix: &str) -> Result<Var, AdError> {
        let (w, b) = self.weight_and_bias(prefix)?;
        self.tape.edge_linear(x, graphs, w, b)
    }

    fn weight_and_bias(&mut self, prefix: &str) -> Result<(Var, Option<Var>), AdError> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let bias = format!("{prefix}.bias");
        let b = if self.params.contains(&bias) {
            Some(self.param(&bias)?)
        } else {
            None
        };
        Ok((w, b))
    }

    pub fn batch_norm(&mut self, x: Var, prefix: &str) -> Result<Var, AdError> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        let running = self.params.bn_stats(prefix)?;
        let (y, stats) = self
            .tape
            .batch_norm(x, gamma, beta, &running, self.mode == Mode::Train)?;
        if let Some(s) = stats {
            self.stat_updates.push((prefix.to_string(), s));
        }
        Ok(y)
    }

    /// Fused edge linear map, batch norm, leaky ReLU and max over neighbors.
    pub fn edge_conv_max(
        &mut self,
        x: Var,
        graphs: Arc<[NeighborGraph]>,
        conv: &str,
        bn: &str,
        slope: f64,
    ) -> Result<Var, AdError> {
        let w = self.param(&format!("{conv}.weight"))?;
        if self.params.contains(&format!("{conv}.bias")) {
            return Err(AdError::Shape(format!("`{conv}` feeds a batch norm and must not have a bias")));
        }
        let gamma = self.param(&format!("{bn}.gamma"))?;
        let beta = self.param(&format!("{bn}.beta"))?;
        let running = self.params.bn_stats(bn)?;
        let (y, stats) = self
            .tape
            .edge_conv_max(x, graphs, w, gamma, beta, &running, self.mode == Mode::Train, slope)?;
        if let Some(s) = stats {
            self.stat_updates.push((bn.to_string(), s));
        }
        Ok(y)
    }

    /// Inverted dropout in training mode, identity otherwise.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var, AdError> {
        if self.mode == Mode::Eval {
            return Ok(x);
        }
        self.tape.dropout(x, p, &mut self.rng)
    }

    /// Gradients of `loss` for every trainable parameter touched by this pass.
    pub fn gradients(&self, loss: Var) -> Result<BTreeMap<String, NdArray<T>>, AdError> {
        let mut g = self.tape.backward(loss)?;
        Ok(self
            .vars
            .iter()
            .filter(|(name, _)| self.params.is_trainable(name))
            .filter_map(|(name, &v)| g.take(v).map(|grad| (name.clone(), grad)))
            .collect())
    }

    /// Batch statistics gathered in training mode, keyed by layer prefix.
    pub fn stat_updates(&self) -> &[(String, BnStats<T>)] {
        &self.stat_updates
    }

    pub fn into_stat_updates(self) -> Vec<(String, BnStats<T>)> {
        self.stat_updates
    }
}
