//! Test oracles shared by the suites. Finite differences only evaluate
//! forward passes, so they are independent of the backward code they check.

use std::sync::Arc;

use pointgr_core::autodiff::{NdArray, ParamStore, Tape, Var};
use pointgr_core::blocks::{Forward, Mode};
use pointgr_core::graph::NeighborGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> NdArray<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    NdArray::new(shape.to_vec(), data).unwrap()
}

/// Gradients below this magnitude are finite-difference noise
/// (loss roundoff over the step is about 1e-11).
pub const GRAD_FLOOR: f64 = 1e-6;

/// Relative gap between one-sided slopes that marks a kink inside the probe.
pub const KINK_TOL: f64 = 1e-2;

/// Gradient-norm-relative error: `max|a − n| / max(max|a|, max|n|, GRAD_FLOOR)`.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    rel_error_floored(analytic, numeric, GRAD_FLOOR)
}

pub fn rel_error_floored(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    diff / scale.max(floor)
}

/// Scalar objective built on a fresh tape from the given input arrays. Non-scalar
/// outputs are contracted with a fixed random weight array.
fn objective(
    inputs: &[NdArray<f64>],
    f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var,
    weights: &mut Option<NdArray<f64>>,
    seed: u64,
) -> (Tape<f64>, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|a| tape.param(a.clone())).collect();
    let out = f(&mut tape, &vars);
    let loss = if tape.value(out).len() == 1 && tape.shape(out).is_empty() {
        out
    } else {
        let w = weights.get_or_insert_with(|| {
            let mut r = rng(seed ^ 0x9e37_79b9);
            uniform(&mut r, tape.shape(out), -1.0, 1.0)
        });
        tape.weighted_sum(out, w).unwrap()
    };
    (tape, vars, loss)
}

/// Largest relative error between the tape's gradients and central
/// differences, over all inputs.
pub fn grad_check(inputs: &[NdArray<f64>], seed: u64, f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let mut weights = None;
    let (tape, vars, loss) = objective(inputs, f, &mut weights, seed);
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (idx, input) in inputs.iter().enumerate() {
        let analytic: Vec<f64> = grads
            .get(vars[idx])
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; input.len()]);
        let numeric = numeric_grad(inputs, idx, &(0..input.len()).collect::<Vec<_>>(), f, &mut weights, seed);
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    worst
}

/// Central differences of the objective w.r.t. selected elements of one input.
pub fn numeric_grad(
    inputs: &[NdArray<f64>],
    which: usize,
    elements: &[usize],
    f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var,
    weights: &mut Option<NdArray<f64>>,
    seed: u64,
) -> Vec<f64> {
    let mut work = inputs.to_vec();
    elements
        .iter()
        .map(|&e| {
            let orig = work[which].data()[e];
            work[which].data_mut()[e] = orig + FD_STEP;
            let (t, _, l) = objective(&work, f, weights, seed);
            let plus = t.value(l).data()[0];
            work[which].data_mut()[e] = orig - FD_STEP;
            let (t, _, l) = objective(&work, f, weights, seed);
            let minus = t.value(l).data()[0];
            work[which].data_mut()[e] = orig;
            (plus - minus) / (2.0 * FD_STEP)
        })
        .collect()
}

type Graphs = Vec<Arc<[NeighborGraph]>>;

/// Scalar loss of one forward pass over `params`, plus the graphs it used.
fn pass_loss(
    params: &ParamStore<f64>,
    mode: Mode,
    seed: u64,
    replay: Option<&Graphs>,
    f: &dyn Fn(&mut Forward<'_, f64>) -> Var,
    weights: &mut Option<NdArray<f64>>,
) -> (f64, Option<std::collections::BTreeMap<String, NdArray<f64>>>, Graphs) {
    let mut fw = Forward::new(params, mode, seed);
    if let Some(g) = replay {
        fw = fw.with_graphs(g.clone());
    }
    let out = f(&mut fw);
    let loss = if fw.tape.shape(out).is_empty() {
        out
    } else {
        let w = weights.get_or_insert_with(|| {
            let mut r = rng(seed ^ 0x5bd1_e995);
            uniform(&mut r, fw.tape.shape(out), -1.0, 1.0)
        });
        fw.tape.weighted_sum(out, w).unwrap()
    };
    let value = fw.tape.value(loss).data()[0];
    let grads = if replay.is_none() {
        Some(fw.gradients(loss).unwrap())
    } else {
        None
    };
    (value, grads, fw.graphs().to_vec())
}

/// Worst per-parameter relative error between analytic gradients and central
/// differences, probing up to `per_param` random elements of each trainable
/// parameter. Neighbor graphs are frozen at those of the unperturbed pass.
/// When the two one-sided slopes disagree by more than [`KINK_TOL`] the probe
/// straddles a kink (LeakyReLU at zero, a max switching argument) and the
/// analytic value is compared with whichever of the central and one-sided
/// slopes lies nearest.
/// The noise floor scales with the largest gradient anywhere in the model.
pub fn param_grad_check(
    params: &ParamStore<f64>,
    mode: Mode,
    seed: u64,
    per_param: usize,
    f: &dyn Fn(&mut Forward<'_, f64>) -> Var,
) -> f64 {
    let mut weights = None;
    let (base, grads, graphs) = pass_loss(params, mode, seed, None, f, &mut weights);
    let grads = grads.unwrap();
    let global = grads
        .values()
        .flat_map(|g| g.data().iter().map(|v| v.abs()))
        .fold(0.0, f64::max);
    let floor = GRAD_FLOOR.max(GRAD_FLOOR * global);
    let mut pick = rng(seed.wrapping_add(17));
    let mut worst: f64 = 0.0;
    for name in params.trainable_names().map(String::from).collect::<Vec<_>>() {
        let len = params.get(&name).unwrap().len();
        let elements: Vec<usize> = if len <= per_param {
            (0..len).collect()
        } else {
            (0..per_param).map(|_| pick.random_range(0..len)).collect()
        };
        let analytic: Vec<f64> = elements
            .iter()
            .map(|&e| grads.get(&name).map_or(0.0, |g| g.data()[e]))
            .collect();
        let numeric: Vec<f64> = elements
            .iter()
            .zip(&analytic)
            .map(|(&e, &a)| {
                let mut p = params.clone();
                let orig = p.get(&name).unwrap().data()[e];
                p.get_mut(&name).unwrap().data_mut()[e] = orig + FD_STEP;
                let (plus, _, _) = pass_loss(&p, mode, seed, Some(&graphs), f, &mut weights);
                p.get_mut(&name).unwrap().data_mut()[e] = orig - FD_STEP;
                let (minus, _, _) = pass_loss(&p, mode, seed, Some(&graphs), f, &mut weights);
                let central = (plus - minus) / (2.0 * FD_STEP);
                let (fwd, bwd) = ((plus - base) / FD_STEP, (base - minus) / FD_STEP);
                if (fwd - bwd).abs() > KINK_TOL * fwd.abs().max(bwd.abs()).max(floor) {
                    [central, fwd, bwd]
                        .into_iter()
                        .min_by(|x, y| (a - x).abs().total_cmp(&(a - y).abs()))
                        .unwrap()
                } else {
                    central
                }
            })
            .collect();
        worst = worst.max(rel_error_floored(&analytic, &numeric, floor));
    }
    worst
}
