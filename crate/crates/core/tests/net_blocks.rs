use pointgr_testkit as common;

use std::sync::Arc;

use pointgr_core::autodiff::{NdArray, ParamStore};
use pointgr_core::blocks::{
    fln_forward, fln_with_graphs, init_fln, init_pre, pre_forward, pre_with_graphs, FlnConfig, Forward, Mode,
    PreConfig,
};
use pointgr_core::graph::{build_edge_features, knn_bruteforce, NeighborGraph};
use rand::seq::SliceRandom;

use common::{param_grad_check, rng, uniform};

fn pre_store(cfg: &PreConfig, seed: u64) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    init_pre(&mut s, "pre", cfg, &mut rng(seed)).unwrap();
    s
}

fn fln_store(cfg: &FlnConfig, seed: u64) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    init_fln(&mut s, "fln", cfg, &mut rng(seed)).unwrap();
    s
}

fn run_pre(params: &ParamStore<f64>, x: &NdArray<f64>, cfg: &PreConfig) -> NdArray<f64> {
    let mut f = Forward::new(params, Mode::Eval, 0);
    let xv = f.input(x.clone());
    let y = pre_forward(&mut f, xv, cfg, "pre").unwrap();
    f.tape.value(y).clone()
}

fn run_fln(params: &ParamStore<f64>, x: &NdArray<f64>, cfg: &FlnConfig) -> NdArray<f64> {
    let mut f = Forward::new(params, Mode::Eval, 0);
    let xv = f.input(x.clone());
    let y = fln_forward(&mut f, xv, cfg, "fln").unwrap();
    f.tape.value(y).clone()
}

#[test]
fn pre_with_zero_branch_reduces_to_skip_path() {
    let cfg = PreConfig::new(3, 4);
    let mut params = pre_store(&cfg, 1);
    let w = params.get_mut("pre.conv2.weight").unwrap();
    *w = NdArray::zeros(w.shape());
    let x = uniform(&mut rng(2), &[1, 10, 3], -1.0, 1.0);
    let out = run_pre(&params, &x, &cfg);

    // Same ops without the branch, on the tape.
    let mut f = Forward::new(&params, Mode::Eval, 0);
    let xv = f.input(x.clone());
    let g = knn_bruteforce(x.data(), 3, 4).unwrap();
    let e = f.tape.edge_features(xv, Arc::from(vec![g.clone()])).unwrap();
    let r = f.tape.relu(e).unwrap();
    let m = f.tape.max_over_axis(r, 2).unwrap();
    let skip = f.linear(m, "pre.point").unwrap();
    assert_eq!(f.tape.value(skip), &out);

    // Independent loop oracle.
    let block = build_edge_features(x.data(), 3, &g).unwrap();
    let w = params.get("pre.point.weight").unwrap().data();
    let b = params.get("pre.point.bias").unwrap().data();
    for i in 0..10 {
        let mut pooled = [f64::NEG_INFINITY; 6];
        for j in 0..4 {
            for (c, v) in block.edge(i, j).iter().enumerate() {
                pooled[c] = pooled[c].max(v.max(0.0));
            }
        }
        for o in 0..6 {
            let want = b[o] + (0..6).map(|c| pooled[c] * w[c * 6 + o]).sum::<f64>();
            assert!((out.data()[i * 6 + o] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn pre_emits_six_channels_per_point() {
    let cfg = PreConfig::new(3, 2);
    let params = pre_store(&cfg, 3);
    let x = uniform(&mut rng(4), &[1, 4, 3], -1.0, 1.0);
    assert_eq!(run_pre(&params, &x, &cfg).shape(), &[1, 4, 6]);
    let scene = PreConfig::new(9, 3);
    let params = pre_store(&scene, 3);
    let x = uniform(&mut rng(4), &[2, 5, 9], 0.0, 1.0);
    assert_eq!(run_pre(&params, &x, &scene).shape(), &[2, 5, 6]);
}

#[test]
fn pre_rejects_wrong_channels_and_small_n() {
    let cfg = PreConfig::new(3, 5);
    let params = pre_store(&cfg, 3);
    let mut f = Forward::new(&params, Mode::Eval, 0);
    let x = f.input(NdArray::zeros(&[1, 4, 3]));
    assert!(pre_forward(&mut f, x, &cfg, "pre").is_err());
    let y = f.input(NdArray::zeros(&[1, 8, 4]));
    assert!(pre_forward(&mut f, y, &cfg, "pre").is_err());
    let bad = PreConfig { hidden: 4, ..cfg };
    assert!(init_pre(&mut ParamStore::<f64>::new(), "p", &bad, &mut rng(0)).is_err());
}

#[test]
fn pre_gradients_match_finite_differences() {
    let cfg = PreConfig::new(3, 3);
    for seed in 0..3 {
        let params = pre_store(&cfg, 10 + seed);
        let x = uniform(&mut rng(20 + seed), &[2, 8, 3], -1.0, 1.0);
        for mode in [Mode::Train, Mode::Eval] {
            let err = param_grad_check(&params, mode, seed, 12, &|f| {
                let xv = f.input(x.clone());
                pre_forward(f, xv, &cfg, "pre").unwrap()
            });
            assert!(err <= 1e-3, "seed {seed} {mode:?}: {err}");
        }
    }
}

#[test]
fn fln_output_shape() {
    let cfg = FlnConfig {
        in_channels: 6,
        out_channels: 64,
        k: 4,
    };
    let params = fln_store(&cfg, 5);
    let x = uniform(&mut rng(6), &[1, 16, 6], -1.0, 1.0);
    assert_eq!(run_fln(&params, &x, &cfg).shape(), &[1, 16, 64]);
}

#[test]
fn duplicated_points_get_identical_features() {
    let x = uniform(&mut rng(7), &[1, 12, 6], -1.0, 1.0);
    let mut doubled = x.data().to_vec();
    doubled.extend_from_slice(x.data());
    let x2 = NdArray::new(vec![1, 24, 6], doubled).unwrap();
    let cfg = FlnConfig {
        in_channels: 6,
        out_channels: 16,
        k: 5,
    };
    let out = run_fln(&fln_store(&cfg, 8), &x2, &cfg);
    let (a, b) = out.data().split_at(12 * 16);
    assert_eq!(a, b);

    let pre = PreConfig::new(3, 5);
    let x3 = NdArray::new(vec![1, 24, 3], x2.data().iter().step_by(2).copied().collect()).unwrap();
    let out = run_pre(&pre_store(&pre, 8), &x3, &pre);
    let (a, b) = out.data().split_at(12 * 6);
    assert_eq!(a, b);
}

#[test]
fn fln_gradients_match_finite_differences() {
    let cfg = FlnConfig {
        in_channels: 4,
        out_channels: 5,
        k: 3,
    };
    for seed in 0..3 {
        let params = fln_store(&cfg, 30 + seed);
        let x = uniform(&mut rng(40 + seed), &[2, 8, 4], -1.0, 1.0);
        for mode in [Mode::Train, Mode::Eval] {
            let err = param_grad_check(&params, mode, seed, 12, &|f| {
                let xv = f.input(x.clone());
                fln_forward(f, xv, &cfg, "fln").unwrap()
            });
            assert!(err <= 1e-3, "seed {seed} {mode:?}: {err}");
        }
    }
}

fn permute_rows(x: &NdArray<f64>, perm: &[usize]) -> NdArray<f64> {
    let c = x.last_dim();
    let mut data = Vec::with_capacity(x.len());
    for &p in perm {
        data.extend_from_slice(&x.data()[p * c..(p + 1) * c]);
    }
    NdArray::new(x.shape().to_vec(), data).unwrap()
}

#[test]
fn blocks_are_permutation_equivariant() {
    let pre = PreConfig::new(3, 6);
    let fln = FlnConfig {
        in_channels: 3,
        out_channels: 8,
        k: 6,
    };
    let (pp, fp) = (pre_store(&pre, 50), fln_store(&fln, 51));
    for trial in 0..10 {
        let mut r = rng(60 + trial);
        let x = uniform(&mut r, &[1, 40, 3], -1.0, 1.0);
        let mut perm: Vec<usize> = (0..40).collect();
        perm.shuffle(&mut r);
        let xp = permute_rows(&x, &perm);
        for (a, b) in [
            (permute_rows(&run_pre(&pp, &x, &pre), &perm), run_pre(&pp, &xp, &pre)),
            (permute_rows(&run_fln(&fp, &x, &fln), &perm), run_fln(&fp, &xp, &fln)),
        ] {
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((u - v).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn neighbor_order_within_a_row_does_not_matter() {
    let x = uniform(&mut rng(70), &[1, 20, 3], -1.0, 1.0);
    let g = knn_bruteforce(x.data(), 3, 5).unwrap();
    let mut r = rng(71);
    let mut shuffled = Vec::new();
    for row in g.rows() {
        let mut row = row.to_vec();
        row.shuffle(&mut r);
        shuffled.extend(row);
    }
    let g2 = NeighborGraph::from_indices(20, 5, shuffled).unwrap();
    let pre = PreConfig::new(3, 5);
    let fln = FlnConfig {
        in_channels: 3,
        out_channels: 7,
        k: 5,
    };
    let (pp, fp) = (pre_store(&pre, 72), fln_store(&fln, 73));
    let eval = |graph: &NeighborGraph| {
        let mut f = Forward::new(&pp, Mode::Eval, 0);
        let xv = f.input(x.clone());
        let a = pre_with_graphs(&mut f, xv, Arc::from(vec![graph.clone()]), "pre").unwrap();
        let a = f.tape.value(a).clone();
        let mut f = Forward::new(&fp, Mode::Eval, 0);
        let xv = f.input(x.clone());
        let b = fln_with_graphs(&mut f, xv, Arc::from(vec![graph.clone()]), "fln").unwrap();
        (a, f.tape.value(b).clone())
    };
    assert_eq!(eval(&g), eval(&g2));
}

#[test]
fn train_mode_reports_batch_statistics() {
    let cfg = PreConfig::new(3, 3);
    let params = pre_store(&cfg, 80);
    let x = uniform(&mut rng(81), &[2, 6, 3], -1.0, 1.0);
    let mut f = Forward::new(&params, Mode::Train, 0);
    let xv = f.input(x);
    pre_forward(&mut f, xv, &cfg, "pre").unwrap();
    let names: Vec<&str> = f.stat_updates().iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["pre.bn1", "pre.bn2"]);
    assert_eq!(f.stat_updates()[0].1.mean.len(), 64);
    assert_eq!(f.stat_updates()[1].1.mean.len(), 6);
}
