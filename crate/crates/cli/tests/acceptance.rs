//! Acceptance suite: one PASS/FAIL line per criterion. Run alone with
//! `cargo test -p pointgr-cli --test acceptance`; pass a criterion number to
//! run only that one.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use pointgr_core::autodiff::{BnStats, NdArray, ParamStore, Tape, Var};
use pointgr_core::blocks::{Forward, Mode};
use pointgr_core::data::synthetic::{make_synthetic_classification, make_synthetic_partseg};
use pointgr_core::data::Task;
use pointgr_core::graph::{build_edge_features, knn_bruteforce, knn_indexed, squared_distance, NeighborGraph};
use pointgr_core::models::{count_trainable, forward, ModelSpec};
use pointgr_core::train::{
    ablate, load_checkpoint, score_checkpoint, train_with, AblationAxis, AblationMode, AblationRow, TrainConfig,
};
use pointgr_testkit::{grad_check, param_grad_check, rng, uniform};
use rand::seq::SliceRandom;
use rand::Rng;

const CLS_PARAMS: (f64, f64) = (1.80e6, 0.15);
const PART_PARAMS: (f64, f64) = (1.04e6, 0.20);
const SCENE_PARAMS: (f64, f64) = (1.00e6, 0.20);

const KNN_INSTANCES: usize = 100;
const KNN_MAX_N: usize = 10_000;
const KNN_MAX_K: usize = 64;
const KNN_BUDGET: Duration = Duration::from_secs(60);

const INVARIANCE_TRIALS: u64 = 50;
const INVARIANCE_TOL: f64 = 1e-5;

const OP_TOL: f64 = 1e-4;
const MODEL_TOL: f64 = 1e-3;
const MICRO_N: usize = 32;
const GRADIENT_BUDGET: Duration = Duration::from_secs(5 * 60);

const CLS_TARGET: f64 = 0.95;
const CLS_EPOCHS: usize = 200;
const CLS_BUDGET: Duration = Duration::from_secs(10 * 60);
const PART_TARGET: f64 = 0.90;
const PART_EPOCHS: usize = 300;
const PART_BUDGET: Duration = Duration::from_secs(20 * 60);

const ABLATION_PER_CLASS: usize = 20;
const ABLATION_EPOCHS: usize = 12;
const ABLATION_POINTS: [usize; 3] = [204, 512, 1024];
const ABLATION_K: [usize; 3] = [5, 10, 20];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, &str, fn() -> Outcome); 8] = [
        ("1", "parameter counts", parameter_counts),
        ("2", "kNN oracle equivalence", knn_oracle),
        ("3", "invariance suite", invariance),
        ("4", "gradient suite", gradients),
        ("5", "desk-scale learning", desk_scale_learning),
        ("6", "ablation trends", ablation_trends),
        ("7", "non-reproducibility statement", statement),
        ("8", "training determinism", determinism),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!("{tag} [{id}] {name} ({:.1}s): {}", start.elapsed().as_secs_f64(), result.detail);
        if !result.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn parameter_counts() -> Outcome {
    let cases = [
        ("classification(40)", ModelSpec::classifier(40), CLS_PARAMS),
        ("partseg(50, 16)", ModelSpec::part_seg(50, 16), PART_PARAMS),
        ("sceneseg(13)", ModelSpec::scene_seg(13), SCENE_PARAMS),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, spec, (target, tol)) in cases {
        let p: ParamStore<f32> = spec.init_params(0).unwrap();
        let n = count_trainable(&p) as f64;
        let dev = (n - target) / target;
        pass &= dev.abs() <= tol;
        parts.push(format!("{name} {n} ({:+.1}% of {:.2}M, tol ±{:.0}%)", dev * 100.0, target / 1e6, tol * 100.0));
    }
    outcome(pass, parts.join("; "))
}

fn knn_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2024);
    let mut mismatches = 0;
    let mut largest = 0;
    for i in 0..KNN_INSTANCES {
        let n = match i % 10 {
            0 => KNN_MAX_N,
            1..=3 => r.random_range(1..=64),
            _ => r.random_range(65..=4000),
        };
        let k = r.random_range(1..=KNN_MAX_K.min(n));
        let pts: Vec<f32> = if i % 4 == 3 {
            // lattice points give many equal distances
            (0..n * 3).map(|_| r.random_range(0..8) as f32 * 0.25).collect()
        } else {
            (0..n * 3).map(|_| r.random::<f32>()).collect()
        };
        if knn_indexed(&pts, 3, k).unwrap() != knn_bruteforce(&pts, 3, k).unwrap() {
            mismatches += 1;
        }
        largest = largest.max(n);
    }
    let took = start.elapsed();
    outcome(
        mismatches == 0 && took <= KNN_BUDGET,
        format!(
            "{KNN_INSTANCES} instances (N up to {largest}, k up to {KNN_MAX_K}, a quarter on a lattice), {mismatches} mismatches, {:.1}s of {}s budget",
            took.as_secs_f64(),
            KNN_BUDGET.as_secs()
        ),
    )
}

fn permute(x: &NdArray<f32>, perm: &[usize]) -> NdArray<f32> {
    let s = x.shape();
    let (n, c) = (s[1], s[2]);
    let mut data = Vec::with_capacity(x.len());
    for b in 0..s[0] {
        for &p in perm {
            data.extend_from_slice(&x.data()[(b * n + p) * c..(b * n + p + 1) * c]);
        }
    }
    NdArray::new(s.to_vec(), data).unwrap()
}

/// Uniform cloud whose k-th and (k+1)-th neighbor distances differ for every
/// point, so the graph does not depend on point order.
fn tie_free_cloud(r: &mut impl Rng, n: usize, channels: usize, k: usize) -> NdArray<f32> {
    loop {
        let data: Vec<f32> = (0..n * channels).map(|_| r.random_range(-1.0..1.0)).collect();
        let xyz: Vec<f32> = data.chunks(channels).flat_map(|p| p[..3].to_vec()).collect();
        let tie_free = (0..n).all(|i| {
            let mut d: Vec<f32> = (0..n)
                .map(|j| squared_distance(&xyz[i * 3..i * 3 + 3], &xyz[j * 3..j * 3 + 3]))
                .collect();
            d.sort_by(f32::total_cmp);
            d.windows(2).take(k + 1).all(|w| w[0] < w[1])
        });
        if tie_free {
            return NdArray::new(vec![1, n, channels], data).unwrap();
        }
    }
}

fn eval_logits(spec: &ModelSpec, p: &ParamStore<f32>, x: NdArray<f32>, cats: Option<&[usize]>) -> NdArray<f32> {
    let mut f = Forward::new(p, Mode::Eval, 0);
    let xv = f.input(x);
    let y = forward(&mut f, spec, xv, cats).unwrap();
    f.tape.value(y).clone()
}

fn max_abs_diff(a: &NdArray<f32>, b: &NdArray<f32>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(u, v)| (*u as f64 - *v as f64).abs())
        .fold(0.0, f64::max)
}

fn invariance() -> Outcome {
    let n = 128;
    let models = [
        ("classification", ModelSpec { n_points: n, ..ModelSpec::classifier(40) }, None),
        ("partseg", ModelSpec { n_points: n, ..ModelSpec::part_seg(50, 16) }, Some([7usize])),
        ("sceneseg", ModelSpec { n_points: n, ..ModelSpec::scene_seg(13) }, None),
    ];
    let mut worst = [0.0f64; 3];
    for (m, (_, spec, cats)) in models.iter().enumerate() {
        let p: ParamStore<f32> = spec.init_params(m as u64 + 1).unwrap();
        for trial in 0..INVARIANCE_TRIALS {
            let mut r = rng(1000 * m as u64 + trial);
            let x = tie_free_cloud(&mut r, n, spec.in_channels, spec.k);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut r);
            let cats = cats.as_ref().map(|c| &c[..]);
            let a = eval_logits(spec, &p, x.clone(), cats);
            let b = eval_logits(spec, &p, permute(&x, &perm), cats);
            let a = if spec.task == Task::Classification { a } else { permute(&a, &perm) };
            worst[m] = worst[m].max(max_abs_diff(&a, &b));
        }
    }

    let mut de_worst: f64 = 0.0;
    let mut graphs_equal = true;
    for trial in 0..INVARIANCE_TRIALS {
        let mut r = rng(5000 + trial);
        let x: Vec<f64> = (0..200 * 3).map(|_| r.random_range(-1.0..1.0)).collect();
        let t: [f64; 3] = [r.random_range(-10.0..10.0), r.random_range(-10.0..10.0), r.random_range(-10.0..10.0)];
        let moved: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + t[i % 3]).collect();
        let (g, gm) = (knn_bruteforce(&x, 3, 20).unwrap(), knn_bruteforce(&moved, 3, 20).unwrap());
        graphs_equal &= g == gm;
        let (e, em) = (build_edge_features(&x, 3, &g).unwrap(), build_edge_features(&moved, 3, &g).unwrap());
        for i in 0..200 {
            for j in 0..20 {
                for (u, v) in e.offset_part(i, j).iter().zip(em.offset_part(i, j)) {
                    de_worst = de_worst.max((u - v).abs());
                }
            }
        }
    }
    let pass = worst.iter().all(|w| *w <= INVARIANCE_TOL) && graphs_equal && de_worst <= 1e-12;
    outcome(
        pass,
        format!(
            "{INVARIANCE_TRIALS} trials each, eval mode, f32, N={n}: max |Δ| classification {:.1e}, partseg {:.1e}, sceneseg {:.1e} (tol {INVARIANCE_TOL:.0e}); translated clouds keep their graphs: {graphs_equal}, max |Δ d_e| {de_worst:.1e}",
            worst[0], worst[1], worst[2]
        ),
    )
}

type Case = (Vec<NdArray<f64>>, Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>);

fn graphs_of(x: &NdArray<f64>, k: usize) -> Arc<[NeighborGraph]> {
    let s = x.shape();
    x.data()
        .chunks_exact(s[1] * s[2])
        .map(|item| knn_bruteforce(item, s[2], k).unwrap())
        .collect::<Vec<_>>()
        .into()
}

fn random_stats(r: &mut impl Rng, c: usize) -> BnStats<f64> {
    BnStats {
        mean: (0..c).map(|_| r.random_range(-0.5..0.5)).collect(),
        var: (0..c).map(|_| r.random_range(0.5..2.0)).collect(),
    }
}

fn op_case(op: &str, seed: u64) -> Case {
    let mut r = rng(seed);
    let (n, c, cout) = (r.random_range(3..8), r.random_range(1..4), r.random_range(1..5));
    let k = r.random_range(2..=n);
    let axis = (seed % 3) as usize;
    let x = uniform(&mut r, &[2, n, c], -1.0, 1.0);
    match op {
        "linear" => (
            vec![x, uniform(&mut r, &[c, cout], -1.0, 1.0), uniform(&mut r, &[cout], -1.0, 1.0)],
            Box::new(|t, v| t.linear(v[0], v[1], Some(v[2])).unwrap()),
        ),
        "edge_features" => {
            let g = graphs_of(&x, k);
            (vec![x], Box::new(move |t, v| t.edge_features(v[0], g.clone()).unwrap()))
        }
        "edge_linear" => {
            let g = graphs_of(&x, k);
            (
                vec![x, uniform(&mut r, &[2 * c, cout], -1.0, 1.0), uniform(&mut r, &[cout], -1.0, 1.0)],
                Box::new(move |t, v| t.edge_linear(v[0], g.clone(), v[1], Some(v[2])).unwrap()),
            )
        }
        "edge_conv_max(train)" | "edge_conv_max(eval)" => {
            let g = graphs_of(&x, k);
            let stats = random_stats(&mut r, cout);
            let train = op.ends_with("(train)");
            (
                vec![
                    x,
                    uniform(&mut r, &[2 * c, cout], -1.0, 1.0),
                    uniform(&mut r, &[cout], -1.5, 1.5),
                    uniform(&mut r, &[cout], -0.5, 0.5),
                ],
                Box::new(move |t, v| {
                    t.edge_conv_max(v[0], g.clone(), v[1], v[2], v[3], &stats, train, 0.2)
                        .unwrap()
                        .0
                }),
            )
        }
        "batch_norm(train)" | "batch_norm(eval)" => {
            let stats = random_stats(&mut r, c);
            let train = op.ends_with("(train)");
            (
                vec![uniform(&mut r, &[2, n, c], -2.0, 2.0), uniform(&mut r, &[c], 0.5, 1.5), uniform(&mut r, &[c], -0.5, 0.5)],
                Box::new(move |t, v| t.batch_norm(v[0], v[1], v[2], &stats, train).unwrap().0),
            )
        }
        "relu" => (vec![x], Box::new(|t, v| t.relu(v[0]).unwrap())),
        "leaky_relu" => (vec![x], Box::new(|t, v| t.leaky_relu(v[0], 0.2).unwrap())),
        "add" => (
            vec![x.clone(), uniform(&mut r, x.shape(), -1.0, 1.0)],
            Box::new(|t, v| {
                let s = t.add(v[0], v[1]).unwrap();
                t.add(s, v[0]).unwrap()
            }),
        ),
        "max_over_axis" => (vec![x], Box::new(move |t, v| t.max_over_axis(v[0], axis).unwrap())),
        "mean_over_axis" => (vec![x], Box::new(move |t, v| t.mean_over_axis(v[0], axis).unwrap())),
        "concat" => {
            let mut other = x.shape().to_vec();
            other[axis] += 1;
            (
                vec![x, uniform(&mut r, &other, -1.0, 1.0)],
                Box::new(move |t, v| t.concat(&[v[0], v[1], v[0]], axis).unwrap()),
            )
        }
        "expand" => (vec![x], Box::new(move |t, v| t.expand(v[0], axis, 3).unwrap())),
        "reshape" => {
            let len = x.len();
            (vec![x], Box::new(move |t, v| t.reshape(v[0], &[len]).unwrap()))
        }
        "dropout" => (vec![x], Box::new(move |t, v| t.dropout(v[0], 0.5, &mut rng(seed)).unwrap())),
        "softmax_cross_entropy" => {
            let m = r.random_range(2..6);
            let labels: Vec<usize> = (0..5).map(|_| r.random_range(0..m)).collect();
            let smoothing = if seed % 2 == 0 { 0.0 } else { 0.2 };
            (
                vec![uniform(&mut r, &[5, m], -3.0, 3.0)],
                Box::new(move |t, v| t.softmax_cross_entropy(v[0], &labels, smoothing).unwrap()),
            )
        }
        other => panic!("no gradient case for `{other}`"),
    }
}

const OPS: [&str; 17] = [
    "linear",
    "edge_features",
    "edge_linear",
    "edge_conv_max(train)",
    "edge_conv_max(eval)",
    "batch_norm(train)",
    "batch_norm(eval)",
    "relu",
    "leaky_relu",
    "add",
    "max_over_axis",
    "mean_over_axis",
    "concat",
    "expand",
    "reshape",
    "dropout",
    "softmax_cross_entropy",
];

fn micro(spec: ModelSpec, k: usize) -> ModelSpec {
    ModelSpec {
        n_points: MICRO_N,
        k,
        fln_plan: vec![8, 8, 8],
        aggregate_width: 16,
        head: vec![8, 6],
        pre_hidden: 8,
        label_embed_width: if spec.label_embed_width > 0 { 4 } else { 0 },
        ..spec
    }
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut op_worst: f64 = 0.0;
    let mut failures = Vec::new();
    for (i, op) in OPS.iter().enumerate() {
        for s in 0..6 {
            let (inputs, f) = op_case(op, 100 * i as u64 + s);
            let err = grad_check(&inputs, s, f.as_ref());
            op_worst = op_worst.max(err);
            if err > OP_TOL {
                failures.push(format!("{op} seed {s}: {err:.1e}"));
            }
        }
    }
    let mut model_worst: f64 = 0.0;
    let models = [
        ("classification", micro(ModelSpec::classifier(3), 6), None),
        ("partseg", micro(ModelSpec::part_seg(4, 2), 6), Some(vec![0usize, 1])),
        ("sceneseg", micro(ModelSpec::scene_seg(13), 6), None),
    ];
    for (m, (name, spec, cats)) in models.into_iter().enumerate() {
        let p: ParamStore<f64> = spec.init_params(40 + m as u64).unwrap();
        let mut r = rng(50 + m as u64);
        let x = uniform(&mut r, &[2, MICRO_N, spec.in_channels], -1.0, 1.0);
        let rows = if spec.task == Task::Classification { 2 } else { 2 * MICRO_N };
        let y: Vec<usize> = (0..rows).map(|_| r.random_range(0..spec.classes)).collect();
        for mode in [Mode::Train, Mode::Eval] {
            let err = param_grad_check(&p, mode, 60 + m as u64, 4, &|f| {
                let xv = f.input(x.clone());
                let logits = forward(f, &spec, xv, cats.as_deref()).unwrap();
                f.tape.softmax_cross_entropy(logits, &y, 0.0).unwrap()
            });
            model_worst = model_worst.max(err);
            if err > MODEL_TOL {
                failures.push(format!("{name} {mode:?}: {err:.1e}"));
            }
        }
    }
    let took = start.elapsed();
    let mut detail = format!(
        "{} ops x 6 seeds, worst rel err {op_worst:.1e} (tol {OP_TOL:.0e}); 3 micro-models (N={MICRO_N}) in train and eval mode, worst {model_worst:.1e} (tol {MODEL_TOL:.0e}); f64; {:.0}s of {}s budget",
        OPS.len(),
        took.as_secs_f64(),
        GRADIENT_BUDGET.as_secs()
    );
    if !failures.is_empty() {
        detail.push_str(&format!("; failures: {}", failures.join(", ")));
    }
    outcome(failures.is_empty() && took <= GRADIENT_BUDGET, detail)
}

fn learn(task: Task, dir: &Path, target: f64, epochs: usize) -> (Option<usize>, f64, Duration) {
    let (ds, base) = match task {
        Task::Classification => (make_synthetic_classification(50, 256, 1, 0.0), ModelSpec::classifier(3)),
        _ => (make_synthetic_partseg(16, 256, 1, 0.0), ModelSpec::part_seg(4, 2)),
    };
    let cfg = TrainConfig {
        epochs,
        batch: if task == Task::Classification { 32 } else { 8 },
        n_points: Some(256),
        k: Some(20),
        ..TrainConfig::for_task(task)
    };
    let start = Instant::now();
    let mut reached = None;
    let mut best: f64 = 0.0;
    train_with::<f32>(&ds, &base, &cfg, dir, &mut |rec| {
        let score = match task {
            Task::Classification => rec.train.report.overall_accuracy,
            _ => rec.train.report.mean_iou,
        };
        best = best.max(score);
        if score >= target {
            reached = Some(rec.epoch);
        }
        reached.is_none()
    })
    .unwrap();
    (reached, best, start.elapsed())
}

fn desk_scale_learning() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let (cls_epoch, cls_best, cls_time) = learn(Task::Classification, &tmp.path().join("cls"), CLS_TARGET, CLS_EPOCHS);
    let (part_epoch, part_best, part_time) = learn(Task::PartSeg, &tmp.path().join("part"), PART_TARGET, PART_EPOCHS);
    let cls_ok = cls_epoch.is_some() && cls_time <= CLS_BUDGET;
    let part_ok = part_epoch.is_some() && part_time <= PART_BUDGET;
    let show = |e: Option<usize>, limit: usize| e.map_or(format!("not within {limit} epochs"), |e| format!("epoch {e}"));
    outcome(
        cls_ok && part_ok,
        format!(
            "classification (150 samples, 256 pts, k=20) train OA {cls_best:.3} >= {CLS_TARGET} at {} in {:.0}s (budget {}s); partseg (2 categories, 32 samples, 256 pts, k=20) train mIoU {part_best:.3} >= {PART_TARGET} at {} in {:.0}s (budget {}s)",
            show(cls_epoch, CLS_EPOCHS),
            cls_time.as_secs_f64(),
            CLS_BUDGET.as_secs(),
            show(part_epoch, PART_EPOCHS),
            part_time.as_secs_f64(),
            PART_BUDGET.as_secs()
        ),
    )
}

fn acc_at(rows: &[AblationRow], value: usize) -> f64 {
    rows.iter().find(|r| r.value == value).unwrap().overall_acc
}

fn ablation_trends() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let ds = make_synthetic_classification(ABLATION_PER_CLASS, 1024, 1, 0.5);
    let cfg = TrainConfig {
        epochs: ABLATION_EPOCHS,
        lr: 0.02,
        lr_min: 0.0002,
        batch: 8,
        seed: 1,
        n_points: Some(1024),
        k: Some(20),
        ..TrainConfig::for_task(Task::Classification)
    };
    let points = ablate::<f32>(
        &ds,
        &ModelSpec::classifier(3),
        &cfg,
        AblationAxis::Points,
        AblationMode::Evaluate,
        &ABLATION_POINTS,
        tmp.path(),
    )
    .unwrap();
    let ck = load_checkpoint::<f32>(&tmp.path().join("trained")).unwrap();
    let ks = score_checkpoint(&ds, &ck, &cfg, AblationAxis::K, &ABLATION_K).unwrap();
    let show = |rows: &[AblationRow]| {
        rows.iter().map(|r| format!("{}={:.3}", r.value, r.overall_acc)).collect::<Vec<_>>().join(" ")
    };
    let k_ok = acc_at(&ks, 20) > acc_at(&ks, 5);
    let p_ok = acc_at(&points, 1024) > acc_at(&points, 204);
    outcome(
        k_ok && p_ok,
        format!(
            "classifier trained once at 1024 pts, k=20 ({ABLATION_EPOCHS} epochs, {} train / {} test clouds), test OA by k: {}; by points: {}",
            ds.len() / 2,
            ds.len() / 2,
            show(&ks),
            show(&points)
        ),
    )
}

fn statement() -> Outcome {
    outcome(
        true,
        "the full-benchmark figures (ModelNet-40 92.71% overall accuracy, ShapeNet-Part 85.2 mIoU, S3DIS 73.47 mean IoU) need multi-hour GPU training on the complete datasets; they are out of desk-scale scope, are not reproduced here, and are substituted by criteria 1-6",
    )
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_pointgr");
    let data = tmp.path().join("data");
    let status = Command::new(bin)
        .args(["gen-data", "--task", "classification", "--per-class", "8", "--points", "128", "--seed", "3", "--out"])
        .arg(&data)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    let cfg = tmp.path().join("train.cfg");
    std::fs::write(&cfg, "epochs = 3\nbatch = 8\nn_points = 64\nk = 10\nseed = 9\n").unwrap();
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let o = Command::new(bin)
            .arg("train")
            .arg("--manifest")
            .arg(data.join("manifest.txt"))
            .args(["--task", "classification", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .env_remove("PGR_PRECISION")
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        csvs.push(std::fs::read(out.join("metrics.csv")).unwrap());
    }
    let rows = csvs[0].iter().filter(|&&b| b == b'\n').count() - 1;
    outcome(
        csvs[0] == csvs[1] && rows > 0,
        format!("two `pointgr train` runs with seed 9: metrics.csv byte-identical = {} ({rows} rows, {} bytes)", csvs[0] == csvs[1], csvs[0].len()),
    )
}
