use pointgr_testkit as common;

use pointgr_core::autodiff::{NdArray, ParamStore};
use pointgr_core::blocks::{Forward, Mode};
use pointgr_core::models::{count_trainable, forward, GlobalPool, ModelSpec};
use rand::seq::SliceRandom;
use rand::Rng;

use common::{param_grad_check, rng, uniform};

fn small(mut spec: ModelSpec, n: usize, k: usize) -> ModelSpec {
    spec.n_points = n;
    spec.k = k;
    spec
}

fn tiny(spec: ModelSpec, n: usize, k: usize) -> ModelSpec {
    ModelSpec {
        fln_plan: vec![8, 8, 8],
        aggregate_width: 16,
        head: vec![8, 6],
        pre_hidden: 8,
        label_embed_width: if spec.label_embed_width > 0 { 4 } else { 0 },
        ..small(spec, n, k)
    }
}

fn run<T: pointgr_core::autodiff::Real>(
    spec: &ModelSpec,
    params: &ParamStore<T>,
    x: NdArray<T>,
    cats: Option<&[usize]>,
) -> NdArray<T> {
    let mut f = Forward::new(params, Mode::Eval, 0);
    let xv = f.input(x);
    let y = forward(&mut f, spec, xv, cats).unwrap();
    f.tape.value(y).clone()
}

#[test]
fn trainable_counts_match_layer_arithmetic() {
    // Hand-summed per layer: weights (no bias before BN), BN γ+β, output bias.
    let pre = 6 * 64 + 128 + 64 * 6 + 12 + 6 * 6 + 6;
    let fln = (12 * 64 + 128) + (128 * 128 + 256) + (256 * 256 + 512);
    let agg = 454 * 1024 + 2048;
    let cls = pre + fln + agg + (2048 * 512 + 1024) + (512 * 256 + 512) + (256 * 40 + 40);
    let p: ParamStore<f32> = ModelSpec::classifier(40).init_params(0).unwrap();
    assert_eq!(count_trainable(&p), cls);
    assert_eq!(cls, 1_742_942);

    let part = pre + fln + agg + (16 * 64 + 128) + (1542 * 256 + 512) + (256 * 128 + 256) + (128 * 50 + 50);
    let p: ParamStore<f32> = ModelSpec::part_seg(50, 16).init_params(0).unwrap();
    assert_eq!(count_trainable(&p), part);
    assert_eq!(part, 987_368);

    let pre9 = 18 * 64 + 128 + 64 * 18 + 36 + 18 * 6 + 6;
    let scene = pre9 + fln + agg + (1478 * 256 + 512) + (256 * 128 + 256) + (128 * 13 + 13);
    let p: ParamStore<f32> = ModelSpec::scene_seg(13).init_params(0).unwrap();
    assert_eq!(count_trainable(&p), scene);
    assert_eq!(scene, 966_691);
}

#[test]
fn counts_are_pure_functions_of_the_spec() {
    for spec in [ModelSpec::classifier(40), ModelSpec::part_seg(50, 16), ModelSpec::scene_seg(13)] {
        let a: ParamStore<f32> = spec.init_params(1).unwrap();
        let b: ParamStore<f32> = spec.init_params(2).unwrap();
        assert_eq!(count_trainable(&a), count_trainable(&b));
        assert_eq!(a.names().collect::<Vec<_>>(), b.names().collect::<Vec<_>>());
        assert_ne!(a, b);
    }
}

#[test]
fn config_round_trip_and_validation() {
    for spec in [ModelSpec::classifier(40), ModelSpec::part_seg(4, 2), ModelSpec::scene_seg(13)] {
        assert_eq!(ModelSpec::from_config(&spec.to_config()).unwrap(), spec);
    }
    let text = ModelSpec::classifier(3).to_config().replace("k = 20", "k = x");
    assert!(ModelSpec::from_config(&text).unwrap_err().contains("`k`"));
    let text = ModelSpec::classifier(3).to_config().replace("dropout = 0.5\n", "");
    assert!(ModelSpec::from_config(&text).unwrap_err().contains("dropout"));
    let text = ModelSpec::classifier(3).to_config() + "bogus = 1\n";
    assert!(ModelSpec::from_config(&text).unwrap_err().contains("bogus"));
    let mut bad = ModelSpec::scene_seg(13);
    bad.in_channels = 6;
    assert!(bad.validate().is_err());
}

#[test]
fn weights_are_checked_against_the_spec() {
    let spec = tiny(ModelSpec::classifier(3), 32, 4);
    let p: ParamStore<f64> = spec.init_params(0).unwrap();
    spec.check_params(&p).unwrap();
    let other = ModelSpec { classes: 4, ..spec.clone() };
    let msg = other.check_params(&p).unwrap_err().to_string();
    assert!(msg.contains("out."), "{msg}");
}

#[test]
fn zero_output_layer_gives_uniform_softmax() {
    let spec = small(ModelSpec::classifier(5), 64, 8);
    let mut p: ParamStore<f32> = spec.init_params(3).unwrap();
    for name in ["out.weight", "out.bias"] {
        let w = p.get_mut(name).unwrap();
        *w = NdArray::zeros(w.shape());
    }
    let x = uniform(&mut rng(4), &[2, 64, 3], -1.0, 1.0).cast::<f32>();
    let logits = run(&spec, &p, x, None);
    assert_eq!(logits.shape(), &[2, 5]);
    for row in logits.data().chunks(5) {
        let z: f64 = row.iter().map(|&v| (v as f64).exp()).sum();
        for &v in row {
            assert!(((v as f64).exp() / z - 0.2).abs() < 1e-6);
        }
    }
}

fn permute(x: &NdArray<f64>, perm: &[usize]) -> NdArray<f64> {
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

#[test]
fn classifier_is_permutation_invariant() {
    let spec = small(ModelSpec::classifier(4), 64, 10);
    let p: ParamStore<f32> = spec.init_params(5).unwrap();
    for trial in 0..5 {
        let mut r = rng(100 + trial);
        let x = uniform(&mut r, &[1, 64, 3], -1.0, 1.0);
        let mut perm: Vec<usize> = (0..64).collect();
        perm.shuffle(&mut r);
        let a = run(&spec, &p, x.cast(), None);
        let b = run(&spec, &p, permute(&x, &perm).cast(), None);
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() <= 1e-5, "{u} vs {v}");
        }
    }
}

#[test]
fn segmenters_are_permutation_equivariant() {
    let part = small(ModelSpec::part_seg(4, 2), 48, 8);
    let scene = small(ModelSpec::scene_seg(13), 48, 8);
    let pp: ParamStore<f32> = part.init_params(6).unwrap();
    let sp: ParamStore<f32> = scene.init_params(7).unwrap();
    for trial in 0..3 {
        let mut r = rng(200 + trial);
        let mut perm: Vec<usize> = (0..48).collect();
        perm.shuffle(&mut r);
        let x = uniform(&mut r, &[2, 48, 3], -1.0, 1.0);
        let a = run(&part, &pp, x.cast(), Some(&[0, 1]));
        let b = run(&part, &pp, permute(&x, &perm).cast(), Some(&[0, 1]));
        assert_eq!(b.shape(), &[2, 48, 4]);
        let a = permute(&a.cast(), &perm);
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - *v as f64).abs() <= 1e-5);
        }
        let x = uniform(&mut r, &[1, 48, 9], 0.0, 1.0);
        let a = run(&scene, &sp, x.cast(), None);
        let b = run(&scene, &sp, permute(&x, &perm).cast(), None);
        assert_eq!(b.shape(), &[1, 48, 13]);
        let a = permute(&a.cast(), &perm);
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - *v as f64).abs() <= 1e-5);
        }
    }
}

#[test]
fn category_changes_part_logits() {
    let spec = small(ModelSpec::part_seg(50, 16), 32, 8);
    let p: ParamStore<f32> = spec.init_params(8).unwrap();
    let x = uniform(&mut rng(9), &[1, 32, 3], -1.0, 1.0).cast::<f32>();
    let a = run(&spec, &p, x.clone(), Some(&[3]));
    let b = run(&spec, &p, x.clone(), Some(&[11]));
    assert_eq!(a.shape(), &[1, 32, 50]);
    assert_ne!(a, b);
    let mut f = Forward::new(&p, Mode::Eval, 0);
    let xv = f.input(x);
    assert!(forward(&mut f, &spec, xv, Some(&[16])).is_err());
}

#[test]
fn scene_model_accepts_full_blocks() {
    let spec = ModelSpec::scene_seg(13);
    let p: ParamStore<f32> = spec.init_params(10).unwrap();
    let x = uniform(&mut rng(11), &[1, 4096, 9], 0.0, 1.0).cast::<f32>();
    assert_eq!(run(&spec, &p, x, None).shape(), &[1, 4096, 13]);
}

#[test]
fn wrong_channel_count_is_rejected() {
    let spec = small(ModelSpec::classifier(3), 32, 4);
    let p: ParamStore<f32> = spec.init_params(0).unwrap();
    let mut f = Forward::new(&p, Mode::Eval, 0);
    let xv = f.input(NdArray::zeros(&[1, 32, 4]));
    assert!(forward(&mut f, &spec, xv, None).is_err());
}

#[test]
fn logits_stay_finite_on_random_inputs() {
    let spec = small(ModelSpec::classifier(3), 32, 6);
    let p: ParamStore<f32> = spec.init_params(12).unwrap();
    let mut r = rng(13);
    for i in 0..1000 {
        let scale = [1e-3, 1.0, 1e3][i % 3];
        let x = uniform(&mut r, &[1, 32, 3], -scale, scale).cast::<f32>();
        let logits = run(&spec, &p, x, None);
        assert!(logits.all_finite(), "pass {i}");
    }
}

fn labels(r: &mut impl Rng, n: usize, m: usize) -> Vec<usize> {
    (0..n).map(|_| r.random_range(0..m)).collect()
}

#[test]
fn classifier_micro_model_gradients() {
    for (spec, seed) in [
        (small(ModelSpec::classifier(2), 16, 4), 20),
        (tiny(ModelSpec::classifier(2), 32, 5), 21),
        (ModelSpec { global_pool: GlobalPool::Max, ..tiny(ModelSpec::classifier(2), 16, 4) }, 22),
    ] {
        let p: ParamStore<f64> = spec.init_params(seed).unwrap();
        let mut r = rng(seed + 100);
        let x = uniform(&mut r, &[3, spec.n_points, 3], -1.0, 1.0);
        let y = labels(&mut r, 3, 2);
        let per_param = if spec.aggregate_width > 100 { 1 } else { 6 };
        for mode in [Mode::Train, Mode::Eval] {
            let err = param_grad_check(&p, mode, seed, per_param, &|f| {
                let xv = f.input(x.clone());
                let logits = forward(f, &spec, xv, None).unwrap();
                f.tape.softmax_cross_entropy(logits, &y, 0.0).unwrap()
            });
            assert!(err <= 1e-3, "seed {seed} {mode:?}: {err}");
        }
    }
}

#[test]
fn segmentation_micro_model_gradients() {
    let part = tiny(ModelSpec::part_seg(4, 2), 16, 4);
    let scene = tiny(ModelSpec::scene_seg(13), 16, 4);
    let mut r = rng(30);
    let x = uniform(&mut r, &[2, 16, 3], -1.0, 1.0);
    let y = labels(&mut r, 32, 4);
    let p: ParamStore<f64> = part.init_params(31).unwrap();
    let err = param_grad_check(&p, Mode::Train, 1, 6, &|f| {
        let xv = f.input(x.clone());
        let logits = forward(f, &part, xv, Some(&[0, 1])).unwrap();
        f.tape.softmax_cross_entropy(logits, &y, 0.0).unwrap()
    });
    assert!(err <= 1e-3, "part: {err}");

    let x = uniform(&mut r, &[2, 16, 9], 0.0, 1.0);
    let y = labels(&mut r, 32, 13);
    let p: ParamStore<f64> = scene.init_params(32).unwrap();
    let err = param_grad_check(&p, Mode::Train, 2, 6, &|f| {
        let xv = f.input(x.clone());
        let logits = forward(f, &scene, xv, None).unwrap();
        f.tape.softmax_cross_entropy(logits, &y, 0.0).unwrap()
    });
    assert!(err <= 1e-3, "scene: {err}");
}
