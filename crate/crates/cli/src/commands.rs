use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pointgr_core::autodiff::{DType, Real};
use pointgr_core::data::pgrc::read_header;
use pointgr_core::data::synthetic::{make_synthetic_classification, make_synthetic_partseg, make_synthetic_scenes};
use pointgr_core::data::{Dataset, Split, Task};
use pointgr_core::graph::{knn_bruteforce, knn_indexed};
use pointgr_core::models::{count_trainable, ModelSpec};
use pointgr_core::train::{
    ablate, ablation_csv, evaluate, load_checkpoint, train_with, EpochRecord, MetricReport, TrainConfig,
    METRICS_FILE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::{
    env_precision, AblateArgs, CliError, Command, EvalArgs, GenDataArgs, InspectArgs, KnnBenchArgs, KnnMethod,
    ParamsArgs, SplitArg, TrainArgs,
};

type Out<'a> = &'a mut dyn Write;

pub(crate) fn execute(cmd: Command, out: Out<'_>) -> Result<(), CliError> {
    match cmd {
        Command::GenData(a) => gen_data(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Params(a) => params(a, out),
        Command::Ablate(a) => ablate_cmd(a, out),
        Command::KnnBench(a) => knn_bench(a, out),
        Command::Inspect(a) => inspect(a, out),
    }
}

fn emit(out: Out<'_>, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| CliError::Invalid(format!("writing output: {e}")))
}

fn check_fraction(f: f64) -> Result<(), CliError> {
    if (0.0..1.0).contains(&f) {
        Ok(())
    } else {
        Err(CliError::Invalid(format!("--test-fraction must be in [0, 1), got {f}")))
    }
}

fn gen_data(a: GenDataArgs, out: Out<'_>) -> Result<(), CliError> {
    check_fraction(a.test_fraction)?;
    let task = Task::from(a.task);
    let default_points = ModelSpec::for_task(task, 1, 1).n_points;
    let points = a.points.unwrap_or(default_points);
    if points == 0 {
        return Err(CliError::Invalid("--points must be >= 1".into()));
    }
    let ds = match task {
        Task::Classification => make_synthetic_classification(a.per_class, points, a.seed, a.test_fraction),
        Task::PartSeg => make_synthetic_partseg(a.per_class, points, a.seed, a.test_fraction),
        Task::SceneSeg => make_synthetic_scenes(a.rooms, points, a.density, a.seed, a.test_fraction)?,
    };
    let manifest = ds.write(&a.out)?;
    let test = ds.split(Split::Test).len();
    emit(
        out,
        &format!(
            "wrote {} samples ({} train, {} test) to {}\n",
            ds.len(),
            ds.len() - test,
            test,
            manifest.display()
        ),
    )
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    Ok(Dataset::load(path)?)
}

fn base_spec(ds: &Dataset) -> ModelSpec {
    let m = &ds.manifest;
    let categories = m.category_parts.as_ref().map_or(0, |c| c.categories());
    let mut spec = ModelSpec::for_task(m.task, m.num_classes, categories);
    spec.in_channels = m.channels;
    spec
}

fn read_config(path: Option<&PathBuf>, task: Task) -> Result<TrainConfig, CliError> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::file(p, e))?;
            TrainConfig::parse(&text, task).map_err(|e| CliError::file(p, e))?
        }
        None => TrainConfig::for_task(task),
    };
    if let Some(p) = env_precision()? {
        cfg.precision = p;
    }
    Ok(cfg)
}

fn epoch_line(r: &EpochRecord, task: Task) -> String {
    let metric = |rep: &MetricReport| match task {
        Task::Classification => rep.overall_accuracy,
        Task::PartSeg | Task::SceneSeg => rep.mean_iou,
    };
    let name = match task {
        Task::Classification => "oa",
        Task::PartSeg | Task::SceneSeg => "miou",
    };
    let mut s = format!(
        "epoch {:>4}  lr {:.6}  loss {:.6}  train_{name} {:.4}",
        r.epoch,
        r.lr,
        r.train_loss,
        metric(&r.train.report)
    );
    if let Some(t) = &r.test {
        s.push_str(&format!("  test_loss {:.6}  test_{name} {:.4}", t.loss, metric(&t.report)));
    }
    s.push('\n');
    s
}

fn train_cmd(a: TrainArgs, out: Out<'_>) -> Result<(), CliError> {
    let task = Task::from(a.task);
    let cfg = read_config(a.config.as_ref(), task)?;
    let ds = load_dataset(&a.manifest)?;
    if ds.manifest.task != task {
        return Err(CliError::file(
            &a.manifest,
            format!("dataset task is {}, but --task is {task}", ds.manifest.task),
        ));
    }
    let base = base_spec(&ds);
    match cfg.precision {
        DType::F32 => run_training::<f32>(&ds, &base, &cfg, &a.out, out),
        DType::F64 => run_training::<f64>(&ds, &base, &cfg, &a.out, out),
    }
}

fn run_training<T: Real>(
    ds: &Dataset,
    base: &ModelSpec,
    cfg: &TrainConfig,
    dir: &Path,
    out: Out<'_>,
) -> Result<(), CliError> {
    let task = base.task;
    let mut write_err = None;
    let summary = train_with::<T>(ds, base, cfg, dir, &mut |r| match emit(out, &epoch_line(r, task)) {
        Ok(()) => true,
        Err(e) => {
            write_err = Some(e);
            false
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    emit(
        out,
        &format!(
            "best epoch {} of {}; checkpoint and {} in {}\n",
            summary.best_epoch,
            summary.history.len(),
            METRICS_FILE,
            dir.display()
        ),
    )
}

fn report_json(split: Split, loss: f64, r: &MetricReport) -> serde_json::Value {
    json!({
        "split": split.as_str(),
        "loss": loss,
        "overall_accuracy": r.overall_accuracy,
        "mean_class_accuracy": r.mean_class_accuracy,
        "mean_iou": r.mean_iou,
        "overall_iou": r.overall_iou,
        "per_class_iou": r.per_class_iou,
        "confusion": r.confusion,
    })
}

fn eval_cmd(a: EvalArgs, out: Out<'_>) -> Result<(), CliError> {
    match env_precision()?.unwrap_or(DType::F32) {
        DType::F32 => eval_with::<f32>(a, out),
        DType::F64 => eval_with::<f64>(a, out),
    }
}

fn eval_with<T: Real>(a: EvalArgs, out: Out<'_>) -> Result<(), CliError> {
    if a.batch == 0 {
        return Err(CliError::Invalid("--batch must be >= 1".into()));
    }
    let ckpt = load_checkpoint::<T>(&a.checkpoint)?;
    let ds = load_dataset(&a.manifest)?;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let res = evaluate(&ds, split, &ckpt.spec, &ckpt.params, a.batch, a.seed)?
        .ok_or_else(|| CliError::file(&a.manifest, format!("the {split} split is empty")))?;
    let json_path = a
        .json
        .unwrap_or_else(|| a.checkpoint.join(format!("eval_{}.json", split.as_str())));
    let mut text = serde_json::to_string_pretty(&report_json(split, res.loss, &res.report))
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    text.push('\n');
    std::fs::write(&json_path, text).map_err(|e| CliError::file(&json_path, e))?;
    emit(
        out,
        &format!("{:<22}{:>10.4}\n{}", "loss", res.loss, res.report.to_table()),
    )
}

fn params(a: ParamsArgs, out: Out<'_>) -> Result<(), CliError> {
    let task = Task::from(a.task);
    let categories = if task == Task::PartSeg { a.categories } else { 0 };
    let spec = ModelSpec::for_task(task, a.classes, categories);
    spec.validate().map_err(CliError::Invalid)?;
    let p = spec.init_params::<f32>(0).map_err(|e| CliError::Invalid(e.to_string()))?;
    emit(out, &format!("{}\n", count_trainable(&p)))
}

fn ablate_cmd(a: AblateArgs, out: Out<'_>) -> Result<(), CliError> {
    let cfg = read_config(a.config.as_ref(), Task::Classification)?;
    let ds = match &a.manifest {
        Some(m) => load_dataset(m)?,
        None => {
            check_fraction(a.test_fraction)?;
            make_synthetic_classification(a.per_class, a.points, a.seed, a.test_fraction)
        }
    };
    if ds.manifest.task != Task::Classification {
        return Err(CliError::Invalid(format!("ablation needs a classification dataset, got {}", ds.manifest.task)));
    }
    let work = a.work_dir.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".runs");
        PathBuf::from(p)
    });
    let base = base_spec(&ds);
    let rows = match cfg.precision {
        DType::F32 => ablate::<f32>(&ds, &base, &cfg, a.axis, a.mode, &a.values, &work)?,
        DType::F64 => ablate::<f64>(&ds, &base, &cfg, a.axis, a.mode, &a.values, &work)?,
    };
    let csv = ablation_csv(&rows);
    std::fs::write(&a.out, &csv).map_err(|e| CliError::file(&a.out, e))?;
    emit(out, &csv)
}

fn knn_bench(a: KnnBenchArgs, out: Out<'_>) -> Result<(), CliError> {
    if a.repeats == 0 {
        return Err(CliError::Invalid("--repeats must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let pts: Vec<f32> = (0..a.n * 3).map(|_| rng.random::<f32>()).collect();
    let mut best = f64::INFINITY;
    for _ in 0..a.repeats {
        let t = Instant::now();
        let g = match a.method {
            KnnMethod::Brute => knn_bruteforce(&pts, 3, a.k)?,
            KnnMethod::Indexed => knn_indexed(&pts, 3, a.k)?,
        };
        best = best.min(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(g);
    }
    let method = match a.method {
        KnnMethod::Brute => "brute",
        KnnMethod::Indexed => "indexed",
    };
    emit(out, &format!("method,n,k,millis\n{method},{},{},{best:.3}\n", a.n, a.k))
}

fn inspect(a: InspectArgs, out: Out<'_>) -> Result<(), CliError> {
    let h = read_header(&a.sample)?;
    emit(out, &format!("file        {}\n{h}\n", a.sample.display()))
}
