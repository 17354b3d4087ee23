use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdError, NdArray, ParamStore, Real};
use crate::blocks::{Forward, Mode, NetError};
use crate::data::{uniform_sample, Dataset, PointCloud, Split, Task};
use crate::models::{forward, ModelSpec};

use super::metrics::{argmax, compute_metrics, compute_part_metrics, masked_argmax, MetricReport, ShapeResult};
use super::{cosine_lr, save_checkpoint, sgd_step, TrainConfig, TrainError, Velocity};

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_CSV_HEADER: &str = "epoch,split,loss,overall_acc,mean_acc,mean_iou";

/// Mean cross-entropy and scores of one split in evaluation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean optimization loss over the epoch's training batches.
    pub train_loss: f64,
    pub train: EvalResult,
    pub test: Option<EvalResult>,
}

impl EpochRecord {
    /// Model-selection score: overall accuracy for classification, mean IoU
    /// otherwise; measured on the test split when there is one.
    pub fn score(&self, task: Task) -> f64 {
        let r = &self.test.as_ref().unwrap_or(&self.train).report;
        match task {
            Task::Classification => r.overall_accuracy,
            Task::PartSeg | Task::SceneSeg => r.mean_iou,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub spec: ModelSpec,
    pub history: Vec<EpochRecord>,
    /// Epoch whose weights are in the checkpoint; 0 for the initial weights.
    pub best_epoch: usize,
}

impl TrainConfig {
    /// `base` with this config's point count and neighbor count applied.
    pub fn model_spec(&self, base: &ModelSpec) -> ModelSpec {
        let mut s = base.clone();
        if let Some(n) = self.n_points {
            s.n_points = n;
        }
        if let Some(k) = self.k {
            s.k = k;
        }
        s
    }
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn check_compatible(dataset: &Dataset, spec: &ModelSpec) -> Result<(), TrainError> {
    spec.validate().map_err(TrainError::Config)?;
    let m = &dataset.manifest;
    let bad = |msg: String| Err(TrainError::Config(msg));
    if m.task != spec.task {
        return bad(format!("dataset is {}, model is {}", m.task, spec.task));
    }
    if m.channels != spec.in_channels {
        return bad(format!("dataset has {} channels, model expects {}", m.channels, spec.in_channels));
    }
    if m.num_classes != spec.classes {
        return bad(format!("dataset has {} classes, model predicts {}", m.num_classes, spec.classes));
    }
    if spec.task == Task::PartSeg {
        let cats = m.category_parts.as_ref().map_or(0, |c| c.categories());
        if cats != spec.categories {
            return bad(format!("dataset has {cats} categories, model expects {}", spec.categories));
        }
    }
    Ok(())
}

struct Batch<T> {
    x: NdArray<T>,
    /// One label per cloud (classification) or per point.
    labels: Vec<usize>,
    categories: Vec<usize>,
}

fn make_batch<T: Real>(clouds: &[&PointCloud], spec: &ModelSpec, seeds: &[u64]) -> Result<Batch<T>, TrainError> {
    let n = spec.n_points;
    let mut x = Vec::with_capacity(clouds.len() * n * spec.in_channels);
    let mut labels = Vec::new();
    let mut categories = Vec::new();
    for (&cloud, &seed) in clouds.iter().zip(seeds) {
        let sampled;
        let c = if cloud.len() == n {
            cloud
        } else {
            sampled = uniform_sample(cloud, n, seed);
            &sampled
        };
        x.extend(c.points().iter().map(|&v| T::from_f64(v as f64)));
        let missing = |what: &str| TrainError::Config(format!("sample without {what}"));
        match spec.task {
            Task::Classification => labels.push(c.class_label.ok_or_else(|| missing("class label"))? as usize),
            Task::PartSeg | Task::SceneSeg => {
                let pl = c.part_labels.as_ref().ok_or_else(|| missing("point labels"))?;
                labels.extend(pl.iter().map(|&l| l as usize));
            }
        }
        if spec.task == Task::PartSeg {
            categories.push(c.category.ok_or_else(|| missing("category"))? as usize);
        }
    }
    Ok(Batch {
        x: NdArray::new(vec![clouds.len(), n, spec.in_channels], x)?,
        labels,
        categories,
    })
}

fn batch_forward<'p, T: Real>(
    params: &'p ParamStore<T>,
    spec: &ModelSpec,
    batch: Batch<T>,
    mode: Mode,
    seed: u64,
    smoothing: f64,
) -> Result<(Forward<'p, T>, crate::autodiff::Var, crate::autodiff::Var), NetError> {
    let mut f = Forward::new(params, mode, seed);
    let x = f.input(batch.x);
    let cats = (spec.task == Task::PartSeg).then_some(batch.categories.as_slice());
    let logits = forward(&mut f, spec, x, cats)?;
    let loss = f.tape.softmax_cross_entropy(logits, &batch.labels, smoothing)?;
    Ok((f, logits, loss))
}

fn split_indices(dataset: &Dataset, split: Split) -> Vec<usize> {
    dataset
        .manifest
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.split == split)
        .map(|(i, _)| i)
        .collect()
}

/// Score `params` on one split; `None` when the split is empty. Clouds are
/// resampled to the model's point count with seeds derived from `seed`.
pub fn evaluate<T: Real>(
    dataset: &Dataset,
    split: Split,
    spec: &ModelSpec,
    params: &ParamStore<T>,
    batch: usize,
    seed: u64,
) -> Result<Option<EvalResult>, TrainError> {
    check_compatible(dataset, spec)?;
    let idx = split_indices(dataset, split);
    if idx.is_empty() {
        return Ok(None);
    }
    let parts = dataset.manifest.category_parts.as_ref();
    let mut preds: Vec<Vec<usize>> = Vec::new();
    let mut truths: Vec<Vec<usize>> = Vec::new();
    let mut cats: Vec<usize> = Vec::new();
    let mut loss_sum = 0.0;
    for chunk in idx.chunks(batch.max(1)) {
        let clouds: Vec<&PointCloud> = chunk.iter().map(|&i| &dataset.samples[i]).collect();
        let seeds: Vec<u64> = chunk.iter().map(|&i| mix(mix(seed, u64::MAX), i as u64)).collect();
        let b = make_batch::<T>(&clouds, spec, &seeds)?;
        let labels = b.labels.clone();
        let batch_cats = b.categories.clone();
        let (f, logits, loss) = batch_forward(params, spec, b, Mode::Eval, 0, 0.0)?;
        loss_sum += f.tape.value(loss).data()[0].to_f64() * chunk.len() as f64;
        let lv = f.tape.value(logits);
        let m = lv.last_dim();
        match spec.task {
            Task::Classification => {
                preds.push(lv.data().chunks(m).map(argmax).collect());
                truths.push(labels);
            }
            Task::SceneSeg | Task::PartSeg => {
                let n = spec.n_points;
                for (j, (rows, truth)) in lv.data().chunks(n * m).zip(labels.chunks(n)).enumerate() {
                    let pred = if spec.task == Task::PartSeg {
                        let allowed = parts
                            .and_then(|p| p.parts_of(batch_cats[j]))
                            .ok_or_else(|| TrainError::Config(format!("no parts for category {}", batch_cats[j])))?;
                        cats.push(batch_cats[j]);
                        rows.chunks(m).map(|r| masked_argmax(r, allowed)).collect()
                    } else {
                        rows.chunks(m).map(argmax).collect()
                    };
                    preds.push(pred);
                    truths.push(truth.to_vec());
                }
            }
        }
    }
    let report = if spec.task == Task::PartSeg {
        let parts = parts.expect("checked above");
        let shapes: Vec<ShapeResult<'_>> = preds
            .iter()
            .zip(&truths)
            .zip(&cats)
            .map(|((p, t), &c)| ShapeResult {
                pred: p,
                truth: t,
                parts: parts.parts_of(c).unwrap_or(&[]),
            })
            .collect();
        compute_part_metrics(&shapes, spec.classes)?
    } else {
        compute_metrics(&preds.concat(), &truths.concat(), spec.classes)?
    };
    Ok(Some(EvalResult {
        loss: loss_sum / idx.len() as f64,
        report,
    }))
}

/// Consecutive chunks of `order`; a trailing single-sample chunk joins the
/// previous one so batch normalization never sees a batch of one.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|c| c.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

fn csv_row(epoch: usize, split: &str, loss: f64, r: &MetricReport) -> String {
    format!(
        "{epoch},{split},{loss:.6},{:.6},{:.6},{:.6}\n",
        r.overall_accuracy, r.mean_class_accuracy, r.mean_iou
    )
}

/// [`train_with`] without a progress callback.
pub fn train<T: Real>(
    dataset: &Dataset,
    base: &ModelSpec,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainSummary, TrainError> {
    train_with::<T>(dataset, base, cfg, out_dir, &mut |_| true)
}

/// SGD with momentum under a cosine schedule. Writes `metrics.csv` (one
/// `train` row and, when the test split is non-empty, one `test` row per
/// epoch) and keeps the best-scoring weights in `out_dir`. With zero epochs
/// the initial weights are saved. `on_epoch` sees every finished epoch and
/// stops the run early by returning `false`.
pub fn train_with<T: Real>(
    dataset: &Dataset,
    base: &ModelSpec,
    cfg: &TrainConfig,
    out_dir: &Path,
    on_epoch: &mut dyn FnMut(&EpochRecord) -> bool,
) -> Result<TrainSummary, TrainError> {
    cfg.validate()?;
    let spec = cfg.model_spec(base);
    check_compatible(dataset, &spec)?;
    let train_idx = split_indices(dataset, Split::Train);
    if train_idx.is_empty() {
        return Err(TrainError::Config("dataset has no training samples".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| TrainError::io(out_dir, e))?;
    let csv_path = out_dir.join(METRICS_FILE);
    let mut csv = BufWriter::new(File::create(&csv_path).map_err(|e| TrainError::io(&csv_path, e))?);
    let io = |e| TrainError::io(&csv_path, e);
    writeln!(csv, "{METRICS_CSV_HEADER}").map_err(io)?;
    csv.flush().map_err(io)?;

    let mut params: ParamStore<T> = spec.init_params(cfg.seed)?;
    let mut velocity = Velocity::<T>::new();
    let mut summary = TrainSummary {
        spec: spec.clone(),
        history: Vec::new(),
        best_epoch: 0,
    };
    if cfg.epochs == 0 {
        save_checkpoint(out_dir, &spec, &params, &velocity)?;
        return Ok(summary);
    }
    let mut best = f64::NEG_INFINITY;
    for epoch in 1..=cfg.epochs {
        let lr = cosine_lr(epoch - 1, cfg.epochs, cfg.lr, cfg.lr_min);
        let epoch_seed = mix(cfg.seed, epoch as u64);
        let mut order = train_idx.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (bi, chunk) in batches(&order, cfg.batch).into_iter().enumerate() {
            let clouds: Vec<&PointCloud> = chunk.iter().map(|&i| &dataset.samples[i]).collect();
            let seeds: Vec<u64> = chunk.iter().map(|&i| mix(epoch_seed, i as u64)).collect();
            let b = make_batch::<T>(&clouds, &spec, &seeds)?;
            let nan = || TrainError::NonFiniteLoss { epoch, batch: bi };
            let step = batch_forward(&params, &spec, b, Mode::Train, mix(epoch_seed, !(bi as u64)), cfg.label_smoothing);
            let (f, _, loss) = match step {
                Err(NetError::Ad(AdError::NonFinite { .. })) => return Err(nan()),
                other => other?,
            };
            let lv = f.tape.value(loss).data()[0].to_f64();
            if !lv.is_finite() {
                return Err(nan());
            }
            let grads = f.gradients(loss)?;
            let updates = f.into_stat_updates();
            sgd_step(&mut params, &grads, lr, cfg.momentum, &mut velocity)?;
            for (prefix, stats) in &updates {
                params.update_bn(prefix, stats)?;
            }
            loss_sum += lv * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = loss_sum / seen as f64;
        let mut train_eval = evaluate(dataset, Split::Train, &spec, &params, cfg.batch, cfg.seed)?
            .expect("training split is non-empty");
        let test_eval = evaluate(dataset, Split::Test, &spec, &params, cfg.batch, cfg.seed)?;
        train_eval.loss = train_loss;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss,
            train: train_eval,
            test: test_eval,
        };
        csv.write_all(csv_row(epoch, "train", record.train.loss, &record.train.report).as_bytes())
            .map_err(io)?;
        if let Some(t) = &record.test {
            csv.write_all(csv_row(epoch, "test", t.loss, &t.report).as_bytes()).map_err(io)?;
        }
        csv.flush().map_err(io)?;
        let score = record.score(spec.task);
        if score > best {
            best = score;
            summary.best_epoch = epoch;
            save_checkpoint(out_dir, &spec, &params, &velocity)?;
        }
        let go_on = on_epoch(&record);
        summary.history.push(record);
        if !go_on {
            break;
        }
    }
    Ok(summary)
}
