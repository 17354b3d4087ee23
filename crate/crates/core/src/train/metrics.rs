use super::TrainError;

/// Classification / segmentation scores. IoU entries are `None` for classes
/// absent from both prediction and truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub overall_accuracy: f64,
    pub mean_class_accuracy: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub mean_iou: f64,
    /// Micro-averaged IoU: `ΣTP / Σ(TP + FP + FN)` over all classes.
    pub overall_iou: f64,
    /// `confusion[truth][pred]`.
    pub confusion: Vec<Vec<u64>>,
}

impl MetricReport {
    pub fn classes(&self) -> usize {
        self.confusion.len()
    }

    /// Aligned two-column table plus one line per class.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{:<22}{:>10.4}\n", "overall_accuracy", self.overall_accuracy));
        s.push_str(&format!("{:<22}{:>10.4}\n", "mean_class_accuracy", self.mean_class_accuracy));
        s.push_str(&format!("{:<22}{:>10.4}\n", "mean_iou", self.mean_iou));
        s.push_str(&format!("{:<22}{:>10.4}\n", "overall_iou", self.overall_iou));
        s.push_str(&format!("{:<8}{:>8}{:>10}\n", "class", "support", "iou"));
        for (c, row) in self.confusion.iter().enumerate() {
            let support: u64 = row.iter().sum();
            let iou = self.per_class_iou[c].map_or("-".to_string(), |v| format!("{v:.4}"));
            s.push_str(&format!("{:<8}{:>8}{:>10}\n", c, support, iou));
        }
        s
    }
}

fn confusion(pred: &[usize], truth: &[usize], classes: usize) -> Result<Vec<Vec<u64>>, TrainError> {
    if pred.len() != truth.len() {
        return Err(TrainError::Metrics(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut m = vec![vec![0u64; classes]; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= classes || t >= classes {
            return Err(TrainError::Metrics(format!(
                "label {} out of range [0, {classes})",
                p.max(t)
            )));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Scores over one flat list of predictions. Mean class accuracy averages the
/// recall of classes with support; mean IoU averages the defined IoUs.
pub fn compute_metrics(pred: &[usize], truth: &[usize], classes: usize) -> Result<MetricReport, TrainError> {
    let m = confusion(pred, truth, classes)?;
    let total = pred.len() as u64;
    let mut correct = 0u64;
    let mut recalls = Vec::new();
    let mut ious = Vec::with_capacity(classes);
    let (mut tp_all, mut denom_all) = (0u64, 0u64);
    for c in 0..classes {
        let tp = m[c][c];
        let support: u64 = m[c].iter().sum();
        let predicted: u64 = m.iter().map(|r| r[c]).sum();
        correct += tp;
        if support > 0 {
            recalls.push(tp as f64 / support as f64);
        }
        let union = support + predicted - tp;
        tp_all += tp;
        denom_all += union;
        ious.push((union > 0).then(|| tp as f64 / union as f64));
    }
    let defined: Vec<f64> = ious.iter().flatten().copied().collect();
    Ok(MetricReport {
        overall_accuracy: ratio(correct, total),
        mean_class_accuracy: mean(&recalls),
        mean_iou: mean(&defined),
        overall_iou: ratio(tp_all, denom_all),
        per_class_iou: ious,
        confusion: m,
    })
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Mean IoU of one shape over its category's parts; a part absent from both
/// prediction and truth scores 1.
pub fn shape_miou(pred: &[usize], truth: &[usize], parts: &[u16]) -> f64 {
    let per_part: Vec<f64> = parts
        .iter()
        .map(|&p| {
            let p = p as usize;
            let (mut inter, mut union) = (0u64, 0u64);
            for (&a, &b) in pred.iter().zip(truth) {
                let (ia, ib) = (a == p, b == p);
                inter += u64::from(ia && ib);
                union += u64::from(ia || ib);
            }
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        })
        .collect();
    mean(&per_part)
}

/// One segmented shape: per-point predictions, truth and its category's parts.
pub struct ShapeResult<'a> {
    pub pred: &'a [usize],
    pub truth: &'a [usize],
    pub parts: &'a [u16],
}

/// Point-level scores with `mean_iou` replaced by the average per-shape mIoU.
pub fn compute_part_metrics(shapes: &[ShapeResult<'_>], classes: usize) -> Result<MetricReport, TrainError> {
    let pred: Vec<usize> = shapes.iter().flat_map(|s| s.pred.iter().copied()).collect();
    let truth: Vec<usize> = shapes.iter().flat_map(|s| s.truth.iter().copied()).collect();
    let mut report = compute_metrics(&pred, &truth, classes)?;
    let per_shape: Vec<f64> = shapes.iter().map(|s| shape_miou(s.pred, s.truth, s.parts)).collect();
    report.mean_iou = mean(&per_shape);
    Ok(report)
}

/// Index of the largest entry; first index on ties.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Argmax restricted to `allowed` indices.
pub fn masked_argmax<T: PartialOrd + Copy>(row: &[T], allowed: &[u16]) -> usize {
    let mut best = allowed[0] as usize;
    for &a in allowed {
        if row[a as usize] > row[best] {
            best = a as usize;
        }
    }
    best
}
