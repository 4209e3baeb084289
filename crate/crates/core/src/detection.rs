//! Threshold sweeps, ROC/PR summaries and MAE against binary ground truth, plus the
//! evaluation of one prediction against every slice of a nested stack.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stack::{same_dims, BinaryMap, NestedStack, SaliencyMap};

pub const DEFAULT_BETA2: f64 = 0.3;
pub const DEFAULT_THRESHOLDS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// 1.0 when nothing is predicted positive.
    pub precision: f64,
    pub recall: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// Points of a threshold sweep, ordered by increasing threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub points: Vec<CurvePoint>,
    pub positives: u64,
    pub negatives: u64,
}

impl Curve {
    /// Why TPR or FPR is undefined, if it is.
    pub fn degenerate(&self) -> Option<&'static str> {
        if self.positives == 0 {
            Some("no positive pixels")
        } else if self.negatives == 0 {
            Some("no negative pixels")
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FMeasures {
    pub max_f: f64,
    pub med_f: f64,
    pub avg_f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub beta2: f64,
    pub n_thresholds: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            beta2: DEFAULT_BETA2,
            n_thresholds: DEFAULT_THRESHOLDS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub slice: usize,
    pub auc: f64,
    pub max_f: f64,
    pub med_f: f64,
    pub avg_f: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Best {
    pub slice: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestReport {
    pub n_slices: usize,
    pub best_auc: Best,
    pub best_maxf: Best,
    pub min_mae: Best,
    pub per_slice: Vec<SliceReport>,
    /// Slices skipped because they have no positive (or no negative) pixels.
    pub degenerate_slices: Vec<usize>,
}

impl BestReport {
    pub fn slice(&self, k: usize) -> Option<&SliceReport> {
        self.per_slice.iter().find(|s| s.slice == k)
    }
}

fn threshold(j: usize, n: usize) -> f64 {
    j as f64 / (n - 1) as f64
}

/// Index of the highest threshold not exceeding `v`.
fn level_of(v: f64, n: usize) -> usize {
    let top = n - 1;
    let mut j = ((v * top as f64).floor().max(0.0) as usize).min(top);
    while j < top && threshold(j + 1, n) <= v {
        j += 1;
    }
    while j > 0 && threshold(j, n) > v {
        j -= 1;
    }
    j
}

/// Confusion counts at thresholds `j / (n - 1)`; a pixel is positive when `pred >= threshold`.
pub fn confusion_sweep(pred: &SaliencyMap, gt: &BinaryMap, n_thresholds: usize) -> Result<Curve> {
    same_dims(pred.dims(), gt.dims())?;
    if n_thresholds < 2 {
        return Err(Error::ThresholdCount(n_thresholds));
    }
    let n = n_thresholds;
    let mut hist_pos = vec![0u64; n];
    let mut hist_neg = vec![0u64; n];
    for (&v, &g) in pred.values().iter().zip(gt.values()) {
        let j = level_of(v, n);
        if g {
            hist_pos[j] += 1;
        } else {
            hist_neg[j] += 1;
        }
    }
    let positives: u64 = hist_pos.iter().sum();
    let negatives: u64 = hist_neg.iter().sum();
    let mut points = Vec::with_capacity(n);
    let (mut tp, mut fp) = (0u64, 0u64);
    for j in (0..n).rev() {
        tp += hist_pos[j];
        fp += hist_neg[j];
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let rate = |num: u64, den: u64| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        points.push(CurvePoint {
            threshold: threshold(j, n),
            tp,
            fp,
            tn: negatives - fp,
            fn_: positives - tp,
            precision,
            recall: rate(tp, positives),
            tpr: rate(tp, positives),
            fpr: rate(fp, negatives),
        });
    }
    points.reverse();
    Ok(Curve {
        points,
        positives,
        negatives,
    })
}

/// Dumps a sweep as `threshold,tp,fp,tn,fn,precision,recall,tpr,fpr` rows.
pub fn write_curve_csv(curve: &Curve, out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "threshold",
        "tp",
        "fp",
        "tn",
        "fn",
        "precision",
        "recall",
        "tpr",
        "fpr",
    ])?;
    for p in &curve.points {
        w.write_record([
            format!("{:.6}", p.threshold),
            p.tp.to_string(),
            p.fp.to_string(),
            p.tn.to_string(),
            p.fn_.to_string(),
            format!("{:.6}", p.precision),
            format!("{:.6}", p.recall),
            format!("{:.6}", p.tpr),
            format!("{:.6}", p.fpr),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Trapezoidal area under the ROC curve with `(0,0)` and `(1,1)` appended.
/// Integrated on the integer counts, so separable inputs give exactly 1.
pub fn auc(curve: &Curve) -> Result<f64> {
    if let Some(why) = curve.degenerate() {
        return Err(Error::DegenerateGroundTruth(why));
    }
    if curve.points.len() < 2 {
        return Err(Error::ThresholdCount(curve.points.len()));
    }
    let mut roc: Vec<(u64, u64)> = curve.points.iter().map(|p| (p.fp, p.tp)).collect();
    roc.push((0, 0));
    roc.push((curve.negatives, curve.positives));
    roc.sort_unstable();
    let twice_area: u128 = roc
        .windows(2)
        .map(|w| u128::from(w[1].0 - w[0].0) * u128::from(w[1].1 + w[0].1))
        .sum();
    Ok(twice_area as f64 / (2.0 * curve.positives as f64 * curve.negatives as f64))
}

pub fn f_measure(precision: f64, recall: f64, beta2: f64) -> f64 {
    let den = beta2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * precision * recall / den
    }
}

pub fn f_measures(curve: &Curve, beta2: f64) -> FMeasures {
    let mut f: Vec<f64> = curve
        .points
        .iter()
        .map(|p| f_measure(p.precision, p.recall, beta2))
        .collect();
    f.sort_by(f64::total_cmp);
    let n = f.len();
    let med_f = if n % 2 == 1 {
        f[n / 2]
    } else {
        (f[n / 2 - 1] + f[n / 2]) / 2.0
    };
    FMeasures {
        max_f: f[n - 1],
        med_f,
        avg_f: f.iter().sum::<f64>() / n as f64,
    }
}

pub fn mae(pred: &SaliencyMap, gt: &BinaryMap) -> Result<f64> {
    same_dims(pred.dims(), gt.dims())?;
    let sum: f64 = pred
        .values()
        .iter()
        .zip(gt.values())
        .map(|(&p, &g)| (p - g as u8 as f64).abs())
        .sum();
    Ok(sum / pred.values().len() as f64)
}

pub fn evaluate_slice(
    pred: &SaliencyMap,
    gt: &BinaryMap,
    slice: usize,
    opts: EvalOptions,
) -> Result<SliceReport> {
    let curve = confusion_sweep(pred, gt, opts.n_thresholds)?;
    let auc = auc(&curve)?;
    let f = f_measures(&curve, opts.beta2);
    Ok(SliceReport {
        slice,
        auc,
        max_f: f.max_f,
        med_f: f.med_f,
        avg_f: f.avg_f,
        mae: mae(pred, gt)?,
    })
}

/// Scores `pred` against each non-degenerate slice and picks the best slice per metric.
pub fn evaluate_against_stack(
    pred: &SaliencyMap,
    stack: &NestedStack,
    opts: EvalOptions,
) -> Result<BestReport> {
    same_dims(pred.dims(), stack.dims())?;
    if opts.n_thresholds < 2 {
        return Err(Error::ThresholdCount(opts.n_thresholds));
    }
    let mut per_slice = Vec::new();
    let mut degenerate_slices = Vec::new();
    for (i, slice) in stack.slices().iter().enumerate() {
        match evaluate_slice(pred, slice, i + 1, opts) {
            Ok(r) => per_slice.push(r),
            Err(Error::DegenerateGroundTruth(_)) => degenerate_slices.push(i + 1),
            Err(e) => return Err(e),
        }
    }
    if per_slice.is_empty() {
        return Err(Error::AllSlicesDegenerate);
    }
    let pick = |key: fn(&SliceReport) -> f64, better: fn(f64, f64) -> bool| {
        let mut best = Best {
            slice: per_slice[0].slice,
            value: key(&per_slice[0]),
        };
        for r in &per_slice[1..] {
            if better(key(r), best.value) {
                best = Best {
                    slice: r.slice,
                    value: key(r),
                };
            }
        }
        best
    };
    Ok(BestReport {
        n_slices: stack.n_observers(),
        best_auc: pick(|r| r.auc, |a, b| a > b),
        best_maxf: pick(|r| r.max_f, |a, b| a > b),
        min_mae: pick(|r| r.mae, |a, b| a < b),
        per_slice,
        degenerate_slices,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceMean {
    pub slice: usize,
    /// Images in which this slice was non-degenerate.
    pub n_images: usize,
    pub auc: f64,
    pub max_f: f64,
    pub med_f: f64,
    pub avg_f: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionAggregate {
    pub n_images: usize,
    /// Means of each image's own best slice. Median and average F are taken at the
    /// image's best max-F slice.
    pub per_image_best: SummaryRow,
    /// Per-slice means across images.
    pub per_slice: Vec<SliceMean>,
    /// A single slice chosen for the whole dataset from the per-slice means.
    pub global_best_auc: Best,
    pub global_best_maxf: Best,
    pub global_min_mae: Best,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub auc: f64,
    pub max_f: f64,
    pub med_f: f64,
    pub avg_f: f64,
    pub mae: f64,
}

pub fn dataset_detection_report(per_image: &[BestReport]) -> Result<DetectionAggregate> {
    if per_image.is_empty() {
        return Err(Error::NothingToAggregate);
    }
    let n = per_image.len() as f64;
    let mut row = SummaryRow {
        auc: 0.0,
        max_f: 0.0,
        med_f: 0.0,
        avg_f: 0.0,
        mae: 0.0,
    };
    for r in per_image {
        let at_f = r
            .slice(r.best_maxf.slice)
            .expect("best slice is in per_slice");
        row.auc += r.best_auc.value;
        row.max_f += r.best_maxf.value;
        row.med_f += at_f.med_f;
        row.avg_f += at_f.avg_f;
        row.mae += r.min_mae.value;
    }
    row.auc /= n;
    row.max_f /= n;
    row.med_f /= n;
    row.avg_f /= n;
    row.mae /= n;

    let n_slices = per_image.iter().map(|r| r.n_slices).max().unwrap_or(0);
    let mut per_slice = Vec::new();
    for k in 1..=n_slices {
        let hits: Vec<&SliceReport> = per_image.iter().filter_map(|r| r.slice(k)).collect();
        if hits.is_empty() {
            continue;
        }
        let m = hits.len() as f64;
        let mean = |f: fn(&SliceReport) -> f64| hits.iter().map(|s| f(s)).sum::<f64>() / m;
        per_slice.push(SliceMean {
            slice: k,
            n_images: hits.len(),
            auc: mean(|s| s.auc),
            max_f: mean(|s| s.max_f),
            med_f: mean(|s| s.med_f),
            avg_f: mean(|s| s.avg_f),
            mae: mean(|s| s.mae),
        });
    }
    let pick = |key: fn(&SliceMean) -> f64, better: fn(f64, f64) -> bool| {
        let mut best = Best {
            slice: per_slice[0].slice,
            value: key(&per_slice[0]),
        };
        for s in &per_slice[1..] {
            if better(key(s), best.value) {
                best = Best {
                    slice: s.slice,
                    value: key(s),
                };
            }
        }
        best
    };
    Ok(DetectionAggregate {
        n_images: per_image.len(),
        per_image_best: row,
        global_best_auc: pick(|s| s.auc, |a, b| a > b),
        global_best_maxf: pick(|s| s.max_f, |a, b| a > b),
        global_min_mae: pick(|s| s.mae, |a, b| a < b),
        per_slice,
    })
}
