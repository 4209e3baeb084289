use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::DatasetManifest;
use crate::detection::{
    dataset_detection_report, evaluate_against_stack, BestReport, DetectionAggregate, EvalOptions,
};
use crate::error::{Error, Result};
use crate::io::read_saliency;
use crate::ranking::{
    dataset_sor, gt_rank_from_agreement, instance_rank_scores, rank_order, sor_score, DatasetSor,
    RankVector, SorResult,
};
use crate::stack::{build_nested_stack, same_dims};
use crate::subitizing::{
    evaluate_subitizing, read_predictions_csv, ApMethod, ApReport, CountScheme,
};

pub const TOOL_NAME: &str = "nrss";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Optional per-image class confidences inside a prediction directory.
pub const SUBITIZING_FILE: &str = "subitizing.csv";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub beta2: f64,
    pub n_thresholds: usize,
    pub ap_method: ApMethod,
    pub scheme: CountScheme,
}

impl Default for RunConfig {
    fn default() -> Self {
        let o = EvalOptions::default();
        Self {
            beta2: o.beta2,
            n_thresholds: o.n_thresholds,
            ap_method: ApMethod::default(),
            scheme: CountScheme::default(),
        }
    }
}

impl RunConfig {
    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            beta2: self.beta2,
            n_thresholds: self.n_thresholds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRow {
    pub id: String,
    pub n_instances: usize,
    pub gt_rank: RankVector,
    pub pred_rank: RankVector,
    pub sor: SorResult,
    /// `None` when every slice of the ground truth is degenerate.
    pub detection: Option<BestReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub n_images: usize,
    pub detection: Option<DetectionAggregate>,
    /// Images whose ground truth had no usable slice.
    pub detection_excluded: Vec<String>,
    pub sor: Option<DatasetSor>,
    pub subitizing: Option<ApReport>,
    pub images: Vec<ImageRow>,
}

fn evaluate_image(
    manifest: &DatasetManifest,
    idx: usize,
    pred_dir: &Path,
    opts: EvalOptions,
) -> Result<ImageRow> {
    let rec = &manifest.records[idx];
    let gt = manifest.ground_truth(rec)?;
    let pred_path = pred_dir.join(format!("{}.png", rec.id));
    if !pred_path.exists() {
        return Err(Error::MissingFile(pred_path));
    }
    let pred = read_saliency(&pred_path)?;
    same_dims(pred.dims(), gt.agreement.dims()).map_err(|_| Error::Record {
        id: rec.id.clone(),
        reason: format!(
            "prediction is {:?} but ground truth is {:?}",
            pred.dims(),
            gt.agreement.dims()
        ),
    })?;
    let stack = build_nested_stack(&gt.agreement);
    let detection = match evaluate_against_stack(&pred, &stack, opts) {
        Ok(r) => Some(r),
        Err(Error::AllSlicesDegenerate) => None,
        Err(e) => return Err(e),
    };
    let r_gt = gt_rank_from_agreement(&gt.agreement, &gt.instances)?;
    let r_pred = rank_order(&instance_rank_scores(&pred, &gt.instances)?);
    Ok(ImageRow {
        id: rec.id.clone(),
        n_instances: gt.instances.instance_ids().len(),
        sor: sor_score(&r_gt, &r_pred)?,
        gt_rank: r_gt,
        pred_rank: r_pred,
        detection,
    })
}

/// Evaluates `<pred_dir>/<id>.png` for every record; rows come back sorted by id.
pub fn run_eval(
    manifest: &DatasetManifest,
    pred_dir: &Path,
    config: &RunConfig,
) -> Result<RunReport> {
    let opts = config.eval_options();
    if opts.n_thresholds < 2 {
        return Err(Error::ThresholdCount(opts.n_thresholds));
    }
    let mut images: Vec<ImageRow> = (0..manifest.records.len())
        .into_par_iter()
        .map(|i| evaluate_image(manifest, i, pred_dir, opts))
        .collect::<Result<_>>()?;
    images.sort_by(|a, b| a.id.cmp(&b.id));

    let best: Vec<BestReport> = images.iter().filter_map(|r| r.detection.clone()).collect();
    let detection_excluded = images
        .iter()
        .filter(|r| r.detection.is_none())
        .map(|r| r.id.clone())
        .collect();
    let detection = if best.is_empty() {
        None
    } else {
        Some(dataset_detection_report(&best)?)
    };
    let sors: Vec<SorResult> = images.iter().map(|r| r.sor).collect();
    let sor = match dataset_sor(&sors) {
        Ok(s) => Some(s),
        Err(Error::NothingToAggregate) => None,
        Err(e) => return Err(e),
    };
    let subitizing = subitizing_section(manifest, pred_dir, config)?;
    Ok(RunReport {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        config: *config,
        n_images: images.len(),
        detection,
        detection_excluded,
        sor,
        subitizing,
        images,
    })
}

/// AP report when the manifest carries counts and the prediction directory has confidences.
fn subitizing_section(
    manifest: &DatasetManifest,
    pred_dir: &Path,
    config: &RunConfig,
) -> Result<Option<ApReport>> {
    let path = pred_dir.join(SUBITIZING_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let counts: BTreeMap<String, usize> = manifest
        .records
        .iter()
        .filter_map(|r| r.count.map(|c| (r.id.clone(), c)))
        .collect();
    if counts.is_empty() {
        return Ok(None);
    }
    let preds = read_predictions_csv(&path, config.scheme)?;
    Ok(Some(evaluate_subitizing(
        &preds,
        &counts,
        config.scheme,
        config.ap_method,
    )?))
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// One row per image plus a final `ALL` row with dataset means.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "id",
            "n_instances",
            "sor",
            "sor_valid",
            "auc",
            "auc_slice",
            "max_f",
            "max_f_slice",
            "mae",
            "mae_slice",
        ])?;
        for r in &self.images {
            let mut row = vec![
                r.id.clone(),
                r.n_instances.to_string(),
                f4(r.sor.sor),
                r.sor.valid.to_string(),
            ];
            match &r.detection {
                Some(d) => row.extend([
                    f4(d.best_auc.value),
                    d.best_auc.slice.to_string(),
                    f4(d.best_maxf.value),
                    d.best_maxf.slice.to_string(),
                    f4(d.min_mae.value),
                    d.min_mae.slice.to_string(),
                ]),
                None => row.extend(std::iter::repeat_n(String::new(), 6)),
            }
            w.write_record(&row)?;
        }
        let mut all = vec![
            "ALL".to_string(),
            self.images
                .iter()
                .map(|r| r.n_instances)
                .sum::<usize>()
                .to_string(),
        ];
        match &self.sor {
            Some(s) => all.extend([f4(s.mean_sor), s.n_valid.to_string()]),
            None => all.extend(["nan".into(), "0".into()]),
        }
        match &self.detection {
            Some(d) => {
                let b = &d.per_image_best;
                all.extend([
                    f4(b.auc),
                    String::new(),
                    f4(b.max_f),
                    String::new(),
                    f4(b.mae),
                    String::new(),
                ]);
            }
            None => all.extend(std::iter::repeat_n(String::new(), 6)),
        }
        w.write_record(&all)?;
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        to_string(|b| self.write_csv(b))
    }

    /// One row per image per ground-truth slice; degenerate slices are listed with empty metrics.
    pub fn write_slice_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "id",
            "slice",
            "auc",
            "max_f",
            "med_f",
            "avg_f",
            "mae",
            "degenerate",
        ])?;
        for r in &self.images {
            let Some(d) = &r.detection else {
                continue;
            };
            for k in 1..=d.n_slices {
                let mut row = vec![r.id.clone(), k.to_string()];
                match d.slice(k) {
                    Some(s) => {
                        row.extend([s.auc, s.max_f, s.med_f, s.avg_f, s.mae].map(f4));
                        row.push("false".into());
                    }
                    None => {
                        row.extend(std::iter::repeat_n(String::new(), 5));
                        row.push("true".into());
                    }
                }
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_slice_csv(&self) -> Result<String> {
        to_string(|b| self.write_slice_csv(b))
    }

    /// One row per instance: ground-truth and predicted rank with the image's SOR.
    pub fn write_rank_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "id",
            "instance",
            "gt_rank",
            "pred_rank",
            "rho",
            "sor",
            "valid",
        ])?;
        for r in &self.images {
            for (&(inst, gt), &(_, pred)) in r.gt_rank.entries().iter().zip(r.pred_rank.entries()) {
                w.write_record([
                    r.id.clone(),
                    inst.to_string(),
                    gt.to_string(),
                    pred.to_string(),
                    f4(r.sor.rho),
                    f4(r.sor.sor),
                    r.sor.valid.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_rank_csv(&self) -> Result<String> {
        to_string(|b| self.write_rank_csv(b))
    }
}

/// Per-class AP rows followed by `mean` and `overall` (count-weighted) rows.
pub fn write_ap_csv(report: &ApReport, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["class", "ap", "images"])?;
    for ((c, ap), n) in report
        .classes
        .iter()
        .zip(&report.per_class_ap)
        .zip(&report.class_counts)
    {
        w.write_record([c.clone(), f4(*ap), n.to_string()])?;
    }
    let total: u64 = report.class_counts.iter().sum();
    w.write_record(["mean".into(), f4(report.mean_ap), total.to_string()])?;
    w.write_record(["overall".into(), f4(report.weighted_ap), total.to_string()])?;
    w.flush()?;
    Ok(())
}

pub fn ap_csv(report: &ApReport) -> Result<String> {
    to_string(|b| write_ap_csv(report, b))
}

fn f4(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        "nan".into()
    }
}

fn to_string(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<String> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}
