//! Count classes, one-vs-rest average precision and the mean / count-weighted AP summaries.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountScheme {
    /// Classes 0, 1, 2, 3, 4+.
    #[default]
    Sos,
    /// Classes 1, 2, 3, 4+.
    PascalS,
}

impl CountScheme {
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            CountScheme::Sos => &["0", "1", "2", "3", "4+"],
            CountScheme::PascalS => &["1", "2", "3", "4+"],
        }
    }

    pub fn n_classes(self) -> usize {
        self.labels().len()
    }

    pub fn name(self) -> &'static str {
        match self {
            CountScheme::Sos => "sos",
            CountScheme::PascalS => "pascals",
        }
    }

    /// Class index for an object count; counts of four or more share the open class.
    pub fn class_of(self, count: usize) -> Result<usize> {
        let clipped = count.min(4);
        match self {
            CountScheme::Sos => Ok(clipped),
            CountScheme::PascalS if count == 0 => Err(Error::CountOutsideScheme {
                count,
                scheme: self.name(),
            }),
            CountScheme::PascalS => Ok(clipped - 1),
        }
    }
}

impl FromStr for CountScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sos" => Ok(CountScheme::Sos),
            "pascals" | "pascal-s" => Ok(CountScheme::PascalS),
            other => Err(Error::Config(format!("unknown count scheme {other:?}"))),
        }
    }
}

pub fn count_to_class(count: usize, scheme: CountScheme) -> Result<&'static str> {
    Ok(scheme.labels()[scheme.class_of(count)?])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApMethod {
    /// 11-point interpolated AP.
    #[default]
    Voc07,
    /// Sum of precision over recall steps, no interpolation.
    Continuous,
}

impl fmt::Display for ApMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ApMethod::Voc07 => "voc07",
            ApMethod::Continuous => "continuous",
        })
    }
}

impl FromStr for ApMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "voc07" => Ok(ApMethod::Voc07),
            "continuous" => Ok(ApMethod::Continuous),
            other => Err(Error::Config(format!("unknown AP method {other:?}"))),
        }
    }
}

/// AP of a ranking by descending confidence. Equal confidences keep input order,
/// so callers pass items sorted by image id.
pub fn average_precision(confidences: &[f64], positives: &[bool], method: ApMethod) -> Result<f64> {
    if confidences.len() != positives.len() {
        return Err(Error::LengthMismatch(confidences.len(), positives.len()));
    }
    let n_pos = positives.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return Err(Error::NoPositives);
    }
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]));

    let mut pr = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (rank, &i) in order.iter().enumerate() {
        if positives[i] {
            tp += 1;
        }
        pr.push((tp as f64 / (rank + 1) as f64, tp as f64 / n_pos as f64));
    }

    Ok(match method {
        ApMethod::Continuous => {
            let mut prev_recall = 0.0;
            let mut ap = 0.0;
            for &(p, r) in &pr {
                ap += (r - prev_recall) * p;
                prev_recall = r;
            }
            ap
        }
        ApMethod::Voc07 => {
            // precision envelope from the right
            let mut env = vec![0.0; pr.len()];
            let mut best: f64 = 0.0;
            for i in (0..pr.len()).rev() {
                best = best.max(pr[i].0);
                env[i] = best;
            }
            (0..=10)
                .map(|t| {
                    let t = t as f64 / 10.0;
                    pr.iter().position(|&(_, r)| r >= t).map_or(0.0, |i| env[i])
                })
                .sum::<f64>()
                / 11.0
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubitizingPrediction {
    pub image_id: String,
    pub confidences: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub method: ApMethod,
    pub classes: Vec<String>,
    pub per_class_ap: Vec<f64>,
    pub class_counts: Vec<u64>,
    pub mean_ap: f64,
    pub weighted_ap: f64,
    /// Classes left out because no image belongs to them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped_classes: Vec<String>,
}

/// Builds the unweighted and count-weighted means. `per_class_ap` fixes the class order.
pub fn subitizing_report(
    per_class_ap: &[(String, f64)],
    class_counts: &[(String, u64)],
    method: ApMethod,
) -> Result<ApReport> {
    if per_class_ap.is_empty() {
        return Err(Error::NothingToAggregate);
    }
    let counts: BTreeMap<&str, u64> = class_counts.iter().map(|(k, c)| (k.as_str(), *c)).collect();
    if counts.len() != per_class_ap.len() || counts.len() != class_counts.len() {
        return Err(Error::ClassMismatch);
    }
    let mut classes = Vec::new();
    let mut aps = Vec::new();
    let mut cs = Vec::new();
    for (label, ap) in per_class_ap {
        let c = *counts.get(label.as_str()).ok_or(Error::ClassMismatch)?;
        classes.push(label.clone());
        aps.push(*ap);
        cs.push(c);
    }
    let total: u64 = cs.iter().sum();
    if total == 0 {
        return Err(Error::NothingToAggregate);
    }
    let mean_ap = aps.iter().sum::<f64>() / aps.len() as f64;
    let weighted_ap = aps.iter().zip(&cs).map(|(a, &c)| a * c as f64).sum::<f64>() / total as f64;
    Ok(ApReport {
        method,
        classes,
        per_class_ap: aps,
        class_counts: cs,
        mean_ap,
        weighted_ap,
        skipped_classes: Vec::new(),
    })
}

/// Fraction of images per class.
pub fn class_distribution(counts: &[(String, u64)]) -> Result<Vec<(String, f64)>> {
    let total: u64 = counts.iter().map(|c| c.1).sum();
    if total == 0 {
        return Err(Error::NothingToAggregate);
    }
    Ok(counts
        .iter()
        .map(|(k, c)| (k.clone(), *c as f64 / total as f64))
        .collect())
}

/// One-vs-rest AP per class over images matched by id.
pub fn evaluate_subitizing(
    predictions: &[SubitizingPrediction],
    gt_counts: &BTreeMap<String, usize>,
    scheme: CountScheme,
    method: ApMethod,
) -> Result<ApReport> {
    let n_classes = scheme.n_classes();
    let mut rows: Vec<(&str, &[f64], usize)> = Vec::with_capacity(predictions.len());
    for p in predictions {
        if p.confidences.len() != n_classes {
            return Err(Error::Record {
                id: p.image_id.clone(),
                reason: format!(
                    "{} confidences for {} classes",
                    p.confidences.len(),
                    n_classes
                ),
            });
        }
        if let Some(bad) = p.confidences.iter().find(|c| !c.is_finite()) {
            return Err(Error::Record {
                id: p.image_id.clone(),
                reason: format!("non-finite confidence {bad}"),
            });
        }
        let count = gt_counts.get(&p.image_id).ok_or_else(|| Error::Record {
            id: p.image_id.clone(),
            reason: "no ground-truth count".into(),
        })?;
        rows.push((&p.image_id, &p.confidences, scheme.class_of(*count)?));
    }
    rows.sort_by(|a, b| a.0.cmp(b.0));

    let mut per_class = Vec::new();
    let mut counts = Vec::new();
    let mut skipped = Vec::new();
    for (c, label) in scheme.labels().iter().enumerate() {
        let conf: Vec<f64> = rows.iter().map(|r| r.1[c]).collect();
        let pos: Vec<bool> = rows.iter().map(|r| r.2 == c).collect();
        let n = pos.iter().filter(|&&p| p).count() as u64;
        match average_precision(&conf, &pos, method) {
            Ok(ap) => {
                per_class.push((label.to_string(), ap));
                counts.push((label.to_string(), n));
            }
            Err(Error::NoPositives) => skipped.push(label.to_string()),
            Err(e) => return Err(e),
        }
    }
    let mut report = subitizing_report(&per_class, &counts, method)?;
    report.skipped_classes = skipped;
    Ok(report)
}

/// Reads `image_id,<one column per class>` rows.
pub fn read_predictions_csv(path: &Path, scheme: CountScheme) -> Result<Vec<SubitizingPrediction>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or_default().to_string();
        let confidences = rec
            .iter()
            .skip(1)
            .map(|s| {
                s.trim().parse::<f64>().map_err(|e| Error::Record {
                    id: id.clone(),
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if confidences.len() != scheme.n_classes() {
            return Err(Error::Record {
                id,
                reason: format!("expected {} confidence columns", scheme.n_classes()),
            });
        }
        out.push(SubitizingPrediction {
            image_id: id,
            confidences,
        });
    }
    Ok(out)
}

pub fn write_predictions_csv(
    path: &Path,
    scheme: CountScheme,
    predictions: &[SubitizingPrediction],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["image_id".to_string()];
    header.extend(scheme.labels().iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for p in predictions {
        let mut row = vec![p.image_id.clone()];
        row.extend(p.confidences.iter().map(|c| c.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `image_id,count` rows.
pub fn read_counts_csv(path: &Path) -> Result<BTreeMap<String, usize>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or_default().to_string();
        let count = rec
            .get(1)
            .unwrap_or_default()
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::Record {
                id: id.clone(),
                reason: e.to_string(),
            })?;
        out.insert(id, count);
    }
    Ok(out)
}
