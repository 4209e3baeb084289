//! Rank-by-detection and the salient object ranking (SOR) score.
//!
//! Each instance is scored by the mean saliency inside its mask. Ground-truth
//! order uses the same rule on observer agreement. SOR is Spearman's rho between
//! the two orders mapped affinely onto `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stack::{same_dims, AgreementMap, InstanceMap, SaliencyMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub instance_id: u16,
    pub score: f64,
    pub pixel_count: usize,
}

/// Instance ids with their (possibly fractional) ranks, sorted by id. Rank 1 is most salient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankVector {
    entries: Vec<(u16, f64)>,
}

impl RankVector {
    pub fn entries(&self) -> &[(u16, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = u16> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn ranks(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.1)
    }

    pub fn rank_of(&self, id: u16) -> Option<f64> {
        self.entries
            .binary_search_by_key(&id, |e| e.0)
            .ok()
            .map(|i| self.entries[i].1)
    }

    /// Ids from most to least salient; ties keep id order.
    pub fn order(&self) -> Vec<u16> {
        let mut e = self.entries.clone();
        e.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        e.into_iter().map(|e| e.0).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SorResult {
    /// NaN when invalid.
    pub rho: f64,
    /// NaN when invalid.
    pub sor: f64,
    pub n_instances: usize,
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSor {
    pub mean_sor: f64,
    pub n_valid: usize,
    pub n_excluded: usize,
}

fn accumulate(
    dims: (usize, usize),
    instances: &InstanceMap,
    value_at: impl Fn(usize) -> f64,
) -> Result<Vec<InstanceScore>> {
    same_dims(dims, instances.dims())?;
    if instances.is_empty() {
        return Err(Error::NoInstances);
    }
    let ids = instances.instance_ids();
    let mut slot = vec![usize::MAX; u16::MAX as usize + 1];
    for (i, &id) in ids.iter().enumerate() {
        slot[id as usize] = i;
    }
    let mut sums = vec![0.0; ids.len()];
    let mut counts = vec![0usize; ids.len()];
    for (p, &label) in instances.labels().iter().enumerate() {
        if label != 0 {
            let s = slot[label as usize];
            sums[s] += value_at(p);
            counts[s] += 1;
        }
    }
    Ok(ids
        .iter()
        .zip(sums.into_iter().zip(counts))
        .map(|(&instance_id, (sum, pixel_count))| InstanceScore {
            instance_id,
            score: sum / pixel_count as f64,
            pixel_count,
        })
        .collect())
}

/// Mean saliency over every labelled instance. Instances with zero saliency score 0 and are kept.
pub fn instance_rank_scores(
    saliency: &SaliencyMap,
    instances: &InstanceMap,
) -> Result<Vec<InstanceScore>> {
    let v = saliency.values();
    accumulate(saliency.dims(), instances, |p| v[p])
}

/// Scores closer than this (relative) are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

fn tied(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= TIE_TOLERANCE * a.abs().max(b.abs())
}

/// Orders scores descending; tied scores share their average rank.
pub fn rank_order(scores: &[InstanceScore]) -> RankVector {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].score.total_cmp(&scores[a].score));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && tied(scores[idx[j]].score, scores[idx[i]].score) {
            j += 1;
        }
        // positions i..j (0-based) share ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    let mut entries: Vec<(u16, f64)> = scores
        .iter()
        .zip(ranks)
        .map(|(s, r)| (s.instance_id, r))
        .collect();
    entries.sort_by_key(|e| e.0);
    RankVector { entries }
}

/// Pearson correlation of the two rank vectors.
pub fn spearman(r_gt: &RankVector, r_pred: &RankVector) -> Result<f64> {
    if !r_gt.ids().eq(r_pred.ids()) {
        return Err(Error::InstanceIdMismatch);
    }
    let n = r_gt.len();
    if n < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two instances"));
    }
    let mean = |r: &RankVector| r.ranks().sum::<f64>() / n as f64;
    let (ma, mb) = (mean(r_gt), mean(r_pred));
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (a, b) in r_gt.ranks().zip(r_pred.ranks()) {
        let (da, db) = (a - ma, b - mb);
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::UndefinedCorrelation("all instances tied"));
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// SOR = (rho + 1) / 2. Undefined correlations give an invalid result instead of an error.
pub fn sor_score(r_gt: &RankVector, r_pred: &RankVector) -> Result<SorResult> {
    let n_instances = r_gt.len();
    match spearman(r_gt, r_pred) {
        Ok(rho) => Ok(SorResult {
            rho,
            sor: (rho + 1.0) / 2.0,
            n_instances,
            valid: true,
        }),
        Err(Error::UndefinedCorrelation(_)) => Ok(SorResult {
            rho: f64::NAN,
            sor: f64::NAN,
            n_instances,
            valid: false,
        }),
        Err(e) => Err(e),
    }
}

/// Ground-truth order from mean observer agreement per instance.
pub fn gt_rank_from_agreement(
    agreement: &AgreementMap,
    instances: &InstanceMap,
) -> Result<RankVector> {
    let v = agreement.values();
    let scores = accumulate(agreement.dims(), instances, |p| v[p] as f64)?;
    Ok(rank_order(&scores))
}

/// Mean SOR over valid results; invalid ones are counted and skipped.
pub fn dataset_sor(results: &[SorResult]) -> Result<DatasetSor> {
    let valid: Vec<f64> = results.iter().filter(|r| r.valid).map(|r| r.sor).collect();
    if valid.is_empty() {
        return Err(Error::NothingToAggregate);
    }
    Ok(DatasetSor {
        mean_sor: valid.iter().sum::<f64>() / valid.len() as f64,
        n_valid: valid.len(),
        n_excluded: results.len() - valid.len(),
    })
}
