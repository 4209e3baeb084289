//! Top-three principal components of a stack, rendered as RGB.

use nalgebra::{DMatrix, SymmetricEigen};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Eigenvalues at or below this fraction of the covariance trace count as missing.
pub const RANK_TOLERANCE: f64 = 1e-10;
/// Absolute floor relative to the squared channel means; absorbs rounding in the centring.
const ROUNDING_FLOOR: f64 = 1e-20;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub rgb: Vec<u8>,
    /// Unit eigenvectors for PC1..PC3; `None` where the covariance has no such component.
    pub components: [Option<Vec<f64>>; 3],
    pub eigenvalues: [f64; 3],
    /// Raw projections per component before normalisation.
    pub projections: [Vec<f64>; 3],
    pub rank_deficient: bool,
}

/// Channel covariance with pixels as samples (population normalisation).
pub fn channel_covariance<T: Scalar>(nrss: &Tensor<T>) -> (Vec<f64>, DMatrix<f64>) {
    let (c, n) = (nrss.channels(), nrss.plane_len());
    let means: Vec<f64> = (0..c)
        .map(|k| nrss.plane(k).iter().map(|v| v.f64()).sum::<f64>() / n as f64)
        .collect();
    let mut cov = DMatrix::zeros(c, c);
    for a in 0..c {
        for b in a..c {
            let s: f64 = nrss
                .plane(a)
                .iter()
                .zip(nrss.plane(b))
                .map(|(x, y)| (x.f64() - means[a]) * (y.f64() - means[b]))
                .sum();
            cov[(a, b)] = s / n as f64;
            cov[(b, a)] = s / n as f64;
        }
    }
    (means, cov)
}

/// Flips `v` so its largest-magnitude entry is positive (first such entry on ties).
pub fn canonical_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn min_max_u8(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return vec![0; values.len()];
    }
    values
        .iter()
        .map(|&v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
        .collect()
}

impl PcaImage {
    pub fn to_rgb_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width as u32, self.height as u32, self.rgb.clone())
            .expect("buffer sized at construction")
    }
}

pub fn pca_visualize<T: Scalar>(nrss: &Tensor<T>) -> Result<PcaImage> {
    let (c, h, w) = nrss.shape();
    if c < 3 || h * w == 0 {
        return Err(Error::Shape(format!(
            "PCA needs at least 3 channels and one pixel, got {:?}",
            nrss.shape()
        )));
    }
    let (means, cov) = channel_covariance(nrss);
    let trace: f64 = cov.diagonal().iter().sum();
    let floor = ROUNDING_FLOOR * (1.0 + means.iter().map(|m| m * m).sum::<f64>());
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut components: [Option<Vec<f64>>; 3] = [None, None, None];
    let mut eigenvalues = [0.0; 3];
    let mut projections: [Vec<f64>; 3] = Default::default();
    let mut rgb = vec![0u8; h * w * 3];
    let mut rank_deficient = false;
    for (k, &idx) in order.iter().take(3).enumerate() {
        let lambda = eig.eigenvalues[idx];
        if lambda <= floor || lambda <= RANK_TOLERANCE * trace {
            rank_deficient = true;
            projections[k] = vec![0.0; h * w];
            continue;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        canonical_sign(&mut v);
        let proj: Vec<f64> = (0..h * w)
            .map(|p| {
                (0..c)
                    .map(|ch| (nrss.plane(ch)[p].f64() - means[ch]) * v[ch])
                    .sum()
            })
            .collect();
        for (p, b) in min_max_u8(&proj).into_iter().enumerate() {
            rgb[p * 3 + k] = b;
        }
        eigenvalues[k] = lambda;
        projections[k] = proj;
        components[k] = Some(v);
    }
    Ok(PcaImage {
        width: w,
        height: h,
        rgb,
        components,
        eigenvalues,
        projections,
        rank_deficient,
    })
}
