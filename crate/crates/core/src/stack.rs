//! Raster types for observer-agreement ground truth and the nested stack built from it.
//!
//! An [`AgreementMap`] stores, per pixel, how many of `N` observers marked the pixel
//! as salient. The [`NestedStack`] view splits it into `N` binary slices where slice
//! `k` (1-based) is set wherever at least `k` observers agree, so every slice is a
//! subset of the one before it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions { width, height });
    }
    let expected = width * height;
    if len != expected {
        return Err(Error::BufferLength {
            expected,
            actual: len,
        });
    }
    Ok(())
}

pub(crate) fn same_dims(left: (usize, usize), right: (usize, usize)) -> Result<()> {
    if left != right {
        return Err(Error::DimensionMismatch { left, right });
    }
    Ok(())
}

/// Per-pixel observer counts in `0..=n_observers`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementMap {
    width: usize,
    height: usize,
    n_observers: u8,
    values: Vec<u8>,
}

impl AgreementMap {
    pub fn new(width: usize, height: usize, n_observers: usize, values: Vec<u8>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        if n_observers == 0 || n_observers > u8::MAX as usize {
            return Err(Error::InvalidObserverCount(n_observers));
        }
        let n = n_observers as u8;
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, &v)| v > n) {
            return Err(Error::AgreementOutOfRange {
                index,
                value,
                n_observers: n,
            });
        }
        Ok(Self {
            width,
            height,
            n_observers: n,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn n_observers(&self) -> usize {
        self.n_observers as usize
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.values[y * self.width + x]
    }
}

/// A strictly binary map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMap {
    width: usize,
    height: usize,
    values: Vec<bool>,
}

impl BinaryMap {
    pub fn new(width: usize, height: usize, values: Vec<bool>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }
}

/// Real-valued saliency in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    /// Builds a map, rejecting values outside `[0, 1]` (and NaN).
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::SaliencyOutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// Builds a map from arbitrary finite values by clamping into `[0, 1]`.
    /// NaN becomes 0.
    pub fn from_clamped(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let values = values
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Self::new(width, height, values)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Rounds every value to the nearest 8-bit level, as stored on disk.
    pub fn quantized(&self) -> SaliencyMap {
        let values = self
            .values
            .iter()
            .map(|&v| (v * 255.0).round() / 255.0)
            .collect();
        SaliencyMap {
            width: self.width,
            height: self.height,
            values,
        }
    }
}

/// Per-pixel instance labels; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceMap {
    width: usize,
    height: usize,
    labels: Vec<u16>,
    instance_ids: Vec<u16>,
}

impl InstanceMap {
    pub fn new(width: usize, height: usize, labels: Vec<u16>) -> Result<Self> {
        check_dims(width, height, labels.len())?;
        let mut present = vec![false; u16::MAX as usize + 1];
        for &l in &labels {
            present[l as usize] = true;
        }
        let instance_ids = (1..=u16::MAX).filter(|&l| present[l as usize]).collect();
        Ok(Self {
            width,
            height,
            labels,
            instance_ids,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    /// Sorted ids of the instances present.
    pub fn instance_ids(&self) -> &[u16] {
        &self.instance_ids
    }

    pub fn is_empty(&self) -> bool {
        self.instance_ids.is_empty()
    }
}

/// `N` nested binary slices; `slices[k - 1]` marks pixels where at least `k` observers agree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NestedStack {
    width: usize,
    height: usize,
    slices: Vec<BinaryMap>,
}

impl NestedStack {
    /// Wraps raw slices after checking dimensions and the nesting invariant.
    pub fn from_slices(slices: Vec<BinaryMap>) -> Result<Self> {
        let first = slices.first().ok_or(Error::InvalidObserverCount(0))?;
        if slices.len() > u8::MAX as usize {
            return Err(Error::InvalidObserverCount(slices.len()));
        }
        let dims = first.dims();
        for s in &slices {
            same_dims(dims, s.dims())?;
        }
        for k in 1..slices.len() {
            let (upper, lower) = (&slices[k], &slices[k - 1]);
            if let Some(index) =
                (0..upper.values.len()).find(|&i| upper.values[i] && !lower.values[i])
            {
                return Err(Error::NotNested {
                    slice: k + 1,
                    index,
                });
            }
        }
        Ok(Self {
            width: dims.0,
            height: dims.1,
            slices,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn n_observers(&self) -> usize {
        self.slices.len()
    }

    pub fn slices(&self) -> &[BinaryMap] {
        &self.slices
    }

    /// Slice `k`, 1-based.
    pub fn slice(&self, k: usize) -> Result<&BinaryMap> {
        if k == 0 || k > self.slices.len() {
            return Err(Error::SliceIndexOutOfRange {
                k,
                n: self.slices.len(),
            });
        }
        Ok(&self.slices[k - 1])
    }
}

/// Real-valued stack produced by downsampling a [`NestedStack`]; used as a regression target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftStack {
    pub width: usize,
    pub height: usize,
    /// `slices[k - 1]` is the row-major plane for slice `k`.
    pub slices: Vec<Vec<f64>>,
}

pub fn build_nested_stack(agreement: &AgreementMap) -> NestedStack {
    let (w, h) = agreement.dims();
    let slices = (1..=agreement.n_observers)
        .map(|k| BinaryMap {
            width: w,
            height: h,
            values: agreement.values.iter().map(|&v| v >= k).collect(),
        })
        .collect();
    NestedStack {
        width: w,
        height: h,
        slices,
    }
}

/// Inverse of [`build_nested_stack`]. Re-checks nesting since the slices are public data.
pub fn collapse_stack(stack: &NestedStack) -> Result<AgreementMap> {
    let stack = NestedStack::from_slices(stack.slices.clone())?;
    let mut values = vec![0u8; stack.width * stack.height];
    for slice in &stack.slices {
        for (acc, &on) in values.iter_mut().zip(&slice.values) {
            *acc += on as u8;
        }
    }
    AgreementMap::new(stack.width, stack.height, stack.slices.len(), values)
}

/// Binary map of pixels where at least `k` observers agree.
pub fn threshold_agreement(agreement: &AgreementMap, k: usize) -> Result<BinaryMap> {
    let n = agreement.n_observers();
    if k == 0 || k > n {
        return Err(Error::SliceIndexOutOfRange { k, n });
    }
    let k = k as u8;
    Ok(BinaryMap {
        width: agreement.width,
        height: agreement.height,
        values: agreement.values.iter().map(|&v| v >= k).collect(),
    })
}

pub fn normalize_saliency(agreement: &AgreementMap) -> SaliencyMap {
    let n = agreement.n_observers as f64;
    SaliencyMap {
        width: agreement.width,
        height: agreement.height,
        values: agreement.values.iter().map(|&v| v as f64 / n).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Resample {
    /// Mean over each source block.
    #[default]
    Area,
    /// Top-left pixel of each source block.
    Nearest,
}

/// Integer-factor reduction of a row-major plane.
pub(crate) fn downsample_plane(
    plane: &[f64],
    (w, h): (usize, usize),
    (tw, th): (usize, usize),
    method: Resample,
) -> Result<Vec<f64>> {
    if tw == 0 || th == 0 {
        return Err(Error::Resample {
            from: (w, h),
            to: (tw, th),
            reason: "zero target dimension",
        });
    }
    if tw > w || th > h {
        return Err(Error::Resample {
            from: (w, h),
            to: (tw, th),
            reason: "target larger than source",
        });
    }
    if w % tw != 0 || h % th != 0 {
        return Err(Error::Resample {
            from: (w, h),
            to: (tw, th),
            reason: "scale factor is not an integer",
        });
    }
    let (fx, fy) = (w / tw, h / th);
    let area = (fx * fy) as f64;
    let mut out = Vec::with_capacity(tw * th);
    for ty in 0..th {
        for tx in 0..tw {
            let v = match method {
                Resample::Nearest => plane[ty * fy * w + tx * fx],
                Resample::Area => {
                    let mut sum = 0.0;
                    for y in ty * fy..(ty + 1) * fy {
                        sum += plane[y * w + tx * fx..y * w + (tx + 1) * fx]
                            .iter()
                            .sum::<f64>();
                    }
                    sum / area
                }
            };
            out.push(v);
        }
    }
    Ok(out)
}

/// Reduces the stack and the continuous saliency target to a coarser supervision grid.
pub fn downsample_targets(
    stack: &NestedStack,
    saliency: &SaliencyMap,
    target_w: usize,
    target_h: usize,
    method: Resample,
) -> Result<(SoftStack, SaliencyMap)> {
    same_dims(stack.dims(), saliency.dims())?;
    let dims = stack.dims();
    let slices = stack
        .slices
        .iter()
        .map(|s| {
            let plane: Vec<f64> = s.values.iter().map(|&b| b as u8 as f64).collect();
            downsample_plane(&plane, dims, (target_w, target_h), method)
        })
        .collect::<Result<Vec<_>>>()?;
    let sal = downsample_plane(&saliency.values, dims, (target_w, target_h), method)?;
    Ok((
        SoftStack {
            width: target_w,
            height: target_h,
            slices,
        },
        SaliencyMap::from_clamped(target_w, target_h, sal)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn agreement(w: usize, h: usize, values: Vec<u8>) -> AgreementMap {
        AgreementMap::new(w, h, 12, values).unwrap()
    }

    #[test]
    fn zero_pixel_has_no_slices_set() {
        let s = build_nested_stack(&agreement(1, 1, vec![0]));
        assert_eq!(s.n_observers(), 12);
        assert!(s.slices().iter().all(|sl| !sl.values()[0]));
    }

    #[test]
    fn full_agreement_sets_every_slice() {
        let s = build_nested_stack(&agreement(1, 1, vec![12]));
        assert!(s.slices().iter().all(|sl| sl.values()[0]));
    }

    #[test]
    fn five_observers_set_first_five_slices() {
        let s = build_nested_stack(&agreement(1, 1, vec![5]));
        for k in 1..=12 {
            assert_eq!(s.slice(k).unwrap().values()[0], k <= 5, "slice {k}");
        }
    }

    #[test]
    fn rejects_value_above_observer_count() {
        let err = AgreementMap::new(2, 1, 12, vec![3, 13]).unwrap_err();
        assert!(matches!(
            err,
            Error::AgreementOutOfRange {
                index: 1,
                value: 13,
                ..
            }
        ));
    }

    #[test]
    fn rejects_empty_dims() {
        assert!(AgreementMap::new(0, 3, 12, vec![]).is_err());
        assert!(AgreementMap::new(2, 2, 12, vec![0; 3]).is_err());
    }

    #[test]
    fn collapse_of_zero_stack_is_zero() {
        let s = build_nested_stack(&agreement(3, 2, vec![0; 6]));
        assert_eq!(collapse_stack(&s).unwrap().values(), &[0; 6]);
    }

    #[test]
    fn collapse_rejects_non_nested_stack() {
        let mut slices: Vec<BinaryMap> = (0..12)
            .map(|_| BinaryMap::new(1, 1, vec![false]).unwrap())
            .collect();
        slices[0] = BinaryMap::new(1, 1, vec![true]).unwrap();
        slices[2] = BinaryMap::new(1, 1, vec![true]).unwrap();
        let err = NestedStack::from_slices(slices).unwrap_err();
        assert!(matches!(err, Error::NotNested { slice: 3, index: 0 }));
    }

    #[test]
    fn threshold_range_checked() {
        let a = agreement(1, 1, vec![4]);
        assert!(threshold_agreement(&a, 0).is_err());
        assert!(threshold_agreement(&a, 13).is_err());
        assert!(threshold_agreement(&a, 1).unwrap().values()[0]);
        assert!(!threshold_agreement(&a, 12).unwrap().values()[0]);
    }

    #[test]
    fn normalized_values() {
        let s = normalize_saliency(&agreement(3, 1, vec![0, 12, 6]));
        assert_eq!(s.values(), &[0.0, 1.0, 0.5]);
    }

    #[test]
    fn downsample_constant_and_block_mean() {
        let a = agreement(2, 2, vec![12, 12, 0, 0]);
        let stack = build_nested_stack(&a);
        let sal = normalize_saliency(&a);
        let (soft, m) = downsample_targets(&stack, &sal, 1, 1, Resample::Area).unwrap();
        assert_eq!(soft.slices[0], vec![0.5]);
        assert_eq!(m.values(), &[0.5]);

        let ones = agreement(4, 4, vec![12; 16]);
        let (soft, _) = downsample_targets(
            &build_nested_stack(&ones),
            &normalize_saliency(&ones),
            2,
            2,
            Resample::Area,
        )
        .unwrap();
        assert!(soft.slices.iter().all(|s| s == &vec![1.0; 4]));
    }

    #[test]
    fn downsample_rejects_zero_and_fractional_targets() {
        let a = agreement(4, 4, vec![1; 16]);
        let (st, sal) = (build_nested_stack(&a), normalize_saliency(&a));
        assert!(downsample_targets(&st, &sal, 0, 2, Resample::Area).is_err());
        assert!(downsample_targets(&st, &sal, 3, 3, Resample::Area).is_err());
        assert!(downsample_targets(&st, &sal, 8, 8, Resample::Area).is_err());
    }

    #[test]
    fn nearest_downsample_picks_block_origin() {
        let a = agreement(2, 2, vec![7, 0, 0, 0]);
        let (soft, m) = downsample_targets(
            &build_nested_stack(&a),
            &normalize_saliency(&a),
            1,
            1,
            Resample::Nearest,
        )
        .unwrap();
        assert_eq!(soft.slices[6], vec![1.0]);
        assert_eq!(soft.slices[7], vec![0.0]);
        assert_eq!(m.values(), &[7.0 / 12.0]);
    }

    #[test]
    fn instance_ids_collected() {
        let m = InstanceMap::new(3, 1, vec![0, 5, 2]).unwrap();
        assert_eq!(m.instance_ids(), &[2, 5]);
        assert!(InstanceMap::new(1, 1, vec![0]).unwrap().is_empty());
    }

    fn arb_agreement() -> impl Strategy<Value = AgreementMap> {
        (1usize..=12, 1usize..=12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0u8..=12, w * h)
                .prop_map(move |v| AgreementMap::new(w, h, 12, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn roundtrip_and_slice_sums(a in arb_agreement()) {
            let s = build_nested_stack(&a);
            prop_assert_eq!(&collapse_stack(&s).unwrap(), &a);
            for (i, &v) in a.values().iter().enumerate() {
                let sum: u8 = s.slices().iter().map(|sl| sl.values()[i] as u8).sum();
                prop_assert_eq!(sum, v);
            }
            let counts: Vec<usize> = s.slices().iter().map(BinaryMap::count_ones).collect();
            prop_assert!(counts.windows(2).all(|w| w[1] <= w[0]));
        }

        #[test]
        fn downsampled_slices_stay_ordered(a in arb_agreement()) {
            let (w, h) = a.dims();
            let s = build_nested_stack(&a);
            let sal = normalize_saliency(&a);
            // largest divisor target that actually reduces
            let tw = (1..=w).rev().find(|d| w % d == 0 && (*d < w || w == 1)).unwrap();
            let th = (1..=h).rev().find(|d| h % d == 0 && (*d < h || h == 1)).unwrap();
            let (soft, _) = downsample_targets(&s, &sal, tw, th, Resample::Area).unwrap();
            for k in 1..soft.slices.len() {
                for p in 0..tw * th {
                    prop_assert!(soft.slices[k][p] <= soft.slices[k - 1][p]);
                }
            }
        }
    }
}
