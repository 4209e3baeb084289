//! Network building blocks. Each block's `forward` returns a cache that its
//! `backward` consumes; parameter gradients accumulate into a zeroed copy of the block.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, resize_bilinear,
    resize_bilinear_backward, sigmoid, upsample2, upsample2_backward, Conv2d,
};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Encoder channel plan, finest stage first.
pub const ENCODER_CHANNELS: [usize; 4] = [16, 32, 64, 64];
const ENCODER_STRIDES: [usize; 4] = [1, 2, 2, 2];
pub const ATROUS_DILATIONS: [usize; 3] = [1, 2, 4];
/// Hidden width of the transform between the gated features and the refined stack.
pub const TRANSFORM_HIDDEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Encoder<T> {
    pub stages: Vec<Conv2d<T>>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    pub input: Tensor<T>,
    pub pre: Vec<Tensor<T>>,
    /// Post-activation features at scales 1, 1/2, 1/4, 1/8.
    pub features: Vec<Tensor<T>>,
}

impl<T: Scalar> Encoder<T> {
    pub fn init(in_c: usize, rng: &mut impl Rng) -> Self {
        let mut prev = in_c;
        let stages = ENCODER_CHANNELS
            .iter()
            .zip(ENCODER_STRIDES)
            .map(|(&c, s)| {
                let conv = Conv2d::init(prev, c, 3, s, 1, rng);
                prev = c;
                conv
            })
            .collect();
        Self { stages }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            stages: self.stages.iter().map(Conv2d::zeros_like).collect(),
        }
    }

    /// Runs the first `depth` stages.
    pub fn forward(&self, image: &Tensor<T>, depth: usize) -> Result<EncoderCache<T>> {
        let factor = 1 << (depth - 1);
        let (h, w) = image.spatial();
        if h % factor != 0 || w % factor != 0 || h == 0 || w == 0 {
            return Err(Error::NotDivisible {
                height: h,
                width: w,
                factor,
            });
        }
        let mut pre = Vec::with_capacity(depth);
        let mut features: Vec<Tensor<T>> = Vec::with_capacity(depth);
        for conv in &self.stages[..depth] {
            let x = features.last().unwrap_or(image);
            let p = conv.forward(x)?;
            features.push(relu(&p));
            pre.push(p);
        }
        Ok(EncoderCache {
            input: image.clone(),
            pre,
            features,
        })
    }

    /// `d_features[s]` is the loss gradient arriving at stage `s`'s output, if any.
    pub fn backward(
        &self,
        cache: &EncoderCache<T>,
        mut d_features: Vec<Option<Tensor<T>>>,
        grad: &mut Encoder<T>,
    ) {
        for s in (0..cache.features.len()).rev() {
            let Some(d) = d_features[s].take() else {
                continue;
            };
            let dpre = relu_backward(&cache.pre[s], &d);
            let x = if s == 0 {
                &cache.input
            } else {
                &cache.features[s - 1]
            };
            let dx = self.stages[s].backward(x, &dpre, &mut grad.stages[s]);
            if s > 0 {
                match &mut d_features[s - 1] {
                    Some(acc) => acc.add_assign(&dx),
                    slot => *slot = Some(dx),
                }
            }
        }
    }
}

/// Parallel dilated 3x3 convolutions whose outputs are summed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AtrousPool<T> {
    pub branches: Vec<Conv2d<T>>,
}

impl<T: Scalar> AtrousPool<T> {
    pub fn init(channels: usize, rng: &mut impl Rng) -> Self {
        let branches = ATROUS_DILATIONS
            .iter()
            .map(|&d| Conv2d::init(channels, channels, 3, 1, d, rng))
            .collect();
        Self { branches }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            branches: self.branches.iter().map(Conv2d::zeros_like).collect(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (h, w) = x.spatial();
        if h < 2 || w < 2 {
            return Err(Error::Shape(format!(
                "feature {h}x{w} is smaller than the 2x2 needed for any dilated tap to land inside"
            )));
        }
        let mut y = self.branches[0].forward(x)?;
        for b in &self.branches[1..] {
            y.add_assign(&b.forward(x)?);
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grad: &mut AtrousPool<T>) -> Tensor<T> {
        let mut dx = Tensor::zeros(x.channels(), x.height(), x.width());
        for (b, g) in self.branches.iter().zip(&mut grad.branches) {
            dx.add_assign(&b.backward(x, dy, g));
        }
        dx
    }
}

/// Collapses a stack into one saliency channel: 3x3 -> 6, ReLU, 3x3 -> 3, ReLU, 1x1 -> 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Scm<T> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
    pub conv3: Conv2d<T>,
}

#[derive(Debug, Clone)]
pub struct ScmCache<T> {
    pub input: Tensor<T>,
    pub pre1: Tensor<T>,
    pub h1: Tensor<T>,
    pub pre2: Tensor<T>,
    pub h2: Tensor<T>,
}

impl<T: Scalar> Scm<T> {
    pub fn init(in_c: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv1: Conv2d::init(in_c, 6, 3, 1, 1, rng),
            conv2: Conv2d::init(6, 3, 3, 1, 1, rng),
            conv3: Conv2d::init(3, 1, 1, 1, 1, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            conv1: self.conv1.zeros_like(),
            conv2: self.conv2.zeros_like(),
            conv3: self.conv3.zeros_like(),
        }
    }

    pub fn channel_plan(&self) -> [usize; 4] {
        [
            self.conv1.in_c,
            self.conv1.out_c,
            self.conv2.out_c,
            self.conv3.out_c,
        ]
    }

    pub fn forward(&self, nrss: &Tensor<T>) -> Result<(Tensor<T>, ScmCache<T>)> {
        let pre1 = self.conv1.forward(nrss)?;
        let h1 = relu(&pre1);
        let pre2 = self.conv2.forward(&h1)?;
        let h2 = relu(&pre2);
        let y = self.conv3.forward(&h2)?;
        Ok((
            y,
            ScmCache {
                input: nrss.clone(),
                pre1,
                h1,
                pre2,
                h2,
            },
        ))
    }

    pub fn backward(&self, cache: &ScmCache<T>, dy: &Tensor<T>, grad: &mut Scm<T>) -> Tensor<T> {
        let dh2 = self.conv3.backward(&cache.h2, dy, &mut grad.conv3);
        let dpre2 = relu_backward(&cache.pre2, &dh2);
        let dh1 = self.conv2.backward(&cache.h1, &dpre2, &mut grad.conv2);
        let dpre1 = relu_backward(&cache.pre1, &dh1);
        self.conv1.backward(&cache.input, &dpre1, &mut grad.conv1)
    }
}

/// `f_t * sigmoid(conv1x1(upsample(f_{t+1})))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GateUnit<T> {
    pub conv: Conv2d<T>,
}

#[derive(Debug, Clone)]
pub struct GateCache<T> {
    pub fine: Tensor<T>,
    pub coarse: Tensor<T>,
    pub up: Tensor<T>,
    pub gate: Tensor<T>,
}

impl<T: Scalar> GateUnit<T> {
    pub fn init(coarse_c: usize, fine_c: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv: Conv2d::init(coarse_c, fine_c, 1, 1, 1, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            conv: self.conv.zeros_like(),
        }
    }

    pub fn forward(
        &self,
        fine: &Tensor<T>,
        coarse: &Tensor<T>,
    ) -> Result<(Tensor<T>, GateCache<T>)> {
        let (fh, fw) = fine.spatial();
        if (coarse.height() * 2, coarse.width() * 2) != (fh, fw) {
            return Err(Error::Shape(format!(
                "gate expects the deeper feature at half of {fh}x{fw}, got {}x{}",
                coarse.height(),
                coarse.width()
            )));
        }
        if fine.channels() != self.conv.out_c {
            return Err(Error::Shape(format!(
                "gate expects {} fine channels, got {}",
                self.conv.out_c,
                fine.channels()
            )));
        }
        let up = upsample2(coarse);
        let gate = sigmoid(&self.conv.forward(&up)?);
        let out = fine.zip_map(&gate, |a, b| a * b);
        Ok((
            out,
            GateCache {
                fine: fine.clone(),
                coarse: coarse.clone(),
                up,
                gate,
            },
        ))
    }

    /// Returns gradients for (fine, coarse).
    pub fn backward(
        &self,
        cache: &GateCache<T>,
        dy: &Tensor<T>,
        grad: &mut GateUnit<T>,
    ) -> (Tensor<T>, Tensor<T>) {
        let d_fine = dy.zip_map(&cache.gate, |g, s| g * s);
        let d_sig = dy.zip_map(&cache.fine, |g, f| g * f);
        let d_logit = d_sig.zip_map(&cache.gate, |g, s| g * s * (T::one() - s));
        let d_up = self.conv.backward(&cache.up, &d_logit, &mut grad.conv);
        (d_fine, upsample2_backward(&d_up))
    }
}

/// Refines an upsampled stack using gated encoder features:
/// concat -> 3x3 conv -> ReLU -> 3x3 conv to the stack width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Transform<T> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
}

#[derive(Debug, Clone)]
pub struct TransformCache<T> {
    pub nrss_prev: Tensor<T>,
    pub input: Tensor<T>,
    pub pre: Tensor<T>,
    pub hidden: Tensor<T>,
    pub gate_channels: usize,
}

impl<T: Scalar> Transform<T> {
    pub fn init(gate_c: usize, stack_c: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv1: Conv2d::init(gate_c + stack_c, TRANSFORM_HIDDEN, 3, 1, 1, rng),
            conv2: Conv2d::init(TRANSFORM_HIDDEN, stack_c, 3, 1, 1, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            conv1: self.conv1.zeros_like(),
            conv2: self.conv2.zeros_like(),
        }
    }

    pub fn forward(
        &self,
        gated: &Tensor<T>,
        nrss_prev: &Tensor<T>,
    ) -> Result<(Tensor<T>, TransformCache<T>)> {
        if (nrss_prev.height() * 2, nrss_prev.width() * 2) != gated.spatial() {
            return Err(Error::Shape(format!(
                "gated features {:?} are not twice the stack size {:?}",
                gated.spatial(),
                nrss_prev.spatial()
            )));
        }
        let up = upsample2(nrss_prev);
        let input = Tensor::concat(&[gated, &up])?;
        let pre = self.conv1.forward(&input)?;
        let hidden = relu(&pre);
        let y = self.conv2.forward(&hidden)?;
        Ok((
            y,
            TransformCache {
                nrss_prev: nrss_prev.clone(),
                input,
                pre,
                hidden,
                gate_channels: gated.channels(),
            },
        ))
    }

    /// Returns gradients for (gated features, previous stack).
    pub fn backward(
        &self,
        cache: &TransformCache<T>,
        dy: &Tensor<T>,
        grad: &mut Transform<T>,
    ) -> (Tensor<T>, Tensor<T>) {
        let dh = self.conv2.backward(&cache.hidden, dy, &mut grad.conv2);
        let dpre = relu_backward(&cache.pre, &dh);
        let din = self.conv1.backward(&cache.input, &dpre, &mut grad.conv1);
        let parts = din.split(&[cache.gate_channels, cache.nrss_prev.channels()]);
        let mut it = parts.into_iter();
        let d_gated = it.next().expect("two parts");
        let d_up = it.next().expect("two parts");
        (d_gated, upsample2_backward(&d_up))
    }
}

/// Bilinearly brings every stage map to the finest grid, concatenates, then mixes with a 1x1 conv.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Fusion<T> {
    pub conv: Conv2d<T>,
}

#[derive(Debug, Clone)]
pub struct FusionCache<T> {
    pub dims: Vec<(usize, usize)>,
    pub input: Tensor<T>,
}

impl<T: Scalar> Fusion<T> {
    /// Starts as the plain average of the stage maps.
    pub fn averaging(n_maps: usize) -> Self {
        let mut conv = Conv2d::zeros(n_maps, 1, 1, 1, 1);
        conv.weight.fill(T::one() / T::of(n_maps as f64));
        Self { conv }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            conv: self.conv.zeros_like(),
        }
    }

    pub fn forward(&self, maps: &[&Tensor<T>]) -> Result<(Tensor<T>, FusionCache<T>)> {
        if maps.len() < 2 || maps.len() != self.conv.in_c {
            return Err(Error::Shape(format!(
                "fusion expects {} stage maps (at least 2), got {}",
                self.conv.in_c,
                maps.len()
            )));
        }
        let (oh, ow) = maps.iter().map(|m| m.spatial()).max().expect("non-empty");
        for m in maps {
            let (h, w) = m.spatial();
            if m.channels() != 1 || oh % h != 0 || ow % w != 0 || oh / h != ow / w {
                return Err(Error::Shape(format!(
                    "stage map {:?} cannot be brought onto the {oh}x{ow} grid",
                    m.shape()
                )));
            }
        }
        let resized: Vec<Tensor<T>> = maps.iter().map(|m| resize_bilinear(m, oh, ow)).collect();
        let input = Tensor::concat(&resized.iter().collect::<Vec<_>>())?;
        let y = self.conv.forward(&input)?;
        Ok((
            y,
            FusionCache {
                dims: maps.iter().map(|m| m.spatial()).collect(),
                input,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &FusionCache<T>,
        dy: &Tensor<T>,
        grad: &mut Fusion<T>,
    ) -> Vec<Tensor<T>> {
        let din = self.conv.backward(&cache.input, dy, &mut grad.conv);
        din.split(&vec![1; cache.dims.len()])
            .into_iter()
            .zip(&cache.dims)
            .map(|(d, &(h, w))| resize_bilinear_backward(&d, h, w))
            .collect()
    }
}

/// Two fully connected layers on globally pooled encoder features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SubitizerHead<T> {
    pub fc1: Conv2d<T>,
    pub fc2: Conv2d<T>,
}

#[derive(Debug, Clone)]
pub struct SubitizerCache<T> {
    pub feature_dims: (usize, usize),
    pub pooled: Tensor<T>,
    pub intermediate: Tensor<T>,
    pub logits: Tensor<T>,
}

impl<T: Scalar> SubitizerHead<T> {
    pub fn init(in_c: usize, n_classes: usize, rng: &mut impl Rng) -> Self {
        Self {
            fc1: Conv2d::init(in_c, n_classes, 1, 1, 1, rng),
            fc2: Conv2d::init(n_classes, n_classes, 1, 1, 1, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            fc1: self.fc1.zeros_like(),
            fc2: self.fc2.zeros_like(),
        }
    }

    pub fn forward(&self, feature: &Tensor<T>) -> Result<SubitizerCache<T>> {
        let pooled = global_avg_pool(feature);
        let intermediate = self.fc1.forward(&pooled)?;
        let logits = self.fc2.forward(&intermediate)?;
        Ok(SubitizerCache {
            feature_dims: feature.spatial(),
            pooled,
            intermediate,
            logits,
        })
    }

    /// Takes gradients for the intermediate and final scores; returns the feature gradient.
    pub fn backward(
        &self,
        cache: &SubitizerCache<T>,
        d_intermediate: &Tensor<T>,
        d_logits: &Tensor<T>,
        grad: &mut SubitizerHead<T>,
    ) -> Tensor<T> {
        let mut d1 = self
            .fc2
            .backward(&cache.intermediate, d_logits, &mut grad.fc2);
        d1.add_assign(d_intermediate);
        let dp = self.fc1.backward(&cache.pooled, &d1, &mut grad.fc1);
        let (h, w) = cache.feature_dims;
        global_avg_pool_backward(&dp, h, w)
    }
}
