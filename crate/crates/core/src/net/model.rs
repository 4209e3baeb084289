//! Full network: encoder, coarse stack head, per-stage SCMs, gated refinement,
//! fusion, and the subitizing head, with exact reverse-mode gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    AtrousPool, Encoder, EncoderCache, Fusion, GateCache, GateUnit, Scm, ScmCache, SubitizerCache,
    SubitizerHead, Transform, TransformCache, ENCODER_CHANNELS,
};
use super::ops::Conv2d;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::stack::{downsample_targets, NestedStack, Resample, SaliencyMap};
use crate::subitizing::CountScheme;

pub const ENCODER_DEPTH: usize = 4;
/// The subitizer drops the deepest encoder stage.
pub const SUBITIZER_DEPTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Number of predictions `T`: `T - 1` stage outputs plus the fused map.
    pub stages: usize,
    pub atrous: bool,
    pub n_observers: usize,
    pub scheme: CountScheme,
    pub input_channels: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            stages: 4,
            atrous: false,
            n_observers: 12,
            scheme: CountScheme::PascalS,
            input_channels: 3,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(3..=ENCODER_DEPTH + 1).contains(&self.stages) {
            return Err(Error::Config(format!(
                "stages must be in 3..={}, got {}",
                ENCODER_DEPTH + 1,
                self.stages
            )));
        }
        if self.n_observers == 0 {
            return Err(Error::Config("n_observers must be positive".into()));
        }
        Ok(())
    }

    pub fn n_refinements(&self) -> usize {
        self.stages - 2
    }

    /// Spatial size of stage `t` (0 = coarse) for an `h x w` input.
    pub fn stage_dims(&self, t: usize, h: usize, w: usize) -> (usize, usize) {
        let f = 1 << (ENCODER_DEPTH - 1 - t);
        (h / f, w / f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Refinement<T> {
    pub gate: GateUnit<T>,
    pub transform: Transform<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NetworkParams<T> {
    pub config: NetConfig,
    /// Bumped on every optimiser step; traces remember the value they were built with.
    pub generation: u64,
    pub encoder: Encoder<T>,
    pub atrous: Option<AtrousPool<T>>,
    pub head: Conv2d<T>,
    /// One per stage prediction, coarse first.
    pub scms: Vec<Scm<T>>,
    pub refinements: Vec<Refinement<T>>,
    pub fusion: Fusion<T>,
    pub subitizer: SubitizerHead<T>,
}

impl<T: Scalar> NetworkParams<T> {
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.n_observers;
        let deep = ENCODER_CHANNELS[ENCODER_DEPTH - 1];
        let encoder = Encoder::init(config.input_channels, &mut rng);
        let atrous = config.atrous.then(|| AtrousPool::init(deep, &mut rng));
        let head = Conv2d::init(deep, n, 3, 1, 1, &mut rng);
        let scms = (0..config.stages - 1)
            .map(|_| Scm::init(n, &mut rng))
            .collect();
        let refinements = (0..config.n_refinements())
            .map(|r| {
                let fine = ENCODER_DEPTH - 2 - r;
                Refinement {
                    gate: GateUnit::init(
                        ENCODER_CHANNELS[fine + 1],
                        ENCODER_CHANNELS[fine],
                        &mut rng,
                    ),
                    transform: Transform::init(ENCODER_CHANNELS[fine], n, &mut rng),
                }
            })
            .collect();
        let fusion = Fusion::averaging(config.stages - 1);
        let subitizer = SubitizerHead::init(
            ENCODER_CHANNELS[SUBITIZER_DEPTH - 1],
            config.scheme.n_classes(),
            &mut rng,
        );
        Ok(Self {
            config,
            generation: 0,
            encoder,
            atrous,
            head,
            scms,
            refinements,
            fusion,
            subitizer,
        })
    }

    /// Same structure, every value zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            generation: self.generation,
            encoder: self.encoder.zeros_like(),
            atrous: self.atrous.as_ref().map(AtrousPool::zeros_like),
            head: self.head.zeros_like(),
            scms: self.scms.iter().map(Scm::zeros_like).collect(),
            refinements: self
                .refinements
                .iter()
                .map(|r| Refinement {
                    gate: r.gate.zeros_like(),
                    transform: r.transform.zeros_like(),
                })
                .collect(),
            fusion: self.fusion.zeros_like(),
            subitizer: self.subitizer.zeros_like(),
        }
    }

    pub fn named_convs(&self) -> Vec<(String, &Conv2d<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.encoder.stages.iter().enumerate() {
            out.push((format!("encoder.{i}"), c));
        }
        if let Some(a) = &self.atrous {
            for (i, c) in a.branches.iter().enumerate() {
                out.push((format!("atrous.{i}"), c));
            }
        }
        out.push(("head".into(), &self.head));
        for (i, s) in self.scms.iter().enumerate() {
            out.push((format!("scm.{i}.conv1"), &s.conv1));
            out.push((format!("scm.{i}.conv2"), &s.conv2));
            out.push((format!("scm.{i}.conv3"), &s.conv3));
        }
        for (i, r) in self.refinements.iter().enumerate() {
            out.push((format!("refine.{i}.gate"), &r.gate.conv));
            out.push((format!("refine.{i}.transform.conv1"), &r.transform.conv1));
            out.push((format!("refine.{i}.transform.conv2"), &r.transform.conv2));
        }
        out.push(("fusion".into(), &self.fusion.conv));
        out.push(("subitizer.fc1".into(), &self.subitizer.fc1));
        out.push(("subitizer.fc2".into(), &self.subitizer.fc2));
        out
    }

    /// Mutable counterpart of [`named_convs`](Self::named_convs), same order.
    pub fn convs_mut(&mut self) -> Vec<&mut Conv2d<T>> {
        let mut out: Vec<&mut Conv2d<T>> = self.encoder.stages.iter_mut().collect();
        if let Some(a) = &mut self.atrous {
            out.extend(a.branches.iter_mut());
        }
        out.push(&mut self.head);
        for s in &mut self.scms {
            out.extend([&mut s.conv1, &mut s.conv2, &mut s.conv3]);
        }
        for r in &mut self.refinements {
            out.extend([
                &mut r.gate.conv,
                &mut r.transform.conv1,
                &mut r.transform.conv2,
            ]);
        }
        out.push(&mut self.fusion.conv);
        out.extend([&mut self.subitizer.fc1, &mut self.subitizer.fc2]);
        out
    }

    /// Every trainable buffer as `(name, values)`, weights before biases.
    pub fn named_tensors(&self) -> Vec<(String, &[T])> {
        self.named_convs()
            .into_iter()
            .flat_map(|(n, c)| {
                [
                    (format!("{n}.weight"), c.weight.as_slice()),
                    (format!("{n}.bias"), c.bias.as_slice()),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.convs_mut()
            .into_iter()
            .flat_map(|c| [&mut c.weight, &mut c.bias])
            .collect()
    }

    pub fn n_parameters(&self) -> usize {
        self.named_tensors().iter().map(|t| t.1.len()).sum()
    }

    /// Elementwise `self += other`.
    pub fn accumulate(&mut self, other: &Self) {
        let src: Vec<&[T]> = other.named_tensors().into_iter().map(|t| t.1).collect();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            for (a, &b) in dst.iter_mut().zip(s) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        let mut out = NetworkParams::<U>::init(self.config, 0).expect("config already valid");
        out.generation = self.generation;
        let src: Vec<&[T]> = self.named_tensors().into_iter().map(|t| t.1).collect();
        for (dst, s) in out.tensors_mut().into_iter().zip(src) {
            *dst = s.iter().map(|v| U::of(v.f64())).collect();
        }
        out
    }
}

/// One stage's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePrediction<T> {
    pub stage: usize,
    pub nrss: Tensor<T>,
    pub saliency: Tensor<T>,
}

#[derive(Debug, Clone)]
struct StageCache<T> {
    scm: ScmCache<T>,
    refine: Option<(GateCache<T>, TransformCache<T>)>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub generation: u64,
    pub predictions: Vec<StagePrediction<T>>,
    pub fused: Tensor<T>,
    encoder: EncoderCache<T>,
    deep: Tensor<T>,
    stages: Vec<StageCache<T>>,
    fusion: super::layers::FusionCache<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn features(&self) -> &[Tensor<T>] {
        &self.encoder.features
    }

    /// Stage-wise predictions plus the fused map.
    pub fn n_predictions(&self) -> usize {
        self.predictions.len() + 1
    }
}

pub fn encode<T: Scalar>(params: &NetworkParams<T>, image: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    check_image(params, image)?;
    Ok(params.encoder.forward(image, ENCODER_DEPTH)?.features)
}

fn check_image<T: Scalar>(params: &NetworkParams<T>, image: &Tensor<T>) -> Result<()> {
    if image.channels() != params.config.input_channels {
        return Err(Error::Shape(format!(
            "expected {} image channels, got {}",
            params.config.input_channels,
            image.channels()
        )));
    }
    Ok(())
}

/// Coarse stack from the deepest feature.
pub fn coarse_head<T: Scalar>(params: &NetworkParams<T>, feature: &Tensor<T>) -> Result<Tensor<T>> {
    params.head.forward(feature)
}

pub fn forward<T: Scalar>(params: &NetworkParams<T>, image: &Tensor<T>) -> Result<ForwardTrace<T>> {
    check_image(params, image)?;
    let cfg = params.config;
    let enc = params.encoder.forward(image, ENCODER_DEPTH)?;
    let f = &enc.features;
    let deep = match &params.atrous {
        Some(a) => a.forward(&f[ENCODER_DEPTH - 1])?,
        None => f[ENCODER_DEPTH - 1].clone(),
    };
    let nrss = params.head.forward(&deep)?;
    let (sal, scm_cache) = params.scms[0].forward(&nrss)?;
    let mut predictions = vec![StagePrediction {
        stage: 0,
        nrss,
        saliency: sal,
    }];
    let mut stages = vec![StageCache {
        scm: scm_cache,
        refine: None,
    }];
    for (r, unit) in params.refinements.iter().enumerate() {
        let fine = ENCODER_DEPTH - 2 - r;
        let (gated, gcache) = unit.gate.forward(&f[fine], &f[fine + 1])?;
        let prev = &predictions.last().expect("coarse stage exists").nrss;
        let (nrss, tcache) = unit.transform.forward(&gated, prev)?;
        let (sal, scm_cache) = params.scms[r + 1].forward(&nrss)?;
        predictions.push(StagePrediction {
            stage: r + 1,
            nrss,
            saliency: sal,
        });
        stages.push(StageCache {
            scm: scm_cache,
            refine: Some((gcache, tcache)),
        });
    }
    debug_assert_eq!(predictions.len(), cfg.stages - 1);
    let maps: Vec<&Tensor<T>> = predictions.iter().map(|p| &p.saliency).collect();
    let (fused, fusion) = params.fusion.forward(&maps)?;
    Ok(ForwardTrace {
        generation: params.generation,
        predictions,
        fused,
        encoder: enc,
        deep,
        stages,
        fusion,
    })
}

/// Supervision for one stage, already at that stage's resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTarget<T> {
    pub stack: Tensor<T>,
    pub map: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Targets<T> {
    pub stages: Vec<StageTarget<T>>,
    /// Target for the fused map (same grid as the last stage).
    pub master: Tensor<T>,
}

impl<T: Scalar> Targets<T> {
    /// Area-downsamples the stack and saliency to every stage grid and multiplies by `gt_scale`.
    pub fn build(
        config: &NetConfig,
        stack: &NestedStack,
        saliency: &SaliencyMap,
        gt_scale: f64,
    ) -> Result<Self> {
        if stack.n_observers() != config.n_observers {
            return Err(Error::SliceCount {
                expected: config.n_observers,
                actual: stack.n_observers(),
            });
        }
        let (w, h) = stack.dims();
        let mut stages = Vec::new();
        for t in 0..config.stages - 1 {
            let (th, tw) = config.stage_dims(t, h, w);
            let (soft, map) = downsample_targets(stack, saliency, tw, th, Resample::Area)?;
            let data: Vec<T> = soft
                .slices
                .iter()
                .flatten()
                .map(|&v| T::of(v * gt_scale))
                .collect();
            let stack_t = Tensor::from_vec(soft.slices.len(), th, tw, data)?;
            let map_t = Tensor::from_vec(
                1,
                th,
                tw,
                map.values().iter().map(|&v| T::of(v * gt_scale)).collect(),
            )?;
            stages.push(StageTarget {
                stack: stack_t,
                map: map_t,
            });
        }
        let master = stages.last().expect("at least two stages").map.clone();
        Ok(Self { stages, master })
    }
}

fn check_same<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    Ok(())
}

/// `sum (x - y)^2 / (2 d N)` over a `N`-channel stack with `d` pixels per channel.
pub fn stack_loss<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<T> {
    check_same(pred, gt)?;
    let norm = T::of(2.0 * pred.data().len() as f64);
    Ok(squared_error(pred, gt) / norm)
}

/// `sum (x - y)^2 / (2 d)` over a single-channel map.
pub fn map_loss<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<T> {
    check_same(pred, gt)?;
    let norm = T::of(2.0 * pred.plane_len() as f64);
    Ok(squared_error(pred, gt) / norm)
}

fn squared_error<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> T {
    pred.data()
        .iter()
        .zip(gt.data())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum()
}

/// `weight * (pred - gt) / norm`: gradient of the Euclidean losses above.
fn euclid_grad<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, norm: usize, weight: T) -> Tensor<T> {
    let s = weight / T::of(norm as f64);
    pred.zip_map(gt, |x, y| (x - y) * s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub master: f64,
    /// `(stack, map)` per stage.
    pub aux: Vec<(f64, f64)>,
    pub total: f64,
}

pub fn total_loss<T: Scalar>(
    trace: &ForwardTrace<T>,
    targets: &Targets<T>,
    lambdas: &[f64],
) -> Result<LossBreakdown> {
    if targets.stages.len() != trace.predictions.len() {
        return Err(Error::Config(format!(
            "{} stage targets for {} stage predictions",
            targets.stages.len(),
            trace.predictions.len()
        )));
    }
    if lambdas.len() != trace.predictions.len() {
        return Err(Error::Config(format!(
            "{} stage weights for {} stages",
            lambdas.len(),
            trace.predictions.len()
        )));
    }
    let master = map_loss(&trace.fused, &targets.master)?.f64();
    let mut total = master;
    let mut aux = Vec::new();
    for ((p, t), &l) in trace.predictions.iter().zip(&targets.stages).zip(lambdas) {
        let s = stack_loss(&p.nrss, &t.stack)?.f64();
        let m = map_loss(&p.saliency, &t.map)?.f64();
        total += l * (s + m);
        aux.push((s, m));
    }
    Ok(LossBreakdown { master, aux, total })
}

/// Exact gradient of [`total_loss`] for every parameter tensor.
pub fn backward<T: Scalar>(
    params: &NetworkParams<T>,
    trace: &ForwardTrace<T>,
    targets: &Targets<T>,
    lambdas: &[f64],
) -> Result<NetworkParams<T>> {
    if trace.generation != params.generation {
        return Err(Error::StaleTrace {
            trace: trace.generation,
            params: params.generation,
        });
    }
    total_loss(trace, targets, lambdas)?;
    let mut grad = params.zeros_like();
    let n_stages = trace.predictions.len();

    let d_fused = euclid_grad(
        &trace.fused,
        &targets.master,
        trace.fused.plane_len(),
        T::one(),
    );
    let mut d_sal = params
        .fusion
        .backward(&trace.fusion, &d_fused, &mut grad.fusion);

    let mut d_feat: Vec<Option<Tensor<T>>> = vec![None; ENCODER_DEPTH];
    let mut d_nrss_carry: Option<Tensor<T>> = None;
    for k in (0..n_stages).rev() {
        let p = &trace.predictions[k];
        let t = &targets.stages[k];
        let lambda = T::of(lambdas[k]);
        d_sal[k].add_assign(&euclid_grad(
            &p.saliency,
            &t.map,
            p.saliency.plane_len(),
            lambda,
        ));
        let mut d_nrss =
            params.scms[k].backward(&trace.stages[k].scm, &d_sal[k], &mut grad.scms[k]);
        d_nrss.add_assign(&euclid_grad(&p.nrss, &t.stack, p.nrss.data().len(), lambda));
        if let Some(c) = d_nrss_carry.take() {
            d_nrss.add_assign(&c);
        }
        match &trace.stages[k].refine {
            Some((gcache, tcache)) => {
                let r = k - 1;
                let unit = &params.refinements[r];
                let gunit = &mut grad.refinements[r];
                let (d_gated, d_prev) =
                    unit.transform
                        .backward(tcache, &d_nrss, &mut gunit.transform);
                d_nrss_carry = Some(d_prev);
                let (d_fine, d_coarse) = unit.gate.backward(gcache, &d_gated, &mut gunit.gate);
                let fine = ENCODER_DEPTH - 2 - r;
                add_slot(&mut d_feat[fine], d_fine);
                add_slot(&mut d_feat[fine + 1], d_coarse);
            }
            None => {
                let d_deep = params.head.backward(&trace.deep, &d_nrss, &mut grad.head);
                let d4 = match (&params.atrous, &mut grad.atrous) {
                    (Some(a), Some(ga)) => {
                        a.backward(&trace.encoder.features[ENCODER_DEPTH - 1], &d_deep, ga)
                    }
                    _ => d_deep,
                };
                add_slot(&mut d_feat[ENCODER_DEPTH - 1], d4);
            }
        }
    }
    params
        .encoder
        .backward(&trace.encoder, d_feat, &mut grad.encoder);
    Ok(grad)
}

fn add_slot<T: Scalar>(slot: &mut Option<Tensor<T>>, d: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&d),
        None => *slot = Some(d),
    }
}

/// Subitizing forward pass: intermediate and final class scores.
#[derive(Debug, Clone)]
pub struct SubitizeTrace<T> {
    pub generation: u64,
    pub intermediate: Vec<T>,
    pub logits: Vec<T>,
    encoder: EncoderCache<T>,
    head: SubitizerCache<T>,
}

pub fn subitize_forward<T: Scalar>(
    params: &NetworkParams<T>,
    image: &Tensor<T>,
) -> Result<SubitizeTrace<T>> {
    check_image(params, image)?;
    let enc = params.encoder.forward(image, SUBITIZER_DEPTH)?;
    let head = params
        .subitizer
        .forward(&enc.features[SUBITIZER_DEPTH - 1])?;
    Ok(SubitizeTrace {
        generation: params.generation,
        intermediate: head.intermediate.data().to_vec(),
        logits: head.logits.data().to_vec(),
        encoder: enc,
        head,
    })
}

/// Final class scores.
pub fn subitize<T: Scalar>(params: &NetworkParams<T>, image: &Tensor<T>) -> Result<Vec<T>> {
    Ok(subitize_forward(params, image)?.logits)
}

pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn cross_entropy<T: Scalar>(z: &[T], class: usize) -> T {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
    lse - z[class]
}

/// Sum of the softmax cross-entropies of both score layers.
pub fn subitize_loss<T: Scalar>(intermediate: &[T], logits: &[T], class: usize) -> Result<T> {
    if class >= logits.len() || intermediate.len() != logits.len() {
        return Err(Error::Config(format!(
            "class {class} invalid for {} scores",
            logits.len()
        )));
    }
    Ok(cross_entropy(intermediate, class) + cross_entropy(logits, class))
}

pub fn subitize_backward<T: Scalar>(
    params: &NetworkParams<T>,
    trace: &SubitizeTrace<T>,
    class: usize,
) -> Result<NetworkParams<T>> {
    if trace.generation != params.generation {
        return Err(Error::StaleTrace {
            trace: trace.generation,
            params: params.generation,
        });
    }
    subitize_loss(&trace.intermediate, &trace.logits, class)?;
    let ce_grad = |z: &[T]| {
        let mut p = softmax(z);
        p[class] -= T::one();
        Tensor::from_vec(p.len(), 1, 1, p).expect("shape by construction")
    };
    let mut grad = params.zeros_like();
    let d_feat = params.subitizer.backward(
        &trace.head,
        &ce_grad(&trace.intermediate),
        &ce_grad(&trace.logits),
        &mut grad.subitizer,
    );
    let mut slots = vec![None; SUBITIZER_DEPTH];
    slots[SUBITIZER_DEPTH - 1] = Some(d_feat);
    params
        .encoder
        .backward(&trace.encoder, slots, &mut grad.encoder);
    Ok(grad)
}

/// Collapses a stack to a saliency map with the given SCM.
pub fn scm<T: Scalar>(scm: &Scm<T>, nrss: &Tensor<T>) -> Result<Tensor<T>> {
    if nrss.channels() != scm.conv1.in_c {
        return Err(Error::Shape(format!(
            "SCM expects {} channels, got {}",
            scm.conv1.in_c,
            nrss.channels()
        )));
    }
    Ok(scm.forward(nrss)?.0)
}

/// `f_t * sigmoid(conv(upsample(f_{t+1})))`.
pub fn gate_unit<T: Scalar>(
    gate: &GateUnit<T>,
    f_t: &Tensor<T>,
    f_t1: &Tensor<T>,
) -> Result<Tensor<T>> {
    Ok(gate.forward(f_t, f_t1)?.0)
}

/// One refinement: returns the doubled-resolution stack and its saliency map.
pub fn refine_stage<T: Scalar>(
    transform: &Transform<T>,
    stage_scm: &Scm<T>,
    nrss_prev: &Tensor<T>,
    gated: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (nrss, _) = transform.forward(gated, nrss_prev)?;
    let sal = scm(stage_scm, &nrss)?;
    Ok((nrss, sal))
}

pub fn fuse<T: Scalar>(fusion: &Fusion<T>, maps: &[&Tensor<T>]) -> Result<Tensor<T>> {
    Ok(fusion.forward(maps)?.0)
}

pub fn atrous_pool<T: Scalar>(pool: &AtrousPool<T>, feature: &Tensor<T>) -> Result<Tensor<T>> {
    pool.forward(feature)
}
