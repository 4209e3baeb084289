//! Optimisers, the stack/saliency training loop, subitizer training, and inference.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{
    backward, forward, softmax, subitize_backward, subitize_forward, subitize_loss, total_loss,
    LossBreakdown, NetConfig, NetworkParams, Targets,
};
use super::ops::resize_bilinear;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::stack::{NestedStack, SaliencyMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_size: usize,
    /// Per-stage auxiliary weights; empty means 1 for every stage.
    pub lambdas: Vec<f64>,
    pub gt_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            epochs: 200,
            batch_size: 1,
            lambdas: Vec::new(),
            gt_scale: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if !(self.gt_scale > 0.0 && self.gt_scale.is_finite()) {
            return Err(Error::Config(format!(
                "gt_scale must be positive, got {}",
                self.gt_scale
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let n = self.net.stages - 1;
        if !self.lambdas.is_empty() && self.lambdas.len() != n {
            return Err(Error::Config(format!(
                "{} stage weights given for {n} stages",
                self.lambdas.len()
            )));
        }
        if self.lambdas.iter().any(|&l| !l.is_finite() || l <= 0.0) {
            return Err(Error::Config("stage weights must be positive".into()));
        }
        Ok(())
    }

    pub fn stage_weights(&self) -> Vec<f64> {
        if self.lambdas.is_empty() {
            vec![1.0; self.net.stages - 1]
        } else {
            self.lambdas.clone()
        }
    }
}

/// Gradient-descent state shared by both optimisers.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new<T: Scalar>(kind: OptimizerKind, lr: f64, params: &NetworkParams<T>) -> Self {
        let shapes: Vec<usize> = params.named_tensors().iter().map(|t| t.1.len()).collect();
        let zeros = || shapes.iter().map(|&n| vec![0.0; n]).collect();
        Self {
            kind,
            lr,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update and bumps the parameter generation.
    pub fn step<T: Scalar>(&mut self, params: &mut NetworkParams<T>, grad: &NetworkParams<T>) {
        self.step += 1;
        let grads: Vec<&[T]> = grad.named_tensors().into_iter().map(|t| t.1).collect();
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        for (i, (p, g)) in params.tensors_mut().into_iter().zip(grads).enumerate() {
            for (j, (w, &gj)) in p.iter_mut().zip(g).enumerate() {
                let gj = gj.f64();
                let delta = match self.kind {
                    OptimizerKind::Sgd => self.lr * gj,
                    OptimizerKind::Adam => {
                        let m = &mut self.m[i][j];
                        let v = &mut self.v[i][j];
                        *m = BETA1 * *m + (1.0 - BETA1) * gj;
                        *v = BETA2 * *v + (1.0 - BETA2) * gj * gj;
                        self.lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS)
                    }
                };
                *w = T::of(w.f64() - delta);
            }
        }
        params.generation += 1;
    }
}

/// One training example.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: Tensor<f32>,
    pub stack: NestedStack,
    pub saliency: SaliencyMap,
}

/// Mean losses over the training set after an epoch; epoch 0 is before any update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub master: f64,
    pub aux: Vec<(f64, f64)>,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: NetworkParams<f32>,
    pub trajectory: Vec<EpochLog>,
}

impl TrainResult {
    pub fn initial_loss(&self) -> f64 {
        self.trajectory.first().map_or(f64::NAN, |e| e.total)
    }

    pub fn final_loss(&self) -> f64 {
        self.trajectory.last().map_or(f64::NAN, |e| e.total)
    }
}

/// Gradient of the summed loss over a batch, reduced in batch order.
pub fn batch_gradient<T: Scalar>(
    params: &NetworkParams<T>,
    batch: &[(&Tensor<T>, &Targets<T>)],
    lambdas: &[f64],
) -> Result<NetworkParams<T>> {
    let grads: Vec<NetworkParams<T>> = batch
        .par_iter()
        .map(|(image, targets)| {
            let trace = forward(params, image)?;
            backward(params, &trace, targets, lambdas)
        })
        .collect::<Result<_>>()?;
    let mut total = params.zeros_like();
    for g in &grads {
        total.accumulate(g);
    }
    Ok(total)
}

fn evaluate_losses(
    params: &NetworkParams<f32>,
    data: &[(Tensor<f32>, Targets<f32>)],
    lambdas: &[f64],
    epoch: usize,
) -> Result<EpochLog> {
    let per_sample: Vec<LossBreakdown> = data
        .par_iter()
        .map(|(image, targets)| total_loss(&forward(params, image)?, targets, lambdas))
        .collect::<Result<_>>()?;
    let n = per_sample.len() as f64;
    let stages = lambdas.len();
    let mut log = EpochLog {
        epoch,
        master: 0.0,
        aux: vec![(0.0, 0.0); stages],
        total: 0.0,
    };
    for b in &per_sample {
        log.master += b.master / n;
        log.total += b.total / n;
        for (acc, &(s, m)) in log.aux.iter_mut().zip(&b.aux) {
            acc.0 += s / n;
            acc.1 += m / n;
        }
    }
    if !log.total.is_finite() {
        return Err(Error::Diverged {
            epoch,
            loss: log.total,
        });
    }
    Ok(log)
}

pub fn train(samples: &[Sample], config: &TrainConfig) -> Result<TrainResult> {
    let params = NetworkParams::init(config.net, config.seed)?;
    train_from(params, samples, config)
}

/// Continues training from existing parameters.
pub fn train_from(
    mut params: NetworkParams<f32>,
    samples: &[Sample],
    config: &TrainConfig,
) -> Result<TrainResult> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if params.config != config.net {
        return Err(Error::Config(
            "parameters were built for a different network config".into(),
        ));
    }
    let lambdas = config.stage_weights();
    let data: Vec<(Tensor<f32>, Targets<f32>)> = samples
        .iter()
        .map(|s| {
            let targets = Targets::build(&config.net, &s.stack, &s.saliency, config.gt_scale)?;
            Ok((s.image.clone(), targets))
        })
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7a1e_5eed);
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, &params);
    let mut trajectory = vec![evaluate_losses(&params, &data, &lambdas, 0)?];
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&Tensor<f32>, &Targets<f32>)> =
                chunk.iter().map(|&i| (&data[i].0, &data[i].1)).collect();
            let mut grad = batch_gradient(&params, &batch, &lambdas)?;
            grad.scale(1.0 / chunk.len() as f32);
            opt.step(&mut params, &grad);
        }
        trajectory.push(evaluate_losses(&params, &data, &lambdas, epoch)?);
    }
    Ok(TrainResult { params, trajectory })
}

/// CSV with one row per epoch: epoch, master, then stack/map loss per stage, then total.
pub fn write_training_log(trajectory: &[EpochLog], mut out: impl Write) -> Result<()> {
    let stages = trajectory.first().map_or(0, |e| e.aux.len());
    let mut header = vec!["epoch".to_string(), "master".to_string()];
    for t in 1..=stages {
        header.push(format!("stack_{t}"));
        header.push(format!("map_{t}"));
    }
    header.push("total".into());
    let mut w = csv::Writer::from_writer(&mut out);
    w.write_record(&header)?;
    for e in trajectory {
        let mut row = vec![e.epoch.to_string(), format!("{:.6e}", e.master)];
        for (s, m) in &e.aux {
            row.push(format!("{s:.6e}"));
            row.push(format!("{m:.6e}"));
        }
        row.push(format!("{:.6e}", e.total));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_training_log_file(trajectory: &[EpochLog], path: &Path) -> Result<()> {
    write_training_log(trajectory, std::fs::File::create(path)?)
}

/// One image with its ground-truth class for subitizer training.
#[derive(Debug, Clone)]
pub struct CountSample {
    pub image: Tensor<f32>,
    pub class: usize,
}

/// Trains the subitizing head and the shared encoder stages; returns mean loss per epoch.
pub fn train_subitizer(
    params: &mut NetworkParams<f32>,
    samples: &[CountSample],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5b17_5eed);
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, params);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let grads: Vec<NetworkParams<f32>> = chunk
                .par_iter()
                .map(|&i| {
                    let s = &samples[i];
                    let trace = subitize_forward(params, &s.image)?;
                    subitize_backward(params, &trace, s.class)
                })
                .collect::<Result<_>>()?;
            let mut grad = params.zeros_like();
            for g in &grads {
                grad.accumulate(g);
            }
            grad.scale(1.0 / chunk.len() as f32);
            opt.step(params, &grad);
        }
        let losses: Vec<f64> = samples
            .par_iter()
            .map(|s| {
                let t = subitize_forward(params, &s.image)?;
                Ok(subitize_loss(&t.intermediate, &t.logits, s.class)?.f64())
            })
            .collect::<Result<_>>()?;
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        history.push(mean);
    }
    Ok(history)
}

/// Softmax class confidences from the final subitizer scores.
pub fn subitize_confidences(params: &NetworkParams<f32>, image: &Tensor<f32>) -> Result<Vec<f64>> {
    let t = subitize_forward(params, image)?;
    Ok(softmax(&t.logits).into_iter().map(f64::from).collect())
}

/// Inference output at image resolution.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub saliency: SaliencyMap,
    /// Finest-stage stack, kept for PCA visualisation.
    pub nrss: Tensor<f32>,
}

/// Runs the network, resizes the fused map to the image grid, undoes `gt_scale`, and clamps to [0, 1].
pub fn predict(
    params: &NetworkParams<f32>,
    image: &Tensor<f32>,
    gt_scale: f64,
) -> Result<Prediction> {
    let trace = forward(params, image)?;
    let (h, w) = image.spatial();
    let full = resize_bilinear(&trace.fused, h, w);
    let values: Vec<f64> = full
        .data()
        .iter()
        .map(|&v| f64::from(v) / gt_scale)
        .collect();
    let saliency = SaliencyMap::from_clamped(w, h, values)?;
    let nrss = trace
        .predictions
        .last()
        .expect("at least two stages")
        .nrss
        .clone();
    Ok(Prediction { saliency, nrss })
}

/// Converts planar RGB in [0, 1] to a network input tensor.
pub fn image_tensor(width: usize, height: usize, planes: Vec<f32>) -> Result<Tensor<f32>> {
    Tensor::from_vec(3, height, width, planes)
}
