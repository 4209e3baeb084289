#![allow(dead_code)]

use nrss_core::net::model::StageTarget;
use nrss_core::net::{
    backward, forward, subitize_backward, subitize_forward, subitize_loss, total_loss, NetConfig,
    NetworkParams, Targets, Tensor,
};
use nrss_core::CountScheme;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-6;
pub const TOL: f64 = 1e-4;
pub const SAMPLES_PER_TENSOR: usize = 6;
/// Below this magnitude central differences are dominated by rounding.
pub const NOISE_FLOOR: f64 = 1e-5;

pub fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor<f64> {
    let data = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(c, h, w, data).unwrap()
}

pub fn random_targets(
    rng: &mut ChaCha8Rng,
    trace: &nrss_core::net::ForwardTrace<f64>,
) -> Targets<f64> {
    let stages = trace
        .predictions
        .iter()
        .map(|p| {
            let (c, h, w) = p.nrss.shape();
            StageTarget {
                stack: random_tensor(rng, c, h, w).map(f64::abs),
                map: random_tensor(rng, 1, h, w).map(f64::abs),
            }
        })
        .collect();
    let (_, h, w) = trace.fused.shape();
    Targets {
        stages,
        master: random_tensor(rng, 1, h, w).map(f64::abs),
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(NOISE_FLOOR)
}

/// Central difference plus a flag for a kink between the two one-sided estimates.
pub fn probe_entry(f: impl Fn(f64) -> f64, analytic: f64) -> (f64, bool) {
    let (up, mid, down) = (f(EPS), f(0.0), f(-EPS));
    let numeric = (up - down) / (2.0 * EPS);
    let asym = ((up - mid) - (mid - down)).abs() / EPS;
    let kink = rel_err(analytic, numeric) >= TOL && asym > (analytic - numeric).abs();
    (numeric, kink)
}

/// Compares analytic and central-difference gradients on sampled entries of every tensor.
/// Entries sitting on a ReLU kink are redrawn; at most 5% may be.
pub fn check_params(
    params: &NetworkParams<f64>,
    analytic: &NetworkParams<f64>,
    loss: impl Fn(&NetworkParams<f64>) -> f64,
    rng: &mut ChaCha8Rng,
) -> (usize, f64) {
    let grads: Vec<Vec<f64>> = analytic
        .named_tensors()
        .into_iter()
        .map(|t| t.1.to_vec())
        .collect();
    let names: Vec<String> = params.named_tensors().into_iter().map(|t| t.0).collect();
    let mut checked = 0;
    let mut kinks = 0;
    let mut worst: f64 = 0.0;
    for (ti, g) in grads.iter().enumerate() {
        let mut done = 0;
        while done < SAMPLES_PER_TENSOR.min(g.len()) {
            let j = rng.gen_range(0..g.len());
            let shifted = |d: f64| {
                let mut p = params.clone();
                p.tensors_mut()[ti][j] += d;
                loss(&p)
            };
            let (numeric, kink) = probe_entry(shifted, g[j]);
            if kink {
                kinks += 1;
                assert!(kinks * 20 <= checked.max(20), "too many kinks");
                continue;
            }
            let err = rel_err(g[j], numeric);
            assert!(
                err < TOL,
                "{}[{j}]: analytic {} numeric {numeric} rel err {err}",
                names[ti],
                g[j]
            );
            worst = worst.max(err);
            checked += 1;
            done += 1;
        }
    }
    (checked, worst)
}

pub fn stack_gradient_check(config: NetConfig, seed: u64) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = NetworkParams::<f64>::init(config, seed).unwrap();
    let image = random_tensor(&mut rng, 3, 16, 16).map(|v| v * 0.5 + 0.5);
    let trace = forward(&params, &image).unwrap();
    let targets = random_targets(&mut rng, &trace);
    let lambdas: Vec<f64> = (0..trace.predictions.len())
        .map(|i| 0.6 + 0.2 * i as f64)
        .collect();
    let analytic = backward(&params, &trace, &targets, &lambdas).unwrap();
    let loss = |p: &NetworkParams<f64>| {
        total_loss(&forward(p, &image).unwrap(), &targets, &lambdas)
            .unwrap()
            .total
    };
    let (checked, worst) = check_params(&params, &analytic, loss, &mut rng);
    assert!(checked > 100);
    assert!(worst < TOL);
    (checked, worst)
}

/// Subitizer head and encoder stages 1-3; every other tensor must get zero gradient.
pub fn subitizer_gradient_check(scheme: CountScheme, seed: u64) -> (usize, f64) {
    let config = NetConfig {
        scheme,
        ..NetConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = NetworkParams::<f64>::init(config, seed + 2).unwrap();
    let image = random_tensor(&mut rng, 3, 16, 16);
    let class = scheme.n_classes() - 1;
    let trace = subitize_forward(&params, &image).unwrap();
    let analytic = subitize_backward(&params, &trace, class).unwrap();
    let loss = |p: &NetworkParams<f64>| {
        let t = subitize_forward(p, &image).unwrap();
        subitize_loss(&t.intermediate, &t.logits, class).unwrap()
    };
    for (name, g) in analytic.named_tensors() {
        if !(name.starts_with("encoder.") || name.starts_with("subitizer."))
            || name.starts_with("encoder.3")
        {
            assert!(
                g.iter().all(|&v| v == 0.0),
                "{name} should have no gradient"
            );
        }
    }
    let (checked, worst) = check_params(&params, &analytic, loss, &mut rng);
    assert!(checked > 0 && worst < TOL);
    (checked, worst)
}
