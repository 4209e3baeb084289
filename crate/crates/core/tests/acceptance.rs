//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero on any failure.
//!
//! Run with `cargo test -p nrss-core --test acceptance`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use nrss_core::harness::{
    generate_synthetic, load_manifest, manifest_samples, run_eval, RunConfig, RunReport,
    SyntheticSpec,
};
use nrss_core::io::write_saliency;
use nrss_core::net::{pca_visualize, predict, train, NetConfig, Tensor, TrainConfig};
use nrss_core::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Published figures are rounded to two decimals.
const ROUNDING_TOL: f64 = 0.005;
const SOR_TOL: f64 = 1e-12;
const AUC_TOL: f64 = 1e-9;
const AP_TOL: f64 = 1e-12;
const PCA_TOL: f64 = 1e-9;
const LOSS_RATIO: f64 = 0.25;
const MIN_SOR: f64 = 0.9;
const MIN_AUC: f64 = 0.9;

type Outcome = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn near(name: &str, got: f64, want: f64, tol: f64) -> std::result::Result<(), String> {
    ensure((got - want).abs() <= tol, || {
        format!("{name} = {got:.4}, expected {want} +/- {tol}")
    })
}

fn labelled(v: &[(&str, f64)]) -> Vec<(String, f64)> {
    v.iter().map(|(k, x)| (k.to_string(), *x)).collect()
}

fn counts(v: &[(&str, u64)]) -> Vec<(String, u64)> {
    v.iter().map(|(k, c)| (k.to_string(), *c)).collect()
}

fn c1_pascal_s_mean_ap() -> Outcome {
    let aps = labelled(&[("1", 0.62), ("2", 0.42), ("3", 0.20), ("4+", 0.55)]);
    let n = counts(&[("1", 1), ("2", 1), ("3", 1), ("4+", 1)]);
    let r = subitizing_report(&aps, &n, ApMethod::Voc07).map_err(|e| e.to_string())?;
    near("mean AP", r.mean_ap, 0.4475, 1e-12)?;
    near("printed mean AP", r.mean_ap, 0.45, ROUNDING_TOL)?;
    Ok(format!("mean AP {:.4} -> {:.2}", r.mean_ap, r.mean_ap))
}

fn c2_sos_weighted_ap() -> Outcome {
    let n = counts(&[("0", 338), ("1", 617), ("2", 219), ("3", 137), ("4+", 69)]);
    let rsd = labelled(&[
        ("0", 0.95),
        ("1", 0.92),
        ("2", 0.61),
        ("3", 0.59),
        ("4+", 0.67),
    ]);
    let sos = labelled(&[
        ("0", 0.93),
        ("1", 0.90),
        ("2", 0.51),
        ("3", 0.48),
        ("4+", 0.65),
    ]);
    let a = subitizing_report(&rsd, &n, ApMethod::Voc07).map_err(|e| e.to_string())?;
    let b = subitizing_report(&sos, &n, ApMethod::Voc07).map_err(|e| e.to_string())?;
    near("refinement net overall", a.weighted_ap, 0.83, ROUNDING_TOL)?;
    near("refinement net mean", a.mean_ap, 0.75, ROUNDING_TOL)?;
    near("SOS mean", b.mean_ap, 0.69, ROUNDING_TOL)?;
    near("SOS overall", b.weighted_ap, 0.79, ROUNDING_TOL)?;
    Ok(format!(
        "overall {:.3}, SOS mean {:.3} overall {:.3}",
        a.weighted_ap, b.mean_ap, b.weighted_ap
    ))
}

fn c3_pascal_s_distribution() -> Outcome {
    let raw = [300, 227, 136, 72, 43, 28, 18, 26];
    let want = [0.35, 0.27, 0.16, 0.08, 0.05, 0.03, 0.02, 0.03];
    let labels = ["1", "2", "3", "4", "5", "6", "7", "8+"];
    let c: Vec<(String, u64)> = labels
        .iter()
        .zip(raw)
        .map(|(l, n)| (l.to_string(), n))
        .collect();
    ensure(raw.iter().sum::<u64>() == 850, || "total is not 850".into())?;
    let d = class_distribution(&c).map_err(|e| e.to_string())?;
    for ((label, got), want) in d.iter().zip(want) {
        near(label, *got, want, ROUNDING_TOL)?;
    }
    Ok(d.iter()
        .map(|(_, v)| format!("{v:.3}"))
        .collect::<Vec<_>>()
        .join(" "))
}

fn random_agreement(rng: &mut ChaCha8Rng, w: usize, h: usize) -> AgreementMap {
    // Blocky maps exercise shared levels; noisy ones exercise every level.
    let values = if rng.gen_bool(0.5) {
        (0..w * h).map(|_| rng.gen_range(0..=12)).collect()
    } else {
        let a = rng.gen_range(0..=12);
        let b = rng.gen_range(0..=12);
        let cut = rng.gen_range(0..=w);
        (0..w * h)
            .map(|p| if p % w < cut { a } else { b })
            .collect()
    };
    AgreementMap::new(w, h, 12, values).unwrap()
}

fn c4_stack_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..1000 {
        let (w, h) = (rng.gen_range(1..=64), rng.gen_range(1..=64));
        let a = random_agreement(&mut rng, w, h);
        let stack = build_nested_stack(&a);
        let slices = stack.slices();
        ensure(slices.len() == 12, || {
            format!("case {case}: {} slices", slices.len())
        })?;
        for k in 1..12 {
            let nested = slices[k]
                .values()
                .iter()
                .zip(slices[k - 1].values())
                .all(|(&hi, &lo)| !hi || lo);
            ensure(nested, || {
                format!("case {case}: slice {} not inside {k}", k + 1)
            })?;
        }
        for p in 0..w * h {
            let sum = slices.iter().filter(|s| s.values()[p]).count();
            ensure(sum == a.values()[p] as usize, || {
                format!("case {case}: slice sum at {p}")
            })?;
        }
        let back = collapse_stack(&stack).map_err(|e| e.to_string())?;
        ensure(back == a, || format!("case {case}: roundtrip differs"))?;
        for k in 1..=12 {
            let t = threshold_agreement(&a, k).map_err(|e| e.to_string())?;
            let by_loop: Vec<bool> = a.values().iter().map(|&v| v as usize >= k).collect();
            ensure(
                t == slices[k - 1] && t.values() == by_loop.as_slice(),
                || format!("case {case}: threshold {k} differs from slice"),
            )?;
        }
    }
    Ok("1000 maps".into())
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n);
            out.push(q);
        }
    }
    out
}

fn ranks_from(positions: &[usize]) -> RankVector {
    let n = positions.len();
    let scores: Vec<InstanceScore> = positions
        .iter()
        .enumerate()
        .map(|(i, &r)| InstanceScore {
            instance_id: i as u16 + 1,
            score: (n + 1 - r) as f64,
            pixel_count: 1,
        })
        .collect();
    rank_order(&scores)
}

fn c5_sor_oracle() -> Outcome {
    let mut total = 0;
    for n in 2..=5 {
        let identity: Vec<usize> = (1..=n).collect();
        let gt = ranks_from(&identity);
        for perm in permutations(n) {
            let d2: usize = perm
                .iter()
                .zip(&identity)
                .map(|(&a, &b)| a.abs_diff(b).pow(2))
                .sum();
            let rho = 1.0 - 6.0 * d2 as f64 / (n * (n * n - 1)) as f64;
            let s = sor_score(&gt, &ranks_from(&perm)).map_err(|e| e.to_string())?;
            ensure(
                s.valid && (s.sor - (rho + 1.0) / 2.0).abs() <= SOR_TOL,
                || format!("n={n} {perm:?}: SOR {} vs {}", s.sor, (rho + 1.0) / 2.0),
            )?;
            total += 1;
        }
        let reversed: Vec<usize> = (1..=n).rev().collect();
        ensure(sor_score(&gt, &gt).unwrap().sor == 1.0, || {
            format!("n={n}: identity")
        })?;
        ensure(
            sor_score(&gt, &ranks_from(&reversed)).unwrap().sor == 0.0,
            || format!("n={n}: reversed"),
        )?;
    }
    let single = ranks_from(&[1]);
    ensure(!sor_score(&single, &single).unwrap().valid, || {
        "n=1 should be invalid".into()
    })?;
    Ok(format!("{total} orders, n = 2..5"))
}

fn random_pair(rng: &mut ChaCha8Rng, quantized: bool) -> (SaliencyMap, BinaryMap) {
    loop {
        let (w, h) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let pred: Vec<f64> = (0..w * h)
            .map(|_| {
                if quantized {
                    rng.gen_range(0..=255) as f64 / 255.0
                } else {
                    rng.gen()
                }
            })
            .collect();
        let gt: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(0.4)).collect();
        if gt.iter().any(|&g| g) && gt.iter().any(|&g| !g) {
            return (
                SaliencyMap::new(w, h, pred).unwrap(),
                BinaryMap::new(w, h, gt).unwrap(),
            );
        }
    }
}

fn mann_whitney(pred: &SaliencyMap, gt: &BinaryMap) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (p, &g) in pred.values().iter().zip(gt.values()) {
        if !g {
            continue;
        }
        for (q, &h) in pred.values().iter().zip(gt.values()) {
            if h {
                continue;
            }
            pairs += 1.0;
            if p > q {
                wins += 1.0;
            } else if p == q {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn f_by_pixel_loop(pred: &SaliencyMap, gt: &BinaryMap, n: usize, beta2: f64) -> (f64, f64, f64) {
    let mut f = Vec::new();
    for j in 0..n {
        let t = j as f64 / (n - 1) as f64;
        let (mut tp, mut fp, mut pos) = (0.0, 0.0, 0.0);
        for (&p, &g) in pred.values().iter().zip(gt.values()) {
            pos += g as u8 as f64;
            if p >= t {
                if g {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let precision = if tp + fp == 0.0 { 1.0 } else { tp / (tp + fp) };
        let recall = tp / pos;
        let den = beta2 * precision + recall;
        f.push(if den == 0.0 {
            0.0
        } else {
            (1.0 + beta2) * precision * recall / den
        });
    }
    f.sort_by(f64::total_cmp);
    let med = if n % 2 == 1 {
        f[n / 2]
    } else {
        (f[n / 2 - 1] + f[n / 2]) / 2.0
    };
    (f[n - 1], med, f.iter().sum::<f64>() / n as f64)
}

fn ap_oracle(conf: &[f64], pos: &[bool], method: ApMethod) -> f64 {
    let mut order: Vec<usize> = (0..conf.len()).collect();
    order.sort_by(|&a, &b| conf[b].partial_cmp(&conf[a]).unwrap());
    let n_pos = pos.iter().filter(|&&p| p).count() as f64;
    let at = |k: usize| {
        let tp = order[..k].iter().filter(|&&i| pos[i]).count() as f64;
        (tp / k as f64, tp / n_pos)
    };
    match method {
        ApMethod::Continuous => (1..=order.len())
            .filter(|&k| pos[order[k - 1]])
            .map(|k| at(k).0 / n_pos)
            .sum(),
        ApMethod::Voc07 => {
            (0..=10)
                .map(|t| {
                    (1..=order.len())
                        .map(at)
                        .filter(|&(_, r)| r >= t as f64 / 10.0)
                        .map(|(p, _)| p)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
    }
}

fn c6_metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_auc: f64 = 0.0;
    for case in 0..200 {
        let (pred, gt) = random_pair(&mut rng, true);
        let curve = confusion_sweep(&pred, &gt, 256).map_err(|e| e.to_string())?;
        let a = auc(&curve).map_err(|e| e.to_string())?;
        let oracle = mann_whitney(&pred, &gt);
        worst_auc = worst_auc.max((a - oracle).abs());
        ensure((a - oracle).abs() <= AUC_TOL, || {
            format!("case {case}: AUC {a} vs {oracle}")
        })?;

        let (pred, gt) = random_pair(&mut rng, false);
        let n = rng.gen_range(2..=64);
        let f = f_measures(&confusion_sweep(&pred, &gt, n).unwrap(), 0.3);
        let want = f_by_pixel_loop(&pred, &gt, n, 0.3);
        ensure((f.max_f, f.med_f, f.avg_f) == want, || {
            format!("case {case}: F {f:?} vs {want:?}")
        })?;
        let m = mae(&pred, &gt).unwrap();
        let want_mae = pred
            .values()
            .iter()
            .zip(gt.values())
            .map(|(&p, &g)| (p - if g { 1.0 } else { 0.0 }).abs())
            .sum::<f64>()
            / pred.values().len() as f64;
        ensure(m == want_mae, || {
            format!("case {case}: MAE {m} vs {want_mae}")
        })?;

        let len = rng.gen_range(1..=12);
        let mut conf: Vec<f64> = (0..len).map(|i| i as f64 / len as f64 + 0.01).collect();
        conf.shuffle(&mut rng);
        let mut pos: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.4)).collect();
        pos[rng.gen_range(0..len)] = true;
        for method in [ApMethod::Voc07, ApMethod::Continuous] {
            let got = average_precision(&conf, &pos, method).unwrap();
            let want = ap_oracle(&conf, &pos, method);
            ensure((got - want).abs() <= AP_TOL, || {
                format!("case {case}: {method} AP {got} vs {want}")
            })?;
        }
    }
    Ok(format!("200 cases, worst AUC gap {worst_auc:.1e}"))
}

fn c7_gradients() -> Outcome {
    let full = NetConfig {
        stages: 5,
        atrous: true,
        ..NetConfig::default()
    };
    let (a, wa) = common::stack_gradient_check(full, 7);
    let (b, wb) = common::stack_gradient_check(NetConfig::default(), 11);
    let (c, wc) = common::subitizer_gradient_check(CountScheme::Sos, 3);
    let (d, wd) = common::subitizer_gradient_check(CountScheme::PascalS, 3);
    let worst = wa.max(wb).max(wc).max(wd);
    Ok(format!(
        "{} entries, worst rel err {worst:.1e}",
        a + b + c + d
    ))
}

fn dataset(dir: &Path, seed: u64) -> nrss_core::harness::DatasetManifest {
    let spec = SyntheticSpec {
        seed,
        ..SyntheticSpec::default()
    };
    load_manifest(&generate_synthetic(&spec, dir).unwrap()).unwrap()
}

/// Synthetic data, training, inference to PNG, evaluation.
fn pipeline(dir: &Path, seed: u64, epochs: usize) -> (RunReport, f64, f64) {
    let manifest = dataset(&dir.join("data"), seed);
    let config = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let result = train(&manifest_samples(&manifest).unwrap(), &config).unwrap();
    let pred_dir = dir.join("pred");
    std::fs::create_dir_all(&pred_dir).unwrap();
    for (rec, sample) in manifest
        .records
        .iter()
        .zip(manifest_samples(&manifest).unwrap())
    {
        let p = predict(&result.params, &sample.image, config.gt_scale).unwrap();
        write_saliency(&pred_dir.join(format!("{}.png", rec.id)), &p.saliency).unwrap();
    }
    let report = run_eval(&manifest, &pred_dir, &RunConfig::default()).unwrap();
    (report, result.initial_loss(), result.final_loss())
}

fn c8_toy_training() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (report, initial, last) = pipeline(dir.path(), 1, 200);
    let ratio = last / initial;
    let sor = report.sor.ok_or("no valid SOR")?.mean_sor;
    let slices = report.detection.ok_or("no detection")?.per_slice;
    let auc = slices.iter().map(|s| s.auc).sum::<f64>() / slices.len() as f64;
    let detail = format!("loss ratio {ratio:.4}, SOR {sor:.4}, per-slice mean AUC {auc:.4}");
    ensure(
        ratio < LOSS_RATIO && sor >= MIN_SOR && auc >= MIN_AUC,
        || detail.clone(),
    )?;
    Ok(detail)
}

fn c9_self_evaluation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = dataset(dir.path(), 9);
    let mut images = 0;
    for rec in &manifest.records {
        let gt = manifest.ground_truth(rec).unwrap();
        let pred = normalize_saliency(&gt.agreement);
        let rank = gt_rank_from_agreement(&gt.agreement, &gt.instances).unwrap();
        let own = rank_order(&instance_rank_scores(&pred, &gt.instances).unwrap());
        let s = sor_score(&rank, &own).unwrap();
        ensure(!s.valid || s.sor == 1.0, || {
            format!("{}: SOR {}", rec.id, s.sor)
        })?;
        images += 1;
    }
    let pred_dir = dir.path().join("pred");
    std::fs::create_dir_all(&pred_dir).unwrap();
    for rec in &manifest.records {
        let gt = manifest.ground_truth(rec).unwrap();
        write_saliency(
            &pred_dir.join(format!("{}.png", rec.id)),
            &normalize_saliency(&gt.agreement),
        )
        .unwrap();
    }
    let report = run_eval(&manifest, &pred_dir, &RunConfig::default()).unwrap();
    ensure(
        report.sor.as_ref().is_some_and(|s| s.mean_sor == 1.0),
        || "dataset SOR".into(),
    )?;

    // Random maps too, so MAE minima land on many different slices.
    let mut argmins = std::collections::BTreeSet::new();
    for case in 0..200 {
        let (w, h) = (rng.gen_range(2..=24), rng.gen_range(2..=24));
        let a = random_agreement(&mut rng, w, h);
        let stack = build_nested_stack(&a);
        let pred = normalize_saliency(&a);
        let best = match evaluate_against_stack(&pred, &stack, EvalOptions::default()) {
            Ok(b) => b,
            Err(Error::AllSlicesDegenerate) => continue,
            Err(e) => return Err(e.to_string()),
        };
        ensure(best.per_slice.iter().all(|s| s.auc == 1.0), || {
            format!("case {case}: AUC below 1")
        })?;
        let mut oracle: Option<(usize, f64)> = None;
        for k in 1..=12 {
            let slice = &stack.slices()[k - 1];
            let pos = slice.count_ones();
            if pos == 0 || pos == w * h {
                continue;
            }
            let m = pred
                .values()
                .iter()
                .zip(slice.values())
                .map(|(&p, &g)| (p - g as u8 as f64).abs())
                .sum::<f64>()
                / (w * h) as f64;
            if oracle.is_none_or(|(_, v)| m < v) {
                oracle = Some((k, m));
            }
        }
        let (k, _) = oracle.expect("a non-degenerate slice exists");
        ensure(best.min_mae.slice == k, || {
            format!("case {case}: MAE argmin {} vs {k}", best.min_mae.slice)
        })?;
        argmins.insert(k);
        images += 1;
    }
    Ok(format!(
        "{images} maps, MAE argmin over {} distinct slices",
        argmins.len()
    ))
}

fn c10_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (ra, _, la) = pipeline(a.path(), 10, 15);
    let (rb, _, lb) = pipeline(b.path(), 10, 15);
    let (ja, jb) = (ra.to_json().unwrap(), rb.to_json().unwrap());
    ensure(
        ja == jb && ra.to_csv().unwrap() == rb.to_csv().unwrap(),
        || "reports differ".into(),
    )?;
    ensure(la.to_bits() == lb.to_bits(), || {
        format!("final losses {la} vs {lb}")
    })?;
    Ok(format!("{} byte JSON reports identical", ja.len()))
}

/// Cyclic Jacobi rotations; returns eigenpairs sorted by descending eigenvalue.
#[allow(clippy::needless_range_loop)]
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> Vec<(f64, Vec<f64>)> {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect())
        .collect();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|j| (a[j][j], v.iter().map(|r| r[j]).collect()))
        .collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    pairs
}

fn c11_pca_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let (w, h) = (rng.gen_range(4..=24), rng.gen_range(4..=24));
        let a = random_agreement(&mut rng, w, h);
        let stack = build_nested_stack(&a);
        let mut data = Vec::with_capacity(12 * w * h);
        for s in stack.slices() {
            data.extend(
                s.values()
                    .iter()
                    .map(|&b| b as u8 as f64 * 0.8 + rng.gen_range(0.0..0.2)),
            );
        }
        let t = Tensor::from_vec(12, h, w, data).unwrap();
        let pca = pca_visualize(&t).map_err(|e| e.to_string())?;

        let n = (w * h) as f64;
        let means: Vec<f64> = (0..12)
            .map(|c| t.plane(c).iter().sum::<f64>() / n)
            .collect();
        let mut cov = vec![vec![0.0; 12]; 12];
        for (i, row) in cov.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..w * h)
                    .map(|p| (t.plane(i)[p] - means[i]) * (t.plane(j)[p] - means[j]))
                    .sum::<f64>()
                    / n;
            }
        }
        let eig = jacobi_eigen(cov);
        for (k, (lambda, vec)) in eig.iter().take(3).enumerate() {
            let comp = pca.components[k]
                .as_ref()
                .ok_or(format!("case {case}: PC{} missing", k + 1))?;
            let rel = (pca.eigenvalues[k] - lambda).abs() / lambda;
            let dot: f64 = comp.iter().zip(vec).map(|(x, y)| x * y).sum();
            let sign = dot.signum();
            let diff = comp
                .iter()
                .zip(vec)
                .map(|(x, y)| (x - sign * y).abs())
                .fold(0.0, f64::max);
            let proj_diff = (0..w * h)
                .map(|p| {
                    let o: f64 = (0..12).map(|c| (t.plane(c)[p] - means[c]) * vec[c]).sum();
                    (pca.projections[k][p] - sign * o).abs()
                })
                .fold(0.0, f64::max);
            worst = worst.max(rel).max(diff).max(proj_diff);
            ensure(
                rel < PCA_TOL && diff < PCA_TOL && proj_diff < PCA_TOL,
                || {
                    format!("case {case} PC{}: eigenvalue {rel:.1e} vector {diff:.1e} projection {proj_diff:.1e}", k + 1)
                },
            )?;
        }
    }
    Ok(format!("50 stacks, worst deviation {worst:.1e}"))
}

struct Criterion {
    id: usize,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "Pascal-S subitizing mean AP",
            budget: Duration::from_secs(1),
            run: c1_pascal_s_mean_ap,
        },
        Criterion {
            id: 2,
            name: "SOS mean and weighted AP",
            budget: Duration::from_secs(1),
            run: c2_sos_weighted_ap,
        },
        Criterion {
            id: 3,
            name: "Pascal-S count distribution",
            budget: Duration::from_secs(1),
            run: c3_pascal_s_distribution,
        },
        Criterion {
            id: 4,
            name: "stack invariants",
            budget: Duration::from_secs(10),
            run: c4_stack_invariants,
        },
        Criterion {
            id: 5,
            name: "SOR permutation oracle",
            budget: Duration::from_secs(5),
            run: c5_sor_oracle,
        },
        Criterion {
            id: 6,
            name: "metric oracles",
            budget: Duration::from_secs(30),
            run: c6_metric_oracles,
        },
        Criterion {
            id: 7,
            name: "gradient suite",
            budget: Duration::from_secs(120),
            run: c7_gradients,
        },
        Criterion {
            id: 8,
            name: "toy training",
            budget: Duration::from_secs(300),
            run: c8_toy_training,
        },
        Criterion {
            id: 9,
            name: "self-evaluation identity",
            budget: Duration::from_secs(10),
            run: c9_self_evaluation,
        },
        Criterion {
            id: 10,
            name: "determinism",
            budget: Duration::from_secs(300),
            run: c10_determinism,
        },
        Criterion {
            id: 11,
            name: "PCA oracle",
            budget: Duration::from_secs(10),
            run: c11_pca_oracle,
        },
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(d) if took > c.budget => Err(format!("{d}; over budget {:?}", c.budget)),
            o => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!(
            "{tag} [{:>2}] {} ({:.1}s): {detail}",
            c.id,
            c.name,
            took.as_secs_f64()
        );
        failed += outcome.is_err() as usize;
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
