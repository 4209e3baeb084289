use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nrss_core::harness::{
    ap_csv, generate_synthetic, load_manifest, manifest_count_samples, manifest_samples,
    render_rank_overlay, run_eval, synthesize, synthetic_samples, DatasetManifest, RunConfig,
    RunReport, SyntheticSpec, SUBITIZING_FILE,
};
use nrss_core::io::{read_agreement, read_saliency, write_binary, write_rgb, write_saliency};
use nrss_core::net::checkpoint::{load_checkpoint, save_checkpoint};
use nrss_core::net::pca::pca_visualize;
use nrss_core::net::train::{
    predict, subitize_confidences, train, train_subitizer, write_training_log_file, CountSample,
    OptimizerKind,
};
use nrss_core::net::{NetConfig, Tensor, TrainConfig};
use nrss_core::subitizing::{write_predictions_csv, SubitizingPrediction};
use nrss_core::{
    build_nested_stack, confusion_sweep, gt_rank_from_agreement, normalize_saliency,
    write_curve_csv, ApMethod, CountScheme, Error,
};

#[derive(Parser)]
#[command(
    name = "nrss",
    version,
    about = "Relative salience stacks, ranking and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expand agreement maps into nested binary slices
    BuildStack(BuildStackArgs),
    /// Detection metrics (AUC, F-measures, MAE) against every stack slice
    EvalDetect(EvalDetectArgs),
    /// Salient object ranking score
    EvalRank(EvalArgs),
    /// Subitizing average precision
    EvalSubitize(EvalArgs),
    /// Write a seeded synthetic dataset with a manifest
    GenSynthetic(GenArgs),
    /// Train the toy network
    TrainToy(TrainArgs),
    /// Run a checkpoint over a manifest and write predictions
    Infer(InferArgs),
    /// Principal-component colouring of the predicted stack
    PcaVis(InferArgs),
    /// Colour instances by predicted rank
    RankVis(RankVisArgs),
}

#[derive(Args)]
struct BuildStackArgs {
    /// Single agreement map (8-bit PNG/PGM)
    #[arg(
        long,
        conflicts_with = "manifest",
        required_unless_present = "manifest"
    )]
    agreement: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 12)]
    observers: usize,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory holding `<id>.png` predictions and optionally `subitizing.csv`
    #[arg(long)]
    pred_dir: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    beta2: f64,
    #[arg(long, default_value_t = 256)]
    thresholds: usize,
    #[arg(long, default_value = "voc07")]
    ap_method: ApMethod,
    #[arg(long, default_value = "pascals")]
    scheme: CountScheme,
    /// Report path
    #[arg(long)]
    out: Option<PathBuf>,
    /// `json` writes the full report; `csv` writes the table for the subcommand
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct EvalDetectArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Directory for per-slice curve dumps `<id>_slice_XX.csv`
    #[arg(long)]
    curves: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// Square canvas side in pixels; shape sizes scale with it (12-24 px at 64)
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 1)]
    min_instances: usize,
    #[arg(long, default_value_t = 4)]
    max_instances: usize,
}

#[derive(Args)]
struct NetArgs {
    #[arg(long, default_value_t = 4)]
    stages: usize,
    #[arg(long)]
    atrous: bool,
    #[arg(long, default_value = "pascals")]
    scheme: CountScheme,
}

impl NetArgs {
    fn config(&self) -> NetConfig {
        NetConfig {
            stages: self.stages,
            atrous: self.atrous,
            scheme: self.scheme,
            ..NetConfig::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Training data; a seeded synthetic set is used when absent
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value = "adam")]
    optimizer: OptimizerKind,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    #[arg(long, default_value_t = 1.0)]
    gt_scale: f64,
    #[command(flatten)]
    net: NetArgs,
    /// Epochs for the subitizing head (needs counts in the data)
    #[arg(long, default_value_t = 0)]
    subitize_epochs: usize,
    /// Directory for `checkpoint.json` and `train_log.csv`
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankVisArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    pred_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

fn build_stack(a: BuildStackArgs) -> Result<()> {
    let jobs: Vec<(String, PathBuf)> = match (&a.agreement, &a.manifest) {
        (Some(p), _) => vec![(String::new(), p.clone())],
        (None, Some(m)) => {
            let manifest = load_manifest(m)?;
            manifest
                .records
                .iter()
                .map(|r| (r.id.clone(), manifest.resolve(&r.agreement)))
                .collect()
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    for (id, path) in jobs {
        let agreement = read_agreement(&path, a.observers)?;
        let stack = build_nested_stack(&agreement);
        let dir = a.out.join(&id);
        std::fs::create_dir_all(&dir)?;
        let counts: Vec<String> = stack
            .slices()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                write_binary(&dir.join(format!("slice_{:02}.png", i + 1)), s)?;
                Ok(s.count_ones().to_string())
            })
            .collect::<Result<_>>()?;
        write_saliency(&dir.join("normalized.png"), &normalize_saliency(&agreement))?;
        let label = if id.is_empty() {
            path.display().to_string()
        } else {
            id
        };
        println!("{label}: slice pixels {}", counts.join(" "));
    }
    Ok(())
}

fn run_config(a: &EvalArgs) -> RunConfig {
    RunConfig {
        beta2: a.beta2,
        n_thresholds: a.thresholds,
        ap_method: a.ap_method,
        scheme: a.scheme,
    }
}

fn evaluate(a: &EvalArgs, csv: impl Fn(&RunReport) -> Result<String>) -> Result<RunReport> {
    let manifest = load_manifest(&a.manifest)?;
    let report = run_eval(&manifest, &a.pred_dir, &run_config(a))?;
    if let Some(out) = &a.out {
        let text = match a.format {
            Format::Json => report.to_json()?,
            Format::Csv => csv(&report)?,
        };
        std::fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(report)
}

fn write_curves(a: &EvalArgs, dir: &std::path::Path) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    std::fs::create_dir_all(dir)?;
    for rec in &manifest.records {
        let gt = manifest.ground_truth(rec)?;
        let pred = read_saliency(&a.pred_dir.join(format!("{}.png", rec.id)))?;
        for (i, slice) in build_nested_stack(&gt.agreement)
            .slices()
            .iter()
            .enumerate()
        {
            let curve = confusion_sweep(&pred, slice, a.thresholds)?;
            if curve.degenerate().is_none() {
                let file =
                    std::fs::File::create(dir.join(format!("{}_slice_{:02}.csv", rec.id, i + 1)))?;
                write_curve_csv(&curve, std::io::BufWriter::new(file))?;
            }
        }
    }
    Ok(())
}

fn eval_detect(a: EvalDetectArgs) -> Result<()> {
    let report = evaluate(&a.eval, |r| Ok(r.to_slice_csv()?))?;
    if let Some(dir) = &a.curves {
        write_curves(&a.eval, dir)?;
    }
    let Some(d) = &report.detection else {
        println!("no image has a non-degenerate ground-truth slice");
        return Ok(());
    };
    let b = &d.per_image_best;
    println!(
        "images {} (excluded {})",
        d.n_images,
        report.detection_excluded.len()
    );
    println!(
        "per-image best: AUC {} maxF {} medF {} avgF {} MAE {}",
        f4(b.auc),
        f4(b.max_f),
        f4(b.med_f),
        f4(b.avg_f),
        f4(b.mae)
    );
    println!(
        "global best slice: AUC {} @{} maxF {} @{} MAE {} @{}",
        f4(d.global_best_auc.value),
        d.global_best_auc.slice,
        f4(d.global_best_maxf.value),
        d.global_best_maxf.slice,
        f4(d.global_min_mae.value),
        d.global_min_mae.slice
    );
    Ok(())
}

fn eval_rank(a: EvalArgs) -> Result<()> {
    let report = evaluate(&a, |r| Ok(r.to_rank_csv()?))?;
    match &report.sor {
        Some(s) => println!(
            "SOR {} (valid {}, excluded {})",
            f4(s.mean_sor),
            s.n_valid,
            s.n_excluded
        ),
        None => println!("SOR undefined: no image has two distinguishable instances"),
    }
    Ok(())
}

fn eval_subitize(a: EvalArgs) -> Result<()> {
    let missing = || Error::MissingFile(a.pred_dir.join(SUBITIZING_FILE));
    let report = evaluate(&a, |r| {
        Ok(ap_csv(r.subitizing.as_ref().ok_or_else(missing)?)?)
    })?;
    let Some(s) = &report.subitizing else {
        return Err(missing().into());
    };
    println!("AP method {}", s.method);
    for ((c, ap), n) in s.classes.iter().zip(&s.per_class_ap).zip(&s.class_counts) {
        println!("  {c:>3}: {} ({n} images)", f4(*ap));
    }
    println!("mean {} weighted {}", f4(s.mean_ap), f4(s.weighted_ap));
    if !s.skipped_classes.is_empty() {
        println!("skipped (no images): {}", s.skipped_classes.join(", "));
    }
    Ok(())
}

fn gen_synthetic(a: GenArgs) -> Result<()> {
    let min_size = (a.size * 3 / 16).max(2);
    let spec = SyntheticSpec {
        width: a.size,
        height: a.size,
        min_size,
        max_size: (a.size * 3 / 8).max(min_size),
        n_images: a.count,
        min_instances: a.min_instances,
        max_instances: a.max_instances,
        seed: a.seed,
        ..SyntheticSpec::default()
    };
    let manifest = generate_synthetic(&spec, &a.out)?;
    println!("wrote {} images, manifest {}", a.count, manifest.display());
    Ok(())
}

fn train_toy(a: TrainArgs) -> Result<()> {
    let config = TrainConfig {
        net: a.net.config(),
        learning_rate: a.lr,
        optimizer: a.optimizer,
        epochs: a.epochs,
        batch_size: a.batch_size,
        lambdas: Vec::new(),
        gt_scale: a.gt_scale,
        seed: a.seed,
    };
    config.validate()?;
    let (samples, counts) = match &a.manifest {
        Some(path) => {
            let m = load_manifest(path)?;
            (
                manifest_samples(&m)?,
                manifest_count_samples(&m, config.net.scheme)?,
            )
        }
        None => {
            let images = synthesize(&SyntheticSpec {
                seed: a.seed,
                ..SyntheticSpec::default()
            })?;
            let samples = synthetic_samples(&images);
            let counts = images
                .iter()
                .zip(&samples)
                .map(|(s, smp)| {
                    Ok(CountSample {
                        image: smp.image.clone(),
                        class: config.net.scheme.class_of(s.count)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (samples, counts)
        }
    };
    let mut result = train(&samples, &config)?;
    if a.subitize_epochs > 0 {
        if counts.is_empty() {
            anyhow::bail!(Error::Config(
                "subitizer training needs counts in the manifest".into()
            ));
        }
        let sub = TrainConfig {
            epochs: a.subitize_epochs,
            ..config.clone()
        };
        let history = train_subitizer(&mut result.params, &counts, &sub)?;
        if let Some(last) = history.last() {
            println!("subitizer loss {}", f4(*last));
        }
    }
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        save_checkpoint(
            &result.params,
            config.gt_scale,
            &dir.join("checkpoint.json"),
        )?;
        write_training_log_file(&result.trajectory, &dir.join("train_log.csv"))?;
    }
    println!(
        "final loss {} initial loss {} epochs {}",
        f4(result.final_loss()),
        f4(result.initial_loss()),
        config.epochs
    );
    Ok(())
}

fn image_of(
    manifest: &DatasetManifest,
    rec: &nrss_core::harness::ManifestRecord,
) -> Result<Tensor<f32>> {
    let (w, h, planes) = manifest.image(rec)?;
    Ok(Tensor::from_vec(3, h, w, planes)?)
}

fn infer(a: InferArgs) -> Result<()> {
    let (params, gt_scale) = load_checkpoint(&a.checkpoint)?;
    let manifest = load_manifest(&a.manifest)?;
    std::fs::create_dir_all(&a.out)?;
    let mut confidences = Vec::new();
    for rec in &manifest.records {
        let image = image_of(&manifest, rec)?;
        let pred = predict(&params, &image, gt_scale)?;
        write_saliency(&a.out.join(format!("{}.png", rec.id)), &pred.saliency)?;
        confidences.push(SubitizingPrediction {
            image_id: rec.id.clone(),
            confidences: subitize_confidences(&params, &image)?,
        });
    }
    write_predictions_csv(
        &a.out.join(SUBITIZING_FILE),
        params.config.scheme,
        &confidences,
    )?;
    println!(
        "wrote {} predictions to {}",
        manifest.len(),
        a.out.display()
    );
    Ok(())
}

fn pca_vis(a: InferArgs) -> Result<()> {
    let (params, gt_scale) = load_checkpoint(&a.checkpoint)?;
    let manifest = load_manifest(&a.manifest)?;
    std::fs::create_dir_all(&a.out)?;
    for rec in &manifest.records {
        let pred = predict(&params, &image_of(&manifest, rec)?, gt_scale)?;
        let pca = pca_visualize(&pred.nrss)?;
        write_rgb(
            &a.out.join(format!("{}_pca.png", rec.id)),
            &pca.to_rgb_image(),
        )?;
        if pca.rank_deficient {
            println!("{}: fewer than three principal components", rec.id);
        }
    }
    Ok(())
}

fn rank_vis(a: RankVisArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    std::fs::create_dir_all(&a.out)?;
    let mut correct = 0;
    for rec in &manifest.records {
        let gt = manifest.ground_truth(rec)?;
        let pred_path = a.pred_dir.join(format!("{}.png", rec.id));
        if !pred_path.exists() {
            return Err(Error::MissingFile(pred_path).into());
        }
        let pred = read_saliency(&pred_path)?;
        let gt_rank = gt_rank_from_agreement(&gt.agreement, &gt.instances)?;
        let img = render_rank_overlay(&pred, &gt.instances, &gt_rank)?;
        if img.get_pixel(0, 0).0 == nrss_core::harness::overlay::CORRECT_BORDER {
            correct += 1;
        }
        write_rgb(&a.out.join(format!("{}_rank.png", rec.id)), &img)?;
    }
    println!("correct order {correct}/{}", manifest.len());
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::BuildStack(a) => build_stack(a),
        Command::EvalDetect(a) => eval_detect(a),
        Command::EvalRank(a) => eval_rank(a),
        Command::EvalSubitize(a) => eval_subitize(a),
        Command::GenSynthetic(a) => gen_synthetic(a),
        Command::TrainToy(a) => train_toy(a),
        Command::Infer(a) => infer(a),
        Command::PcaVis(a) => pca_vis(a),
        Command::RankVis(a) => rank_vis(a),
    }
}

/// Configuration mistakes are usage errors; everything else is a data error.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if !e.is_data_error() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
