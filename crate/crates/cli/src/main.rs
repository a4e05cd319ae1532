//! Command-line pipeline for the GADS head-pose models: synthetic data,
//! preprocessing, training, evaluation, inference, latency benchmarks and
//! the ablation sweep.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use gads_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use gads_core::config::load_config;
use gads_core::data::{load_dataset, save_dataset, RawLandmarkSet};
use gads_core::evaluation::{
    ablation_csv, benchmark_latency, evaluate, mae_line_plot_svg, per_sample_maes,
    reference_delta_line, reports_to_csv, run_ablation, run_protocol_p1, run_protocol_p2,
    AblationGrid,
};
use gads_core::preprocess::{group, normalize, DEFAULT_REFERENCE};
use gads_core::synthetic::generate_synthetic;
use gads_core::training::{prepare_samples, train, ModelKind, TrainSetup};

#[derive(Parser)]
#[command(name = "gads", version, about = "Head pose estimation from 3D facial landmarks")]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every random choice (init, shuffling, dropout, synthesis).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Directory for all outputs.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Gads,
    Hybrid,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Gads => ModelKind::Vanilla,
            ModelArg::Hybrid => ModelKind::Hybrid,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ProtocolArg {
    P1,
    P2,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic rotated-template samples as JSONL.
    Synth(SynthArgs),
    /// Normalize and group a landmark dataset.
    Preprocess(PreprocessArgs),
    /// Train a model and save the best checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint, or run a full protocol.
    Eval(EvalArgs),
    /// Predict yaw, pitch, roll for one landmark record.
    Infer(InferArgs),
    /// Time single-sample forward passes.
    Bench(BenchArgs),
    /// Run the 21-cell one-axis-at-a-time sweep.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, value_name = "DEGREES")]
    max_angle: f64,
    #[arg(long, default_value_t = 0.01)]
    noise_std: f64,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Validation file; without it, 5% of the training data is held out.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModelArg::Gads)]
    model: ModelArg,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate (plain mode).
    #[arg(long, required_unless_present = "protocol")]
    ckpt: Option<PathBuf>,
    /// Test data (plain mode and protocol p2).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Dataset name used in the report (enables reference deltas for
    /// "biwi", "aflw2000", "biwi-p2").
    #[arg(long, default_value = "test")]
    dataset: String,
    /// Also write a per-sample MAE line plot (first 100 frames).
    #[arg(long)]
    plot: bool,
    /// Train-and-evaluate protocol instead of plain evaluation.
    #[arg(long, value_enum)]
    protocol: Option<ProtocolArg>,
    /// Protocol p1: training landmarks file.
    #[arg(long)]
    train_data: Option<PathBuf>,
    /// Protocol p1: test file evaluated as BIWI.
    #[arg(long)]
    biwi: Option<PathBuf>,
    /// Protocol p1: test file evaluated as AFLW2000.
    #[arg(long)]
    aflw: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModelArg::Gads)]
    model: ModelArg,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// File with one JSON record (or the first line of a JSONL file).
    #[arg(long)]
    landmarks: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Sample input file; without it a synthetic sample is used.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    runs: usize,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("GADS_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut setup = match &cli.config {
        Some(path) => load_config(path)?,
        None => TrainSetup::default(),
    };
    fs::create_dir_all(&cli.out)
        .with_context(|| format!("cannot create output directory {}", cli.out.display()))?;

    match cli.command {
        Command::Synth(args) => {
            let samples = generate_synthetic(args.n, args.max_angle, args.noise_std, cli.seed)?;
            let path = cli.out.join("synth.jsonl");
            save_dataset(&samples, &path)?;
            eprintln!("wrote {} samples to {}", samples.len(), path.display());
        }
        Command::Preprocess(args) => {
            let samples = load_dataset(&args.data, false)?;
            let path = cli.out.join("preprocessed.jsonl");
            let mut out = String::new();
            for s in &samples {
                let norm = normalize(s, DEFAULT_REFERENCE)?;
                let gp = group(&norm, &setup.groups)?;
                let mut regions = serde_json::Map::new();
                for ((name, _), g) in setup.groups.regions().iter().zip(&gp.groups) {
                    let rows: Vec<Vec<f64>> = (0..g.rows())
                        .map(|i| (0..3).map(|j| g.at2(i, j)).collect())
                        .collect();
                    regions.insert(name.to_string(), serde_json::to_value(rows)?);
                }
                let rec = serde_json::json!({
                    "id": s.sample_id,
                    "pose": s.pose,
                    "groups": regions,
                });
                out.push_str(&serde_json::to_string(&rec)?);
                out.push('\n');
            }
            fs::write(&path, out)?;
            eprintln!("wrote {} preprocessed samples to {}", samples.len(), path.display());
        }
        Command::Train(args) => {
            if let Some(e) = args.epochs {
                setup.train.epochs = e;
            }
            if let Some(b) = args.batch_size {
                setup.train.batch_size = b;
            }
            let kind: ModelKind = args.model.into();
            let with_images = kind == ModelKind::Hybrid;
            let data = load_dataset(&args.data, with_images)?;
            let (train_raw, val_raw): (Vec<RawLandmarkSet>, Vec<RawLandmarkSet>) =
                match &args.val {
                    Some(val_path) => (data, load_dataset(val_path, with_images)?),
                    None => {
                        if data.len() < 20 {
                            bail!("need at least 20 samples to hold out validation data; pass --val");
                        }
                        let holdout = (data.len() / 20).max(1);
                        let val = data[..holdout].to_vec();
                        (data[holdout..].to_vec(), val)
                    }
                };
            if !setup.gads.within_ablation_grid() {
                eprintln!("note: model config is outside the swept grid (experimental)");
            }
            eprintln!(
                "training {:?} on {} samples ({} validation) for {} epochs",
                kind,
                train_raw.len(),
                val_raw.len(),
                setup.train.epochs
            );
            let outcome = train(kind, &train_raw, &val_raw, &setup, cli.seed)?;
            let ckpt = Checkpoint {
                kind,
                config: (&setup).into(),
                best_val_mae: outcome.best_val_mae,
                epoch: outcome.best_epoch,
                params: outcome.params,
            };
            let ckpt_path = cli.out.join("best.ckpt");
            save_checkpoint(&ckpt, &ckpt_path)?;
            let mut csv = String::from("epoch,lr,train_loss,val_mae\n");
            for row in &outcome.log {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    row.epoch, row.lr, row.train_loss, row.val_mae
                ));
            }
            fs::write(cli.out.join("metrics.csv"), csv)?;
            eprintln!(
                "best val MAE {:.4} deg at epoch {}; checkpoint {}",
                ckpt.best_val_mae,
                ckpt.epoch,
                ckpt_path.display()
            );
        }
        Command::Eval(args) => match args.protocol {
            None => {
                let ckpt = load_checkpoint(args.ckpt.as_ref().expect("clap enforces --ckpt"))?;
                let data_path = args
                    .data
                    .as_ref()
                    .context("--data is required to evaluate")?;
                let data = load_dataset(data_path, ckpt.kind == ModelKind::Hybrid)?;
                let report = evaluate(&ckpt, &data, &args.dataset)?;
                fs::write(cli.out.join("report.csv"), reports_to_csv(std::slice::from_ref(&report)))?;
                println!(
                    "{}: yaw {:.4} pitch {:.4} roll {:.4} mean {:.4} over {} samples",
                    report.dataset,
                    report.yaw_mae,
                    report.pitch_mae,
                    report.roll_mae,
                    report.mean_mae,
                    report.n
                );
                if let Some(line) = reference_delta_line(&report, ckpt.kind) {
                    println!("{line}");
                }
                if args.plot {
                    let maes = per_sample_maes(&ckpt, &data)?;
                    fs::write(cli.out.join("mae_plot.svg"), mae_line_plot_svg(&maes, 100))?;
                }
            }
            Some(ProtocolArg::P1) => {
                if let Some(e) = args.epochs {
                    setup.train.epochs = e;
                }
                let kind: ModelKind = args.model.into();
                let train_path = args.train_data.context("--train-data is required for p1")?;
                let biwi = args.biwi.context("--biwi is required for p1")?;
                let aflw = args.aflw.context("--aflw is required for p1")?;
                let (ckpt, biwi_report, aflw_report) =
                    run_protocol_p1(kind, &train_path, &biwi, &aflw, &setup, cli.seed)?;
                save_checkpoint(&ckpt, &cli.out.join("best.ckpt"))?;
                let reports = [biwi_report, aflw_report];
                fs::write(cli.out.join("protocol_p1.csv"), reports_to_csv(&reports))?;
                for r in &reports {
                    println!("{}", r.csv_row());
                    if let Some(line) = reference_delta_line(r, kind) {
                        println!("{line}");
                    }
                }
            }
            Some(ProtocolArg::P2) => {
                if let Some(e) = args.epochs {
                    setup.train.epochs = e;
                }
                let kind: ModelKind = args.model.into();
                let data_path = args.data.context("--data is required for p2")?;
                let (ckpt, report, split) = run_protocol_p2(kind, &data_path, &setup, cli.seed)?;
                save_checkpoint(&ckpt, &cli.out.join("best.ckpt"))?;
                fs::write(cli.out.join("protocol_p2.csv"), reports_to_csv(std::slice::from_ref(&report)))?;
                let manifest = serde_json::json!({
                    "seed": split.seed,
                    "train": split.train,
                    "test": split.test,
                });
                fs::write(
                    cli.out.join("split.json"),
                    serde_json::to_string_pretty(&manifest)?,
                )?;
                println!("{}", report.csv_row());
                if let Some(line) = reference_delta_line(&report, kind) {
                    println!("{line}");
                }
            }
        },
        Command::Infer(args) => {
            let ckpt = load_checkpoint(&args.ckpt)?;
            let sample = read_single_record(&args.landmarks)?;
            let samples = vec![sample];
            let loaded = if ckpt.kind == ModelKind::Hybrid {
                // re-read with the image attached
                let mut s = samples;
                let img_ref = s[0]
                    .image_ref
                    .clone()
                    .context("hybrid inference needs an image path in the record")?;
                s[0].image = Some(gads_core::data::FaceImage::load_png(&img_ref)?);
                s
            } else {
                samples
            };
            let prepared =
                prepare_samples(&loaded, &ckpt.config.groups, ckpt.kind == ModelKind::Hybrid)?;
            let pose = ckpt
                .params
                .forward(&prepared[0].gp, prepared[0].image.as_ref())?;
            println!("{},{},{}", pose.yaw, pose.pitch, pose.roll);
        }
        Command::Bench(args) => {
            let ckpt = load_checkpoint(&args.ckpt)?;
            let raw = match &args.data {
                Some(p) => load_dataset(p, ckpt.kind == ModelKind::Hybrid)?,
                None => {
                    let mut synth = generate_synthetic(1, 30.0, 0.01, cli.seed)?;
                    if ckpt.kind == ModelKind::Hybrid {
                        synth[0].image = Some(gads_core::data::FaceImage::from_pixels(vec![
                            0.5;
                            3 * 64 * 64
                        ])?);
                    }
                    synth
                }
            };
            if raw.is_empty() {
                bail!("benchmark input is empty");
            }
            let prepared =
                prepare_samples(&raw[..1], &ckpt.config.groups, ckpt.kind == ModelKind::Hybrid)?;
            let report = benchmark_latency(
                &ckpt.params,
                &prepared[0].gp,
                prepared[0].image.as_ref(),
                args.runs,
                args.warmup,
            )?;
            println!(
                "median {:.4} ms, mean {:.4} ms, p95 {:.4} ms, min {:.4} ms over {} runs",
                report.median_ms, report.mean_ms, report.p95_ms, report.min_ms, args.runs
            );
            let mut csv = String::from("run,ms\n");
            for (i, t) in report.times_ms.iter().enumerate() {
                csv.push_str(&format!("{i},{t}\n"));
            }
            fs::write(cli.out.join("latency.csv"), csv)?;
        }
        Command::Ablate(args) => {
            if let Some(e) = args.epochs {
                setup.train.epochs = e;
            }
            let train_raw = load_dataset(&args.train, false)?;
            let test_raw = load_dataset(&args.test, false)?;
            eprintln!(
                "running 21 ablation cells: {} train / {} test samples, {} epochs each",
                train_raw.len(),
                test_raw.len(),
                setup.train.epochs
            );
            let rows = run_ablation(&AblationGrid::default(), &train_raw, &test_raw, &setup, cli.seed)?;
            let path = cli.out.join("ablation.csv");
            fs::write(&path, ablation_csv(&rows))?;
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

/// Accepts a single JSON record, or takes the first line of a JSONL file.
fn read_single_record(path: &Path) -> anyhow::Result<RawLandmarkSet> {
    let text = fs::read_to_string(path)?;
    let trimmed = text.trim();
    if trimmed.is_empty() {
        bail!("{} holds no landmark record", path.display());
    }
    // a pretty-printed record spans lines; a JSONL file parses line by line
    let source = if serde_json::from_str::<serde_json::Value>(trimmed).is_ok() {
        trimmed
    } else {
        trimmed.lines().next().unwrap()
    };
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(gads_core::data::parse_record(source, base)?)
}
