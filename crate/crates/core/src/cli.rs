//! Command-line orchestration: dataset generation, CNN training, sweeps,
//! transformer training/rendering, and the gradient-check suite. Every run
//! that produces artifacts also writes a manifest JSON next to them.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::cnn::{self, DataFormat, Dataset, ModelWeights, Split};
use crate::error::{Error, Result};
use crate::itn::{self, ControlVector, ItnConfig};
use crate::sweep;
use crate::synth;
use crate::transforms::TransformKind;
use crate::verification;

#[derive(Parser, Debug)]
#[command(name = "invariance", version, about = "Probe and learn the transformation invariances of a small CNN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic glyph dataset in MNIST IDX layout
    GenData(GenDataArgs),
    /// Train the classifier with mini-batch SGD
    TrainCnn(TrainArgs),
    /// Run a transformation-magnitude sweep over one class
    Sweep(SweepArgs),
    /// Train the invariant transformer against a frozen classifier
    ItnTrain(ItnTrainArgs),
    /// Render transformed images and predictions for a control grid
    ItnRender(ItnRenderArgs),
    /// Run the finite-difference gradient suite
    Gradcheck,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    train: usize,
    #[arg(long, default_value_t = 500)]
    test: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "idx")]
    format: String,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Stop after the first epoch whose test accuracy reaches this value
    #[arg(long)]
    stop_acc: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "idx")]
    format: String,
    #[arg(long)]
    class: u8,
    #[arg(long)]
    kind: String,
    /// Inclusive linear grid `v0:v1:points`
    #[arg(long, allow_hyphen_values = true)]
    grid: String,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    topk: usize,
    /// Cap on probed images per class (0 = all)
    #[arg(long, default_value_t = 0)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ItnTrainArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "idx")]
    format: String,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 10.0)]
    c_theta: f64,
    /// Accuracy gate, a number in [0,1] or `auto` (clean accuracy − 0.02)
    #[arg(long, default_value = "auto")]
    acc_orig: String,
    #[arg(long, default_value_t = 16)]
    s_size: usize,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Route k₁ to the spatial block and k₂ to the color block
    #[arg(long)]
    swap_k: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ItnRenderArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    blocks: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long, default_value = "idx")]
    format: String,
    #[arg(long, default_value_t = 4)]
    count: usize,
    /// Control points `k1a,k1b,k2a,k2b` separated by `;`
    #[arg(long)]
    k_grid: String,
    #[arg(long)]
    swap_k: bool,
    #[arg(long)]
    out: PathBuf,
}

/// Provenance record written next to every run's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub seeds: Vec<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub version: String,
    pub duration_secs: f64,
    /// Resolved values not literal in the flags (e.g. an `auto` gate).
    pub resolved: serde_json::Value,
}

fn write_manifest(path: &Path, m: &RunManifest) -> Result<()> {
    let body = serde_json::to_string_pretty(m)?;
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn manifest_skeleton(command: &str, argv: &[String], start: Instant) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        args: argv.to_vec(),
        seeds: Vec::new(),
        inputs: Vec::new(),
        outputs: Vec::new(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        duration_secs: start.elapsed().as_secs_f64(),
        resolved: serde_json::Value::Null,
    }
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [v0, v1, n] = parts[..] else {
        return Err(Error::Usage(format!("grid spec must be v0:v1:points, got '{}'", spec)));
    };
    let v0: f64 = v0.parse().map_err(|_| Error::Usage(format!("bad grid start '{}'", v0)))?;
    let v1: f64 = v1.parse().map_err(|_| Error::Usage(format!("bad grid end '{}'", v1)))?;
    let n: usize = n.parse().map_err(|_| Error::Usage(format!("bad grid point count '{}'", n)))?;
    if n < 2 || v1 <= v0 {
        return Err(Error::Usage("grid needs at least 2 points and v1 > v0".into()));
    }
    Ok((0..n).map(|i| v0 + (v1 - v0) * i as f64 / (n - 1) as f64).collect())
}

fn parse_k_grid(spec: &str) -> Result<Vec<ControlVector>> {
    spec.split(';')
        .map(|point| {
            let vals: Vec<f64> = point
                .split(',')
                .map(|v| v.trim().parse().map_err(|_| Error::Usage(format!("bad control value '{}'", v))))
                .collect::<Result<_>>()?;
            let [a, b, c, d] = vals[..] else {
                return Err(Error::Usage(format!(
                    "each control point needs 4 comma-separated values, got '{}'",
                    point
                )));
            };
            ControlVector::new([a, b], [c, d])
        })
        .collect()
}

fn load_split(dir: &Path, format: &str, split: Split) -> Result<Dataset<f64>> {
    cnn::load_dataset(dir, DataFormat::from_name(format)?, split)
}

/// Runs one invocation; the process exit code is derived from the error.
pub fn dispatch(argv: &[String]) -> Result<()> {
    let cli = Cli::try_parse_from(argv).map_err(|e| Error::Usage(e.to_string()))?;
    let start = Instant::now();
    match cli.command {
        Command::GenData(a) => {
            synth::write_split(&a.out, Split::Train, a.train, a.seed)?;
            synth::write_split(&a.out, Split::Test, a.test, a.seed.wrapping_add(1000))?;
            let mut m = manifest_skeleton("gen-data", argv, start);
            m.seeds = vec![a.seed];
            m.outputs = vec![a.out.display().to_string()];
            write_manifest(&a.out.join("manifest.json"), &m)?;
            println!("wrote {} train / {} test samples to {}", a.train, a.test, a.out.display());
        }
        Command::TrainCnn(a) => {
            let train_set = load_split(&a.data, &a.format, Split::Train)?;
            let test_set = load_split(&a.data, &a.format, Split::Test)?;
            let stop = a.stop_acc.map(|t| (&test_set, t));
            let (weights, report) = cnn::train(
                &cnn::ModelConfig { seed: a.seed },
                &train_set,
                a.epochs,
                a.lr,
                a.batch,
                stop,
            )?;
            cnn::save_weights(&weights, &a.out)?;
            let (acc, _) = cnn::evaluate(&weights, &test_set)?;
            let mut m = manifest_skeleton("train-cnn", argv, start);
            m.seeds = vec![a.seed];
            m.inputs = vec![a.data.display().to_string()];
            m.outputs = vec![a.out.display().to_string()];
            m.resolved = serde_json::json!({
                "epochs_run": report.epochs_run,
                "test_accuracy": acc,
            });
            write_manifest(&PathBuf::from(format!("{}.manifest.json", a.out.display())), &m)?;
            println!("trained {} epochs, test accuracy {:.4}", report.epochs_run, acc);
        }
        Command::Sweep(a) => {
            let weights: ModelWeights<f64> = cnn::load_weights(&a.weights)?;
            let test_set = load_split(&a.data, &a.format, Split::Test)?;
            let mut class_set = test_set.filter_class(a.class);
            if a.count > 0 {
                class_set = class_set.take(a.count);
            }
            let kind = TransformKind::from_name(&a.kind)?;
            let grid = parse_grid(&a.grid)?;
            let result = sweep::run_sweep(&weights, &class_set, kind, &grid, a.seed)?;
            let curves = sweep::summarize_topk(&result, a.topk)?;
            sweep::export_result(&result, &curves, a.tau, &a.out)?;
            let threshold = sweep::extract_threshold(&result, a.tau)?;
            let mut m = manifest_skeleton("sweep", argv, start);
            m.seeds = vec![a.seed];
            m.inputs = vec![a.weights.display().to_string(), a.data.display().to_string()];
            m.outputs = vec![a.out.display().to_string()];
            m.resolved = serde_json::json!({ "threshold": threshold, "n_images": result.n_images });
            write_manifest(&a.out.join("manifest.json"), &m)?;
            println!(
                "swept {} over {} images of class {}; threshold {:?}",
                kind.name(),
                result.n_images,
                a.class,
                threshold
            );
        }
        Command::ItnTrain(a) => {
            let weights: ModelWeights<f64> = cnn::load_weights(&a.weights)?;
            let train_set = load_split(&a.data, &a.format, Split::Train)?;
            let acc_orig = match a.acc_orig.as_str() {
                "auto" => {
                    let probe = train_set.take(train_set.len().min(512));
                    let (clean, _) = cnn::evaluate(&weights, &probe)?;
                    clean - 0.02
                }
                v => v
                    .parse::<f64>()
                    .map_err(|_| Error::Usage(format!("acc-orig must be a number or 'auto', got '{}'", v)))?,
            };
            let cfg = ItnConfig {
                c_theta: a.c_theta,
                acc_orig,
                s_size: a.s_size,
                batch: a.batch,
                lr: a.lr,
                steps: a.steps,
                seed: a.seed,
                hidden: a.hidden,
                swap_k: a.swap_k,
            };
            let (color, spatial, log) = itn::itn_train(&cfg, &weights, &train_set)?;
            fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
            itn::save_blocks(&color, &spatial, &a.out.join("blocks.iltf"))?;
            let log_path = a.out.join("train_log.csv");
            fs::write(&log_path, itn::log_to_csv(&log)).map_err(|e| Error::io(&log_path, e))?;
            let clamped = log.iter().filter(|l| l.clamped).count();
            let mut m = manifest_skeleton("itn-train", argv, start);
            m.seeds = vec![a.seed];
            m.inputs = vec![a.weights.display().to_string(), a.data.display().to_string()];
            m.outputs = vec![a.out.display().to_string()];
            m.resolved = serde_json::json!({ "acc_orig": acc_orig, "clamped_steps": clamped });
            write_manifest(&a.out.join("manifest.json"), &m)?;
            println!(
                "trained {} steps (gate {:.4}, {} clamped); blocks at {}",
                log.len(),
                acc_orig,
                clamped,
                a.out.join("blocks.iltf").display()
            );
        }
        Command::ItnRender(a) => {
            let weights: ModelWeights<f64> = cnn::load_weights(&a.weights)?;
            let (color, spatial) = itn::load_blocks(&a.blocks)?;
            let images = load_split(&a.images, &a.format, Split::Test)?.take(a.count.max(1));
            let k_grid = parse_k_grid(&a.k_grid)?;
            itn::itn_render(&color, &spatial, &weights, &images, &k_grid, a.swap_k, &a.out)?;
            let mut m = manifest_skeleton("itn-render", argv, start);
            m.inputs = vec![
                a.weights.display().to_string(),
                a.blocks.display().to_string(),
                a.images.display().to_string(),
            ];
            m.outputs = vec![a.out.display().to_string()];
            write_manifest(&a.out.join("manifest.json"), &m)?;
            println!(
                "rendered {} control points × {} images to {}",
                k_grid.len(),
                images.len(),
                a.out.display()
            );
        }
        Command::Gradcheck => {
            let reports = verification::gradcheck_suite()?;
            let mut failed = 0;
            for r in &reports {
                let ok = r.passes(verification::SUITE_TOL);
                if !ok {
                    failed += 1;
                }
                println!(
                    "{} {:<42} max rel err {:.3e}",
                    if ok { "PASS" } else { "FAIL" },
                    r.op,
                    r.max_rel_error
                );
            }
            if failed > 0 {
                return Err(Error::Domain {
                    op: "gradcheck",
                    detail: format!("{} of {} checks failed", failed, reports.len()),
                });
            }
            println!("all {} gradient checks passed", reports.len());
        }
    }
    Ok(())
}

/// Maps an error to the documented process exit code: 1 for usage errors,
/// 2 for data or file problems.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Format { .. } | Error::Io { .. } | Error::Json(_) => 2,
        _ => 1,
    }
}
