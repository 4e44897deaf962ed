//! `deepknn` command-line tool.
//!
//! Exit codes: 0 success, 1 I/O or report failure, 2 configuration or flag
//! error, 3 data-format error, 4 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use deepknn::embedstore::{load_dataset, save_dataset, synth_gaussian, LabeledDataset};
use deepknn::knn::{Metric, VoteConfig};
use deepknn::noise::{label_error_rate, NoiseKind, NoiseSpec, TransitionSource};
use deepknn::pipeline::{self, PipelineConfig};
use deepknn::trainer::Classifier;
use deepknn::{ClassId, Error};
use log::info;
use serde::Serialize;

const THREADS_ENV: &str = "DEEPKNN_THREADS";

#[derive(Parser, Debug)]
#[command(name = "deepknn", version, about = "Noisy-label correction with iterative deep KNN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic Gaussian-cluster dataset.
    Synth(SynthArgs),
    /// Inject label noise into a dataset.
    Corrupt(CorruptArgs),
    /// Run the train/correct loop and write reports.
    Run(RunArgs),
    /// Score a saved model on a test set.
    Evaluate(EvaluateArgs),
    /// Recovery rate as a function of k after one training episode.
    Ksweep(KsweepArgs),
    /// Print a dataset's shape and label statistics.
    Inspect(InspectArgs),
}

#[derive(clap::Args, Debug, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 8.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum KindArg {
    Symmetric,
    Asymmetric,
}

#[derive(clap::Args, Debug, Serialize)]
struct CorruptArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long)]
    level: f64,
    /// Builtin set (mnist, cifar10) or comma-separated source:target pairs.
    #[arg(long)]
    transitions: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    report_dir: PathBuf,
}

#[derive(clap::Args, Debug, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Deep-KNN reference set; its current labels are used.
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long, default_value = "l2")]
    metric: String,
    /// JSON output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct KsweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "5,20,50,100,200")]
    k_values: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    eval_every: usize,
    /// CSV output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Debug, Serialize)]
struct InspectArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Also write the statistics as JSON to this file.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn echo<S: Serialize>(command: &str, resolved: &S) -> Result<()> {
    let text = serde_json::to_string(resolved)?;
    println!("{command} config: {text}");
    Ok(())
}

fn load(path: &Path) -> Result<LabeledDataset<f64>> {
    let ds: LabeledDataset<f32> = load_dataset(path)?;
    Ok(ds.cast())
}

fn write_json<S: Serialize>(value: &S, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn synth(args: SynthArgs) -> Result<()> {
    echo("synth", &args)?;
    let ds = synth_gaussian::<f32>(args.classes, args.per_class, args.dim, args.separation, args.seed)?;
    save_dataset(&ds, &args.out)?;
    println!("wrote {} samples ({} classes, d={}) to {}", ds.len(), ds.num_classes(), args.dim, args.out.display());
    Ok(())
}

fn corrupt(args: CorruptArgs) -> Result<()> {
    echo("corrupt", &args)?;
    let spec = NoiseSpec {
        kind: match args.kind {
            KindArg::Symmetric => NoiseKind::Symmetric,
            KindArg::Asymmetric => NoiseKind::Asymmetric,
        },
        level: args.level,
        transitions: args.transitions.clone().map(TransitionSource::Builtin),
        seed: args.seed,
    };
    spec.validate()?;
    let ds: LabeledDataset<f32> = load_dataset(&args.input)?;
    let noisy = spec.apply(ds.noisy_labels(), ds.num_classes())?;
    let flipped = label_error_rate(ds.noisy_labels(), &noisy)?;
    let out = ds.with_noisy_labels(noisy)?;
    save_dataset(&out, &args.out)?;
    println!("flipped {:.4} of {} labels; wrote {}", flipped, out.len(), args.out.display());
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = PipelineConfig::from_file(&args.config)?;
    println!("run config: {}", cfg.to_canonical_json());
    let train = load(&args.train)?;
    let test = args.test.as_deref().map(load).transpose()?;
    std::fs::create_dir_all(&args.report_dir)
        .with_context(|| format!("creating {}", args.report_dir.display()))?;
    let dir = &args.report_dir;
    let csv = dir.join("reports.csv");
    let summary = dir.join("summary.json");

    match pipeline::run(&cfg, &train, test.as_ref()) {
        Ok(outcome) => {
            for r in &outcome.reports {
                println!(
                    "episode {:>3}  gamma {:.4}  changed {:>6}  recovery {}",
                    r.episode,
                    r.gamma,
                    r.labels_changed,
                    r.label_recovery_rate.map_or("n/a".into(), |v| format!("{v:.4}"))
                );
            }
            pipeline::write_csv_reports(&outcome.reports, &csv)?;
            pipeline::write_json_summary(&cfg, &outcome.reports, Some(&outcome.final_metrics), None, &summary)?;
            let corrected: LabeledDataset<f32> = outcome.corrected.cast();
            save_dataset(&corrected, dir.join("corrected.emb"))?;
            write_json(&outcome.model, &dir.join("model.json"))?;
            println!("reports written to {}", dir.display());
            Ok(())
        }
        Err(failure) => {
            pipeline::write_csv_reports(&failure.reports, &csv)?;
            let message = failure.source.to_string();
            pipeline::write_json_summary(&cfg, &failure.reports, None, Some(&message), &summary)?;
            println!("partial reports written to {}", dir.display());
            Err(failure.source.into())
        }
    }
}

#[derive(Serialize)]
struct EvaluationOut {
    head_accuracy: f64,
    deep_knn_accuracy: f64,
    k: usize,
    metric: Metric,
    test_samples: usize,
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    echo("evaluate", &args)?;
    let metric: Metric = args.metric.parse()?;
    let text = std::fs::read_to_string(&args.model)
        .with_context(|| format!("reading {}", args.model.display()))?;
    let model: Classifier<f64> = serde_json::from_str(&text)
        .map_err(|e| Error::Format { offset: 0, message: format!("model file {}: {e}", args.model.display()) })?;
    let train = load(&args.train)?;
    let test = load(&args.test)?;
    let eval = pipeline::evaluate(&model, &train, &test, args.k, metric, &VoteConfig::default())?;
    let out = EvaluationOut {
        head_accuracy: eval.head_accuracy,
        deep_knn_accuracy: eval.deep_knn_accuracy,
        k: args.k,
        metric,
        test_samples: test.len(),
    };
    write_json(&out, &args.out)?;
    println!("head accuracy {:.4}, deep-KNN accuracy {:.4}", out.head_accuracy, out.deep_knn_accuracy);
    Ok(())
}

fn ksweep(args: KsweepArgs) -> Result<()> {
    let cfg = PipelineConfig::from_file(&args.config)?;
    println!("ksweep config: {}", cfg.to_canonical_json());
    println!("ksweep k values: {:?}, eval every {} epochs", args.k_values, args.eval_every);
    let train = load(&args.train)?;
    let rows = pipeline::k_sweep(&cfg, &train, &args.k_values, args.eval_every)?;
    pipeline::write_sweep_csv(&rows, &args.out)?;
    println!("{} rows written to {}", rows.len(), args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct Inspection {
    samples: usize,
    dim: usize,
    classes: usize,
    has_true_labels: bool,
    noisy_counts: Vec<usize>,
    current_counts: Vec<usize>,
    noisy_error_rate: Option<f64>,
    current_error_rate: Option<f64>,
}

fn counts(labels: &[ClassId], classes: usize) -> Vec<usize> {
    let mut out = vec![0; classes];
    for &c in labels {
        out[c as usize] += 1;
    }
    out
}

fn inspect(args: InspectArgs) -> Result<()> {
    echo("inspect", &args)?;
    let ds: LabeledDataset<f32> = load_dataset(&args.input)?;
    let c = ds.num_classes();
    let truth = ds.true_labels();
    let rate = |labels: &[ClassId]| truth.map(|t| label_error_rate(t, labels)).transpose();
    let info = Inspection {
        samples: ds.len(),
        dim: ds.embeddings().dim(),
        classes: c,
        has_true_labels: truth.is_some(),
        noisy_counts: counts(ds.noisy_labels(), c),
        current_counts: counts(ds.current_labels(), c),
        noisy_error_rate: rate(ds.noisy_labels())?,
        current_error_rate: rate(ds.current_labels())?,
    };
    println!("samples {}  dim {}  classes {}", info.samples, info.dim, info.classes);
    println!("noisy label counts   {:?}", info.noisy_counts);
    println!("current label counts {:?}", info.current_counts);
    match (info.noisy_error_rate, info.current_error_rate) {
        (Some(n), Some(cur)) => println!("error rate vs truth: noisy {n:.4}, current {cur:.4}"),
        _ => println!("no true labels"),
    }
    if let Some(path) = &args.json {
        write_json(&info, path)?;
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    info!("using {n} worker threads");
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::InvalidArgument(_)) => 2,
        Some(Error::Format { .. } | Error::DimensionMismatch { .. }) => 3,
        Some(Error::Numeric(_)) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Synth(a) => synth(a),
        Command::Corrupt(a) => corrupt(a),
        Command::Run(a) => run(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Ksweep(a) => ksweep(a),
        Command::Inspect(a) => inspect(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
