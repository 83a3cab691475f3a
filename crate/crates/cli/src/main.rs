use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use repsim::predictions::{self, ClassSet, FactorModelId, PredictionEnsemble};
use repsim::probes::{self, ProbeConfig};
use repsim::{blockstruct, io, spectral, CkaMode, Estimator, LayerSet, MinibatchParams};
use serde::Serialize;

/// Representation similarity analysis: CKA heatmaps, spectra, block
/// detection, linear probes and ensemble prediction statistics.
#[derive(Parser, Debug)]
#[command(name = "repsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Layer-by-layer CKA heatmap of one dump (or two, cross-model).
    Heatmap(HeatmapArgs),
    /// Variance explained, first-PC cosine map and first-PC removal.
    Spectral(SpectralArgs),
    /// Detect block structure in a heatmap CSV.
    Blocks(BlocksArgs),
    /// Linear probe accuracy for every layer.
    Probe(ProbeArgs),
    /// Compare two groups of model predictions.
    Preds {
        #[command(subcommand)]
        command: PredsCommand,
    },
    /// Nonzero-activation statistics per layer.
    Sparsity(SparsityArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Full,
    Minibatch,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum EstimatorArg {
    Biased,
    Unbiased,
}

#[derive(Args, Debug)]
struct HeatmapArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    input_b: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "minibatch")]
    mode: ModeArg,
    /// Only `unbiased` is available in minibatch mode.
    #[arg(long, value_enum, default_value = "unbiased")]
    estimator: EstimatorArg,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Heatmap CSV.
    #[arg(long)]
    out: PathBuf,
    /// Grayscale P5 pixmap.
    #[arg(long)]
    image: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SpectralArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    /// Activation dump with each layer's first PC projected out.
    #[arg(long)]
    remove_pc1_out: Option<PathBuf>,
    /// CSV of |cos| between layers' first PCs.
    #[arg(long)]
    cosine_map_out: Option<PathBuf>,
    /// Variance summary JSON; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BlocksArgs {
    #[arg(long)]
    heatmap: PathBuf,
    #[arg(long, default_value_t = blockstruct::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = blockstruct::DEFAULT_MIN_SIZE)]
    min_size: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ProbeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Prediction dump whose true labels are the probe targets.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long, default_value_t = ProbeConfig::default().train_fraction)]
    train_fraction: f64,
    #[arg(long, default_value_t = ProbeConfig::default().iterations)]
    iterations: usize,
    #[arg(long, default_value_t = ProbeConfig::default().l2)]
    l2: f64,
    #[arg(long, default_value_t = ProbeConfig::default().step_size)]
    step_size: f64,
    /// Accuracy CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredsArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum PredsCommand {
    /// Per-class and per-class-set Welch tests with Holm–Šidák adjustment.
    Compare {
        #[command(flatten)]
        files: PredsArgs,
        /// JSON list of `{"name": ..., "classes": [...]}`.
        #[arg(long)]
        class_sets: Option<PathBuf>,
    },
    /// Nested example / group / class logistic models and pseudo-R².
    FactorModels {
        #[command(flatten)]
        files: PredsArgs,
    },
}

#[derive(Args, Debug)]
struct SparsityArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_output(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn write_json(out: Option<&Path>, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_output(out, &text)
}

fn load_layers(path: &Path) -> anyhow::Result<LayerSet> {
    io::read_activation_dump(path).with_context(|| format!("reading {}", path.display()))
}

fn load_ensemble(path: &Path) -> anyhow::Result<PredictionEnsemble> {
    let dump = io::read_prediction_dump(path).with_context(|| format!("reading {}", path.display()))?;
    let group = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
    Ok(dump.into_ensemble(group)?)
}

fn heatmap(args: &HeatmapArgs) -> anyhow::Result<()> {
    let mode = match args.mode {
        ModeArg::Full => CkaMode::Full {
            estimator: match args.estimator {
                EstimatorArg::Biased => Estimator::Biased,
                EstimatorArg::Unbiased => Estimator::Unbiased,
            },
        },
        ModeArg::Minibatch => CkaMode::Minibatch(MinibatchParams {
            batch_size: args.batch_size,
            epochs: args.epochs,
            seed: args.seed,
        }),
    };
    let a = load_layers(&args.input)?;
    let b = args.input_b.as_deref().map(load_layers).transpose()?;
    let h = repsim::heatmap(&a, b.as_ref(), &mode)?;
    io::emit_heatmap(&h, &args.out, args.image.as_deref())?;
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct LayerSpectrum {
    layer: String,
    eigenvalues: Vec<f64>,
    variance_fractions: Vec<f64>,
}

fn spectral_cmd(args: &SpectralArgs) -> anyhow::Result<()> {
    let layers = load_layers(&args.input)?;
    let summaries = spectral::summarize_all(&layers, Some(args.top_k))?;
    let report: Vec<LayerSpectrum> = summaries
        .into_iter()
        .map(|s| LayerSpectrum {
            layer: s.layer_name,
            eigenvalues: s.eigenvalues,
            variance_fractions: s.variance_fractions,
        })
        .collect();
    if let Some(p) = &args.cosine_map_out {
        io::write_heatmap_csv(&spectral::first_pc_cosine_map(&layers)?, p)?;
    }
    if let Some(p) = &args.remove_pc1_out {
        io::write_activation_dump(&layers.try_map(spectral::remove_first_pc)?, p)?;
    }
    write_json(args.out.as_deref(), &report)
}

fn blocks(args: &BlocksArgs) -> anyhow::Result<()> {
    let h = io::read_heatmap_csv(&args.heatmap).with_context(|| format!("reading {}", args.heatmap.display()))?;
    let report = blockstruct::detect_blocks(&h, args.threshold, args.min_size)?;
    write_json(args.out.as_deref(), &report)
}

fn probe(args: &ProbeArgs) -> anyhow::Result<()> {
    let layers = load_layers(&args.input)?;
    let dump = io::read_prediction_dump(&args.labels).with_context(|| format!("reading {}", args.labels.display()))?;
    if dump.example_count() != layers.example_count() {
        bail!(
            "{} labels for {} examples",
            dump.example_count(),
            layers.example_count()
        );
    }
    let labels: Vec<usize> = dump.true_labels.iter().map(|&l| usize::from(l)).collect();
    let config = ProbeConfig {
        seed: args.split_seed,
        train_fraction: args.train_fraction,
        iterations: args.iterations,
        l2: args.l2,
        step_size: args.step_size,
        ..ProbeConfig::default()
    };
    let results = probes::probe_curve(&layers, &labels, &config)?;
    let mut text = String::from("layer,position,train_accuracy,test_accuracy\n");
    for r in &results {
        text.push_str(&format!(
            "{},{},{},{}\n",
            csv_field(&r.layer_name),
            r.position.as_str(),
            r.train_accuracy,
            r.test_accuracy
        ));
    }
    write_output(args.out.as_deref(), &text)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct FactorReport {
    fits: Vec<predictions::FactorModelFit>,
    pseudo_r_squared: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pseudo_r_squared_error: Option<String>,
}

fn preds(command: &PredsCommand) -> anyhow::Result<()> {
    match command {
        PredsCommand::Compare { files, class_sets } => {
            let a = load_ensemble(&files.a)?;
            let b = load_ensemble(&files.b)?;
            let sets: Vec<ClassSet> = match class_sets {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => Vec::new(),
            };
            let cmp = predictions::class_level_comparison(&a, &b, &sets)?;
            write_json(files.out.as_deref(), &cmp)
        }
        PredsCommand::FactorModels { files } => {
            let a = load_ensemble(&files.a)?;
            let b = load_ensemble(&files.b)?;
            let fits = [FactorModelId::A, FactorModelId::B, FactorModelId::C]
                .into_iter()
                .map(|id| predictions::fit_factor_model(&a, &b, id))
                .collect::<repsim::Result<Vec<_>>>()?;
            let (pseudo_r_squared, pseudo_r_squared_error) =
                match predictions::pseudo_r_squared(&fits[0], &fits[1], &fits[2]) {
                    Ok(v) => (Some(v), None),
                    Err(e) => (None, Some(e.to_string())),
                };
            write_json(
                files.out.as_deref(),
                &FactorReport {
                    fits,
                    pseudo_r_squared,
                    pseudo_r_squared_error,
                },
            )
        }
    }
}

#[derive(Serialize)]
struct LayerSparsity {
    layer: String,
    #[serde(flatten)]
    stats: spectral::SparsityStats,
}

fn sparsity(args: &SparsityArgs) -> anyhow::Result<()> {
    let layers = load_layers(&args.input)?;
    let report: Vec<LayerSparsity> = layers
        .iter()
        .map(|l| LayerSparsity {
            layer: l.name.clone(),
            stats: spectral::relu_sparsity(&l.activations),
        })
        .collect();
    write_json(args.out.as_deref(), &report)
}

/// Argument combinations clap cannot express.
fn check_usage(cli: &Cli) -> Result<(), String> {
    if let Command::Heatmap(h) = &cli.command {
        if h.mode == ModeArg::Minibatch && h.estimator == EstimatorArg::Biased {
            return Err("--estimator biased requires --mode full".into());
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Heatmap(a) => heatmap(a),
        Command::Spectral(a) => spectral_cmd(a),
        Command::Blocks(a) => blocks(a),
        Command::Probe(a) => probe(a),
        Command::Preds { command } => preds(command),
        Command::Sparsity(a) => sparsity(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(msg) = check_usage(&cli) {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
