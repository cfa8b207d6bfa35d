use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use dlgan::data::{load_csv, make_windows, normalize, prepare, read_windows_csv, write_windows_csv, LoadOptions};
use dlgan::evaluation::{evaluate, tsne_export, write_scatter_png, ProbeSettings, TsneSettings};
use dlgan::sine::{make_sine, write_series_csv, DEFAULT_FEATURES, DEFAULT_LENGTH};
use dlgan::trainer::{synthesize, LossRecord};
use dlgan::{Ablation, Checkpoint, Error, Trainer, TrainingConfig};
use serde::Serialize;
use sha2::{Digest, Sha256};

const CHECKPOINT_FILE: &str = "model.dlgan";
const LOSS_LOG_FILE: &str = "losses.jsonl";
const MANIFEST_FILE: &str = "manifest.json";
const REPORT_FILE: &str = "metrics.json";
const TSNE_CSV_FILE: &str = "tsne.csv";
const TSNE_PNG_FILE: &str = "tsne.png";

#[derive(Parser)]
#[command(name = "dlgan", version, about = "Train, sample and evaluate a dual-layer time-series GAN")]
struct Cli {
    /// Print the default configuration (or the one given by --config) and exit.
    #[arg(long)]
    print_config: bool,

    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct SeedArg {
    /// Random seed; falls back to DLGAN_SEED.
    #[arg(long, env = "DLGAN_SEED")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run all three training phases and write a checkpoint, loss log and manifest.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_ablation)]
        ablation: Option<Ablation>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Write synthetic windows in original units as CSV.
    Synthesize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Compute discriminative and predictive scores plus a t-SNE export.
    Evaluate {
        #[command(flatten)]
        source: SynthSource,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Windows to synthesize when evaluating a checkpoint (default: one per real window).
        #[arg(long)]
        n: Option<usize>,
        /// Also write a scatter image of the embedding.
        #[arg(long)]
        png: bool,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Only the t-SNE export.
    Visualize {
        #[command(flatten)]
        source: SynthSource,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        png: bool,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Write a multivariate sine-wave dataset.
    MakeSine {
        #[arg(long)]
        out: PathBuf,
        /// Number of rows.
        #[arg(long, default_value_t = DEFAULT_LENGTH)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_FEATURES)]
        features: usize,
        #[command(flatten)]
        seed: SeedArg,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct SynthSource {
    /// Trained checkpoint to sample from.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// CSV of synthetic windows as written by `synthesize`.
    #[arg(long)]
    synth: Option<PathBuf>,
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse()
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool_version: &'static str,
    command: Vec<String>,
    started_unix: u64,
    dataset_path: String,
    dataset_sha256: String,
    config: &'a TrainingConfig,
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn load_config(path: Option<&Path>) -> anyhow::Result<TrainingConfig> {
    match path {
        Some(p) => {
            if !p.exists() {
                return Err(Error::FileNotFound(p.to_path_buf()).into());
            }
            Ok(TrainingConfig::from_toml(&fs::read_to_string(p)?)?)
        }
        None => Ok(TrainingConfig::default()),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn train(
    mut config: TrainingConfig,
    data: &Path,
    out: &Path,
    ablation: Option<Ablation>,
    seed: Option<u64>,
) -> anyhow::Result<()> {
    if let Some(a) = ablation {
        config.set_ablation(a);
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    let raw = load_csv(data, &LoadOptions::default())?;
    let resolved = config.resolved(raw.features())?;
    let (stats, windows) = prepare(&raw, resolved.window_len, resolved.stride)?;
    fs::create_dir_all(out)?;

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        command: std::env::args().collect(),
        started_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        dataset_path: data.display().to_string(),
        dataset_sha256: sha256_file(data)?,
        config: &resolved,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;

    let mut trainer = Trainer::new(&resolved, stats, raw.feature_names.clone())?;
    let mut log = BufWriter::new(File::create(out.join(LOSS_LOG_FILE))?);
    let mut write_error = None;
    let result = trainer.train(&windows, &mut |r: &LossRecord| {
        eprintln!("{}", r.to_json_line());
        if let Err(e) = writeln!(log, "{}", r.to_json_line()) {
            write_error.get_or_insert(e);
        }
    });
    log.flush()?;
    if let Some(e) = write_error {
        return Err(e.into());
    }
    if let Err(e) = result {
        // Keep the last good parameters for inspection.
        trainer.state.save(out.join(CHECKPOINT_FILE))?;
        return Err(e.into());
    }
    trainer.state.save(out.join(CHECKPOINT_FILE))?;
    eprintln!("wrote {}", out.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn cmd_synthesize(checkpoint: &Path, n: usize, out: &Path, seed: u64) -> anyhow::Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let synth = synthesize(&ck, n, seed)?;
    write_windows_csv(out, &ck.feature_names, &synth.values)?;
    Ok(())
}

struct EvalInputs {
    dataset: String,
    real: Vec<dlgan::tensor::Tensor>,
    synth: Vec<dlgan::tensor::Tensor>,
    ablation: Ablation,
}

/// Normalized real and synthetic windows on a common scale.
fn eval_inputs(source: &SynthSource, data: &Path, n: Option<usize>, seed: u64) -> anyhow::Result<EvalInputs> {
    if let Some(path) = &source.checkpoint {
        let ck = Checkpoint::load(path)?;
        let options = LoadOptions {
            columns: Some(ck.feature_names.clone()),
            ..LoadOptions::default()
        };
        let raw = load_csv(data, &options)?;
        let real: Vec<_> = make_windows(&normalize(&raw, &ck.stats)?, ck.config.window_len, ck.config.stride)?
            .into_iter()
            .map(|w| w.values)
            .collect();
        let synth = synthesize(&ck, n.unwrap_or(real.len()), seed)?.normalized;
        return Ok(EvalInputs {
            dataset: data.display().to_string(),
            real,
            synth,
            ablation: ck.config.ablation(),
        });
    }
    let Some(path) = &source.synth else {
        bail!("either --checkpoint or --synth is required");
    };
    let (names, synth_values) = read_windows_csv(path)?;
    let Some(first) = synth_values.first() else {
        return Err(Error::InsufficientData { need: 1, have: 0 }.into());
    };
    let t = first.dim(0);
    let raw = load_csv(data, &LoadOptions::default())?;
    if raw.features() != names.len() {
        return Err(Error::FeatureCountMismatch {
            expected: raw.features(),
            found: names.len(),
        }
        .into());
    }
    let (stats, windows) = prepare(&raw, t, 1)?;
    let synth = synth_values
        .iter()
        .map(|w| {
            let series = dlgan::data::RawSeries::new(w.clone(), names.clone(), path.display().to_string());
            Ok(normalize(&series, &stats)?.values)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut synth = synth;
    if let Some(n) = n {
        synth.truncate(n);
    }
    Ok(EvalInputs {
        dataset: data.display().to_string(),
        real: windows.into_iter().map(|w| w.values).collect(),
        synth,
        ablation: Ablation::Full,
    })
}

fn export_tsne(inputs: &EvalInputs, out: &Path, png: bool, seed: u64) -> anyhow::Result<PathBuf> {
    let csv_path = out.join(TSNE_CSV_FILE);
    let points = tsne_export(&inputs.real, &inputs.synth, &csv_path, seed, &TsneSettings::default())?;
    if png {
        write_scatter_png(&points, out.join(TSNE_PNG_FILE))?;
    }
    Ok(csv_path)
}

fn cmd_evaluate(source: &SynthSource, data: &Path, out: &Path, n: Option<usize>, png: bool, seed: u64) -> anyhow::Result<()> {
    let inputs = eval_inputs(source, data, n, seed)?;
    fs::create_dir_all(out)?;
    let mut report = evaluate(&inputs.dataset, &inputs.real, &inputs.synth, seed, &ProbeSettings::default())?;
    report.no_extractor = matches!(inputs.ablation, Ablation::NoExtractor | Ablation::All);
    report.no_reconstructor = matches!(inputs.ablation, Ablation::NoReconstructor | Ablation::All);
    let tsne = export_tsne(&inputs, out, png, seed)?;
    report.tsne_path = Some(tsne.display().to_string());
    write_json(&out.join(REPORT_FILE), &report)?;
    println!(
        "discriminative {:.4} ± {:.4}  predictive {:.4} ± {:.4}  (baseline {:.4})",
        report.discriminative_score.mean,
        report.discriminative_score.std,
        report.predictive_score.mean,
        report.predictive_score.std,
        report.predictive_baseline.mean
    );
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = load_config(cli.config.as_deref())?;
    if cli.print_config {
        print!("{}", config.to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        bail!("no command given; see --help");
    };
    match command {
        Command::Train {
            data,
            out,
            ablation,
            seed,
        } => train(config, &data, &out, ablation, seed.seed),
        Command::Synthesize {
            checkpoint,
            n,
            out,
            seed,
        } => cmd_synthesize(&checkpoint, n, &out, seed.seed.unwrap_or(config.seed)),
        Command::Evaluate {
            source,
            data,
            out,
            n,
            png,
            seed,
        } => cmd_evaluate(&source, &data, &out, n, png, seed.seed.unwrap_or(config.seed)),
        Command::Visualize {
            source,
            data,
            out,
            n,
            png,
            seed,
        } => {
            let seed = seed.seed.unwrap_or(config.seed);
            let inputs = eval_inputs(&source, &data, n, seed)?;
            fs::create_dir_all(&out)?;
            export_tsne(&inputs, &out, png, seed)?;
            Ok(())
        }
        Command::MakeSine {
            out,
            n,
            features,
            seed,
        } => {
            if features == 0 {
                return Err(Error::ConfigInvalid {
                    field: "features",
                    reason: "must be at least 1".into(),
                }
                .into());
            }
            let series = make_sine(n, features, seed.seed.unwrap_or(config.seed));
            write_series_csv(&series, &out)?;
            Ok(())
        }
    }
}

/// 3: invalid configuration, 4: data errors, 5: divergence, 6: checkpoint
/// errors, 1: anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::ConfigInvalid { .. }) => 3,
        Some(
            Error::FileNotFound(_)
            | Error::Csv(_)
            | Error::NoNumericColumns(_)
            | Error::EmptyAfterCleaning { .. }
            | Error::FeatureCountMismatch { .. }
            | Error::SeriesTooShort { .. }
            | Error::InsufficientData { .. }
            | Error::Format(_),
        ) => 4,
        Some(Error::DivergenceDetected { .. }) => 5,
        Some(Error::UntrainedCheckpoint | Error::VersionMismatch { .. } | Error::CorruptFile(_)) => 6,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
