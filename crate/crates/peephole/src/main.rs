//! `peephole` — generate CNN skeletons, label them, train the accuracy
//! predictor, and query it.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/model error, 3 numeric
//! failure (gradient check above tolerance, non-finite loss).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use peephole::generator::{generate_archs, SkeletonConfig};
use peephole::harness::{
    evaluate, export_features, label_dataset, read_dataset, train, write_dataset, TrainConfig,
};
use peephole::layercode::{encode_network, NetworkArch};
use peephole::predictor::{full_grad_check, load_checkpoint, save_checkpoint, PeepholeHyper};

#[derive(Parser)]
#[command(name = "peephole", version, about = "Train-free CNN accuracy prediction")]
struct Cli {
    /// JSON config file; explicit flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample random CNN architectures to a JSONL file
    Generate(GenerateArgs),
    /// Attach synthetic accuracy curves to an architecture JSONL file
    Label(LabelArgs),
    /// Train the predictor on a labeled dataset
    Train(TrainArgs),
    /// Predict final accuracy for one architecture JSON file
    Predict(PredictArgs),
    /// Rank architectures in a JSONL file by predicted accuracy
    Rank(RankArgs),
    /// Score a trained model against a labeled dataset
    Eval(EvalArgs),
    /// Export LSTM structural features as CSV
    Features(FeaturesArgs),
    /// Verify analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
}

/// Optional file-level defaults. Flags beat file values; file values beat
/// built-in defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    generate: Option<serde_json::Value>,
    #[serde(default)]
    train: Option<serde_json::Value>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of architectures
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    stages: Option<u32>,
    #[arg(long)]
    blocks_per_stage: Option<u32>,
    #[arg(long)]
    stem_channels: Option<u32>,
    /// Output JSONL path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LabelArgs {
    /// Architecture JSONL produced by `generate`
    #[arg(long)]
    archs: PathBuf,
    /// Total training epochs T the synthetic curves cover
    #[arg(long, default_value_t = 60)]
    epochs: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled dataset JSONL
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write per-epoch stats as JSON
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Trained checkpoint
    #[arg(long)]
    model: PathBuf,
    /// Single architecture as JSON
    #[arg(long)]
    arch: PathBuf,
    /// Epoch index t to predict accuracy at
    #[arg(long)]
    epoch: usize,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    model: PathBuf,
    /// Architecture JSONL
    #[arg(long)]
    archs: PathBuf,
    #[arg(long)]
    epoch: usize,
    /// Print only the best k entries
    #[arg(long)]
    top: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Labeled dataset JSONL
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long)]
    model: PathBuf,
    /// Architecture JSONL
    #[arg(long)]
    archs: PathBuf,
    /// CSV output path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Sequence lengths to exercise
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5, 30])]
    seq_lens: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

enum CliError {
    Data(String),
    Numeric(String),
}

impl<E: std::fmt::Display> From<E> for CliError {
    fn from(e: E) -> CliError {
        CliError::Data(e.to_string())
    }
}

fn read_archs_jsonl(path: &Path) -> Result<Vec<NetworkArch>, CliError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            NetworkArch::from_json(l)
                .map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?)
        }
    }
}

/// Merge order: built-in defaults, then config-file section, then flags.
fn merge_section<T: serde::de::DeserializeOwned + serde::Serialize>(
    base: T,
    section: &Option<serde_json::Value>,
) -> Result<T, CliError> {
    match section {
        None => Ok(base),
        Some(v) => {
            let mut merged = serde_json::to_value(&base).expect("serializable config");
            if let (Some(obj), Some(over)) = (merged.as_object_mut(), v.as_object()) {
                for (k, val) in over {
                    if !obj.contains_key(k) {
                        return Err(CliError::Data(format!("unknown config key `{k}`")));
                    }
                    obj.insert(k.clone(), val.clone());
                }
            } else {
                return Err(CliError::Data("config sections must be JSON objects".into()));
            }
            Ok(serde_json::from_value(merged)?)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file_cfg = load_file_config(cli.config.as_deref())?;
    match cli.command {
        Command::Generate(a) => {
            let mut cfg: SkeletonConfig =
                merge_section(SkeletonConfig::default(), &file_cfg.generate)?;
            if let Some(s) = a.seed {
                cfg.rng_seed = s;
            }
            if let Some(s) = a.stages {
                cfg.stages = s;
            }
            if let Some(b) = a.blocks_per_stage {
                cfg.blocks_per_stage = b;
            }
            if let Some(c) = a.stem_channels {
                cfg.stem_channels = c;
            }
            let count = a.count.unwrap_or(100);
            let archs = generate_archs(count, &cfg)?;
            let lines: Vec<String> = archs.iter().map(|x| x.to_json()).collect();
            std::fs::write(&a.out, lines.join("\n") + "\n")?;
            eprintln!("wrote {} architectures to {}", archs.len(), a.out.display());
        }
        Command::Label(a) => {
            let archs = read_archs_jsonl(&a.archs)?;
            let samples = label_dataset(&archs, a.epochs)?;
            write_dataset(&samples, &a.out)?;
            eprintln!("labeled {} samples to {}", samples.len(), a.out.display());
        }
        Command::Train(a) => {
            let data = read_dataset(&a.data)?;
            let mut tc: TrainConfig = merge_section(TrainConfig::default(), &file_cfg.train)?;
            if let Some(e) = a.epochs {
                tc.epochs = e;
            }
            if let Some(b) = a.batch_size {
                tc.batch_size = b;
            }
            if let Some(lr) = a.lr {
                tc.lr = lr;
            }
            if let Some(s) = a.seed {
                tc.seed = s;
            }
            let (params, history) = train(&tc, &PeepholeHyper::default(), &data)
                .map_err(|e| match e {
                    peephole::harness::HarnessError::NonFiniteLoss { .. } => {
                        CliError::Numeric(e.to_string())
                    }
                    other => CliError::Data(other.to_string()),
                })?;
            save_checkpoint(&params, &a.out)?;
            if let Some(h) = a.history {
                std::fs::write(&h, serde_json::to_string_pretty(&history)?)?;
            }
            eprintln!(
                "trained {} epochs, best val mse {:.6} at epoch {}; saved {}",
                history.epochs.len(),
                history.best_val_mse,
                history.best_epoch,
                a.out.display()
            );
        }
        Command::Predict(a) => {
            let params = load_checkpoint(&a.model)?;
            let arch = NetworkArch::from_json(&std::fs::read_to_string(&a.arch)?)?;
            let codes = encode_network(&arch)?;
            let y = peephole::predictor::predict(&params, &codes, a.epoch)?;
            println!("{y}");
        }
        Command::Rank(a) => {
            let params = load_checkpoint(&a.model)?;
            let archs = read_archs_jsonl(&a.archs)?;
            let mut scored: Vec<(usize, f64)> = Vec::with_capacity(archs.len());
            for (i, arch) in archs.iter().enumerate() {
                let codes = encode_network(arch)?;
                scored.push((i, peephole::predictor::predict(&params, &codes, a.epoch)?));
            }
            // descending by score; input order breaks ties
            scored.sort_by(|u, v| v.1.partial_cmp(&u.1).unwrap().then(u.0.cmp(&v.0)));
            let k = a.top.unwrap_or(scored.len()).min(scored.len());
            for (i, y) in &scored[..k] {
                println!("{i}\t{y}");
            }
        }
        Command::Eval(a) => {
            let params = load_checkpoint(&a.model)?;
            let data = read_dataset(&a.data)?;
            let m = evaluate(&params, &data)?;
            println!(
                "{}",
                serde_json::json!({"mse": m.mse, "tau": m.tau, "r2": m.r2, "n": data.len()})
            );
        }
        Command::Features(a) => {
            let params = load_checkpoint(&a.model)?;
            let archs = read_archs_jsonl(&a.archs)?;
            export_features(&params, &archs, &a.out)?;
            eprintln!("wrote {} feature rows to {}", archs.len(), a.out.display());
        }
        Command::Gradcheck(a) => {
            // small widths so every partial derivative can be checked
            let hyper = PeepholeHyper {
                hidden: 16,
                mlp_hidden: 32,
                t_max: 10,
                ..PeepholeHyper::default()
            };
            let mut worst = 0.0f64;
            for &len in &a.seq_lens {
                for &seed in &a.seeds {
                    let rel = full_grad_check(&hyper, seed, len, a.eps)?;
                    println!("seq_len {len:3} seed {seed}: max rel error {rel:.3e}");
                    worst = worst.max(rel);
                }
            }
            if worst >= a.tolerance {
                return Err(CliError::Numeric(format!(
                    "max relative error {worst:.3e} exceeds tolerance {:.1e}",
                    a.tolerance
                )));
            }
            println!("gradient check passed (worst {worst:.3e} < {:.1e})", a.tolerance);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version as "errors" with success status
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
