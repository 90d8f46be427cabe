mod layout;
mod opts;
mod stages;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use opts::{AttributeArgs, EvalArgs, MatchArgs, PipelineArgs, SynthArgs, TrainMetaArgs, XcArgs};

#[derive(Debug, Parser)]
#[command(
    name = "xckit",
    version,
    about = "Explanation concentration scoring for grid-input detectors"
)]
struct Cli {
    /// JSON object of flag values for the chosen subcommand; its entries
    /// override flags given on the command line.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-frame stages (default: all cores).
    #[arg(long, global = true, env = "XCKIT_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic frames, predictions, ground truth and the toy detector.
    Synth(SynthArgs),
    /// Attribution maps for the top class of each prediction.
    Attribute(AttributeArgs),
    /// XC feature table for every non-ignored prediction.
    Xc(XcArgs),
    /// Tag predictions as TP / FP / ignore.
    Match(MatchArgs),
    /// Per-feature AUROC / AUPR / AUPR_op table.
    Eval(EvalArgs),
    /// Cross-validated MLP meta-classifier.
    TrainMeta(TrainMetaArgs),
    /// synth -> attribute -> match -> xc -> eval -> train-meta in one output directory.
    Pipeline(PipelineArgs),
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Data(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn read_config(path: &Path) -> CliResult<Map<String, Value>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(usage(format!(
            "config {}: expected a JSON object",
            path.display()
        ))),
        Err(e) => Err(usage(format!("config {}: {e}", path.display()))),
    }
}

/// Overlay config entries onto parsed flags. Keys may use `-` or `_`.
/// Relative paths in `path_keys` resolve against the config's directory.
fn merge<T: Serialize + DeserializeOwned>(
    args: T,
    config: &Map<String, Value>,
    base: &Path,
    path_keys: &[&str],
) -> CliResult<T> {
    let Value::Object(mut fields) = serde_json::to_value(&args).expect("flags serialize") else {
        unreachable!("flag structs serialize to objects")
    };
    for (k, v) in config {
        let key = k.replace('_', "-");
        if key == "jobs" {
            continue;
        }
        if !fields.contains_key(&key) {
            return Err(usage(format!("config: unknown key {k:?}")));
        }
        let v = match v {
            Value::String(s) if path_keys.contains(&key.as_str()) && Path::new(s).is_relative() => {
                Value::String(base.join(s).to_string_lossy().into_owned())
            }
            other => other.clone(),
        };
        fields.insert(key, v);
    }
    serde_json::from_value(Value::Object(fields)).map_err(|e| usage(format!("config: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    let config = cli.config.as_deref().map(read_config).transpose()?;
    let jobs = match config.as_ref().and_then(|c| c.get("jobs")) {
        Some(v) => Some(
            v.as_u64()
                .ok_or_else(|| usage("config: jobs must be a positive integer"))?
                as usize,
        ),
        None => cli.jobs,
    };
    if let Some(n) = jobs {
        if n == 0 {
            return Err(usage("--jobs must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let base = cli
        .config
        .as_deref()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let empty = Map::new();
    let cfg = config.as_ref().unwrap_or(&empty);
    match cli.command {
        Command::Synth(a) => stages::synth(&merge(a, cfg, &base, &["spec"])?),
        Command::Attribute(a) => stages::attribute(&merge(a, cfg, &base, &["model", "frames"])?),
        Command::Xc(a) => stages::xc(&merge(a, cfg, &base, &["frames", "attribs"])?),
        Command::Match(a) => stages::match_frames(&merge(a, cfg, &base, &["preds", "gts"])?),
        Command::Eval(a) => stages::eval(&merge(a, cfg, &base, &["features"])?),
        Command::TrainMeta(a) => stages::train_meta(&merge(a, cfg, &base, &["features"])?),
        Command::Pipeline(a) => stages::pipeline(&merge(a, cfg, &base, &["spec"])?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
