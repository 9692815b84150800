//! `gcpo`: score, cluster, modulate and diagnose rollout groups from JSONL.
//!
//! Data goes to files only; progress and errors go to standard error.
//! Exit codes: 0 on success, 1 on invalid input or usage, 2 on I/O failure.

mod commands;
mod output;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gcpo_core::{DEFAULT_ALPHA_BASE, DEFAULT_ENTAILMENT_THRESHOLD, DEFAULT_EPSILON};

#[derive(Debug, Parser)]
#[command(
    name = "gcpo",
    version,
    about = "Rollout-group uncertainty, advantage modulation and variance diagnostics"
)]
struct Cli {
    /// Worker threads (default: all cores). Never changes results.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Print a machine-readable description of every subcommand and flag.
    #[arg(long)]
    help_json: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute uncertainty measures per group.
    Score(ScoreArgs),
    /// Greedy entailment clustering per group.
    Cluster(ClusterArgs),
    /// Group-normalized and modulated advantages per group.
    Modulate(ModulateArgs),
    /// Gradient-variance decomposition per group.
    Variance(VarianceArgs),
    /// Relate measures to gradient variance.
    Analyze(AnalyzeArgs),
    /// Run a synthetic experiment.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated subset of entropy,se,cd,bot,rd.
    #[arg(long, default_value = "se,cd,bot,rd")]
    pub measures: String,
    #[arg(long, default_value_t = DEFAULT_ENTAILMENT_THRESHOLD)]
    pub entailment_threshold: f64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ClusterArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Optional; when given, groups are validated against it.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ENTAILMENT_THRESHOLD)]
    pub entailment_threshold: f64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GeoArg {
    Cd,
    Bot,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineArg {
    None,
    Qhawkeye,
    Egspo,
    R2vpo,
}

#[derive(Debug, Args, Serialize)]
pub struct ModulateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value = "bot")]
    pub geo: GeoArg,
    #[arg(long, default_value_t = DEFAULT_ALPHA_BASE)]
    pub alpha: f64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_ENTAILMENT_THRESHOLD)]
    pub entailment_threshold: f64,
    /// Additionally emit the weights of an adapted baseline.
    #[arg(long, value_enum, default_value = "none")]
    pub baseline: BaselineArg,
    /// Damping strength of the r2vpo baseline.
    #[arg(long, default_value_t = 1.0)]
    pub r2vpo_lambda: f64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvantageField {
    Raw,
    Modulated,
}

#[derive(Debug, Args, Serialize)]
pub struct VarianceArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output of `modulate`, matched by query_id.
    #[arg(long)]
    pub advantages: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "raw")]
    pub advantage_field: AdvantageField,
    #[arg(long, default_value_t = DEFAULT_ENTAILMENT_THRESHOLD)]
    pub entailment_threshold: f64,
    /// Drop this many highest-variance groups from the output.
    #[arg(long, default_value_t = 0)]
    pub trim_top: usize,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    /// Output of `score`.
    #[arg(long)]
    pub scores: PathBuf,
    /// Output of `variance`.
    #[arg(long)]
    pub variance: PathBuf,
    #[arg(long, default_value_t = gcpo_core::diagnostics::DEFAULT_TRIM)]
    pub trim_top: usize,
    #[arg(long, default_value_t = gcpo_core::diagnostics::DEFAULT_REPLICATES)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = gcpo_core::diagnostics::DEFAULT_FOLDS)]
    pub folds: usize,
    #[arg(long, default_value_t = gcpo_core::diagnostics::DEFAULT_TOP_FRACTION)]
    pub top_fraction: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Exact permutation p-values when at most 12 samples remain.
    #[arg(long)]
    pub exact_p: bool,
    /// Report JSON; CSV side files are written next to it.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Anisotropic,
    Calibration,
    Training,
    Ablate,
    /// Write a synthetic dataset (groups.jsonl and manifest.json).
    Generate,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub experiment: Experiment,
    /// Experiment config; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: PathBuf,
}

fn help_json() -> serde_json::Value {
    fn describe(cmd: &clap::Command) -> serde_json::Value {
        let args: Vec<serde_json::Value> = cmd
            .get_arguments()
            .filter(|a| a.get_id() != "help" && a.get_id() != "version")
            .map(|a| {
                serde_json::json!({
                    "name": a.get_id().as_str(),
                    "long": a.get_long().map(|l| format!("--{l}")),
                    "required": a.is_required_set(),
                    "takes_value": a.get_action().takes_values(),
                    "default": a.get_default_values().iter().map(|v| v.to_string_lossy().into_owned()).collect::<Vec<_>>(),
                    "choices": a.get_possible_values().iter().map(|v| v.get_name().to_string()).collect::<Vec<_>>(),
                    "help": a.get_help().map(|h| h.to_string()),
                })
            })
            .collect();
        serde_json::json!({
            "name": cmd.get_name(),
            "about": cmd.get_about().map(|h| h.to_string()),
            "args": args,
            "subcommands": cmd.get_subcommands().map(describe).collect::<Vec<_>>(),
        })
    }
    let mut cmd = Cli::command();
    cmd.build();
    let mut doc = describe(&cmd);
    doc["version"] = env!("CARGO_PKG_VERSION").into();
    doc["exit_codes"] =
        serde_json::json!({"0": "success", "1": "invalid input or usage", "2": "I/O failure"});
    doc
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<gcpo_core::Error>() {
            if e.is_io() {
                return 2;
            }
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<serde_json::Error>() {
            if e.is_io() {
                return 2;
            }
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.help_json {
        println!(
            "{}",
            serde_json::to_string_pretty(&help_json()).expect("static json")
        );
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("error: a subcommand is required (see --help)");
        return ExitCode::from(1);
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &command {
        Command::Score(a) => commands::score(a),
        Command::Cluster(a) => commands::cluster(a),
        Command::Modulate(a) => commands::modulate(a),
        Command::Variance(a) => commands::variance(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Simulate(a) => simulate::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
