//! Command-line runner: load a scenario file, sweep its seeds under the
//! selected mechanisms, and emit CSV or JSONL rows.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use rctim::scenario::{emit, load_scenario, render, run_suite, OutputFormat};
use rctim::sim::Mechanism;

#[derive(Parser)]
#[command(name = "rctim", version, about = "Renegotiable contract-menu simulation runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a scenario file and emit one row per run
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario TOML file
    scenario: PathBuf,
    /// Replace the scenario's seed list with this single seed
    #[arg(long)]
    seed_override: Option<u64>,
    /// Output file; falls back to the scenario's `output`, then stdout
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    #[arg(long, value_enum, default_value_t = MechanismArg::Both)]
    mechanism: MechanismArg,
    /// Override the renegotiation partition
    #[arg(long)]
    partition: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Jsonl,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Jsonl => OutputFormat::Jsonl,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MechanismArg {
    Rctim,
    Static,
    Both,
}

impl MechanismArg {
    fn list(self) -> Vec<Mechanism> {
        match self {
            MechanismArg::Rctim => vec![Mechanism::Rctim],
            MechanismArg::Static => vec![Mechanism::Static],
            MechanismArg::Both => vec![Mechanism::Rctim, Mechanism::Static],
        }
    }
}

fn run_command(args: RunArgs) -> anyhow::Result<bool> {
    let mut scenario = load_scenario(&args.scenario)
        .with_context(|| format!("loading scenario {}", args.scenario.display()))?;
    if let Some(seed) = args.seed_override {
        scenario.seeds = vec![seed];
    }
    if let Some(partition) = args.partition {
        scenario.config.partition = partition;
        scenario.config.validate().context("applying --partition")?;
    }

    let suite = run_suite(&scenario, &args.mechanism.list());
    for note in &suite.failures {
        eprintln!("warning: {note}");
    }

    let format = OutputFormat::from(args.format);
    let out_path = args.out.or_else(|| scenario.output.as_ref().map(PathBuf::from));
    match out_path {
        Some(path) => {
            emit(&suite.rows, format, &path)
                .with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {} rows to {}", suite.rows.len(), path.display());
        }
        None => print!("{}", render(&suite.rows, format)),
    }
    Ok(suite.failures.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run_command(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
