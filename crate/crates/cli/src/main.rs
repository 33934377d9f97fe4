use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::bail;
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

mod commands;
mod report;

#[derive(Debug, Parser)]
#[command(name = "pmpcert", version, about = "Check candidate optimal controls against the Pontryagin maximum principle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the candidate and print its trajectory summary.
    Simulate(Common),
    /// Check admissibility of the candidate.
    Check(Common),
    /// Right derivatives of the endpoint map along needles.
    Sensitivity {
        #[command(flatten)]
        common: Common,
        /// Needle time followed by the control value, e.g. `--needle 0.5 1`; repeatable.
        #[arg(long, num_args = 2.., action = ArgAction::Append, allow_negative_numbers = true, required = true)]
        needle: Vec<f64>,
    },
    /// Refine needle packets until a certificate or a violation is found.
    Certify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        refine: Refine,
    },
    /// Print the fixed-time problem obtained by the change of time.
    Transform(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Problem file.
    problem: PathBuf,
    /// RK4 steps per unit of time.
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// Needle-row slack tolerance (relative to the row norm).
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    report: ReportFormat,
}

#[derive(Debug, Args)]
struct Refine {
    /// θ-grid sizes of the stages; each must divide the next.
    #[arg(long, default_value = "8,16,32", value_delimiter = ',')]
    stages: Vec<usize>,
    /// Most control samples used per stage.
    #[arg(long, default_value_t = 64)]
    u_cap: usize,
    /// Seed for the order in which control samples enter the stages.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Json,
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Simulate(c) => commands::simulate(&c.into()),
        Command::Check(c) => commands::check(&c.into()),
        Command::Sensitivity { common, needle } => commands::sensitivity(&common.into(), &needle),
        Command::Certify { common, refine } => {
            if refine.stages.is_empty() {
                bail!("--stages must list at least one θ-grid size");
            }
            if refine.u_cap == 0 {
                bail!("--u-cap must be positive");
            }
            commands::certify(&common.into(), &refine.stages, refine.u_cap, refine.seed)
        }
        Command::Transform(c) => commands::transform(&c.into()),
    }
}

impl From<Common> for commands::Config {
    fn from(c: Common) -> Self {
        commands::Config {
            problem: c.problem,
            steps: c.steps,
            slack_tol: c.tol,
            format: c.report,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
