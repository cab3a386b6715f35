use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use locpomdp_cli::{commands, CliError, Invocation, OUT_ENV};

/// Belief-space trajectory optimization for continuous POMDPs.
///
/// Exit status: 0 on success (including a solve that did not converge),
/// 1 on solver failure, 2 on configuration errors or a missing solve
/// report, 3 on I/O failure.
#[derive(Parser)]
#[command(name = "locpomdp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured problem and write the plan and policy.
    Solve(Args),
    /// Execute a solved policy over the configured seeds.
    Rollout(Args),
    /// Validate the configuration without solving.
    Check(Args),
}

#[derive(clap::Args)]
struct Args {
    /// JSON run configuration.
    config: PathBuf,
    /// Output directory (default: the config's `output_dir`, else
    /// `$LOCPOMDP_OUT/<config stem>`, else `locpomdp-out/<config stem>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// First rollout seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Continuation schedule, e.g. `10,1,0.3,0.05`.
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<f64>>,
    #[arg(long, env = OUT_ENV, hide = true)]
    out_root: Option<PathBuf>,
}

impl From<Args> for Invocation {
    fn from(a: Args) -> Self {
        Self {
            config: a.config,
            out: a.out,
            seed: a.seed,
            stages: a.stages,
            env_root: a.out_root,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<String, CliError> = match cli.command {
        Command::Solve(a) => commands::solve(&a.into()),
        Command::Rollout(a) => commands::rollout(&a.into()),
        Command::Check(a) => commands::check(&a.into()),
    };
    match result {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
