use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tipwarn_cli::commands::{self, Context};
use tipwarn_cli::config::ScenarioConfig;
use tipwarn_cli::CliError;

/// Fokker-Planck early-warning indicators for drifting SDEs.
#[derive(Parser)]
#[command(name = "tipwarn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Fokker-Planck indicator pipeline.
    Run(Common),
    /// Run the pipeline and a Monte Carlo ensemble, and compare them.
    Mc(Common),
    /// Scan the monsoon equilibrium curve.
    Bifurcation(Common),
    /// Run every point of the config's sweep block.
    Sweep(Common),
    /// Build the nonlinear quasi-static baseline table.
    Baseline(Common),
    /// Print the admissibility report.
    Check(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, env = "TIPWARN_OUT", default_value = "out")]
    out: PathBuf,
    /// Worker threads for parallel sections.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Fail when the grid violates the admissibility bounds.
    #[arg(long)]
    strict: bool,
    /// Overrides the ensemble seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn execute(command: Command) -> Result<(), CliError> {
    let (Command::Run(args)
    | Command::Mc(args)
    | Command::Bifurcation(args)
    | Command::Sweep(args)
    | Command::Baseline(args)
    | Command::Check(args)) = &command;
    if args.jobs == 0 {
        return Err(CliError::Validation("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build_global()
        .map_err(|e| CliError::Io(e.to_string()))?;
    let mut cfg = ScenarioConfig::load(&args.config)?;
    if let (Some(seed), Some(mc)) = (args.seed, cfg.mc.as_mut()) {
        mc.seed = seed;
    }
    let ctx = Context {
        out: args.out.clone(),
        strict: args.strict,
    };
    let written = match command {
        Command::Run(_) => commands::run(&cfg, &ctx)?,
        Command::Mc(_) => commands::mc(&cfg, &ctx)?,
        Command::Bifurcation(_) => commands::bifurcation(&cfg, &ctx)?,
        Command::Sweep(_) => commands::sweep(&cfg, &ctx)?,
        Command::Baseline(_) => commands::baseline(&cfg, &ctx)?,
        Command::Check(_) => {
            let report = commands::check(&cfg, &ctx)?;
            println!("{}: {}", cfg.name, report.summary());
            println!("{}", if report.passed() { "admissible" } else { "not admissible" });
            vec![]
        }
    };
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
