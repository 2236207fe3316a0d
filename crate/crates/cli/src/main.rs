use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use chdbc::Error;
use chdbc_cli::commands::{self, EXIT_CONFIG};
use chdbc_cli::{exit_code, RunConfig};

#[derive(Parser)]
#[command(name = "chdbc", version, about = "Cahn-Hilliard solver with dynamic boundary conditions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for random initial profiles, overriding `initial.seed` (at most 2^63 - 1).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    seed: Option<u64>,
    /// Worker threads for sweeps and dependence studies.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Single trajectory at `solver.delta`.
    Run,
    /// Error against the delta = 0 limit over `solver.deltas`, with a rate fit.
    Sweep,
    /// Continuous dependence ratios over `depcheck.epsilons` and `depcheck.deltas`.
    Depcheck,
    /// Elliptic regularization of the initial data at `solver.delta`.
    PrepInit,
    /// Print the default configuration as TOML.
    PrintDefaults,
}

fn load(cli: &Cli) -> Result<RunConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.initial.seed = seed;
    }
    Ok(config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    }
    if let Command::PrintDefaults = cli.command {
        print!("{}", commands::cmd_print_defaults());
        return ExitCode::SUCCESS;
    }
    let config = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            let fallback = RunConfig::default();
            let dir = cli.out.clone().unwrap_or(fallback.output.dir.clone());
            commands::write_error(&dir, &e, &fallback);
            return ExitCode::from(exit_code(&Err(e)) as u8);
        }
    };
    let result = match cli.command {
        Command::Run => commands::cmd_run(&config),
        Command::Sweep => commands::cmd_sweep(&config),
        Command::Depcheck => commands::cmd_depcheck(&config),
        Command::PrepInit => commands::cmd_prep_init(&config),
        Command::PrintDefaults => unreachable!(),
    };
    let code = exit_code(&result);
    if let Err(e) = &result {
        eprintln!("error: {e}");
        commands::write_error(&config.output.dir, e, &config);
    }
    ExitCode::from(code as u8)
}
