use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gpam_lab::{run, run_verified, verify_dir, CliError, Command, RunConfig};

#[derive(Parser)]
#[command(name = "gpam-lab", version, about = "Laplace asymptotics laboratory for the generalised PAM on the 2-torus")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the Monte-Carlo seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the machine's parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Re-run into a scratch directory and require identical artifacts.
    #[arg(long, global = true)]
    verify: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Deterministic solve driven by `solve.zeta`.
    Solve,
    /// Minimise the phase functional.
    Minimize,
    /// Assemble the Hessian operators at the minimiser.
    Hessian,
    /// Leading coefficient of the expansion.
    A0,
    /// Renormalised-constant convergence over `study.deltas`.
    LambdaStudy,
    /// Monte-Carlo check of the expansion over `monte_carlo.epsilons`.
    Validate,
    /// Check manifests and digests in the output directory.
    Verify,
}

fn load(cli: &Cli) -> Result<Option<RunConfig>, CliError> {
    let Some(path) = &cli.config else { return Ok(None) };
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.monte_carlo.seed = seed;
    }
    Ok(Some(cfg))
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(CliError::Config("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let cfg = load(cli)?;
    let command = match cli.command {
        Cmd::Verify => {
            for line in verify_dir(cfg.as_ref(), &cli.out)? {
                println!("{line}");
            }
            return Ok(());
        }
        Cmd::Solve => Command::Solve,
        Cmd::Minimize => Command::Minimize,
        Cmd::Hessian => Command::Hessian,
        Cmd::A0 => Command::A0,
        Cmd::LambdaStudy => Command::LambdaStudy,
        Cmd::Validate => Command::Validate,
    };
    let cfg = cfg.ok_or_else(|| CliError::Config("--config is required".into()))?;
    let manifest = if cli.verify {
        run_verified(command, &cfg, &cli.out)?
    } else {
        run(command, &cfg, &cli.out)?
    };
    println!("{} {}", manifest.command, manifest.config_hash);
    for f in &manifest.files {
        println!("  {}  {}", f.sha256, f.name);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gpam-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
