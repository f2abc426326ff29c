use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use oeduu_cli::pipeline::{self, Methods, Problem, Runner};
use oeduu_cli::{CliError, CliResult, ExperimentConfig};

#[derive(Parser)]
#[command(name = "oeduu", version, about = "Sensor placement under model uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML); defaults to the built-in desk problem.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Restricts `optimize` to one design family, or adds the exact-operator
    /// check after it.
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample, sketch and reduce the SAA forward maps.
    BuildRom,
    /// Optimize designs over the gamma grid from the archived surrogate.
    Optimize,
    /// Evaluate the designs on held-out samples.
    Evaluate,
    /// Build, optimize, evaluate and validate.
    RunAll,
    /// Compare surrogate and exact-operator objectives of the designs.
    Validate,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Oeduu,
    Deterministic,
    Validate,
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(cli)?;
    if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .map_err(|e| CliError::Config(format!("workers: {e}")))?;
    }
    let out = &cli.out;
    match cli.command {
        Command::BuildRom => {
            let problem = Problem::new(&cfg)?;
            let rom = pipeline::build_rom_phase(&mut Runner::new(out, &cfg)?, &problem)?;
            for b in &rom.basis_sizes {
                println!("mu {:e} clusters {} cluster {}: k = {} ({} samples)", b.mu, b.clusters, b.cluster, b.k, b.members);
            }
        }
        Command::Optimize => {
            let methods = match cli.mode {
                Some(Mode::Oeduu) => Methods { oeduu: true, deterministic: false },
                Some(Mode::Deterministic) => Methods { oeduu: false, deterministic: true },
                _ => Methods::BOTH,
            };
            let mut runner = Runner::new(out, &cfg)?;
            let set = pipeline::optimize_phase(&mut runner, &cfg, methods)?;
            println!("{} designs written", set.designs.len());
            if matches!(cli.mode, Some(Mode::Validate)) {
                print_validation(&pipeline::validate_phase(&mut runner, &Problem::new(&cfg)?)?);
            }
        }
        Command::Evaluate => {
            let problem = Problem::new(&cfg)?;
            let ev = pipeline::evaluate_phase(&mut Runner::new(out, &cfg)?, &problem)?;
            for v in &ev.variants {
                println!(
                    "{}: OEDUU at or below the deterministic median at {}/{} budgets, mean relative advantage {:.4}",
                    v.variant.name(),
                    v.wins,
                    v.budgets,
                    v.mean_relative_advantage
                );
            }
        }
        Command::RunAll => {
            let report = pipeline::run_all(&cfg, out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Validate => {
            let problem = Problem::new(&cfg)?;
            print_validation(&pipeline::validate_phase(&mut Runner::new(out, &cfg)?, &problem)?);
        }
    }
    Ok(())
}

fn print_validation(rows: &[pipeline::ValidationRow]) {
    for r in rows {
        println!(
            "design {} (nnz {}): surrogate {:.6e} exact {:.6e} gap {:.2e}",
            r.design_id, r.nnz, r.phi_surrogate, r.phi_exact, r.relative_gap
        );
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
