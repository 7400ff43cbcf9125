use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use treeflow::config::{load_config, validate_config};
use treeflow::experiment::{emit_csv, run_prepared, summarize};
use treeflow::verify;

#[derive(Parser)]
#[command(
    name = "treeflow",
    version,
    about = "Reconstruct demand weights for inflow control on tree transport networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the reconstruction experiment and write CSV outputs
    Run {
        /// JSON experiment configuration
        config: PathBuf,
        /// Output directory (overrides the config)
        #[arg(long)]
        out: Option<PathBuf>,
        /// QP stopping tolerance (overrides the config)
        #[arg(long)]
        tol: Option<f64>,
        /// Observation noise seed (overrides the config)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a configuration and report every problem found
    Validate { config: PathBuf },
    /// Run the self-check oracle suites on the configured network
    Oracle {
        config: PathBuf,
        /// Seed for the randomized suites
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() {
    if let Err(err) = dispatch() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn dispatch() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            out,
            tol,
            seed,
        } => run(config, out, tol, seed),
        Command::Validate { config } => validate(config),
        Command::Oracle { config, seed } => oracle(config, seed),
    }
}

fn run(config: PathBuf, out: Option<PathBuf>, tol: Option<f64>, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(&config).with_context(|| format!("loading {}", config.display()))?;
    let mut prepared = validate_config(&cfg)?;
    if let Some(tol) = tol {
        if tol <= 0.0 || !tol.is_finite() {
            bail!("--tol must be positive");
        }
        prepared.qp_tol = tol;
    }
    if let Some(seed) = seed {
        prepared.seed = seed;
    }
    let out_dir = out.unwrap_or_else(|| PathBuf::from(&prepared.output_dir));
    let report = run_prepared(&prepared)?;
    print!("{}", summarize(&report));
    let files = emit_csv(&report, &out_dir)?;
    for file in files {
        println!("wrote {}", file.display());
    }
    Ok(())
}

fn validate(config: PathBuf) -> Result<()> {
    let cfg = load_config(&config).with_context(|| format!("loading {}", config.display()))?;
    let prepared = validate_config(&cfg)?;
    println!(
        "configuration OK: {} arcs, demand arcs {:?}, J = {} time points, {} prototypes, {} observation rows, {} settings",
        prepared.net.arc_count(),
        prepared.net.demand_arcs(),
        prepared.grid.time_points(),
        prepared.basis.m(),
        prepared.beta_rows.len(),
        prepared.settings.len(),
    );
    Ok(())
}

fn oracle(config: PathBuf, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(&config).with_context(|| format!("loading {}", config.display()))?;
    let prepared = validate_config(&cfg)?;
    let seed = seed.unwrap_or(prepared.seed);
    let suites = [
        verify::upwind_matches_characteristics(&prepared.net, &prepared.grid, 50, seed),
        verify::junction_flux_balance(&prepared.net, &prepared.grid, 50, seed.wrapping_add(1)),
        verify::simplex_projection_matches_oracle(1000, seed.wrapping_add(2)),
        verify::qp_matches_grid_search(20, seed.wrapping_add(3)),
    ];
    let mut all_passed = true;
    for suite in &suites {
        println!("{}", suite.summary());
        all_passed &= suite.passed;
    }
    if !all_passed {
        bail!("oracle suite failed");
    }
    Ok(())
}
