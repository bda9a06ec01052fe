//! Batch front end for the two-mode Kerr comb simulator.
//!
//! Every subcommand reads one TOML configuration (defaults target Device A
//! at the comb operating cut), evaluates its grid, and writes a result
//! bundle: CSV/JSON artifacts, optional SVG plots, per-cell errors, and a
//! manifest with the config hash and master seed so runs can be reproduced.

mod commands;
mod config;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::Ctx;
use config::RunConfig;
use output::Bundle;

#[derive(Parser)]
#[command(name = "kerrcomb", version, about = "Two-mode Kerr comb simulation toolkit")]
struct Cli {
    /// TOML configuration file; defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for the result bundle.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Master seed override for stochastic runs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Emit SVG plots alongside the data artifacts.
    #[arg(long, global = true)]
    plot: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Classical steady states over the power sweep.
    FixedPoints,
    /// Fixed-point/stability classification over the detuning grid.
    PhaseDiagram,
    /// Comb spectra and spacing detection along a power list.
    Spectrum,
    /// Maximal Lyapunov exponent over the drive-detuning grid.
    Lyapunov,
    /// Stochastic coherence function G1 at one operating point.
    SdeG1,
    /// Coherence times over nonlinearity scalings, with the law fit.
    TcohSweep,
    /// Floquet phase-diffusion estimates along a power list.
    Floquet,
    /// Effective-Kerr curve and bare-nonlinearity fit.
    KerrFit,
    /// Weak-driving ringdown traces and dephasing extraction.
    Ringdown,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::FixedPoints => "fixed-points",
            Command::PhaseDiagram => "phase-diagram",
            Command::Spectrum => "spectrum",
            Command::Lyapunov => "lyapunov",
            Command::SdeG1 => "sde-g1",
            Command::TcohSweep => "tcoh-sweep",
            Command::Floquet => "floquet",
            Command::KerrFit => "kerr-fit",
            Command::Ringdown => "ringdown",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Machine-readable error report on stderr.
            let report = serde_json::json!({
                "error": format!("{e:#}"),
                "subcommand": cli.command.name(),
            });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    if cli.workers > 0 {
        // A process-global pool; later identical calls are fine to ignore.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global();
    }
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let cfg_text = toml::to_string(&cfg)?;
    let seed = cli.seed.unwrap_or(cfg.sde.seed);

    let ctx = Ctx { cfg: &cfg, seed, plot: cli.plot };
    let mut bundle = Bundle::create(&cli.out)?;
    match cli.command {
        Command::FixedPoints => commands::classical::fixed_points(&ctx, &mut bundle)?,
        Command::PhaseDiagram => commands::classical::phase_diagram_cmd(&ctx, &mut bundle)?,
        Command::Spectrum => commands::classical::spectrum_cmd(&ctx, &mut bundle)?,
        Command::Lyapunov => commands::classical::lyapunov_cmd(&ctx, &mut bundle)?,
        Command::SdeG1 => commands::stochastic::sde_g1(&ctx, &mut bundle)?,
        Command::TcohSweep => commands::stochastic::tcoh_sweep(&ctx, &mut bundle)?,
        Command::Floquet => commands::floquet::floquet_cmd(&ctx, &mut bundle)?,
        Command::KerrFit => commands::calibrate::kerr_fit(&ctx, &mut bundle)?,
        Command::Ringdown => commands::calibrate::ringdown_cmd(&ctx, &mut bundle)?,
    }
    let n_errors = bundle.error_count();
    bundle.finish(cli.command.name(), &cfg_text, seed)?;
    if n_errors > 0 {
        eprintln!("{}", serde_json::json!({ "partial_errors": n_errors }));
    }
    Ok(())
}
