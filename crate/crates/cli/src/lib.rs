//! Command-line front end for the `ionchain` toolkit.
//!
//! Every run reads one JSON config (see [`config::RunConfig`]); a few flags
//! override individual fields. Results go to stdout or `--out` as CSV with a
//! single header line and LF line endings. Notes go to stderr.

pub mod commands;
pub mod config;
mod error;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use commands::Output;
pub use config::RunConfig;
pub use error::{CliError, EXIT_CONVERGENCE, EXIT_PHYSICS, EXIT_VALIDATION};

#[derive(Debug, Parser)]
#[command(
    name = "ionchain",
    version,
    about = "Mixed-species ion chain simulation and inference"
)]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides mc.trials.
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Overrides mc.duration_periods.
    #[arg(long, global = true)]
    pub duration_periods: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Axial equilibrium positions.
    Equilibrium,
    /// All 3N normal modes with eigenvectors and participation.
    Modes,
    /// Thermal carrier Rabi flops.
    Rabi {
        #[command(subcommand)]
        action: RabiAction,
    },
    /// Sideband spectrum of one ion.
    Spectrum,
    /// Reordering Monte Carlo and heating-rate fits.
    Reorder {
        #[command(subcommand)]
        action: ReorderAction,
    },
    /// Entanglement rate budget.
    Rate,
}

#[derive(Debug, Subcommand)]
pub enum RabiAction {
    /// Synthesise a time scan from the rabi block.
    Simulate,
    /// Fit the occupation to a measured time scan.
    Fit {
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum ReorderAction {
    /// Stability probability versus temperature.
    Curve,
    /// Fit initial temperature and heating rate to dark-time data.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Precomputed curve; computed from the mc block when omitted.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
}

impl Cli {
    /// Loads the config and applies flag overrides.
    pub fn load_config(&self) -> Result<RunConfig, CliError> {
        let path = self
            .config
            .as_deref()
            .ok_or_else(|| CliError::Usage("--config PATH is required".into()))?;
        let mut config = RunConfig::load(path)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(mc) = config.mc.as_mut() {
            if let Some(trials) = self.trials {
                mc.trials = trials;
            }
            if let Some(periods) = self.duration_periods {
                mc.duration_periods = periods;
            }
        }
        config.validate()?;
        Ok(config)
    }

    /// Runs the selected command without touching stdout or the filesystem
    /// beyond reading inputs.
    pub fn execute(&self) -> Result<Output, CliError> {
        let config = self.load_config()?;
        match &self.command {
            Command::Equilibrium => commands::equilibrium(&config),
            Command::Modes => commands::modes(&config),
            Command::Rabi {
                action: RabiAction::Simulate,
            } => commands::rabi_simulate(&config),
            Command::Rabi {
                action: RabiAction::Fit { data },
            } => commands::rabi_fit(&config, data),
            Command::Spectrum => commands::spectrum(&config),
            Command::Reorder {
                action: ReorderAction::Curve,
            } => commands::reorder_curve_cmd(&config),
            Command::Reorder {
                action: ReorderAction::Fit { data, curve },
            } => commands::reorder_fit(&config, data, curve.as_deref()),
            Command::Rate => commands::rate(&config),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Sidecar path `<out>.meta.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Executes the command and writes its output.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let output = cli.execute()?;
    for note in &output.notes {
        eprintln!("note: {note}");
    }
    match &cli.out {
        Some(path) => {
            write_file(path, &output.body)?;
            if let Some(meta) = &output.sidecar {
                write_file(&sidecar_path(path), meta)?;
            }
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(output.body.as_bytes())
                .map_err(|e| CliError::Io(e.to_string()))?;
        }
    }
    Ok(())
}
