use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use perimesh::cli::{self, Report, RunConfig, TransitionMode, OUTPUT_DIR_ENV};
use std::path::PathBuf;

/// Rovibrational levels and quadrupole transition rates of H2+ on a Lagrange-Laguerre mesh.
#[derive(Parser, Debug)]
#[command(name = "perimesh", version)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Energies of the lowest vibrational levels for each L.
    Spectrum(Common),
    /// Quadrupole transition probabilities.
    Transitions {
        #[command(flatten)]
        common: Common,
        /// `intra` for v_f = v_i and L_f = L_i - 2, `inter` for v_f != v_i.
        #[arg(long, default_value = "intra")]
        mode: TransitionMode,
    },
    /// Energies and rates of selected transitions on a ladder of meshes.
    Converge(Common),
    /// Radiative lifetimes from all quadrupole decay channels.
    Lifetimes(Common),
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Configuration file of `key = value` lines; defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding the configuration and the environment.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
        config.output_dir = PathBuf::from(dir);
    }
    if let Some(dir) = &common.out {
        config.output_dir = dir.clone();
    }
    Ok(config)
}

fn finish(report: Report) -> Result<()> {
    println!("wrote {} rows to {}", report.rows, report.path.display());
    if !report.failures.is_empty() {
        for f in &report.failures {
            eprintln!("failed: {f}");
        }
        bail!("{} item(s) failed", report.failures.len());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let report = match &args.command {
        Command::Spectrum(c) => cli::cmd_spectrum(&load_config(c)?)?,
        Command::Transitions { common, mode } => cli::cmd_transitions(&load_config(common)?, *mode)?,
        Command::Converge(c) => cli::cmd_converge(&load_config(c)?)?,
        Command::Lifetimes(c) => cli::cmd_lifetimes(&load_config(c)?)?,
    };
    finish(report)
}
