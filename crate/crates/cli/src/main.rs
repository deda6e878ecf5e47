use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cim_core::config::SEED_ENV;
use cim_core::CimError;

mod commands;
mod output;

/// Behavioral simulator of a charge-domain SRAM compute-in-memory macro.
///
/// Every command reads one JSON run configuration (`--config`, defaults as in
/// `default-config.json`), applies flag overrides and writes CSV or JSON.
/// Outputs go to `--out`, else to `<output_dir>/<command>.<ext>` when the
/// config sets `output_dir`, else to standard output.
#[derive(Debug, Parser)]
#[command(name = "cim-forge", version, propagate_version = true)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed [default: config `seed`, then $CIM_FORGE_SEED, then 1].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Supply voltage in volts, 0.6..=1.2 [default: 0.9].
    #[arg(long, global = true)]
    vdd: Option<f64>,
    /// Activated rows per cycle: 4, 8 or 16 [default: 16].
    #[arg(long, global = true)]
    rows: Option<u32>,
    /// C_ABL / C_CBL capacitance ratio [default: 1].
    #[arg(long, global = true)]
    rho: Option<f64>,
    /// ADC resolution in bits [default: 4].
    #[arg(long, global = true)]
    adc_bits: Option<u32>,
    /// Fraction of the pMAC range clipped before conversion [default: 0.5].
    #[arg(long, global = true)]
    cutoff: Option<f64>,
    /// Digitizer: coarse-fine or full-flash [default: coarse-fine].
    #[arg(long, global = true)]
    scheme: Option<String>,
    /// Reference source: in-sram or ideal [default: in-sram].
    #[arg(long, global = true)]
    ref_mode: Option<String>,
    /// Disable every hardware error source.
    #[arg(long, global = true)]
    no_noise: bool,
    /// Output file (written atomically).
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// DAC output voltage for every input code 0..15.
    DacTransfer {
        /// Add Monte-Carlo mean/std columns from this many trials per code.
        #[arg(long, value_name = "N")]
        montecarlo: Option<u64>,
    },
    /// Noiseless ADC staircase over every pMAC level.
    AdcTransfer,
    /// The 16 in-SRAM reference levels N = 0..15.
    Refgen,
    /// One MAC cycle: per-column readouts and shift-added outputs (JSON).
    Mac {
        /// Comma-separated activations, one per activated row.
        #[arg(long, value_delimiter = ',', required = true)]
        inputs: Vec<u8>,
        /// Weight tile (rows x 8 i8), CIMT binary or CSV.
        #[arg(long, value_name = "PATH")]
        weights: PathBuf,
    },
    /// Tiled matmul of u4 activations (M x K) by i8 weights (K x N).
    Matmul {
        #[arg(long, value_name = "PATH")]
        x: PathBuf,
        #[arg(long, value_name = "PATH")]
        w: PathBuf,
    },
    /// DAC Monte-Carlo statistics per input code.
    Montecarlo {
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        /// Restrict to one input code.
        #[arg(long)]
        code: Option<u8>,
    },
    /// Design-space sweep of a workload.
    Sweep {
        /// Grid JSON [default: the single configured point].
        #[arg(long, value_name = "PATH")]
        grid: Option<PathBuf>,
        /// Workload directory with a manifest.json.
        #[arg(long, value_name = "DIR")]
        workload: PathBuf,
        /// Also write pMAC histograms (long-format CSV).
        #[arg(long, value_name = "PATH")]
        histogram: Option<PathBuf>,
    },
    /// Energy, frequency and throughput report plus the ADC energy comparison (JSON).
    Energy,
    /// Generate the synthetic workload into a directory.
    GenWorkload {
        #[arg(long, value_name = "DIR")]
        dir: PathBuf,
        /// Task seed.
        #[arg(long, default_value_t = 7)]
        task_seed: u64,
        /// Hidden units [default: 256].
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        train_samples: Option<usize>,
        #[arg(long)]
        test_samples: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Print the effective configuration (JSON).
    ShowConfig,
}

fn exit_code(err: &CimError) -> u8 {
    match err {
        CimError::Io { .. } | CimError::Format(_) => 3,
        CimError::Invariant(_) | CimError::Phase { .. } => 4,
        CimError::Domain(_) | CimError::Config(_) | CimError::Shape(_) => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let env_seed = std::env::var(SEED_ENV).ok();
    match commands::run(&cli.global, &cli.command, env_seed.as_deref()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cim-forge: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
