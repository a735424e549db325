use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use smlink::analysis::PepMode;
use smlink::sim::{ChannelSource, Scheme, WORKERS_ENV};

#[derive(Debug, Parser)]
#[command(name = "smsim", version, about = "SM and SMX link-level simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo ABER curve.
    Simulate {
        #[command(flatten)]
        sim: SimArgs,
        /// Also evaluate the analytical bound (SM only).
        #[arg(long)]
        with_bound: bool,
    },
    /// Union-bound ABER curve (SM only).
    Bound {
        #[command(flatten)]
        sim: SimArgs,
    },
    /// SNR gaps between paired SM and SMX configurations.
    Compare(CompareArgs),
    /// Real multiplication counts of the two ML receivers.
    Complexity {
        #[arg(long)]
        nt: usize,
        #[arg(long)]
        nr: usize,
        /// Bits per channel use.
        #[arg(long)]
        bits: u32,
    },
    /// Measurement-file processing.
    #[command(subcommand)]
    Measurements(MeasurementsCommand),
    /// Synthetic inputs.
    #[command(subcommand)]
    Fixtures(FixturesCommand),
}

/// Options shared by every command that runs the engine. Flags override the
/// configuration file.
#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scheme: Option<Scheme>,
    #[arg(long)]
    pub nt: Option<usize>,
    #[arg(long)]
    pub nr: Option<usize>,
    #[arg(long)]
    pub mod_order: Option<usize>,
    /// SNR grid as start:step:stop in dB (inclusive).
    #[arg(long)]
    pub snr: Option<String>,
    /// iid, expcorr:<beta_tx>,<beta_rx> or file:<path>.
    #[arg(long)]
    pub channel: Option<ChannelSource>,
    /// Frequency bin (1-based) for file channels.
    #[arg(long)]
    pub bin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub min_errors: Option<u64>,
    #[arg(long)]
    pub max_bits: Option<u64>,
    /// exact or chernoff.
    #[arg(long)]
    pub pep: Option<PepMode>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, env = WORKERS_ENV)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// A pair such as sm:128:2/smx:8:2 (scheme:nt:mod_order). Repeatable.
    #[arg(long = "pair", required = true)]
    pub pairs: Vec<String>,
    /// Target ABER for the gap report. Repeatable.
    #[arg(long = "target", default_values_t = [1e-3])]
    pub targets: Vec<f64>,
    /// Directory for the per-curve CSV files.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum MeasurementsCommand {
    /// Chi-squared Rayleigh test on the entry magnitudes of one bin.
    Gof {
        file: PathBuf,
        #[arg(long, default_value_t = 1)]
        bin: usize,
        #[arg(long, default_value_t = 0.01)]
        significance: f64,
    },
    /// Correlation estimate and exponential-decay fit.
    Fit {
        file: PathBuf,
        #[arg(long, default_value_t = 1)]
        bin: usize,
    },
    /// Ranks measurements by correlation.
    Select {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, default_value_t = 1)]
        bin: usize,
        /// uncorrelated or correlated.
        #[arg(long, default_value = "uncorrelated")]
        mode: smlink::measurements::SelectionMode,
        #[arg(long)]
        top: Option<usize>,
    },
    /// Builds virtual arrays from walks and writes them as one measurement
    /// file, best ranked first.
    VirtualArray {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, default_value_t = 1)]
        bin: usize,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 0.01)]
        significance: f64,
        /// Keep only the best `top` arrays.
        #[arg(long)]
        top: Option<usize>,
        /// Accept walks recorded with a device other than the reference one.
        #[arg(long)]
        allow_non_reference: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes every entry of a measurement file as CSV.
    ExportCsv {
        file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Averages consecutive groups of four snapshots.
    Average {
        file: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum FixturesCommand {
    /// Synthetic measurement file drawn from the Kronecker model.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        nt: usize,
        #[arg(long, default_value_t = 4)]
        nr: usize,
        #[arg(long, default_value_t = 1024)]
        snapshots: usize,
        #[arg(long, default_value_t = 1)]
        bins: usize,
        /// iid or expcorr:<beta_tx>,<beta_rx>.
        #[arg(long, default_value = "iid")]
        channel: ChannelSource,
        #[arg(long, default_value = "reference")]
        device: String,
        #[arg(long, default_value = "synthetic")]
        location: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}
