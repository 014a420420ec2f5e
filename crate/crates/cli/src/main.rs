//! `memsense`: drives the memristive sensor simulator from the command line.
//! Every subcommand writes CSV or key=value files; plotting is left to
//! external tools.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use memsense::kv::KvMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] memsense::Error),
}

macro_rules! data_error_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.into())
            }
        }
    )*};
}

data_error_from!(
    memsense::device::DeviceError,
    memsense::signal::SignalError,
    memsense::playback::PlaybackError,
    memsense::detect::DetectError,
    memsense::array::ArrayError,
    memsense::kv::KvError
);

#[derive(Debug, Parser)]
#[command(
    name = "memsense",
    version,
    about = "Memristive integrating sensor simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by the pipeline subcommands. Flags override `--config`.
#[derive(Debug, Args, Default)]
pub struct Common {
    /// Run configuration (key=value).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Device profile: fig1, fig2c, fig2d, or a device key=value file.
    #[arg(long)]
    profile: Option<String>,
    /// Front-end gain applied before the device.
    #[arg(long, allow_negative_numbers = true)]
    gain: Option<f64>,
    /// Front-end offset in volts.
    #[arg(long, allow_negative_numbers = true)]
    offset: Option<f64>,
    /// Samples per playback batch.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Read every N samples inside a batch instead of the standard offsets.
    #[arg(long)]
    read_stride: Option<usize>,
    /// Fractional ΔRS threshold for event bins (default: 3 × noise floor).
    #[arg(long)]
    drs_threshold: Option<f64>,
    /// Reference-detector amplitude threshold in conditioned volts.
    #[arg(long)]
    amp_threshold: Option<f64>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn overrides(&self) -> KvMap {
        let mut m = KvMap::new();
        if let Some(v) = &self.profile {
            m.set("profile", v);
        }
        if let Some(v) = self.gain {
            m.set("gain", v);
        }
        if let Some(v) = self.offset {
            m.set("offset", v);
        }
        if let Some(v) = self.batch_size {
            m.set("batch_size", v);
        }
        if let Some(v) = self.read_stride {
            m.set("read_stride", v);
        }
        if let Some(v) = self.drs_threshold {
            m.set("drs_threshold", v);
        }
        if let Some(v) = self.amp_threshold {
            m.set("amp_threshold", v);
        }
        if let Some(v) = self.seed {
            m.set("seed", v);
        }
        m
    }

    fn run_config(&self, default_profile: &str) -> Result<config::RunConfig, CliError> {
        let map = config::merged(self.config.as_deref(), &self.overrides())?;
        config::RunConfig::from_kv(&map, default_profile)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the two-exponential pulse response to an `x_flux,rs_ohm` trace.
    Fit {
        #[arg(long)]
        input: PathBuf,
        /// Report file (key=value); printed to stdout as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply a train of identical pulses and record RS after each one.
    Pulse {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_negative_numbers = true)]
        amplitude: f64,
        #[arg(long, default_value_t = 100e-6)]
        width: f64,
        #[arg(long)]
        count: usize,
        /// Initial RS (default: origin of the active polarity's curve).
        #[arg(long)]
        rs_init: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Staircase threshold extraction.
    Thresholds {
        #[command(flatten)]
        common: Common,
        /// Amplitude grid step in volts.
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        /// Largest amplitude magnitude on the grid.
        #[arg(long, default_value_t = 3.0)]
        max: f64,
        #[arg(long, default_value_t = 10)]
        pulses: usize,
        /// Relative ΔRS that counts as switching.
        #[arg(long, default_value_t = 1e-6)]
        noise_floor: f64,
        /// Initial RS (default: middle of the device range).
        #[arg(long)]
        rs_init: Option<f64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic recording with ground-truth annotations.
    Synth {
        /// Synthesis config (key=value).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Concatenate this many copies with alternating polarity.
        #[arg(long, default_value_t = 1)]
        alternate: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic recording grid (directory with manifest).
    SynthArray {
        /// Grid synthesis config (key=value).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Condition, play and detect event bins; compare with the reference detector.
    Detect {
        #[command(flatten)]
        common: Common,
        /// Recording CSV.
        #[arg(long)]
        input: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a recording grid and emit snapshots, count map and centroids.
    Array {
        #[command(flatten)]
        common: Common,
        /// Grid manifest (manifest.kv).
        #[arg(long)]
        manifest: PathBuf,
        /// Evaluate pixels one after another instead of in parallel.
        #[arg(long)]
        serial: bool,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit { input, out } => commands::fit(&input, out.as_deref()),
        Command::Pulse {
            common,
            amplitude,
            width,
            count,
            rs_init,
            out,
        } => commands::pulse(
            &common.run_config("fig1")?,
            amplitude,
            width,
            count,
            rs_init,
            &out,
        ),
        Command::Thresholds {
            common,
            step,
            max,
            pulses,
            noise_floor,
            rs_init,
            out,
        } => commands::thresholds(
            &common.run_config("fig2c")?,
            &commands::StaircaseArgs {
                step,
                max,
                pulses,
                noise_floor,
                rs_init,
            },
            &out,
        ),
        Command::Synth {
            config,
            seed,
            alternate,
            out,
        } => commands::synth(config.as_deref(), seed, alternate, &out),
        Command::SynthArray { config, seed, out } => {
            commands::synth_array(config.as_deref(), seed, &out)
        }
        Command::Detect { common, input, out } => {
            commands::detect(&common.run_config("fig2d")?, &input, &out)
        }
        Command::Array {
            common,
            manifest,
            serial,
            out,
        } => commands::array(&common.run_config("fig2d")?, &manifest, serial, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Usage(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
