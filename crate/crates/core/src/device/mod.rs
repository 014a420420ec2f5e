//! Behavioral TiOx memristor: dual-polarity thresholded integrator with
//! saturating second-order exponential response.

mod curve;
mod fit;
mod params;
mod state;
mod threshold;

use std::fmt;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub use curve::{invert_rs_curve, rs_curve, PolarityCurve, Response};
pub use fit::{
    fit_pulse_response, fit_pulse_response_with, Coefficients, FitOptions, FitReport,
    MIN_FIT_POINTS,
};
pub use params::{CurveMode, DeviceParams, DEFAULT_READ_VOLTAGE, DEFAULT_X_SAT, PROFILE_NAMES};
pub use state::{Device, PulseSpec};
pub use threshold::{extract_thresholds, StaircaseProtocol, StaircaseRead, StaircaseResult};

use crate::kv::KvError;

/// Flux abscissa unit: one 100 µs write pulse. A sample of `v` volts lasting
/// `dt` seconds contributes `|v|·dt / PULSE_WIDTH_UNIT` volt·pulse-widths.
pub const PULSE_WIDTH_UNIT: f64 = 100e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        })
    }
}

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("invalid device parameters: {0}")]
    InvalidParams(String),
    #[error("read voltage {v_read} V would switch the device (|V_read| must be < {limit} V)")]
    InvasiveRead { v_read: f64, limit: f64 },
    #[error("invalid pulse: width {width} s, count {count}")]
    InvalidPulse { width: f64, count: usize },
    #[error("unknown device profile `{0}`")]
    UnknownProfile(String),
    #[error("fit needs at least {need} points, got {got}")]
    TooFewPoints { got: usize, need: usize },
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("trace is constant; nothing to fit")]
    Degenerate,
    #[error("no fit start converged within {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("no {0} amplitude on the grid exceeded the noise floor")]
    ThresholdNotFound(Polarity),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error("{0}")]
    Io(String),
}

pub const PULSE_TRACE_HEADER: &str = "x_flux,rs_ohm";

/// Writes `(flux, rs)` rows under the `x_flux,rs_ohm` header.
pub fn write_pulse_trace(path: &Path, points: &[(f64, f64)]) -> Result<(), DeviceError> {
    let io = |e: std::io::Error| DeviceError::Io(format!("{}: {e}", path.display()));
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "{PULSE_TRACE_HEADER}").map_err(io)?;
    for (x, rs) in points {
        writeln!(f, "{x},{rs}").map_err(io)?;
    }
    f.flush().map_err(io)
}

pub fn read_pulse_trace(path: &Path) -> Result<Vec<(f64, f64)>, DeviceError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DeviceError::Io(format!("{}: {e}", path.display())))?;
    parse_pulse_trace(&text)
}

pub fn parse_pulse_trace(text: &str) -> Result<Vec<(f64, f64)>, DeviceError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == PULSE_TRACE_HEADER => {}
        _ => {
            return Err(DeviceError::Parse {
                line: 1,
                message: format!("expected header `{PULSE_TRACE_HEADER}`"),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || DeviceError::Parse {
            line: i + 1,
            message: format!("expected `x,rs`, got `{line}`"),
        };
        let (x, rs) = line.split_once(',').ok_or_else(bad)?;
        let x: f64 = x.trim().parse().map_err(|_| bad())?;
        let rs: f64 = rs.trim().parse().map_err(|_| bad())?;
        out.push((x, rs));
    }
    Ok(out)
}
