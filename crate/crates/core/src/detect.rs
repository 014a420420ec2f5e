//! Event bins from ΔRS thresholding, the amplitude-threshold reference
//! detector, and agreement metrics between the two.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::device::Polarity;
use crate::kv::KvMap;
use crate::playback::{BiasingScheme, ReadTrace};
use crate::signal::Recording;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("ΔRS threshold must be positive, got {0}")]
    BadThreshold(f64),
    #[error("amplitude threshold must be positive, got {0}")]
    BadAmplitude(f64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Io(String),
}

/// Multiplier on the noise floor used when no ΔRS threshold is given.
pub const DEFAULT_SIGMA_MULTIPLIER: f64 = 3.0;
/// Lower bound on the default threshold (noise-free runs have a zero floor).
pub const MIN_DRS_THRESHOLD: f64 = 1e-9;
/// Reference-detector dead time, ~2 ms at 82 µs sampling.
pub const DEFAULT_REFRACTORY: usize = 25;

pub fn default_drs_threshold(noise_floor: f64) -> f64 {
    (DEFAULT_SIGMA_MULTIPLIER * noise_floor).max(MIN_DRS_THRESHOLD)
}

/// Inter-read interval whose fractional RS change crossed the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventBin {
    /// First sample of the interval.
    pub start_index: usize,
    /// One past the last sample of the interval.
    pub end_index: usize,
    /// `(RS_after − RS_before) / RS_before`.
    pub frac_drs: f64,
    /// Input polarity implied by the change: RS up ⇒ negative-voltage event.
    pub polarity: Polarity,
}

impl EventBin {
    pub fn contains(&self, sample_index: usize) -> bool {
        (self.start_index..self.end_index).contains(&sample_index)
    }
}

fn polarity_of_change(frac_drs: f64) -> Polarity {
    if frac_drs > 0.0 {
        Polarity::Negative
    } else {
        Polarity::Positive
    }
}

/// Flags every stimulated inter-read interval with `|ΔRS/RS_prev| > threshold`.
/// Batch-boundary pairs enclose no samples and are never flagged.
pub fn detect_bins(trace: &ReadTrace, drs_threshold: f64) -> Result<Vec<EventBin>, DetectError> {
    if drs_threshold.is_nan() || drs_threshold <= 0.0 {
        return Err(DetectError::BadThreshold(drs_threshold));
    }
    Ok(intervals(trace)
        .filter(|b| b.frac_drs.abs() > drs_threshold)
        .collect())
}

/// All stimulated intervals with their fractional change, unthresholded.
pub fn intervals(trace: &ReadTrace) -> impl Iterator<Item = EventBin> + '_ {
    trace.stimulation_pairs().map(|(a, b)| {
        let frac_drs = (b.rs - a.rs) / a.rs;
        EventBin {
            start_index: a.sample_index,
            end_index: b.sample_index,
            frac_drs,
            polarity: polarity_of_change(frac_drs),
        }
    })
}

/// One point of the ΔR/R versus max-|v| scatter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterPoint {
    pub start_index: usize,
    pub end_index: usize,
    /// Signed sample with the largest magnitude inside the interval.
    pub peak_v: f64,
    pub frac_drs: f64,
}

impl ScatterPoint {
    pub fn max_abs_v(&self) -> f64 {
        self.peak_v.abs()
    }
}

/// Pairs each stimulated interval of `trace` with the largest-magnitude
/// sample of the conditioned recording that drove it.
pub fn drs_scatter(trace: &ReadTrace, conditioned: &Recording) -> Vec<ScatterPoint> {
    intervals(trace)
        .map(|b| {
            let hi = b.end_index.min(conditioned.samples.len());
            let lo = b.start_index.min(hi);
            let peak_v = conditioned.samples[lo..hi]
                .iter()
                .copied()
                .fold(0.0_f64, |m, v| if v.abs() > m.abs() { v } else { m });
            ScatterPoint {
                start_index: b.start_index,
                end_index: b.end_index,
                peak_v,
                frac_drs: b.frac_drs,
            }
        })
        .collect()
}

/// Reference-detector spike.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSpike {
    pub sample_index: usize,
    pub amplitude: f64,
}

/// Amplitude-threshold detector: local |v| maxima above `amp_threshold`,
/// greedily accepted largest first so that accepted spikes are more than
/// `refractory` samples apart.
pub fn oracle_detect(
    rec: &Recording,
    amp_threshold: f64,
    refractory: usize,
) -> Result<Vec<OracleSpike>, DetectError> {
    if amp_threshold.is_nan() || amp_threshold <= 0.0 {
        return Err(DetectError::BadAmplitude(amp_threshold));
    }
    let s = &rec.samples;
    let n = s.len();
    let mut candidates: Vec<usize> = (0..n)
        .filter(|&i| {
            let m = s[i].abs();
            m > amp_threshold
                && (i == 0 || m >= s[i - 1].abs())
                && (i + 1 == n || m > s[i + 1].abs())
        })
        .collect();
    candidates.sort_by(|&a, &b| s[b].abs().total_cmp(&s[a].abs()).then(a.cmp(&b)));
    let mut accepted: Vec<usize> = Vec::new();
    for i in candidates {
        // `accepted` stays sorted, so only the neighbours need checking.
        let pos = accepted.partition_point(|&j| j < i);
        let clear_left = pos == 0 || i - accepted[pos - 1] > refractory;
        let clear_right = pos == accepted.len() || accepted[pos] - i > refractory;
        if clear_left && clear_right {
            accepted.insert(pos, i);
        }
    }
    Ok(accepted
        .into_iter()
        .map(|i| OracleSpike {
            sample_index: i,
            amplitude: s[i],
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgreementReport {
    pub total_bins: usize,
    pub total_oracle_events: usize,
    /// Bins containing at least one oracle spike.
    pub matched_bins: usize,
    /// Bins containing none.
    pub extra_bins: usize,
    pub matched_oracle_events: usize,
    pub missed_oracle_events: usize,
    /// Matched oracle events / total (1 when the oracle found nothing).
    pub recall: f64,
    /// Matched bins / total bins (1 when no bins were flagged).
    pub precision_binwise: f64,
}

impl AgreementReport {
    /// Flagged bins per oracle event.
    pub fn bin_ratio(&self) -> f64 {
        if self.total_oracle_events == 0 {
            f64::NAN
        } else {
            self.total_bins as f64 / self.total_oracle_events as f64
        }
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("total_bins", self.total_bins);
        m.set("total_oracle_events", self.total_oracle_events);
        m.set("matched_bins", self.matched_bins);
        m.set("extra_bins", self.extra_bins);
        m.set("matched_oracle_events", self.matched_oracle_events);
        m.set("missed_oracle_events", self.missed_oracle_events);
        m.set("recall", self.recall);
        m.set("precision_binwise", self.precision_binwise);
        m
    }
}

/// An oracle spike is matched iff it falls inside a flagged bin; several
/// spikes inside one bin are each matched.
pub fn compare(bins: &[EventBin], oracle: &[OracleSpike]) -> AgreementReport {
    let mut sorted: Vec<EventBin> = bins.to_vec();
    sorted.sort_by_key(|b| b.start_index);
    let find = |idx: usize| -> Option<usize> {
        let pos = sorted.partition_point(|b| b.start_index <= idx);
        (pos > 0 && sorted[pos - 1].contains(idx)).then(|| pos - 1)
    };
    let mut hit = vec![false; sorted.len()];
    let mut matched_events = 0;
    for s in oracle {
        if let Some(b) = find(s.sample_index) {
            hit[b] = true;
            matched_events += 1;
        }
    }
    let matched_bins = hit.iter().filter(|h| **h).count();
    AgreementReport {
        total_bins: bins.len(),
        total_oracle_events: oracle.len(),
        matched_bins,
        extra_bins: bins.len() - matched_bins,
        matched_oracle_events: matched_events,
        missed_oracle_events: oracle.len() - matched_events,
        recall: if oracle.is_empty() {
            1.0
        } else {
            matched_events as f64 / oracle.len() as f64
        },
        precision_binwise: if bins.is_empty() {
            1.0
        } else {
            matched_bins as f64 / bins.len() as f64
        },
    }
}

/// Raw samples per read for the scheme.
pub fn compression_factor(scheme: &BiasingScheme) -> f64 {
    scheme.batch_size as f64 / scheme.reads_per_batch() as f64
}

pub const BINS_HEADER: &str = "start_index,end_index,frac_drs,polarity";
pub const ORACLE_HEADER: &str = "sample_index,amplitude_v";
pub const SCATTER_HEADER: &str = "start_index,end_index,max_abs_v,peak_v,frac_drs";

fn write_lines(
    path: &Path,
    header: &str,
    rows: impl Iterator<Item = String>,
) -> Result<(), DetectError> {
    let io = |e: std::io::Error| DetectError::Io(format!("{}: {e}", path.display()));
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "{header}").map_err(io)?;
    for r in rows {
        writeln!(f, "{r}").map_err(io)?;
    }
    f.flush().map_err(io)
}

pub fn write_bins(bins: &[EventBin], path: &Path) -> Result<(), DetectError> {
    write_lines(
        path,
        BINS_HEADER,
        bins.iter().map(|b| {
            format!(
                "{},{},{},{}",
                b.start_index, b.end_index, b.frac_drs, b.polarity
            )
        }),
    )
}

pub fn write_oracle(spikes: &[OracleSpike], path: &Path) -> Result<(), DetectError> {
    write_lines(
        path,
        ORACLE_HEADER,
        spikes
            .iter()
            .map(|s| format!("{},{}", s.sample_index, s.amplitude)),
    )
}

pub fn write_scatter(points: &[ScatterPoint], path: &Path) -> Result<(), DetectError> {
    write_lines(
        path,
        SCATTER_HEADER,
        points.iter().map(|p| {
            format!(
                "{},{},{},{},{}",
                p.start_index,
                p.end_index,
                p.max_abs_v(),
                p.peak_v,
                p.frac_drs
            )
        }),
    )
}

fn parse_rows<T>(
    text: &str,
    header: &str,
    columns: usize,
    parse: impl Fn(&[&str]) -> Option<T>,
) -> Result<Vec<T>, DetectError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        _ => {
            return Err(DetectError::Parse {
                line: 1,
                message: format!("expected header `{header}`"),
            })
        }
    }
    lines
        .map(|(i, l)| {
            let cols: Vec<&str> = l.trim().split(',').map(str::trim).collect();
            (cols.len() == columns)
                .then(|| parse(&cols))
                .flatten()
                .ok_or_else(|| DetectError::Parse {
                    line: i + 1,
                    message: format!("malformed row `{l}`"),
                })
        })
        .collect()
}

pub fn parse_bins(text: &str) -> Result<Vec<EventBin>, DetectError> {
    parse_rows(text, BINS_HEADER, 4, |c| {
        Some(EventBin {
            start_index: c[0].parse().ok()?,
            end_index: c[1].parse().ok()?,
            frac_drs: c[2].parse().ok()?,
            polarity: match c[3] {
                "positive" => Polarity::Positive,
                "negative" => Polarity::Negative,
                _ => return None,
            },
        })
    })
}

pub fn parse_oracle(text: &str) -> Result<Vec<OracleSpike>, DetectError> {
    parse_rows(text, ORACLE_HEADER, 2, |c| {
        Some(OracleSpike {
            sample_index: c[0].parse().ok()?,
            amplitude: c[1].parse().ok()?,
        })
    })
}
