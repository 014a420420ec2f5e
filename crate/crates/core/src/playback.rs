//! Batch playback of a conditioned recording onto a device with sparse
//! sub-threshold reads, and background-noise estimation from the reads that
//! bracket batch boundaries.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::device::{Device, DEFAULT_READ_VOLTAGE};
use crate::signal::Recording;

#[derive(Debug, Error)]
pub enum PlaybackError {
    #[error("invalid biasing scheme: {0}")]
    InvalidScheme(String),
    #[error("need at least {need} batch boundaries, trace has {got}")]
    InsufficientData { got: usize, need: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Io(String),
}

/// Batch size and read schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasingScheme {
    pub batch_size: usize,
    /// Offsets within a batch, strictly increasing, each in `[0, batch_size]`.
    /// Offset 0 reads before the batch's first sample, `batch_size` after its last.
    pub read_offsets: Vec<usize>,
    pub read_voltage: f64,
}

impl Default for BiasingScheme {
    /// Reads at 0, 300, 600, 900 and 1000 of every 1000-sample batch.
    fn default() -> Self {
        Self {
            batch_size: 1000,
            read_offsets: vec![0, 300, 600, 900, 1000],
            read_voltage: DEFAULT_READ_VOLTAGE,
        }
    }
}

impl BiasingScheme {
    pub fn new(
        batch_size: usize,
        read_offsets: Vec<usize>,
        read_voltage: f64,
    ) -> Result<Self, PlaybackError> {
        let s = Self {
            batch_size,
            read_offsets,
            read_voltage,
        };
        s.validate()?;
        Ok(s)
    }

    /// Reads at `0, stride, 2·stride, …` plus the batch end.
    pub fn strided(
        batch_size: usize,
        stride: usize,
        read_voltage: f64,
    ) -> Result<Self, PlaybackError> {
        if stride == 0 {
            return Err(PlaybackError::InvalidScheme(
                "read stride must be positive".into(),
            ));
        }
        let mut offsets: Vec<usize> = (0..batch_size).step_by(stride).collect();
        offsets.push(batch_size);
        Self::new(batch_size, offsets, read_voltage)
    }

    pub fn validate(&self) -> Result<(), PlaybackError> {
        let bad = |m: &str| Err(PlaybackError::InvalidScheme(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.read_offsets.is_empty() {
            return bad("at least one read offset required");
        }
        if self.read_offsets.windows(2).any(|w| w[1] <= w[0]) {
            return bad("read offsets must be strictly increasing");
        }
        if *self.read_offsets.last().unwrap() > self.batch_size {
            return bad("read offset beyond batch end");
        }
        if !self.read_voltage.is_finite() {
            return bad("read voltage must be finite");
        }
        Ok(())
    }

    pub fn reads_per_batch(&self) -> usize {
        self.read_offsets.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadKind {
    BatchStart,
    Mid,
    BatchEnd,
}

impl fmt::Display for ReadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReadKind::BatchStart => "batch_start",
            ReadKind::Mid => "mid",
            ReadKind::BatchEnd => "batch_end",
        })
    }
}

impl FromStr for ReadKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "batch_start" => Ok(ReadKind::BatchStart),
            "mid" => Ok(ReadKind::Mid),
            "batch_end" => Ok(ReadKind::BatchEnd),
            other => Err(format!("unknown read kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadEntry {
    /// Number of samples applied before this read.
    pub sample_index: usize,
    pub time: f64,
    pub rs: f64,
    pub kind: ReadKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadTrace {
    pub device_id: String,
    pub entries: Vec<ReadEntry>,
}

impl ReadTrace {
    /// Consecutive read pairs with no stimulation in between
    /// (a batch end followed by the next batch start).
    pub fn boundary_pairs(&self) -> impl Iterator<Item = (&ReadEntry, &ReadEntry)> {
        self.entries
            .windows(2)
            .filter(|w| w[0].kind == ReadKind::BatchEnd && w[1].kind == ReadKind::BatchStart)
            .map(|w| (&w[0], &w[1]))
    }

    /// Consecutive read pairs that enclose at least one sample.
    pub fn stimulation_pairs(&self) -> impl Iterator<Item = (&ReadEntry, &ReadEntry)> {
        self.entries
            .windows(2)
            .filter(|w| w[1].sample_index > w[0].sample_index)
            .map(|w| (&w[0], &w[1]))
    }

    /// Index of the read closest in time to `t` (earliest on ties).
    pub fn nearest(&self, t: f64) -> Option<&ReadEntry> {
        self.entries
            .iter()
            .min_by(|a, b| (a.time - t).abs().total_cmp(&(b.time - t).abs()))
    }
}

/// Streams `rec` through `device` batch by batch, reading at the scheduled
/// offsets. The final partial batch is read at its end regardless of the
/// schedule. Reads take no simulated time.
pub fn play(device: &mut Device, rec: &Recording, scheme: &BiasingScheme) -> ReadTrace {
    let dt = rec.sample_period;
    let n = rec.samples.len();
    let mut entries =
        Vec::with_capacity(n / scheme.batch_size.max(1) * scheme.reads_per_batch() + 8);
    let mut batch_start = 0;
    while batch_start < n {
        let batch_len = scheme.batch_size.min(n - batch_start);
        let mut applied = 0;
        let mut push = |device: &mut Device, applied: usize, kind: ReadKind| {
            let sample_index = batch_start + applied;
            entries.push(ReadEntry {
                sample_index,
                time: sample_index as f64 * dt,
                rs: device.read(),
                kind,
            });
        };
        for &offset in &scheme.read_offsets {
            if offset > batch_len {
                break;
            }
            for &v in &rec.samples[batch_start + applied..batch_start + offset] {
                device.apply_sample(v, dt);
            }
            applied = offset;
            let kind = if offset == 0 {
                ReadKind::BatchStart
            } else if offset == batch_len {
                ReadKind::BatchEnd
            } else {
                ReadKind::Mid
            };
            push(device, applied, kind);
        }
        if applied < batch_len {
            for &v in &rec.samples[batch_start + applied..batch_start + batch_len] {
                device.apply_sample(v, dt);
            }
            push(device, batch_len, ReadKind::BatchEnd);
        }
        batch_start += batch_len;
    }
    ReadTrace {
        device_id: rec.id.clone(),
        entries,
    }
}

pub const MIN_BOUNDARY_PAIRS: usize = 2;

/// Sample standard deviation of ΔRS/RS over batch-boundary read pairs.
pub fn estimate_noise_floor(trace: &ReadTrace) -> Result<f64, PlaybackError> {
    let fracs: Vec<f64> = trace
        .boundary_pairs()
        .map(|(a, b)| (b.rs - a.rs) / a.rs)
        .collect();
    if fracs.len() < MIN_BOUNDARY_PAIRS {
        return Err(PlaybackError::InsufficientData {
            got: fracs.len(),
            need: MIN_BOUNDARY_PAIRS,
        });
    }
    let n = fracs.len() as f64;
    let mean = fracs.iter().sum::<f64>() / n;
    let var = fracs.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(var.sqrt())
}

pub const READ_TRACE_HEADER: &str = "sample_index,time_s,rs_ohm,kind";

pub fn write_read_trace(trace: &ReadTrace, path: &Path) -> Result<(), PlaybackError> {
    let io = |e: std::io::Error| PlaybackError::Io(format!("{}: {e}", path.display()));
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "{READ_TRACE_HEADER}").map_err(io)?;
    for e in &trace.entries {
        writeln!(f, "{},{},{},{}", e.sample_index, e.time, e.rs, e.kind).map_err(io)?;
    }
    f.flush().map_err(io)
}

pub fn read_read_trace(path: &Path) -> Result<ReadTrace, PlaybackError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PlaybackError::Io(format!("{}: {e}", path.display())))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_read_trace(&text, id)
}

pub fn parse_read_trace(text: &str, device_id: String) -> Result<ReadTrace, PlaybackError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == READ_TRACE_HEADER => {}
        _ => {
            return Err(PlaybackError::Parse {
                line: 1,
                message: format!("expected header `{READ_TRACE_HEADER}`"),
            })
        }
    }
    let entries = lines
        .map(|(i, l)| {
            let bad = || PlaybackError::Parse {
                line: i + 1,
                message: format!("malformed read `{l}`"),
            };
            let cols: Vec<&str> = l.trim().split(',').collect();
            if cols.len() != 4 {
                return Err(bad());
            }
            Ok(ReadEntry {
                sample_index: cols[0].parse().map_err(|_| bad())?,
                time: cols[1].parse().map_err(|_| bad())?,
                rs: cols[2].parse().map_err(|_| bad())?,
                kind: cols[3].parse().map_err(|_| bad())?,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ReadTrace { device_id, entries })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::device::DeviceParams;

    fn device(read_sigma: f64, seed: u64) -> Device {
        Device::new(
            Arc::new(DeviceParams::fig2d().with_noise(0.0, read_sigma)),
            3000.0,
            seed,
        )
    }

    fn flat(n: usize) -> Recording {
        Recording::new("flat", vec![0.1; n], 82e-6).unwrap()
    }

    #[test]
    fn standard_scheme_read_counts() {
        let s = BiasingScheme::default();
        let t = play(&mut device(0.0, 0), &flat(1000), &s);
        let idx: Vec<usize> = t.entries.iter().map(|e| e.sample_index).collect();
        assert_eq!(idx, vec![0, 300, 600, 900, 1000]);
        let t = play(&mut device(0.0, 0), &flat(2500), &s);
        assert_eq!(t.entries.len(), 5 + 5 + 3);
        let tail: Vec<(usize, ReadKind)> = t.entries[10..]
            .iter()
            .map(|e| (e.sample_index, e.kind))
            .collect();
        assert_eq!(
            tail,
            vec![
                (2000, ReadKind::BatchStart),
                (2300, ReadKind::Mid),
                (2500, ReadKind::BatchEnd)
            ]
        );
        assert!(t.entries.iter().all(|e| e.rs == 3000.0));
        assert!(t
            .entries
            .iter()
            .all(|e| e.time == e.sample_index as f64 * 82e-6));
    }

    #[test]
    fn partial_batch_on_offset_is_not_read_twice() {
        let t = play(&mut device(0.0, 0), &flat(1600), &BiasingScheme::default());
        let idx: Vec<usize> = t.entries.iter().map(|e| e.sample_index).collect();
        assert_eq!(idx, vec![0, 300, 600, 900, 1000, 1000, 1300, 1600]);
        assert_eq!(t.entries.last().unwrap().kind, ReadKind::BatchEnd);
    }

    #[test]
    fn scheme_validation() {
        assert!(BiasingScheme::new(1000, vec![0, 300, 300], 0.5).is_err());
        assert!(BiasingScheme::new(1000, vec![0, 1200], 0.5).is_err());
        assert!(BiasingScheme::new(0, vec![0], 0.5).is_err());
        assert!(BiasingScheme::new(1000, vec![], 0.5).is_err());
        let s = BiasingScheme::strided(1000, 100, 0.5).unwrap();
        assert_eq!(s.reads_per_batch(), 11);
        assert_eq!(
            BiasingScheme::strided(1000, 300, 0.5).unwrap(),
            BiasingScheme::default()
        );
    }

    #[test]
    fn noise_floor_zero_without_noise() {
        let t = play(&mut device(0.0, 0), &flat(5000), &BiasingScheme::default());
        assert_eq!(estimate_noise_floor(&t).unwrap(), 0.0);
    }

    #[test]
    fn noise_floor_single_batch_insufficient() {
        let t = play(&mut device(0.0, 0), &flat(1000), &BiasingScheme::default());
        assert!(matches!(
            estimate_noise_floor(&t),
            Err(PlaybackError::InsufficientData { got: 0, .. })
        ));
    }

    #[test]
    fn noise_floor_tracks_read_noise() {
        // Difference of two independent relative noises: sigma·√2.
        let t = play(
            &mut device(0.01, 11),
            &flat(200_000),
            &BiasingScheme::default(),
        );
        assert!(t.boundary_pairs().count() >= 50);
        let est = estimate_noise_floor(&t).unwrap();
        let want = 0.01 * 2f64.sqrt();
        assert!(((est - want) / want).abs() < 0.2, "{est}");
    }

    #[test]
    fn trace_csv_round_trip() {
        let t = play(
            &mut device(0.003, 1),
            &flat(2500),
            &BiasingScheme::default(),
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        write_read_trace(&t, &p).unwrap();
        let back = read_read_trace(&p).unwrap();
        assert_eq!(back.entries, t.entries);
        assert!(parse_read_trace("a,b\n", String::new()).is_err());
    }
}
