//! Recordings: representation, CSV I/O, front-end conditioning, gain
//! calibration and synthetic ground-truth generation.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use thiserror::Error;

use crate::device::DeviceParams;
use crate::kv::{KvError, KvMap};
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("calibration infeasible: {0}")]
    Infeasible(String),
    #[error("invalid synthesis config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error("{0}")]
    Io(String),
}

/// Planted (or otherwise known) spike.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeAnnotation {
    pub sample_index: usize,
    /// Signed dominant-lobe amplitude, in the recording's voltage domain.
    pub amplitude: f64,
    pub label: String,
}

/// Uniformly sampled voltage trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub samples: Vec<f64>,
    pub sample_period: f64,
    pub ground_truth: Option<Vec<SpikeAnnotation>>,
}

impl Recording {
    pub fn new(
        id: impl Into<String>,
        samples: Vec<f64>,
        sample_period: f64,
    ) -> Result<Self, SignalError> {
        let rec = Self {
            id: id.into(),
            samples,
            sample_period,
            ground_truth: None,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn with_ground_truth(mut self, spikes: Vec<SpikeAnnotation>) -> Result<Self, SignalError> {
        self.ground_truth = Some(spikes);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if !(self.sample_period > 0.0 && self.sample_period.is_finite()) {
            return Err(SignalError::InvalidRecording(
                "sample_period must be positive".into(),
            ));
        }
        if self.samples.is_empty() {
            return Err(SignalError::InvalidRecording("no samples".into()));
        }
        if let Some(gt) = &self.ground_truth {
            if let Some(s) = gt.iter().find(|s| s.sample_index >= self.samples.len()) {
                return Err(SignalError::InvalidRecording(format!(
                    "annotation at sample {} beyond {} samples",
                    s.sample_index,
                    self.samples.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.sample_period
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.sample_period
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Concatenation; ground truth is re-indexed, ids joined with `+`.
    pub fn concat(parts: &[Recording]) -> Result<Recording, SignalError> {
        let first = parts
            .first()
            .ok_or_else(|| SignalError::InvalidRecording("nothing to concatenate".into()))?;
        let mut samples = Vec::new();
        let mut gt = Vec::new();
        let mut any_gt = false;
        for p in parts {
            if p.sample_period != first.sample_period {
                return Err(SignalError::InvalidRecording("mixed sample periods".into()));
            }
            if let Some(g) = &p.ground_truth {
                any_gt = true;
                gt.extend(g.iter().map(|s| SpikeAnnotation {
                    sample_index: s.sample_index + samples.len(),
                    ..s.clone()
                }));
            }
            samples.extend_from_slice(&p.samples);
        }
        let id = parts
            .iter()
            .map(|p| p.id.as_str())
            .collect::<Vec<_>>()
            .join("+");
        Ok(Recording {
            id,
            samples,
            sample_period: first.sample_period,
            ground_truth: any_gt.then_some(gt),
        })
    }
}

/// Front-end gain and offset shared by the sensing path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditioningParams {
    pub gain: f64,
    pub offset: f64,
}

impl ConditioningParams {
    pub fn new(gain: f64, offset: f64) -> Result<Self, SignalError> {
        if gain == 0.0 || !gain.is_finite() || !offset.is_finite() {
            return Err(SignalError::InvalidConfig(
                "gain must be finite and non-zero".into(),
            ));
        }
        Ok(Self { gain, offset })
    }

    pub fn identity() -> Self {
        Self {
            gain: 1.0,
            offset: 0.0,
        }
    }

    /// The conditioning that undoes this one.
    pub fn inverse(&self) -> Self {
        Self {
            gain: 1.0 / self.gain,
            offset: -self.offset / self.gain,
        }
    }
}

/// `v → gain·v + offset`; annotation amplitudes scale by `gain`.
pub fn condition(rec: &Recording, p: &ConditioningParams) -> Recording {
    Recording {
        id: rec.id.clone(),
        samples: rec.samples.iter().map(|v| p.gain * v + p.offset).collect(),
        sample_period: rec.sample_period,
        ground_truth: rec.ground_truth.as_ref().map(|gt| {
            gt.iter()
                .map(|s| SpikeAnnotation {
                    amplitude: s.amplitude * p.gain,
                    ..s.clone()
                })
                .collect()
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    /// Margin by which the event scale is pushed past the larger threshold.
    pub headroom: f64,
    /// Quantile of |v| taken as the event scale.
    pub event_quantile: f64,
    /// |median| / event scale above which the baseline is recentred.
    pub max_baseline_ratio: f64,
}

impl CalibrationOptions {
    pub fn with_headroom(headroom: f64) -> Self {
        Self {
            headroom,
            event_quantile: 0.999,
            max_baseline_ratio: 0.05,
        }
    }
}

/// Linear-interpolated quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Calibration outcome with the statistics it was derived from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub params: ConditioningParams,
    pub event_scale: f64,
    pub noise_floor: f64,
    pub baseline: f64,
}

pub fn calibrate(
    recordings: &[Recording],
    device: &DeviceParams,
    headroom: f64,
) -> Result<ConditioningParams, SignalError> {
    calibrate_with(
        recordings,
        device,
        &CalibrationOptions::with_headroom(headroom),
    )
    .map(|c| c.params)
}

/// Chooses a gain that lifts the pooled event scale to `(1 + headroom)` times
/// the larger device threshold while keeping the noise floor (median |v|)
/// below the smaller one.
pub fn calibrate_with(
    recordings: &[Recording],
    device: &DeviceParams,
    opts: &CalibrationOptions,
) -> Result<Calibration, SignalError> {
    if recordings.is_empty() {
        return Err(SignalError::Infeasible("no recordings".into()));
    }
    let mut pooled: Vec<f64> = recordings
        .iter()
        .flat_map(|r| r.samples.iter().copied())
        .collect();
    pooled.sort_by(f64::total_cmp);
    let median = quantile_sorted(&pooled, 0.5);
    let mut magnitudes: Vec<f64> = pooled.iter().map(|v| v.abs()).collect();
    magnitudes.sort_by(f64::total_cmp);
    let mut event_scale = quantile_sorted(&magnitudes, opts.event_quantile);
    if event_scale.is_nan() || event_scale <= 0.0 {
        return Err(SignalError::Infeasible("event scale is zero".into()));
    }
    let recentre = median.abs() / event_scale > opts.max_baseline_ratio;
    let baseline = if recentre { median } else { 0.0 };
    if recentre {
        magnitudes = pooled.iter().map(|v| (v - baseline).abs()).collect();
        magnitudes.sort_by(f64::total_cmp);
        event_scale = quantile_sorted(&magnitudes, opts.event_quantile);
        if event_scale.is_nan() || event_scale <= 0.0 {
            return Err(SignalError::Infeasible("event scale is zero".into()));
        }
    }
    let noise_floor = quantile_sorted(&magnitudes, 0.5);
    let gain = (1.0 + opts.headroom) * device.max_threshold() / event_scale;
    if (noise_floor * gain).partial_cmp(&device.min_threshold()) != Some(std::cmp::Ordering::Less) {
        return Err(SignalError::Infeasible(format!(
            "noise floor {noise_floor} V reaches threshold {} V at gain {gain}",
            device.min_threshold()
        )));
    }
    Ok(Calibration {
        params: ConditioningParams {
            gain,
            offset: -gain * baseline,
        },
        event_scale,
        noise_floor,
        baseline,
    })
}

/// Synthetic recording parameters (`key=value` file keys match field names).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    /// Baseline Gaussian noise sigma.
    pub noise_v: f64,
    /// Poisson spike rate.
    pub rate_hz: f64,
    pub amp_min_v: f64,
    pub amp_max_v: f64,
    /// Probability that a spike's dominant lobe is negative.
    pub neg_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            duration_s: 5.2,
            sample_rate_hz: 12_200.0,
            noise_v: 0.04,
            rate_hz: 15.5,
            amp_min_v: 0.65,
            amp_max_v: 1.0,
            neg_fraction: 0.7,
            seed: 1,
        }
    }
}

const SYNTH_KEYS: &[&str] = &[
    "duration_s",
    "sample_rate_hz",
    "noise_v",
    "rate_hz",
    "amp_min_v",
    "amp_max_v",
    "neg_fraction",
    "seed",
];

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SignalError> {
        let bad = |m: &str| Err(SignalError::InvalidConfig(m.to_string()));
        if !(self.duration_s > 0.0 && self.sample_rate_hz > 0.0) {
            return bad("duration_s and sample_rate_hz must be positive");
        }
        if !(self.noise_v >= 0.0 && self.rate_hz >= 0.0) {
            return bad("noise_v and rate_hz must be non-negative");
        }
        if !(self.amp_min_v.is_finite()
            && self.amp_max_v.is_finite()
            && 0.0 <= self.amp_min_v
            && self.amp_min_v <= self.amp_max_v)
        {
            return bad("require 0 <= amp_min_v <= amp_max_v");
        }
        if !(0.0..=1.0).contains(&self.neg_fraction) {
            return bad("neg_fraction must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }

    pub fn from_kv(map: &KvMap) -> Result<Self, SignalError> {
        map.ensure_known(SYNTH_KEYS)?;
        let d = Self::default();
        let cfg = Self {
            duration_s: map.get_or("duration_s", d.duration_s)?,
            sample_rate_hz: map.get_or("sample_rate_hz", d.sample_rate_hz)?,
            noise_v: map.get_or("noise_v", d.noise_v)?,
            rate_hz: map.get_or("rate_hz", d.rate_hz)?,
            amp_min_v: map.get_or("amp_min_v", d.amp_min_v)?,
            amp_max_v: map.get_or("amp_max_v", d.amp_max_v)?,
            neg_fraction: map.get_or("neg_fraction", d.neg_fraction)?,
            seed: map.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("duration_s", self.duration_s);
        m.set("sample_rate_hz", self.sample_rate_hz);
        m.set("noise_v", self.noise_v);
        m.set("rate_hz", self.rate_hz);
        m.set("amp_min_v", self.amp_min_v);
        m.set("amp_max_v", self.amp_max_v);
        m.set("neg_fraction", self.neg_fraction);
        m.set("seed", self.seed);
        m
    }
}

// Biphasic difference-of-Gaussians template (seconds).
const LOBE_SIGMA: f64 = 0.2e-3;
const AFTER_LOBE_SIGMA: f64 = 0.4e-3;
const AFTER_LOBE_DELAY: f64 = 0.8e-3;
const AFTER_LOBE_RATIO: f64 = 0.3;

fn template_raw(t: f64) -> f64 {
    (-t * t / (2.0 * LOBE_SIGMA * LOBE_SIGMA)).exp()
        - AFTER_LOBE_RATIO
            * (-(t - AFTER_LOBE_DELAY).powi(2) / (2.0 * AFTER_LOBE_SIGMA * AFTER_LOBE_SIGMA)).exp()
}

/// `(offset, weight)` taps of the unit spike template at `sample_period`;
/// the tap at offset 0 is the dominant lobe with weight exactly 1.
pub fn spike_template(sample_period: f64) -> Vec<(isize, f64)> {
    let before = (4.0 * LOBE_SIGMA / sample_period).ceil() as isize;
    let after = ((AFTER_LOBE_DELAY + 4.0 * AFTER_LOBE_SIGMA) / sample_period).ceil() as isize;
    let peak = template_raw(0.0);
    (-before..=after)
        .map(|k| (k, template_raw(k as f64 * sample_period) / peak))
        .collect()
}

/// Adds one spike whose dominant lobe lands on `index` with `amplitude`.
pub fn add_spike(samples: &mut [f64], index: usize, amplitude: f64, template: &[(isize, f64)]) {
    for &(offset, w) in template {
        let i = index as isize + offset;
        if i >= 0 && (i as usize) < samples.len() {
            samples[i as usize] += amplitude * w;
        }
    }
}

/// Poisson spike times over `n` samples at `rate_hz`, as sample indices.
pub fn poisson_indices(
    rng: &mut impl Rng,
    rate_hz: f64,
    sample_period: f64,
    n: usize,
) -> Vec<usize> {
    let mut out = Vec::new();
    if rate_hz <= 0.0 {
        return out;
    }
    let gaps = Exp::new(rate_hz).expect("positive rate");
    let duration = n as f64 * sample_period;
    let mut t = gaps.sample(rng);
    while t < duration {
        let i = (t / sample_period) as usize;
        if i < n {
            out.push(i);
        }
        t += gaps.sample(rng);
    }
    out
}

pub fn gaussian_noise(rng: &mut impl Rng, sigma: f64, n: usize) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![0.0; n];
    }
    let dist = Normal::new(0.0, sigma).expect("finite sigma");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Gaussian baseline plus Poisson-timed biphasic spikes; every planted spike
/// is annotated. Spike placement and baseline noise use separate streams
/// derived from `seed`.
pub fn generate_recording(cfg: &SynthConfig, seed: u64) -> Result<Recording, SignalError> {
    cfg.validate()?;
    let n = cfg.n_samples();
    if n == 0 {
        return Err(SignalError::InvalidConfig(
            "recording would be empty".into(),
        ));
    }
    let period = 1.0 / cfg.sample_rate_hz;
    let mut spike_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));

    let mut samples = gaussian_noise(&mut noise_rng, cfg.noise_v, n);
    let template = spike_template(period);
    let mut ground_truth = Vec::new();
    for index in poisson_indices(&mut spike_rng, cfg.rate_hz, period, n) {
        let magnitude = if cfg.amp_max_v > cfg.amp_min_v {
            spike_rng.random_range(cfg.amp_min_v..=cfg.amp_max_v)
        } else {
            cfg.amp_min_v
        };
        let negative = spike_rng.random_bool(cfg.neg_fraction);
        let amplitude = if negative { -magnitude } else { magnitude };
        add_spike(&mut samples, index, amplitude, &template);
        ground_truth.push(SpikeAnnotation {
            sample_index: index,
            amplitude,
            label: if negative { "neg" } else { "pos" }.to_string(),
        });
    }
    Recording::new(format!("synth-{seed}"), samples, period)?.with_ground_truth(ground_truth)
}

pub const RECORDING_HEADER: &str = "sample_index,voltage_v";
pub const ANNOTATION_HEADER: &str = "sample_index,amplitude_v,label";

/// Path of the annotation sidecar for a recording CSV: `x.csv → x.spikes.csv`.
pub fn annotation_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.spikes.csv"))
}

/// Writes the recording CSV (metadata in leading `#` lines) and, when ground
/// truth is present, the annotation sidecar.
pub fn save_recording(rec: &Recording, path: &Path) -> Result<(), SignalError> {
    let io = |e: std::io::Error| SignalError::Io(format!("{}: {e}", path.display()));
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "# id={}", rec.id).map_err(io)?;
    writeln!(f, "# sample_period_s={}", rec.sample_period).map_err(io)?;
    writeln!(f, "{RECORDING_HEADER}").map_err(io)?;
    for (i, v) in rec.samples.iter().enumerate() {
        writeln!(f, "{i},{v}").map_err(io)?;
    }
    f.flush().map_err(io)?;
    if let Some(gt) = &rec.ground_truth {
        save_annotations(gt, &annotation_path(path))?;
    }
    Ok(())
}

pub fn save_annotations(spikes: &[SpikeAnnotation], path: &Path) -> Result<(), SignalError> {
    let io = |e: std::io::Error| SignalError::Io(format!("{}: {e}", path.display()));
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "{ANNOTATION_HEADER}").map_err(io)?;
    for s in spikes {
        writeln!(f, "{},{},{}", s.sample_index, s.amplitude, s.label).map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Loads a recording; the sample period comes from the file's
/// `# sample_period_s=` metadata line.
pub fn load_recording(path: &Path) -> Result<Recording, SignalError> {
    load_recording_impl(path, None)
}

/// Loads a recording with an explicit sample period (overrides metadata).
pub fn load_recording_with_period(
    path: &Path,
    sample_period: f64,
) -> Result<Recording, SignalError> {
    load_recording_impl(path, Some(sample_period))
}

fn load_recording_impl(
    path: &Path,
    period_override: Option<f64>,
) -> Result<Recording, SignalError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SignalError::Io(format!("{}: {e}", path.display())))?;
    let mut rec = parse_recording(&text, &path.display().to_string(), period_override)?;
    if rec.id.is_empty() {
        rec.id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    let sidecar = annotation_path(path);
    if sidecar.exists() {
        rec.ground_truth = Some(load_annotations(&sidecar)?);
        rec.validate()?;
    }
    Ok(rec)
}

pub fn parse_recording(
    text: &str,
    origin: &str,
    period_override: Option<f64>,
) -> Result<Recording, SignalError> {
    let perr = |line: usize, message: String| SignalError::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let mut id = String::new();
    let mut period = None;
    let mut header_seen = false;
    let mut samples = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if !header_seen {
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.split_once('=') {
                    match k.trim() {
                        "id" => id = v.trim().to_string(),
                        "sample_period_s" => {
                            period = Some(v.trim().parse::<f64>().map_err(|_| {
                                perr(line_no, format!("bad sample period `{}`", v.trim()))
                            })?)
                        }
                        _ => {}
                    }
                }
                continue;
            }
            if line != RECORDING_HEADER {
                return Err(perr(
                    line_no,
                    format!("expected header `{RECORDING_HEADER}`"),
                ));
            }
            header_seen = true;
            continue;
        }
        let (idx, v) = line
            .split_once(',')
            .ok_or_else(|| perr(line_no, format!("expected `index,voltage`, got `{line}`")))?;
        let idx: usize = idx
            .trim()
            .parse()
            .map_err(|_| perr(line_no, format!("bad sample index `{idx}`")))?;
        if idx != samples.len() {
            return Err(perr(line_no, format!("sample index {idx} out of sequence")));
        }
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| perr(line_no, format!("bad voltage `{v}`")))?;
        samples.push(v);
    }
    if !header_seen {
        return Err(perr(1, format!("missing header `{RECORDING_HEADER}`")));
    }
    let sample_period = period_override
        .or(period)
        .ok_or_else(|| perr(1, "no sample period (`# sample_period_s=` line)".into()))?;
    Recording::new(id, samples, sample_period)
}

pub fn load_annotations(path: &Path) -> Result<Vec<SpikeAnnotation>, SignalError> {
    let origin = path.display().to_string();
    let text =
        std::fs::read_to_string(path).map_err(|e| SignalError::Io(format!("{origin}: {e}")))?;
    let perr = |line: usize, message: String| SignalError::Parse {
        path: origin.clone(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == ANNOTATION_HEADER => {}
        _ => return Err(perr(1, format!("missing header `{ANNOTATION_HEADER}`"))),
    }
    lines
        .map(|(i, line)| {
            let cols: Vec<&str> = line.trim().splitn(3, ',').collect();
            let bad = || {
                perr(
                    i + 1,
                    format!("expected `index,amplitude,label`, got `{line}`"),
                )
            };
            if cols.len() != 3 {
                return Err(bad());
            }
            Ok(SpikeAnnotation {
                sample_index: cols[0].trim().parse().map_err(|_| bad())?,
                amplitude: cols[1].trim().parse().map_err(|_| bad())?,
                label: cols[2].trim().to_string(),
            })
        })
        .collect()
}
