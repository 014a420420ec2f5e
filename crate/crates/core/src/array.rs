//! Multi-pixel sensing array: one device per recording site, shared
//! front-end conditioning, normalized RS snapshots and activity maps.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::detect::oracle_detect;
use crate::device::{Device, DeviceParams};
use crate::kv::{KvError, KvMap};
use crate::playback::{play, BiasingScheme, ReadTrace};
use crate::seed::derive_seed;
use crate::signal::{
    add_spike, condition, gaussian_noise, load_recording, poisson_indices, save_recording,
    spike_template, ConditioningParams, Recording, SignalError, SpikeAnnotation,
};

#[derive(Debug, Error)]
pub enum ArrayError {
    #[error("grid incomplete: expected {expected} recordings, got {got}")]
    GridIncomplete { expected: usize, got: usize },
    #[error("recordings do not share one sample period")]
    MixedSampleRates,
    #[error("invalid array config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error("{0}")]
    Io(String),
}

/// Row-major `rows × cols` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    rows: usize,
    cols: usize,
    cells: Vec<T>,
}

impl<T> Grid<T> {
    pub fn from_vec(rows: usize, cols: usize, cells: Vec<T>) -> Result<Self, ArrayError> {
        if cells.len() != rows * cols {
            return Err(ArrayError::GridIncomplete {
                expected: rows * cols,
                got: cells.len(),
            });
        }
        Ok(Self { rows, cols, cells })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let cells = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Self { rows, cols, cells }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn len(&self) -> usize {
        self.cells.len()
    }
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.cells[row * self.cols + col]
    }
    pub fn cells(&self) -> &[T] {
        &self.cells
    }
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &T)> {
        self.cells
            .iter()
            .enumerate()
            .map(move |(i, c)| ((i / self.cols, i % self.cols), c))
    }
    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            rows: self.rows,
            cols: self.cols,
            cells: self.cells.iter().map(f).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayConfig {
    pub rows: usize,
    pub cols: usize,
    pub shared_conditioning: ConditioningParams,
    pub device_profile: DeviceParams,
    /// Per-pixel initial RS drawn uniformly from this closed range.
    pub rs_init_range: (f64, f64),
    pub snapshot_times: Vec<f64>,
    pub master_seed: u64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            rows: 16,
            cols: 14,
            shared_conditioning: ConditioningParams {
                gain: 2.8,
                offset: 0.0,
            },
            device_profile: DeviceParams::fig2d(),
            rs_init_range: (2000.0, 4000.0),
            snapshot_times: vec![1.63, 3.27, 5.16],
            master_seed: 1,
        }
    }
}

impl ArrayConfig {
    pub fn validate(&self) -> Result<(), ArrayError> {
        let bad = |m: String| Err(ArrayError::InvalidConfig(m));
        let (lo, hi) = self.rs_init_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!(
                "rs_init_range ({lo}, {hi}) must satisfy 0 < lo <= hi"
            ));
        }
        if self.rows == 0 || self.cols == 0 {
            return bad("rows and cols must be positive".into());
        }
        if self.snapshot_times.iter().any(|t| !t.is_finite()) {
            return bad("snapshot times must be finite".into());
        }
        self.device_profile
            .validate()
            .map_err(|e| ArrayError::InvalidConfig(e.to_string()))
    }
}

/// `RS(t) / RS(t₀)` per pixel at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ArraySnapshot {
    pub time: f64,
    pub values: Grid<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayRun {
    pub snapshots: Vec<ArraySnapshot>,
    pub traces: Grid<ReadTrace>,
    pub rs_init: Grid<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

fn check_grid(recordings: &Grid<Recording>, rows: usize, cols: usize) -> Result<f64, ArrayError> {
    if recordings.rows() != rows || recordings.cols() != cols {
        return Err(ArrayError::GridIncomplete {
            expected: rows * cols,
            got: recordings.len(),
        });
    }
    let period = recordings.cells()[0].sample_period;
    if recordings.cells().iter().any(|r| r.sample_period != period) {
        return Err(ArrayError::MixedSampleRates);
    }
    Ok(period)
}

pub fn simulate_array(
    recordings: &Grid<Recording>,
    cfg: &ArrayConfig,
    scheme: &BiasingScheme,
) -> Result<ArrayRun, ArrayError> {
    simulate_array_with(recordings, cfg, scheme, Execution::Parallel)
}

/// Runs every pixel independently. Pixel `i` seeds its RS draw and device
/// noise from `derive_seed(master_seed, i)`, so serial and parallel runs agree
/// bit for bit.
pub fn simulate_array_with(
    recordings: &Grid<Recording>,
    cfg: &ArrayConfig,
    scheme: &BiasingScheme,
    exec: Execution,
) -> Result<ArrayRun, ArrayError> {
    cfg.validate()?;
    scheme
        .validate()
        .map_err(|e| ArrayError::InvalidConfig(e.to_string()))?;
    cfg.device_profile
        .check_read_voltage(scheme.read_voltage)
        .map_err(|e| ArrayError::InvalidConfig(e.to_string()))?;
    check_grid(recordings, cfg.rows, cfg.cols)?;
    let params = Arc::new(cfg.device_profile.clone());

    let run_pixel = |i: usize| -> (f64, ReadTrace) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, i as u64));
        let (lo, hi) = cfg.rs_init_range;
        let rs_init = if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        };
        let mut device = Device::new(Arc::clone(&params), rs_init, rng.next_u64());
        let conditioned = condition(&recordings.cells()[i], &cfg.shared_conditioning);
        (rs_init, play(&mut device, &conditioned, scheme))
    };
    let results: Vec<(f64, ReadTrace)> = match exec {
        Execution::Serial => (0..recordings.len()).map(run_pixel).collect(),
        Execution::Parallel => (0..recordings.len())
            .into_par_iter()
            .map(run_pixel)
            .collect(),
    };
    let (rs_init, traces): (Vec<f64>, Vec<ReadTrace>) = results.into_iter().unzip();
    let traces = Grid::from_vec(cfg.rows, cfg.cols, traces)?;
    let snapshots = cfg
        .snapshot_times
        .iter()
        .map(|&t| snapshot_at(&traces, t))
        .collect();
    Ok(ArrayRun {
        snapshots,
        traces,
        rs_init: Grid::from_vec(cfg.rows, cfg.cols, rs_init)?,
    })
}

/// Ratio of the read nearest `t` to each pixel's first read. No reads are
/// added for snapshotting.
pub fn snapshot_at(traces: &Grid<ReadTrace>, t: f64) -> ArraySnapshot {
    ArraySnapshot {
        time: t,
        values: traces.map(|tr| match (tr.entries.first(), tr.nearest(t)) {
            (Some(first), Some(at)) => at.rs / first.rs,
            _ => 1.0,
        }),
    }
}

pub fn condition_grid(recordings: &Grid<Recording>, p: &ConditioningParams) -> Grid<Recording> {
    recordings.map(|r| condition(r, p))
}

/// Reference-detector spike count for every pixel.
pub fn spike_count_map(
    recordings: &Grid<Recording>,
    amp_threshold: f64,
    refractory: usize,
) -> Result<Grid<usize>, ArrayError> {
    if recordings.is_empty() {
        return Err(ArrayError::GridIncomplete {
            expected: 1,
            got: 0,
        });
    }
    check_grid(recordings, recordings.rows(), recordings.cols())?;
    let counts = recordings
        .cells()
        .par_iter()
        .map(|r| {
            oracle_detect(r, amp_threshold, refractory)
                .map(|s| s.len())
                .map_err(|e| ArrayError::InvalidConfig(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Grid::from_vec(recordings.rows(), recordings.cols(), counts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub row: usize,
    pub col: usize,
    pub strength: f64,
}

impl Peak {
    /// Chebyshev (king-move) distance.
    pub fn distance(&self, row: usize, col: usize) -> usize {
        self.row.abs_diff(row).max(self.col.abs_diff(col))
    }
}

pub const DEFAULT_SUPPRESSION_RADIUS: usize = 2;

/// Greedy peak picking: take the strongest cell (row-major order on ties),
/// suppress everything within `radius` of it, repeat up to `k` times.
pub fn pick_peaks(strength: &Grid<f64>, k: usize, radius: usize) -> Vec<Peak> {
    let mut suppressed = vec![false; strength.len()];
    let mut peaks = Vec::with_capacity(k);
    for _ in 0..k {
        let best = strength
            .iter()
            .filter(|((r, c), _)| !suppressed[r * strength.cols() + c])
            .fold(None::<((usize, usize), f64)>, |best, (rc, &s)| match best {
                Some((_, b)) if b >= s => best,
                _ => Some((rc, s)),
            });
        let Some(((row, col), s)) = best else { break };
        peaks.push(Peak {
            row,
            col,
            strength: s,
        });
        for ((r, c), _) in strength.iter() {
            if r.abs_diff(row).max(c.abs_diff(col)) <= radius {
                suppressed[r * strength.cols() + c] = true;
            }
        }
    }
    peaks
}

/// Moves a peak to the strength-weighted mean position of its 3×3
/// neighbourhood, rounded to the nearest pixel. Plateaus (several equal
/// cells around one source) otherwise resolve to their first row-major cell.
pub fn refine_peak(strength: &Grid<f64>, peak: Peak) -> Peak {
    let (mut w, mut wr, mut wc) = (0.0, 0.0, 0.0);
    for r in peak.row.saturating_sub(1)..=(peak.row + 1).min(strength.rows() - 1) {
        for c in peak.col.saturating_sub(1)..=(peak.col + 1).min(strength.cols() - 1) {
            let s = strength.get(r, c).max(0.0);
            w += s;
            wr += s * r as f64;
            wc += s * c as f64;
        }
    }
    if w <= 0.0 {
        return peak;
    }
    Peak {
        row: (wr / w).round() as usize,
        col: (wc / w).round() as usize,
        strength: peak.strength,
    }
}

/// Greedy peaks of `strength`, each refined with [`refine_peak`].
pub fn centroids(strength: &Grid<f64>, k: usize, radius: usize) -> Vec<Peak> {
    pick_peaks(strength, k, radius)
        .into_iter()
        .map(|p| refine_peak(strength, p))
        .collect()
}

/// Strongest `k` activity centres of a snapshot, by `|value − 1|`.
pub fn activity_centroids(snapshot: &ArraySnapshot, k: usize) -> Vec<Peak> {
    activity_centroids_with(snapshot, k, DEFAULT_SUPPRESSION_RADIUS)
}

pub fn activity_centroids_with(snapshot: &ArraySnapshot, k: usize, radius: usize) -> Vec<Peak> {
    centroids(&snapshot.values.map(|v| (v - 1.0).abs()), k, radius)
}

/// Strongest `k` regions of a spike-count map.
pub fn count_centroids(counts: &Grid<usize>, k: usize, radius: usize) -> Vec<Peak> {
    centroids(&counts.map(|&c| c as f64), k, radius)
}

/// True when every peak in `a` pairs with a distinct peak in `b` within
/// `max_distance` (greedy, in order of `a`).
pub fn peaks_coincide(a: &[Peak], b: &[Peak], max_distance: usize) -> bool {
    let mut used = vec![false; b.len()];
    a.iter().all(|p| {
        let hit = b
            .iter()
            .enumerate()
            .filter(|(j, q)| !used[*j] && p.distance(q.row, q.col) <= max_distance)
            .min_by_key(|(_, q)| p.distance(q.row, q.col));
        match hit {
            Some((j, _)) => {
                used[j] = true;
                true
            }
            None => false,
        }
    })
}

/// A neuron seen by the array, centred on one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cluster {
    pub row: usize,
    pub col: usize,
    pub rate_hz: f64,
}

/// A fixed number of identical spikes planted at random times on one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plant {
    pub row: usize,
    pub col: usize,
    pub count: usize,
    pub amplitude_v: f64,
}

/// Spatially structured synthetic grid. Each cluster fires one Poisson train
/// that every pixel within `reach_px` records, attenuated as
/// `exp(−d² / 2σ²)` with `σ = spatial_sigma_px`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSynthConfig {
    pub rows: usize,
    pub cols: usize,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub noise_v: f64,
    pub clusters: Vec<Cluster>,
    pub amp_min_v: f64,
    pub amp_max_v: f64,
    pub neg_fraction: f64,
    pub spatial_sigma_px: f64,
    pub reach_px: f64,
    /// Independent low-amplitude events on every pixel.
    pub background_rate_hz: f64,
    pub background_amp_v: f64,
    pub plants: Vec<Plant>,
    pub seed: u64,
}

impl Default for GridSynthConfig {
    fn default() -> Self {
        Self {
            rows: 16,
            cols: 14,
            duration_s: 5.2,
            sample_rate_hz: 12_200.0,
            noise_v: 0.04,
            clusters: vec![
                Cluster {
                    row: 3,
                    col: 4,
                    rate_hz: 6.0,
                },
                Cluster {
                    row: 7,
                    col: 10,
                    rate_hz: 5.0,
                },
                Cluster {
                    row: 11,
                    col: 7,
                    rate_hz: 5.5,
                },
            ],
            amp_min_v: 0.7,
            amp_max_v: 1.0,
            neg_fraction: 1.0,
            spatial_sigma_px: 1.2,
            reach_px: 3.0,
            background_rate_hz: 2.0,
            background_amp_v: 0.25,
            plants: Vec::new(),
            seed: 1,
        }
    }
}

const GRID_SYNTH_KEYS: &[&str] = &[
    "rows",
    "cols",
    "duration_s",
    "sample_rate_hz",
    "noise_v",
    "clusters",
    "amp_min_v",
    "amp_max_v",
    "neg_fraction",
    "spatial_sigma_px",
    "reach_px",
    "background_rate_hz",
    "background_amp_v",
    "plants",
    "seed",
];

fn parse_tuples(map: &KvMap, key: &str, arity: usize) -> Result<Option<Vec<Vec<String>>>, KvError> {
    let Some(raw) = map.raw(key) else {
        return Ok(None);
    };
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|t| {
            let parts: Vec<String> = t.split(':').map(|p| p.trim().to_string()).collect();
            if parts.len() == arity {
                Ok(parts)
            } else {
                Err(KvError::BadValue {
                    line: map.line_of(key),
                    key: key.to_string(),
                    value: raw.to_string(),
                })
            }
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

impl GridSynthConfig {
    pub fn validate(&self) -> Result<(), ArrayError> {
        let bad = |m: &str| Err(ArrayError::InvalidConfig(m.to_string()));
        if self.rows == 0 || self.cols == 0 {
            return bad("rows and cols must be positive");
        }
        if !(self.duration_s > 0.0 && self.sample_rate_hz > 0.0 && self.noise_v >= 0.0) {
            return bad("duration, sample rate and noise must be valid");
        }
        if !(0.0 <= self.amp_min_v && self.amp_min_v <= self.amp_max_v) {
            return bad("require 0 <= amp_min_v <= amp_max_v");
        }
        if !(0.0..=1.0).contains(&self.neg_fraction) {
            return bad("neg_fraction must lie in [0, 1]");
        }
        if !(self.spatial_sigma_px > 0.0 && self.reach_px >= 0.0) {
            return bad("spatial_sigma_px must be positive");
        }
        if self.background_rate_hz < 0.0 || self.background_amp_v < 0.0 {
            return bad("background settings must be non-negative");
        }
        let inside = |r: usize, c: usize| r < self.rows && c < self.cols;
        if self
            .clusters
            .iter()
            .any(|c| !inside(c.row, c.col) || c.rate_hz < 0.0)
        {
            return bad("cluster outside grid or negative rate");
        }
        if self.plants.iter().any(|p| !inside(p.row, p.col)) {
            return bad("plant outside grid");
        }
        Ok(())
    }

    pub fn from_kv(map: &KvMap) -> Result<Self, ArrayError> {
        map.ensure_known(GRID_SYNTH_KEYS)?;
        let d = Self::default();
        let bad = |key: &str| KvError::BadValue {
            line: map.line_of(key),
            key: key.to_string(),
            value: map.raw(key).unwrap_or_default().to_string(),
        };
        let clusters = match parse_tuples(map, "clusters", 3)? {
            None => d.clusters.clone(),
            Some(ts) => ts
                .iter()
                .map(|t| {
                    Ok(Cluster {
                        row: t[0].parse().map_err(|_| bad("clusters"))?,
                        col: t[1].parse().map_err(|_| bad("clusters"))?,
                        rate_hz: t[2].parse().map_err(|_| bad("clusters"))?,
                    })
                })
                .collect::<Result<_, KvError>>()?,
        };
        let plants = match parse_tuples(map, "plants", 4)? {
            None => Vec::new(),
            Some(ts) => ts
                .iter()
                .map(|t| {
                    Ok(Plant {
                        row: t[0].parse().map_err(|_| bad("plants"))?,
                        col: t[1].parse().map_err(|_| bad("plants"))?,
                        count: t[2].parse().map_err(|_| bad("plants"))?,
                        amplitude_v: t[3].parse().map_err(|_| bad("plants"))?,
                    })
                })
                .collect::<Result<_, KvError>>()?,
        };
        let cfg = Self {
            rows: map.get_or("rows", d.rows)?,
            cols: map.get_or("cols", d.cols)?,
            duration_s: map.get_or("duration_s", d.duration_s)?,
            sample_rate_hz: map.get_or("sample_rate_hz", d.sample_rate_hz)?,
            noise_v: map.get_or("noise_v", d.noise_v)?,
            clusters,
            amp_min_v: map.get_or("amp_min_v", d.amp_min_v)?,
            amp_max_v: map.get_or("amp_max_v", d.amp_max_v)?,
            neg_fraction: map.get_or("neg_fraction", d.neg_fraction)?,
            spatial_sigma_px: map.get_or("spatial_sigma_px", d.spatial_sigma_px)?,
            reach_px: map.get_or("reach_px", d.reach_px)?,
            background_rate_hz: map.get_or("background_rate_hz", d.background_rate_hz)?,
            background_amp_v: map.get_or("background_amp_v", d.background_amp_v)?,
            plants,
            seed: map.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Generates the synthetic grid described by `cfg`; deterministic per seed.
pub fn generate_grid(cfg: &GridSynthConfig) -> Result<Grid<Recording>, ArrayError> {
    cfg.validate()?;
    let n = (cfg.duration_s * cfg.sample_rate_hz).round() as usize;
    if n == 0 {
        return Err(ArrayError::InvalidConfig(
            "recordings would be empty".into(),
        ));
    }
    let period = 1.0 / cfg.sample_rate_hz;
    let template = spike_template(period);

    // Cluster trains: (index, magnitude, negative).
    let trains: Vec<Vec<(usize, f64, bool)>> = cfg
        .clusters
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1_000_000 + ci as u64));
            poisson_indices(&mut rng, c.rate_hz, period, n)
                .into_iter()
                .map(|i| {
                    let m = if cfg.amp_max_v > cfg.amp_min_v {
                        rng.random_range(cfg.amp_min_v..=cfg.amp_max_v)
                    } else {
                        cfg.amp_min_v
                    };
                    (i, m, rng.random_bool(cfg.neg_fraction))
                })
                .collect()
        })
        .collect();

    let build = |pixel: usize| -> Result<Recording, SignalError> {
        let (row, col) = (pixel / cfg.cols, pixel % cfg.cols);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, pixel as u64));
        let mut samples = gaussian_noise(&mut rng, cfg.noise_v, n);
        let mut gt = Vec::new();
        for (ci, c) in cfg.clusters.iter().enumerate() {
            let d2 = (row as f64 - c.row as f64).powi(2) + (col as f64 - c.col as f64).powi(2);
            if d2.sqrt() > cfg.reach_px {
                continue;
            }
            let atten = (-d2 / (2.0 * cfg.spatial_sigma_px.powi(2))).exp();
            for &(i, m, neg) in &trains[ci] {
                let a = if neg { -m * atten } else { m * atten };
                add_spike(&mut samples, i, a, &template);
                gt.push(SpikeAnnotation {
                    sample_index: i,
                    amplitude: a,
                    label: format!("c{ci}"),
                });
            }
        }
        for i in poisson_indices(&mut rng, cfg.background_rate_hz, period, n) {
            let m = rng.random_range(0.0..=cfg.background_amp_v);
            let a = if rng.random_bool(0.5) { -m } else { m };
            add_spike(&mut samples, i, a, &template);
            gt.push(SpikeAnnotation {
                sample_index: i,
                amplitude: a,
                label: "bg".into(),
            });
        }
        for (pi, p) in cfg.plants.iter().enumerate() {
            if (p.row, p.col) != (row, col) {
                continue;
            }
            let mut prng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2_000_000 + pi as u64));
            for _ in 0..p.count {
                let i = prng.random_range(0..n);
                add_spike(&mut samples, i, p.amplitude_v, &template);
                gt.push(SpikeAnnotation {
                    sample_index: i,
                    amplitude: p.amplitude_v,
                    label: format!("plant{pi}"),
                });
            }
        }
        gt.sort_by_key(|s| s.sample_index);
        Recording::new(pixel_name(row, col), samples, period)?.with_ground_truth(gt)
    };
    let cells = (0..cfg.rows * cfg.cols)
        .into_par_iter()
        .map(build)
        .collect::<Result<Vec<_>, _>>()?;
    Grid::from_vec(cfg.rows, cfg.cols, cells)
}

pub fn pixel_name(row: usize, col: usize) -> String {
    format!("r{row}_c{col}")
}

pub const MANIFEST_NAME: &str = "manifest.kv";

/// Writes `r<row>_c<col>.csv` per pixel plus `manifest.kv` (rows, cols,
/// sample_rate_hz).
pub fn save_grid(grid: &Grid<Recording>, dir: &Path) -> Result<(), ArrayError> {
    std::fs::create_dir_all(dir).map_err(|e| ArrayError::Io(format!("{}: {e}", dir.display())))?;
    let mut m = KvMap::new();
    m.set("rows", grid.rows());
    m.set("cols", grid.cols());
    m.set("sample_rate_hz", grid.cells()[0].sample_rate());
    let manifest = dir.join(MANIFEST_NAME);
    std::fs::write(&manifest, m.to_text())
        .map_err(|e| ArrayError::Io(format!("{}: {e}", manifest.display())))?;
    for ((r, c), rec) in grid.iter() {
        save_recording(rec, &dir.join(format!("{}.csv", pixel_name(r, c))))?;
    }
    Ok(())
}

/// Loads a grid from a manifest file; recordings are resolved next to it.
pub fn load_grid(manifest: &Path) -> Result<Grid<Recording>, ArrayError> {
    let m = KvMap::load(manifest)?;
    m.ensure_known(&["rows", "cols", "sample_rate_hz"])?;
    let rows: usize = m.require("rows")?;
    let cols: usize = m.require("cols")?;
    let rate: Option<f64> = m.get("sample_rate_hz")?;
    let dir: PathBuf = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut cells = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let p = dir.join(format!("{}.csv", pixel_name(r, c)));
            if !p.exists() {
                return Err(ArrayError::GridIncomplete {
                    expected: rows * cols,
                    got: cells.len(),
                });
            }
            let rec = match rate {
                Some(hz) => crate::signal::load_recording_with_period(&p, 1.0 / hz)?,
                None => load_recording(&p)?,
            };
            cells.push(rec);
        }
    }
    Grid::from_vec(rows, cols, cells)
}

pub fn snapshot_file_name(time: f64) -> String {
    format!("snapshot_{time}.csv")
}

/// Writes a headerless `rows × cols` CSV of values.
pub fn write_grid_csv<T: std::fmt::Display>(grid: &Grid<T>, path: &Path) -> Result<(), ArrayError> {
    let io = |e: std::io::Error| ArrayError::Io(format!("{}: {e}", path.display()));
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for r in 0..grid.rows() {
        let row: Vec<String> = (0..grid.cols())
            .map(|c| grid.get(r, c).to_string())
            .collect();
        writeln!(f, "{}", row.join(",")).map_err(io)?;
    }
    f.flush().map_err(io)
}

pub fn parse_grid_csv(text: &str) -> Result<Grid<f64>, ArrayError> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| ArrayError::Io(format!("line {}: malformed grid row", i + 1)))
        })
        .collect::<Result<_, _>>()?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(ArrayError::Io("ragged grid".into()));
    }
    let n = rows.len();
    Grid::from_vec(n, cols, rows.into_iter().flatten().collect())
}
