//! Run configuration: a key=value file merged with command-line overrides.

use std::path::{Path, PathBuf};

use memsense::device::DeviceParams;
use memsense::kv::KvMap;
use memsense::playback::BiasingScheme;
use memsense::signal::ConditioningParams;

use crate::CliError;

pub const RUN_KEYS: &[&str] = &[
    "profile",
    "gain",
    "offset",
    "headroom",
    "batch_size",
    "read_stride",
    "read_voltage",
    "drs_threshold",
    "drs_sigma_multiplier",
    "amp_threshold",
    "refractory",
    "seed",
    "rs_init",
    "rs_init_min",
    "rs_init_max",
    "read_noise_sigma",
    "write_noise_sigma",
    "snapshot_times",
    "centroids",
    "suppression_radius",
];

/// Default front-end gain.
pub const DEFAULT_GAIN: f64 = 2.8;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub profile: String,
    pub device: DeviceParams,
    pub conditioning: ConditioningParams,
    /// When set, the gain is calibrated from the input instead.
    pub headroom: Option<f64>,
    pub scheme: BiasingScheme,
    pub drs_threshold: Option<f64>,
    /// Noise-floor multiple used when `drs_threshold` is unset.
    pub drs_sigma_multiplier: f64,
    pub amp_threshold: Option<f64>,
    pub refractory: usize,
    pub seed: u64,
    pub rs_init: Option<f64>,
    pub rs_init_range: (f64, f64),
    pub snapshot_times: Vec<f64>,
    pub centroids: usize,
    pub suppression_radius: usize,
}

/// Loads `path` (if any) and lays `overrides` on top. A relative
/// non-builtin `profile` from the file is resolved against the file's
/// directory.
pub fn merged(path: Option<&Path>, overrides: &KvMap) -> Result<KvMap, CliError> {
    let mut map = match path {
        Some(p) => {
            let mut m = KvMap::load(p)?;
            if let Some(profile) = m.raw("profile").map(str::to_string) {
                if DeviceParams::builtin(&profile).is_none() && Path::new(&profile).is_relative() {
                    let base = p.parent().unwrap_or(Path::new(""));
                    m.set("profile", base.join(&profile).display());
                }
            }
            m
        }
        None => KvMap::new(),
    };
    map.merge_from(overrides);
    Ok(map)
}

fn load_profile(name: &str) -> Result<DeviceParams, CliError> {
    if let Some(p) = DeviceParams::builtin(name) {
        return Ok(p);
    }
    let path = PathBuf::from(name);
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "unknown profile `{name}` (builtin: fig1, fig2c, fig2d, or a device key=value file)"
        )));
    }
    let map = KvMap::load(&path)?;
    Ok(DeviceParams::from_kv(&map)?)
}

fn scheme_for(
    batch: usize,
    stride: Option<usize>,
    read_voltage: f64,
) -> Result<BiasingScheme, CliError> {
    let s = match stride {
        Some(stride) => BiasingScheme::strided(batch, stride, read_voltage),
        None if batch == 1000 => Ok(BiasingScheme {
            read_voltage,
            ..BiasingScheme::default()
        }),
        None => {
            let mut offsets: Vec<usize> = [0.0, 0.3, 0.6, 0.9, 1.0]
                .iter()
                .map(|f| (f * batch as f64).round() as usize)
                .collect();
            offsets.dedup();
            BiasingScheme::new(batch, offsets, read_voltage)
        }
    };
    Ok(s?)
}

impl RunConfig {
    pub fn from_kv(map: &KvMap, default_profile: &str) -> Result<Self, CliError> {
        map.ensure_known(RUN_KEYS)?;
        let profile: String = map.get_or("profile", default_profile.to_string())?;
        let mut device = load_profile(&profile)?;
        if let Some(s) = map.get("read_noise_sigma")? {
            device.read_noise_sigma = s;
        }
        if let Some(s) = map.get("write_noise_sigma")? {
            device.write_noise_sigma = s;
        }
        device.validate()?;
        let conditioning = ConditioningParams::new(
            map.get_or("gain", DEFAULT_GAIN)?,
            map.get_or("offset", 0.0)?,
        )?;
        let scheme = scheme_for(
            map.get_or("batch_size", 1000)?,
            map.get("read_stride")?,
            map.get_or("read_voltage", memsense::device::DEFAULT_READ_VOLTAGE)?,
        )?;
        device.check_read_voltage(scheme.read_voltage)?;
        Ok(Self {
            profile,
            device,
            conditioning,
            headroom: map.get("headroom")?,
            scheme,
            drs_threshold: map.get("drs_threshold")?,
            drs_sigma_multiplier: map.get_or(
                "drs_sigma_multiplier",
                memsense::detect::DEFAULT_SIGMA_MULTIPLIER,
            )?,
            amp_threshold: map.get("amp_threshold")?,
            refractory: map.get_or("refractory", memsense::detect::DEFAULT_REFRACTORY)?,
            seed: map.get_or("seed", 1)?,
            rs_init: map.get("rs_init")?,
            rs_init_range: (
                map.get_or("rs_init_min", 2000.0)?,
                map.get_or("rs_init_max", 4000.0)?,
            ),
            snapshot_times: map
                .get_list("snapshot_times")?
                .unwrap_or_else(|| vec![1.63, 3.27, 5.16]),
            centroids: map.get_or("centroids", 3)?,
            suppression_radius: map.get_or(
                "suppression_radius",
                memsense::array::DEFAULT_SUPPRESSION_RADIUS,
            )?,
        })
    }
}
