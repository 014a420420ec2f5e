use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use memsense::array::{
    condition_grid, count_centroids, generate_grid, load_grid, save_grid, simulate_array_with,
    snapshot_file_name, spike_count_map, write_grid_csv, ArrayConfig, Execution, GridSynthConfig,
    Peak,
};
use memsense::detect::{
    compare, compression_factor, detect_bins, drs_scatter, oracle_detect, write_bins, write_oracle,
    write_scatter,
};
use memsense::device::{
    extract_thresholds, fit_pulse_response, read_pulse_trace, write_pulse_trace, Device, Polarity,
    PulseSpec, StaircaseProtocol,
};
use memsense::kv::KvMap;
use memsense::playback::{estimate_noise_floor, play, write_read_trace};
use memsense::signal::{
    calibrate, condition, generate_recording, load_recording, save_recording, ConditioningParams,
    Recording, SynthConfig,
};

use crate::config::RunConfig;
use crate::CliError;

/// Initial RS for the single-device pipeline when none is configured.
pub const DEFAULT_DETECT_RS_INIT: f64 = 2500.0;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(memsense::Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn emit(report: &KvMap, path: Option<&Path>) -> Result<(), CliError> {
    let text = report.to_text();
    print!("{text}");
    if let Some(p) = path {
        write_text(p, &text)?;
    }
    Ok(())
}

pub fn fit(input: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let points = read_pulse_trace(input)?;
    let report = fit_pulse_response(&points)?;
    emit(&report.to_kv(), out)
}

pub fn pulse(
    cfg: &RunConfig,
    amplitude: f64,
    width: f64,
    count: usize,
    rs_init: Option<f64>,
    out: &Path,
) -> Result<(), CliError> {
    let spec = PulseSpec::new(amplitude, width, count)?;
    let params = Arc::new(cfg.device.clone());
    let polarity = if amplitude < 0.0 {
        Polarity::Negative
    } else {
        Polarity::Positive
    };
    let start = rs_init
        .or(cfg.rs_init)
        .unwrap_or_else(|| params.response(polarity).eval(0.0));
    let mut device = Device::new(Arc::clone(&params), start, cfg.seed);
    let dx = spec.flux_per_pulse();
    let mut points = vec![(0.0, device.rs())];
    points.extend(
        device
            .apply_pulse_train(&spec)
            .into_iter()
            .map(|(k, rs)| (k as f64 * dx, rs)),
    );
    write_pulse_trace(out, &points)?;
    let mut m = KvMap::new();
    m.set("rs_initial", start);
    m.set("rs_final", device.rs());
    m.set("flux_total", count as f64 * dx);
    emit(&m, None)
}

pub struct StaircaseArgs {
    pub step: f64,
    pub max: f64,
    pub pulses: usize,
    pub noise_floor: f64,
    pub rs_init: Option<f64>,
}

pub fn thresholds(cfg: &RunConfig, args: &StaircaseArgs, out: &Path) -> Result<(), CliError> {
    if !(args.step > 0.0 && args.max >= args.step) {
        return Err(CliError::Usage(format!(
            "need 0 < --step <= --max (got {} and {})",
            args.step, args.max
        )));
    }
    create_dir(out)?;
    let params = Arc::new(cfg.device.clone());
    let start = args
        .rs_init
        .or(cfg.rs_init)
        .unwrap_or(0.5 * (params.rs_low + params.rs_high));
    let mut device = Device::new(Arc::clone(&params), start, cfg.seed);
    let protocol =
        StaircaseProtocol::alternating(args.step, args.max, args.pulses, args.noise_floor);
    let result = extract_thresholds(&mut device, &protocol)?;

    let path = out.join("staircase.csv");
    let mut text = String::from("level,amplitude_v,pulse,rs_ohm\n");
    for r in &result.reads {
        text.push_str(&format!(
            "{},{},{},{}\n",
            r.level, r.amplitude, r.pulse, r.rs
        ));
    }
    write_text(&path, &text)?;
    let (pos, neg) = result.thresholds()?;
    let mut m = KvMap::new();
    m.set("v_th_pos", pos);
    m.set("v_th_neg", neg);
    m.set("grid_step", args.step);
    emit(&m, Some(&out.join("thresholds.kv")))
}

pub fn synth(
    config: Option<&Path>,
    seed: Option<u64>,
    alternate: usize,
    out: &Path,
) -> Result<(), CliError> {
    let mut cfg = match config {
        Some(p) => SynthConfig::from_kv(&KvMap::load(p)?)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if alternate == 0 {
        return Err(CliError::Usage("--alternate must be at least 1".into()));
    }
    let base = generate_recording(&cfg, cfg.seed)?;
    let rec = if alternate == 1 {
        base
    } else {
        let flipped = condition(&base, &ConditioningParams::new(-1.0, 0.0)?);
        let copies: Vec<Recording> = (0..alternate)
            .map(|k| {
                if k % 2 == 0 {
                    base.clone()
                } else {
                    flipped.clone()
                }
            })
            .collect();
        Recording::concat(&copies)?
    };
    save_recording(&rec, out)?;
    let mut m = KvMap::new();
    m.set("samples", rec.len());
    m.set("duration_s", rec.duration());
    m.set(
        "planted_spikes",
        rec.ground_truth.as_ref().map_or(0, Vec::len),
    );
    emit(&m, None)
}

pub fn synth_array(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let mut cfg = match config {
        Some(p) => GridSynthConfig::from_kv(&KvMap::load(p)?)?,
        None => GridSynthConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let grid = generate_grid(&cfg)?;
    save_grid(&grid, out)?;
    let mut m = KvMap::new();
    m.set("rows", grid.rows());
    m.set("cols", grid.cols());
    m.set("samples_per_pixel", grid.cells()[0].len());
    emit(&m, None)
}

pub fn detect(cfg: &RunConfig, input: &Path, out: &Path) -> Result<(), CliError> {
    let rec = load_recording(input)?;
    let params = Arc::new(cfg.device.clone());
    let conditioning = match cfg.headroom {
        Some(h) => calibrate(std::slice::from_ref(&rec), &params, h)?,
        None => cfg.conditioning,
    };
    let conditioned = condition(&rec, &conditioning);
    let mut device = Device::new(
        Arc::clone(&params),
        cfg.rs_init.unwrap_or(DEFAULT_DETECT_RS_INIT),
        cfg.seed,
    );
    let trace = play(&mut device, &conditioned, &cfg.scheme);
    // Without enough boundary pairs a floor exists only if a threshold is given.
    let floor = estimate_noise_floor(&trace).ok();
    let drs_threshold = match (cfg.drs_threshold, floor) {
        (Some(t), _) => t,
        (None, Some(f)) => drs_threshold_for(f, cfg.drs_sigma_multiplier),
        (None, None) => drs_threshold_for(estimate_noise_floor(&trace)?, cfg.drs_sigma_multiplier),
    };
    let bins = detect_bins(&trace, drs_threshold)?;
    let amp_threshold = cfg.amp_threshold.unwrap_or(params.min_threshold());
    let oracle = oracle_detect(&conditioned, amp_threshold, cfg.refractory)?;
    let agreement = compare(&bins, &oracle);

    create_dir(out)?;
    write_bins(&bins, &out.join("bins.csv"))?;
    write_oracle(&oracle, &out.join("oracle.csv"))?;
    write_scatter(&drs_scatter(&trace, &conditioned), &out.join("scatter.csv"))?;
    write_read_trace(&trace, &out.join("reads.csv"))?;

    let mut m = KvMap::new();
    m.set("profile", &cfg.profile);
    m.set("gain", conditioning.gain);
    m.set("offset", conditioning.offset);
    m.set("samples", rec.len());
    m.set("reads", trace.entries.len());
    m.set("compression_factor", compression_factor(&cfg.scheme));
    if let Some(f) = floor {
        m.set("noise_floor", f);
    }
    m.set("drs_threshold", drs_threshold);
    m.set("amp_threshold", amp_threshold);
    m.merge_from(&agreement.to_kv());
    emit(&m, Some(&out.join("report.kv")))
}

fn drs_threshold_for(floor: f64, multiplier: f64) -> f64 {
    (multiplier * floor).max(memsense::detect::MIN_DRS_THRESHOLD)
}

fn write_peaks(peaks: &[Peak], path: &Path) -> Result<(), CliError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(|e| io_err(path, e))?);
    let mut body = String::from("rank,row,col,strength\n");
    for (i, p) in peaks.iter().enumerate() {
        body.push_str(&format!("{},{},{},{}\n", i + 1, p.row, p.col, p.strength));
    }
    f.write_all(body.as_bytes()).map_err(|e| io_err(path, e))?;
    f.flush().map_err(|e| io_err(path, e))
}

pub fn array(cfg: &RunConfig, manifest: &Path, serial: bool, out: &Path) -> Result<(), CliError> {
    let grid = load_grid(manifest)?;
    let acfg = ArrayConfig {
        rows: grid.rows(),
        cols: grid.cols(),
        shared_conditioning: cfg.conditioning,
        device_profile: cfg.device.clone(),
        rs_init_range: cfg.rs_init_range,
        snapshot_times: cfg.snapshot_times.clone(),
        master_seed: cfg.seed,
    };
    let exec = if serial {
        Execution::Serial
    } else {
        Execution::Parallel
    };
    let run = simulate_array_with(&grid, &acfg, &cfg.scheme, exec)?;
    let amp_threshold = cfg.amp_threshold.unwrap_or(cfg.device.min_threshold());
    let counts = spike_count_map(
        &condition_grid(&grid, &cfg.conditioning),
        amp_threshold,
        cfg.refractory,
    )?;

    create_dir(out)?;
    for s in &run.snapshots {
        write_grid_csv(&s.values, &out.join(snapshot_file_name(s.time)))?;
    }
    write_grid_csv(&counts, &out.join("spike_counts.csv"))?;
    write_grid_csv(&run.rs_init, &out.join("rs_init.csv"))?;
    let mut m = KvMap::new();
    if let Some(last) = run.snapshots.last() {
        let peaks =
            memsense::array::activity_centroids_with(last, cfg.centroids, cfg.suppression_radius);
        write_peaks(&peaks, &out.join("centroids.csv"))?;
        m.set(
            "centroids",
            peaks
                .iter()
                .map(|p| format!("{}:{}", p.row, p.col))
                .collect::<Vec<_>>()
                .join(","),
        );
    }
    let count_peaks = count_centroids(&counts, cfg.centroids, cfg.suppression_radius);
    write_peaks(&count_peaks, &out.join("count_centroids.csv"))?;
    m.set("rows", grid.rows());
    m.set("cols", grid.cols());
    m.set(
        "count_centroids",
        count_peaks
            .iter()
            .map(|p| format!("{}:{}", p.row, p.col))
            .collect::<Vec<_>>()
            .join(","),
    );
    m.set("amp_threshold", amp_threshold);
    emit(&m, Some(&out.join("report.kv")))
}
