use std::sync::Arc;

use memsense::array::{simulate_array_with, ArrayConfig, Execution, Grid};
use memsense::detect::detect_bins;
use memsense::device::{Device, DeviceParams, Polarity, PULSE_WIDTH_UNIT};
use memsense::playback::{play, BiasingScheme};
use memsense::signal::{
    calibrate_with, condition, generate_recording, CalibrationOptions, ConditioningParams,
    Recording, SynthConfig,
};
use proptest::prelude::*;

const DT: f64 = 82e-6;

fn profiles() -> impl Strategy<Value = DeviceParams> {
    prop_oneof![
        Just(DeviceParams::fig1()),
        Just(DeviceParams::fig2c()),
        Just(DeviceParams::fig2d()),
    ]
}

fn polarities() -> impl Strategy<Value = Polarity> {
    prop_oneof![Just(Polarity::Positive), Just(Polarity::Negative)]
}

proptest! {
    #[test]
    fn curve_inversion_round_trips(p in profiles(), pol in polarities(), frac in 0.0..1.0f64) {
        let r = p.response(pol);
        let x = frac * r.x_sat();
        let back = r.invert(r.eval(x));
        prop_assert!((back - x).abs() <= 1e-6 * r.x_sat(), "x {x} -> {back}");
    }

    #[test]
    fn sub_threshold_input_is_invisible(
        p in profiles(),
        fracs in prop::collection::vec(0.0..=1.0f64, 1..400),
        rs in 2000.0..8000.0f64,
    ) {
        let (lo, hi) = (p.v_th_neg, p.v_th_pos);
        let mut d = Device::new(Arc::new(p), rs, 0);
        let before = d.rs().to_bits();
        for f in fracs {
            d.apply_sample(lo + f * (hi - lo), DT);
        }
        prop_assert_eq!(d.rs().to_bits(), before);
    }

    #[test]
    fn single_polarity_accumulates_monotonically(
        p in profiles(),
        negative in any::<bool>(),
        excess in prop::collection::vec(0.01..2.0f64, 1..200),
        rs in 2000.0..8000.0f64,
    ) {
        let mut d = Device::new(Arc::new(p.clone()), rs, 0);
        let mut prev = d.rs();
        for e in excess {
            let v = if negative { p.v_th_neg - e } else { p.v_th_pos + e };
            d.apply_sample(v, DT);
            if negative {
                prop_assert!(d.rs() >= prev);
            } else {
                prop_assert!(d.rs() <= prev);
            }
            prev = d.rs();
        }
    }

    #[test]
    fn reads_never_change_state(
        p in profiles(),
        samples in prop::collection::vec(-3.0..3.0f64, 1..300),
        read_mask in prop::collection::vec(any::<bool>(), 300),
    ) {
        let params = Arc::new(p);
        let mut plain = Device::new(Arc::clone(&params), 3000.0, 0);
        let mut probed = Device::new(params, 3000.0, 0);
        for (v, read) in samples.iter().zip(&read_mask) {
            plain.apply_sample(*v, DT);
            probed.apply_sample(*v, DT);
            if *read {
                probed.read();
            }
        }
        prop_assert_eq!(plain.rs().to_bits(), probed.rs().to_bits());
    }

    #[test]
    fn conditioning_inverts(
        samples in prop::collection::vec(-1.0..1.0f64, 1..200),
        gain in prop_oneof![-5.0..-0.1f64, 0.1..5.0f64],
        offset in -1.0..1.0f64,
    ) {
        let rec = Recording::new("r", samples, DT).unwrap();
        let p = ConditioningParams::new(gain, offset).unwrap();
        let back = condition(&condition(&rec, &p), &p.inverse());
        for (a, b) in rec.samples.iter().zip(&back.samples) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn raising_the_threshold_never_adds_bins(seed in 0u64..50, t1 in 1e-5..1e-2f64, factor in 1.0..10.0f64) {
        let cfg = SynthConfig { duration_s: 0.5, ..SynthConfig::default() };
        let rec = condition(&generate_recording(&cfg, seed).unwrap(), &ConditioningParams::new(2.8, 0.0).unwrap());
        let mut d = Device::new(Arc::new(DeviceParams::fig2d().with_noise(0.0, 1e-3)), 2500.0, seed);
        let trace = play(&mut d, &rec, &BiasingScheme::default());
        let loose = detect_bins(&trace, t1).unwrap();
        let strict = detect_bins(&trace, t1 * factor).unwrap();
        prop_assert!(strict.iter().all(|b| loose.contains(b)));
    }
}

#[test]
fn removing_mid_batch_reads_keeps_final_state() {
    let rec = condition(
        &generate_recording(
            &SynthConfig {
                duration_s: 1.0,
                ..SynthConfig::default()
            },
            3,
        )
        .unwrap(),
        &ConditioningParams::new(2.8, 0.0).unwrap(),
    );
    let params = Arc::new(DeviceParams::fig2d());
    let mut a = Device::new(Arc::clone(&params), 2500.0, 0);
    let mut b = Device::new(params, 2500.0, 0);
    let full = play(&mut a, &rec, &BiasingScheme::default());
    let sparse = play(
        &mut b,
        &rec,
        &BiasingScheme::new(1000, vec![0, 1000], 0.5).unwrap(),
    );
    assert_eq!(a.rs().to_bits(), b.rs().to_bits());
    assert_eq!(
        full.entries.last().unwrap().rs,
        sparse.entries.last().unwrap().rs
    );
}

#[test]
fn boundary_pairs_bracket_no_stimulation() {
    let rec = condition(
        &generate_recording(&SynthConfig::default(), 2).unwrap(),
        &ConditioningParams::new(2.8, 0.0).unwrap(),
    );
    let mut d = Device::new(Arc::new(DeviceParams::fig2d()), 2500.0, 0);
    let trace = play(&mut d, &rec, &BiasingScheme::default());
    assert!(trace.boundary_pairs().count() >= 50);
    assert!(trace.boundary_pairs().all(|(a, b)| a.rs == b.rs));
}

#[test]
fn planted_counts_follow_the_rate() {
    let cfg = SynthConfig::default();
    let expected = cfg.rate_hz * cfg.duration_s;
    let seeds = 200;
    let total: usize = (0..seeds)
        .map(|s| {
            generate_recording(&cfg, s)
                .unwrap()
                .ground_truth
                .unwrap()
                .len()
        })
        .sum();
    let mean = total as f64 / seeds as f64;
    // Mean of 200 Poisson draws: standard error sqrt(λ / 200).
    let se = (expected / seeds as f64).sqrt();
    assert!(
        (mean - expected).abs() < 3.0 * se,
        "mean {mean}, expected {expected}"
    );
}

#[test]
fn annotations_scale_with_gain() {
    let rec = generate_recording(&SynthConfig::default(), 5).unwrap();
    let p = ConditioningParams::new(-2.8, 0.3).unwrap();
    let out = condition(&rec, &p);
    for (a, b) in rec
        .ground_truth
        .unwrap()
        .iter()
        .zip(out.ground_truth.unwrap())
    {
        assert_eq!(b.amplitude, a.amplitude * -2.8);
        assert_eq!(a.sample_index, b.sample_index);
    }
}

#[test]
fn calibration_meets_its_postconditions() {
    let device = DeviceParams::fig2d();
    for seed in 0..10 {
        let recs: Vec<Recording> = (0..3)
            .map(|k| {
                generate_recording(
                    &SynthConfig {
                        duration_s: 1.0,
                        ..SynthConfig::default()
                    },
                    seed * 10 + k,
                )
                .unwrap()
            })
            .collect();
        let cal = calibrate_with(&recs, &device, &CalibrationOptions::with_headroom(0.12)).unwrap();
        let g = cal.params.gain;
        assert!((cal.event_scale * g - 1.12 * device.max_threshold()).abs() < 1e-9);
        assert!(cal.noise_floor * g < device.min_threshold());
    }
}

#[test]
fn flux_unit_matches_one_write_pulse() {
    // One 100 µs sample at 1.2 V moves the fig1 device exactly like x = 1.2.
    let params = DeviceParams::fig1();
    let r = params.response(Polarity::Negative);
    let mut d = Device::new(Arc::new(params.clone()), r.eval(0.0), 0);
    d.apply_sample(-1.2, PULSE_WIDTH_UNIT);
    assert!((d.rs() - r.eval(1.2)).abs() < 1e-9 * d.rs());
}

#[test]
fn array_pixels_are_independent_of_evaluation_order() {
    let grid = Grid::from_fn(3, 4, |r, c| {
        let cfg = SynthConfig {
            duration_s: 0.4,
            rate_hz: 20.0,
            ..SynthConfig::default()
        };
        let mut rec = generate_recording(&cfg, (r * 4 + c) as u64).unwrap();
        rec.id = format!("r{r}_c{c}");
        rec
    });
    let cfg = ArrayConfig {
        rows: 3,
        cols: 4,
        snapshot_times: vec![0.0, 0.2, 0.4],
        device_profile: DeviceParams::fig2d().with_noise(0.01, 1e-3),
        ..ArrayConfig::default()
    };
    let scheme = BiasingScheme::default();
    let serial = simulate_array_with(&grid, &cfg, &scheme, Execution::Serial).unwrap();
    let parallel = simulate_array_with(&grid, &cfg, &scheme, Execution::Parallel).unwrap();
    assert_eq!(serial, parallel);
    assert!(serial.snapshots[0].values.cells().iter().all(|v| *v == 1.0));

    // A pixel's result depends only on its own recording and index.
    let mut cells = grid.cells().to_vec();
    cells[5] = Recording::new("quiet", vec![0.0; cells[5].len()], cells[5].sample_period).unwrap();
    let altered = simulate_array_with(
        &Grid::from_vec(3, 4, cells).unwrap(),
        &cfg,
        &scheme,
        Execution::Parallel,
    )
    .unwrap();
    for i in (0..12).filter(|&i| i != 5) {
        assert_eq!(serial.traces.cells()[i], altered.traces.cells()[i]);
    }
}
