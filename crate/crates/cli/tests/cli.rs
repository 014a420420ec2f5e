use std::path::Path;
use std::process::{Command, Output};

use memsense::detect::{parse_bins, parse_oracle};
use memsense::device::{parse_pulse_trace, read_pulse_trace};
use memsense::kv::KvMap;
use memsense::playback::read_read_trace;
use memsense::signal::load_recording;

fn memsense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memsense"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn report(out: &Output) -> KvMap {
    KvMap::parse(&String::from_utf8_lossy(&out.stdout)).unwrap()
}

#[test]
fn help_lists_every_subcommand_and_flag() {
    let out = memsense(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in [
        "fit",
        "pulse",
        "thresholds",
        "synth",
        "synth-array",
        "detect",
        "array",
    ] {
        assert!(text.contains(cmd), "missing {cmd}");
    }
    let detect = String::from_utf8_lossy(&memsense(&["detect", "--help"]).stdout).into_owned();
    for flag in [
        "--profile",
        "--gain",
        "--offset",
        "--batch-size",
        "--read-stride",
        "--drs-threshold",
        "--amp-threshold",
        "--seed",
        "--out",
        "--config",
    ] {
        assert!(detect.contains(flag), "missing {flag}");
    }
}

#[test]
fn usage_errors_exit_2_and_data_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(memsense(&["detect", "--bogus"]).status.code(), Some(2));
    assert_eq!(memsense(&[]).status.code(), Some(2));
    let out = dir.path().join("t.csv");
    let unknown = memsense(&[
        "pulse",
        "--profile",
        "fig9",
        "--amplitude",
        "1",
        "--count",
        "3",
        "--out",
        p(&out),
    ]);
    assert_eq!(unknown.status.code(), Some(2));

    let missing = memsense(&["fit", "--input", p(&dir.path().join("none.csv"))]);
    assert_eq!(missing.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&missing.stderr);
    assert_eq!(stderr.trim().lines().count(), 1, "{stderr}");

    let cfg = dir.path().join("run.kv");
    std::fs::write(&cfg, "gain = 2.8\ncolour = blue\n").unwrap();
    let rec = dir.path().join("r.csv");
    assert!(memsense(&["synth", "--out", p(&rec)]).status.success());
    let bad = memsense(&[
        "detect",
        "--input",
        p(&rec),
        "--config",
        p(&cfg),
        "--out",
        p(&dir.path().join("d")),
    ]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("colour"));
}

#[test]
fn pulse_then_fit_recovers_reset_curve() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("pulse.csv");
    let out = memsense(&[
        "pulse",
        "--profile",
        "fig1",
        "--amplitude",
        "-1.2",
        "--width",
        "100e-6",
        "--count",
        "200",
        "--out",
        p(&trace),
    ]);
    assert!(out.status.success());
    let final_rs: f64 = report(&out).require("rs_final").unwrap();
    assert!((final_rs - 5000.0).abs() < 1.0, "{final_rs}");
    let pts = read_pulse_trace(&trace).unwrap();
    assert_eq!(pts.len(), 201);

    let fit_out = dir.path().join("fit.kv");
    let out = memsense(&["fit", "--input", p(&trace), "--out", p(&fit_out)]);
    assert!(out.status.success());
    let m = KvMap::load(&fit_out).unwrap();
    for (key, want) in [
        ("a", 4780.0),
        ("beta", 1.878e-4),
        ("b", -1075.0),
        ("gamma", -1.04e-1),
    ] {
        let got: f64 = m.require(key).unwrap();
        assert!(((got - want) / want).abs() < 1e-3, "{key}: {got}");
    }
}

#[test]
fn thresholds_bracket_fig2c() {
    let dir = tempfile::tempdir().unwrap();
    let out = memsense(&[
        "thresholds",
        "--profile",
        "fig2c",
        "--step",
        "0.05",
        "--out",
        p(dir.path()),
    ]);
    assert!(out.status.success());
    let m = KvMap::load(&dir.path().join("thresholds.kv")).unwrap();
    let pos: f64 = m.require("v_th_pos").unwrap();
    let neg: f64 = m.require("v_th_neg").unwrap();
    assert!((1.45..=1.5).contains(&pos) && (-1.7..=-1.65).contains(&neg));
    let staircase = std::fs::read_to_string(dir.path().join("staircase.csv")).unwrap();
    assert!(staircase.starts_with("level,amplitude_v,pulse,rs_ohm\n"));
}

#[test]
fn detect_outputs_parse_back_and_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("rec.csv");
    assert!(memsense(&["synth", "--seed", "3", "--out", p(&rec)])
        .status
        .success());
    let loaded = load_recording(&rec).unwrap();
    assert_eq!(loaded.len(), 63_440);
    assert!(loaded.ground_truth.is_some());

    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = memsense(&[
            "detect",
            "--input",
            p(&rec),
            "--profile",
            "fig2d",
            "--seed",
            "9",
            "--out",
            p(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in [
        "bins.csv",
        "oracle.csv",
        "scatter.csv",
        "reads.csv",
        "report.kv",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let bins = parse_bins(&std::fs::read_to_string(a.join("bins.csv")).unwrap()).unwrap();
    let oracle = parse_oracle(&std::fs::read_to_string(a.join("oracle.csv")).unwrap()).unwrap();
    let trace = read_read_trace(&a.join("reads.csv")).unwrap();
    let m = KvMap::load(&a.join("report.kv")).unwrap();
    assert_eq!(m.require::<usize>("total_bins").unwrap(), bins.len());
    assert_eq!(
        m.require::<usize>("total_oracle_events").unwrap(),
        oracle.len()
    );
    assert_eq!(m.require::<usize>("reads").unwrap(), trace.entries.len());
    assert_eq!(m.require::<f64>("compression_factor").unwrap(), 200.0);
}

#[test]
fn flags_override_config_values() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("rec.csv");
    let synth_cfg = dir.path().join("synth.kv");
    std::fs::write(&synth_cfg, "duration_s = 0.5\nrate_hz = 10\n").unwrap();
    assert!(
        memsense(&["synth", "--config", p(&synth_cfg), "--out", p(&rec)])
            .status
            .success()
    );
    let cfg = dir.path().join("run.kv");
    std::fs::write(&cfg, "gain = 1.0\nbatch_size = 500\n").unwrap();
    let out = memsense(&[
        "detect",
        "--input",
        p(&rec),
        "--config",
        p(&cfg),
        "--gain",
        "2.5",
        "--read-stride",
        "100",
        "--out",
        p(&dir.path().join("d")),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let m = report(&out);
    assert_eq!(m.require::<f64>("gain").unwrap(), 2.5);
    // 500-sample batches read every 100 samples: 6 reads per batch.
    let factor: f64 = m.require("compression_factor").unwrap();
    assert!((factor - 500.0 / 6.0).abs() < 1e-12);
}

#[test]
fn array_writes_snapshot_grids() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("grid.kv");
    std::fs::write(
        &cfg,
        "rows = 4\ncols = 3\nduration_s = 0.6\nclusters = 1:1:20\n",
    )
    .unwrap();
    let grid = dir.path().join("grid");
    assert!(
        memsense(&["synth-array", "--config", p(&cfg), "--out", p(&grid)])
            .status
            .success()
    );
    assert!(grid.join("r3_c2.csv").exists());
    let out_dir = dir.path().join("out");
    let out = memsense(&[
        "array",
        "--manifest",
        p(&grid.join("manifest.kv")),
        "--out",
        p(&out_dir),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for t in ["1.63", "3.27", "5.16"] {
        let text = std::fs::read_to_string(out_dir.join(format!("snapshot_{t}.csv"))).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.split(',').count() == 3));
    }
    assert!(out_dir.join("spike_counts.csv").exists());
    assert!(out_dir.join("centroids.csv").exists());

    std::fs::remove_file(grid.join("r0_c1.csv")).unwrap();
    let broken = memsense(&[
        "array",
        "--manifest",
        p(&grid.join("manifest.kv")),
        "--out",
        p(&out_dir),
    ]);
    assert_eq!(broken.status.code(), Some(1));
}

#[test]
fn pulse_trace_header_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    assert!(memsense(&[
        "pulse",
        "--amplitude",
        "0.8",
        "--count",
        "5",
        "--out",
        p(&trace)
    ])
    .status
    .success());
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(text.starts_with("x_flux,rs_ohm\n"));
    assert_eq!(parse_pulse_trace(&text).unwrap().len(), 6);
}
