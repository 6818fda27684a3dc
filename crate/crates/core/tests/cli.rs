mod common;

use std::fs;
use std::path::Path;

use hexapod_cpg::cli::{dispatch, RunManifest, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, FIXED_POINT_HEADER, SWEEP_HEADER};
use hexapod_cpg::neuron::ParamPreset;

fn run(args: &[&str]) -> i32 {
    dispatch(std::iter::once("hexapod-cpg").chain(args.iter().copied()))
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

fn rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn torus_surrogate_half_alpha_lists_twelve_points() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    assert_eq!(run(&["torus", "--hsource", "app", "--alpha", "0.5", "--xi", "0.01", "--out-dir", out.to_str().unwrap()]), EXIT_OK);
    assert_eq!(header(&out.join("fixed_points.csv")), FIXED_POINT_HEADER);
    assert_eq!(rows(&out.join("fixed_points.csv")), 12);
    assert_eq!(header(&out.join("nullclines.csv")), "curve,x0,y0,x1,y1");
    assert!(out.join("manifest.json").exists());
}

#[test]
fn unknown_flag_is_usage_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("u");
    assert_eq!(run(&["torus", "--no-such-flag", "--out-dir", out.to_str().unwrap()]), EXIT_USAGE);
    assert!(!out.exists());
    assert_eq!(run(&["network", "--xi", "0.02", "--couplings", "nope", "--out-dir", out.to_str().unwrap()]), EXIT_USAGE);
    assert!(!out.exists());
}

#[test]
fn numeric_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("n");
    // The tabulated cell has no burst cycle at this speed.
    assert_eq!(run(&["single-cell", "--preset", "delta-control", "--xi", "0.02", "--out-dir", out.to_str().unwrap()]), EXIT_NUMERIC);
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let args = ["bifurcate", "--hsource", "app", "--alpha", "0.5", "--xi-range", "0.009:0.023", "--steps", "200", "--out-dir", a.to_str().unwrap()];
    assert_eq!(run(&args), EXIT_OK);
    assert_eq!(header(&a.join("branches.csv")), "branch_id,xi,theta1,theta2,class");
    assert_eq!(header(&a.join("events.csv")), "xi,kind,branch_ids");
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.subcommand, "bifurcate");
    assert_eq!(manifest.outputs, vec!["branches.csv", "events.csv"]);
    assert_eq!(
        run(&["--from-manifest", a.join("manifest.json").to_str().unwrap(), "--out-dir", b.to_str().unwrap()]),
        EXIT_OK
    );
    for f in &manifest.outputs {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn eta_and_fourier_from_surrogate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e");
    let o = out.to_str().unwrap();
    assert_eq!(run(&["eta", "--hsource", "app", "--n", "5", "--out-dir", o]), EXIT_OK);
    assert_eq!(header(&out.join("eta.csv")), "xi,eta_frac");
    assert_eq!(rows(&out.join("eta.csv")), 5);
    assert_eq!(run(&["fourier", "--hsource", "app", "--xi", "0.015", "--out-dir", o]), EXIT_OK);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("fourier.json")).unwrap()).unwrap();
    for k in ["a0", "a1", "b1", "a2", "b2", "residual"] {
        assert!(v[k].is_number(), "{k}");
    }
}

#[test]
fn parameter_file_drives_sweep_iprc_and_hfun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cell.txt");
    let preset = common::bursting(ParamPreset::delta_control());
    fs::write(&cfg, preset.params.to_config()).unwrap();
    let out = dir.path().join("s");
    let (c, o) = (cfg.to_str().unwrap(), out.to_str().unwrap());
    assert_eq!(run(&["sweep", "--preset", c, "--n", "2", "--out-dir", o]), EXIT_OK);
    assert_eq!(header(&out.join("sweep.csv")), SWEEP_HEADER);
    assert_eq!(rows(&out.join("sweep.csv")), 2);
    assert_eq!(run(&["iprc", "--preset", c, "--xi", "0.02", "--out-dir", o]), EXIT_OK);
    assert_eq!(header(&out.join("iprc.csv")), "t,Z_v,Z_m,Z_w,Z_s");
    assert_eq!(run(&["hfun", "--preset", c, "--xi", "0.02", "--out-dir", o]), EXIT_OK);
    assert_eq!(header(&out.join("hfun.csv")), "theta_frac,H");
    assert!(rows(&out.join("hfun.csv")) > 100);
}

#[test]
fn torus_accepts_sampled_h_file_and_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let hf = dir.path().join("h.csv");
    let n = 256;
    let text: String = std::iter::once("theta_frac,H\n".to_string())
        .chain((0..n).map(|k| {
            let x = k as f64 / n as f64;
            let h = hexapod_cpg::phase::happ_eval(0.012, x);
            format!("{x},{h}\n")
        }))
        .collect();
    fs::write(&hf, text).unwrap();
    let out = dir.path().join("f");
    let args = ["torus", "--hsource", "file", "--h-file", hf.to_str().unwrap(), "--alpha", "0.5", "--trajectory", "0.3,0.2", "--out-dir", out.to_str().unwrap()];
    assert_eq!(run(&args), EXIT_OK);
    assert_eq!(header(&out.join("trajectory.csv")), "t,theta1,theta2");
    assert!(rows(&out.join("fixed_points.csv")) >= 4);
}
