use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gfmp_core::impedance::{return_ratio_assessment, stability_grid, z_eq_delay};
use gfmp_core::models::{grid_impedance_at_pcc, yv_conv, ControllerParams, GridParams, PlantParams, VaParams};
use gfmp_core::sim::TRACE_COLUMNS;
use serde_json::Value;
use tempfile::TempDir;

fn gfmp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gfmp"))
        .arg("--quiet")
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

fn manifest_outputs_exist(dir: &Path) {
    let m = json(dir, "manifest.json");
    assert_eq!(m["schema_version"], 1);
    for f in m["outputs"].as_array().unwrap() {
        assert!(dir.join(f.as_str().unwrap()).exists(), "{f}");
    }
}

fn analytic_gain_crossover() -> f64 {
    let (p, c) = (PlantParams::table1(), ControllerParams::table1());
    let zeq = z_eq_delay(&yv_conv(&VaParams::table1()), &c, &p).unwrap();
    let zg = grid_impedance_at_pcc(&GridParams::table1(), &p);
    return_ratio_assessment(&zeq, &zg, &stability_grid()).unwrap().gain_crossover_hz[0]
}

#[test]
fn design_prints_reference_resistance() {
    let d = TempDir::new().unwrap();
    let o = gfmp(d.path(), &["design"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("R_v_pi    = 25.69"), "{}", stdout(&o));
    let j = json(d.path(), "design.json");
    assert_eq!(j["schema_version"], 1);
    assert!((j["proposed"]["r_v_pi_ohm"].as_f64().unwrap() - 25.698).abs() < 5e-3);
    assert!(j["residual_ohm"].as_f64().unwrap() < 1e-9);
    manifest_outputs_exist(d.path());
}

#[test]
fn degenerate_design_is_bad_input() {
    let d = TempDir::new().unwrap();
    let cfg = d.path().join("c.toml");
    fs::write(&cfg, "[va_design_point]\nr_v_sigma_ohm = 0.9\n").unwrap();
    let o = gfmp(d.path(), &["--config", cfg.to_str().unwrap(), "design"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("error"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_bad_input() {
    let d = TempDir::new().unwrap();
    let cfg = d.path().join("c.toml");
    fs::write(&cfg, "[plant]\nl_f_mh = 3.4\n").unwrap();
    let o = gfmp(d.path(), &["--config", cfg.to_str().unwrap(), "design"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_keys_are_reported() {
    let d = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_gfmp"))
        .args(["--out", d.path().to_str().unwrap(), "design"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let e = stderr(&o);
    assert!(e.contains("plant.l_f_h = 0.0034"), "{e}");
    assert!(e.contains("va_design_point.r_v_sigma_ohm"), "{e}");
}

fn bands(dir: &Path, name: &str) -> Vec<(f64, f64)> {
    json(dir, name)["passivity"]["non_passive_bands"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| (b["f_lo_hz"].as_f64().unwrap(), b["f_hi_hz"].as_f64().unwrap()))
        .collect()
}

#[test]
fn conventional_delay_is_non_passive() {
    let d = TempDir::new().unwrap();
    let o = gfmp(d.path(), &["impedance", "--va", "conv", "--variant", "delay"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!bands(d.path(), "passivity_conventional_delay.json").is_empty());
    let csv = fs::read_to_string(d.path().join("zeq_conventional_delay.csv")).unwrap();
    assert!(csv.starts_with("f_hz,re_zeq_ohm,im_zeq_ohm,mag_db,phase_deg\n"));
    assert!(d.path().join("yv_inv_conventional.csv").exists());
    manifest_outputs_exist(d.path());
}

#[test]
fn proposed_delay_is_passive_to_10k() {
    let d = TempDir::new().unwrap();
    let o = gfmp(d.path(), &["impedance", "--va", "prop", "--variant", "delay"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let b = bands(d.path(), "passivity_proposed_delay.json");
    assert!(b.is_empty(), "non-passive bands {b:?}");
}

#[test]
fn band_onsets_agree_between_ideal_and_delay() {
    let d = TempDir::new().unwrap();
    for v in ["ideal", "delay"] {
        let o = gfmp(d.path(), &["impedance", "--va", "conv", "--variant", v]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let ideal = bands(d.path(), "passivity_conventional_ideal.json")[0].0;
    let delay = bands(d.path(), "passivity_conventional_delay.json")[0].0;
    assert!((delay - ideal).abs() / ideal <= 0.15, "{ideal} vs {delay}");
}

#[test]
fn closed_form_needs_series_admittance() {
    let d = TempDir::new().unwrap();
    let o = gfmp(d.path(), &["impedance", "--va", "prop", "--variant", "closed"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn grid_spec_and_calibration() {
    let d = TempDir::new().unwrap();
    let o = gfmp(
        d.path(),
        &["impedance", "--va", "conv", "--grid-spec", "scr=4,xr=4", "--calibrate"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let j = json(d.path(), "passivity_conventional_delay.json");
    let k = j["calibration"]["k_cc_p"].as_f64().unwrap();
    assert!((5.0..=200.0).contains(&k));
    assert!(stderr(&o).contains("calibrated K_cc,p"));
    let g = j["grid"]["r_g_ohm"].as_f64().unwrap();
    assert!((g - GridParams::table1().r_g).abs() < 1e-12);
    assert_eq!(gfmp(d.path(), &["impedance", "--grid-spec", "scr=4"]).status.code(), Some(2));
}

#[test]
fn default_schedule_restabilizes() {
    let d = TempDir::new().unwrap();
    let o = gfmp(d.path(), &["simulate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = json(d.path(), "summary.json");
    assert_eq!(s["schema_version"], 1);
    assert_eq!(s["outcome"]["kind"], "completed");
    assert_eq!(s["verdict"], "restabilized");
    let iv = s["intervals"].as_array().unwrap();
    assert_eq!(iv.len(), 3);
    assert_eq!(iv[1]["mode"], "conventional");
    assert!(iv[1]["harmonic_rms_peak_a"].as_f64().unwrap() > 10.0 * iv[1]["harmonic_rms_start_a"].as_f64().unwrap());
    assert!(iv[1]["growth_rate_per_s"].as_f64().unwrap() > 0.0);
    assert!(iv[2]["growth_rate_per_s"].as_f64().unwrap() < 0.0);
    manifest_outputs_exist(d.path());
}

#[test]
fn proposed_only_holds_power() {
    let d = TempDir::new().unwrap();
    let o = gfmp(d.path(), &["simulate", "--schedule", "proposed", "--t-end", "1.0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = json(d.path(), "summary.json");
    assert_eq!(s["outcome"]["kind"], "completed");
    assert_eq!(s["verdict"], "stable");
    let p = s["steady_state"]["p_mean_w"].as_f64().unwrap();
    assert!((p - 2000.0).abs() < 0.02 * 3000.0, "{p}");
}

#[test]
fn conventional_only_is_flagged() {
    let d = TempDir::new().unwrap();
    let o = gfmp(d.path(), &["simulate", "--schedule", "conventional", "--t-end", "1.0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = json(d.path(), "summary.json");
    assert_eq!(s["verdict"], "sustained_oscillation");
    assert!(s["saturation"]["fraction"].as_f64().unwrap() > 0.1);

    let cfg = d.path().join("c.toml");
    fs::write(&cfg, "[plant]\nsaturation = false\n").unwrap();
    let o = gfmp(
        d.path(),
        &["--config", cfg.to_str().unwrap(), "simulate", "--schedule", "conventional", "--t-end", "1.0"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let s = json(d.path(), "summary.json");
    assert_eq!(s["verdict"], "diverged");
    assert!(s["outcome"]["t_s"].as_f64().unwrap() < 1.0);
}

#[test]
fn bad_schedule_is_bad_input() {
    let d = TempDir::new().unwrap();
    let o = gfmp(d.path(), &["simulate", "--schedule", "prop@0,conv@0.4,prop@0.2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for d in [&a, &b] {
        assert!(gfmp(d.path(), &["simulate"]).status.success());
    }
    for f in ["trace.csv", "summary.json"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn manifest_config_round_trips() {
    let d = TempDir::new().unwrap();
    let cfg = d.path().join("c.toml");
    fs::write(&cfg, "[controller]\nk_cc_p_ohm = 9.5\n[grid]\nscr = 3.0\n").unwrap();
    assert!(gfmp(d.path(), &["--config", cfg.to_str().unwrap(), "design"]).status.success());
    let first = json(d.path(), "manifest.json")["resolved_config"].as_str().unwrap().to_string();
    let snap = d.path().join("snap.toml");
    fs::write(&snap, &first).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_gfmp"))
        .args(["--out", d.path().to_str().unwrap(), "--config", snap.to_str().unwrap(), "design"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(!stderr(&o).contains("defaults in use"), "{}", stderr(&o));
    let second = json(d.path(), "manifest.json")["resolved_config"].as_str().unwrap().to_string();
    assert_eq!(first, second);
}

#[test]
fn scan_closure_on_proposed_defaults() {
    let d = TempDir::new().unwrap();
    let o = gfmp(d.path(), &["scan"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let j = json(d.path(), "scan.json");
    assert_eq!(j["result"]["records"].as_array().unwrap().len(), 20);
    assert!(j["max_mag_err_pct"].as_f64().unwrap() <= 5.0);
    assert!(j["max_phase_err_deg"].as_f64().unwrap() <= 5.0);
    assert!(d.path().join("scan.csv").exists());
}

#[test]
fn scan_edge_cases() {
    let d = TempDir::new().unwrap();
    let cfg = d.path().join("c.toml");
    fs::write(&cfg, "[scan]\nfrequencies_hz = []\n").unwrap();
    let o = gfmp(d.path(), &["--config", cfg.to_str().unwrap(), "scan"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));
    let o = gfmp(d.path(), &["scan", "--frequencies", "150,60"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("within 5 Hz"), "{}", stderr(&o));
}

#[test]
fn fft_of_unstable_interval() {
    let d = TempDir::new().unwrap();
    assert!(gfmp(d.path(), &["simulate"]).status.success());
    let trace = d.path().join("trace.csv");
    let o = gfmp(d.path(), &["fft", trace.to_str().unwrap(), "--t0", "0.4", "--t1", "0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let j = json(d.path(), "spectrum.json");
    let f = j["report"]["dominant_harmonic_hz"].as_f64().unwrap();
    let fc = analytic_gain_crossover();
    assert!((f - fc).abs() / fc <= 0.10, "dominant {f} Hz vs crossover {fc} Hz");
    let csv = fs::read_to_string(d.path().join("spectrum.csv")).unwrap();
    assert!(csv.starts_with("f_hz,magnitude\n"));
}

fn two_tone_fixture(path: &Path) {
    let fs_hz = 20_000.0;
    let mut out = TRACE_COLUMNS.join(",") + "\n";
    for k in 0..10_000 {
        let t = k as f64 / fs_hz;
        let ia = (2.0 * PI * 60.0 * t).cos() + 0.3 * (2.0 * PI * 350.0 * t).cos();
        let mut row = vec![0.0; 11];
        row[0] = t;
        row[5] = ia;
        let mut line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        line.push("proposed".into());
        out += &(line.join(",") + "\n");
    }
    fs::write(path, out).unwrap();
}

#[test]
fn fft_recovers_two_tone_fixture() {
    let d = TempDir::new().unwrap();
    let trace = d.path().join("two_tone.csv");
    two_tone_fixture(&trace);
    for w in ["rectangular", "hann"] {
        let o = gfmp(
            d.path(),
            &["fft", trace.to_str().unwrap(), "--window", w, "--t0", "0", "--t1", "0.5", "--plot-scripts"],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        let j = json(d.path(), "spectrum.json");
        assert!((j["report"]["dominant_harmonic_hz"].as_f64().unwrap() - 350.0).abs() < 1e-9);
        assert!((j["report"]["dominant_magnitude"].as_f64().unwrap() - 0.3).abs() < 1e-9, "{w}");
        assert!(d.path().join("plot_spectrum.py").exists());
    }
}

#[test]
fn fft_argument_errors() {
    let d = TempDir::new().unwrap();
    let trace = d.path().join("two_tone.csv");
    two_tone_fixture(&trace);
    let t = trace.to_str().unwrap();
    assert_eq!(gfmp(d.path(), &["fft", t, "--t0", "0.3", "--t1", "0.2"]).status.code(), Some(2));
    assert_eq!(gfmp(d.path(), &["fft", t, "--t0", "0.0", "--t1", "0.05"]).status.code(), Some(2));
    assert_eq!(gfmp(d.path(), &["fft", t, "--channel", "bogus", "--t0", "0", "--t1", "0.5"]).status.code(), Some(2));
    let bad = d.path().join("bad.csv");
    fs::write(&bad, "a,b\n1,2\n").unwrap();
    assert_eq!(gfmp(d.path(), &["fft", bad.to_str().unwrap()]).status.code(), Some(2));
}
