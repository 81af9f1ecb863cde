use gfmp_core::impedance::{default_grid, passivity_scan, z_eq_delay};
use gfmp_core::measurement::{fft_spectrum, frequency_scan, Channel, FftOptions, ScanConfig, Window};
use gfmp_core::models::table1;
use gfmp_core::report::{summarize, TraceVerdict};
use gfmp_core::sim::controller::ReferenceSource;
use gfmp_core::sim::{run, table1_admittances, InitialCondition, Outcome, SimConfig, SimTrace};
use gfmp_core::tf::Complex;

fn window(tr: &SimTrace, t0: f64, t1: f64) -> Vec<Complex> {
    tr.records
        .iter()
        .filter(|r| r.t_s >= t0 && r.t_s < t1)
        .map(|r| r.i)
        .collect()
}

#[test]
fn proposed_holds_power_reference() {
    let cfg = SimConfig::table1();
    let tr = run(&cfg).unwrap();
    assert_eq!(tr.outcome, Outcome::Completed);
    let p: Vec<f64> = tr.records.iter().filter(|r| r.t_s >= 0.8).map(|r| r.p).collect();
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    assert!((mean - 2000.0).abs() < 0.02 * table1::P_RATED_W, "P = {mean}");
    assert!(p.iter().all(|x| (x - 2000.0).abs() < 0.02 * table1::P_RATED_W));
}

#[test]
fn identical_configs_give_identical_traces() {
    let cfg = SimConfig::table1_mode_transition();
    let (a, b) = (run(&cfg).unwrap(), run(&cfg).unwrap());
    assert_eq!(a.records.len(), b.records.len());
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!(x.i.re.to_bits(), y.i.re.to_bits());
        assert_eq!(x.v_pcc.im.to_bits(), y.v_pcc.im.to_bits());
        assert_eq!(x.p.to_bits(), y.p.to_bits());
    }
}

#[test]
fn halving_plant_step_barely_moves_the_trace() {
    let mut cfg = SimConfig::table1();
    cfg.t_end = 0.3;
    cfg.initial = InitialCondition::Zero;
    let coarse = run(&cfg).unwrap();
    cfg.plant_substeps *= 2;
    let fine = run(&cfg).unwrap();
    let (a, b) = (window(&coarse, 0.25, 0.3), window(&fine, 0.25, 0.3));
    let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let norm: f64 = a.iter().map(|x| x.norm_sqr()).sum();
    let rel = (diff / norm).sqrt();
    assert!(rel < 1e-3, "relative RMS change {rel:.2e}");
}

#[test]
fn conventional_oscillation_lies_in_the_non_passive_band() {
    let cfg = SimConfig::table1_mode_transition();
    let tr = run(&cfg).unwrap();
    let (_, conv) = table1_admittances();
    let zeq = z_eq_delay(&conv.element(), &cfg.controller, &cfg.plant).unwrap();
    let bands = passivity_scan(&zeq, &default_grid()).unwrap().non_passive_bands;
    let f = fft_spectrum(&tr, Channel::IA, Window::Hann, 0.4, 0.5, &FftOptions::default())
        .unwrap()
        .dominant_harmonic_hz;
    assert!(
        bands.iter().any(|b| f >= 0.95 * b.f_lo_hz && f <= 1.05 * b.f_hi_hz),
        "{f} Hz outside {bands:?}"
    );
    let s = summarize(&tr, &cfg);
    assert_eq!(s.verdict, TraceVerdict::Restabilized);
    let conv_iv = &s.intervals[1];
    assert!(conv_iv.growth_rate_per_s.unwrap() > 0.0);
    assert!(s.intervals[2].harmonic_rms_end_a < 0.01 * conv_iv.harmonic_rms_peak_a);
}

#[test]
fn current_loop_tracks_a_synchronous_reference() {
    let mut cfg = SimConfig::table1();
    cfg.t_end = 0.3;
    cfg.initial = InitialCondition::Zero;
    cfg.reference = ReferenceSource::Synchronous {
        value: Complex::new(6.0, -2.0),
    };
    let tr = run(&cfg).unwrap();
    // the controller sees the current T_d late, so i leads i_ref by w1 T_d
    let lead = Complex::from_polar(1.0, cfg.controller.omega_1 * cfg.controller.t_d);
    let worst = tr
        .records
        .iter()
        .filter(|r| r.t_s >= 0.25)
        .map(|r| (r.i - r.i_ref * lead).norm() / r.i_ref.norm())
        .fold(0.0, f64::max);
    assert!(worst <= 0.02, "tracking error {worst}");
}

#[test]
fn scan_is_linear_in_the_injection() {
    let cfg = SimConfig::table1();
    let base = ScanConfig {
        frequencies_hz: vec![250.0, 900.0],
        ..ScanConfig::with_amplitude_for(cfg.grid.v_g_ll_rms)
    };
    let z = |scale: f64| {
        let sc = ScanConfig {
            injection_amplitude: base.injection_amplitude * scale,
            ..base.clone()
        };
        frequency_scan(&sc, &cfg)
            .unwrap()
            .records
            .into_iter()
            .map(|r| r.z_measured.unwrap())
            .collect::<Vec<_>>()
    };
    let nominal = z(1.0);
    for scale in [0.5, 2.0] {
        for (a, b) in nominal.iter().zip(z(scale)) {
            let d = (b - a).norm() / a.norm();
            assert!(d < 0.01, "x{scale}: {d}");
        }
    }
}
