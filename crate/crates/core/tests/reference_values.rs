//! Reference values of the laboratory configuration.

use gfmp_core::impedance::{z_eq_conv_closed_form, z_eq_delay, z_eq_ideal};
use gfmp_core::measurement::{compare_responses, frequency_scan, ScanConfig};
use gfmp_core::models::{yv_conv, ControllerParams, PlantParams, VaParams};
use gfmp_core::sim::SimConfig;
use gfmp_core::tf::{frequency_response, log_grid};

fn conventional() -> (VaParams, ControllerParams, PlantParams) {
    (VaParams::table1(), ControllerParams::table1(), PlantParams::table1())
}

#[test]
fn closed_form_tracks_pr_form_in_harmonic_range() {
    let (va, c, p) = conventional();
    let full = z_eq_ideal(&yv_conv(&va), &c, &p);
    let approx = z_eq_conv_closed_form(&va, &c, &p);
    let grid = log_grid(200.0, 1000.0, 200).unwrap();
    let cmp = compare_responses(
        &frequency_response(&full, &grid).unwrap(),
        &frequency_response(&approx, &grid).unwrap(),
    )
    .unwrap();
    assert!(
        cmp.max_mag_err_pct <= 1.0,
        "{:.2}% at {:.1} Hz",
        cmp.max_mag_err_pct,
        cmp.worst_f_hz
    );
}

#[test]
fn delay_leaves_low_frequency_response_alone() {
    let (va, c, p) = conventional();
    let y = yv_conv(&va);
    let grid = log_grid(50.0, 290.0, 400).unwrap().filter_hz(|f| (f - 60.0).abs() > 5.0).unwrap();
    let ideal = frequency_response(&z_eq_ideal(&y, &c, &p), &grid).unwrap();
    let delayed = frequency_response(&z_eq_delay(&y, &c, &p).unwrap(), &grid).unwrap();
    let cmp = compare_responses(&ideal, &delayed).unwrap();
    assert!(
        cmp.max_mag_err_pct <= 10.0,
        "{:.2}% at {:.1} Hz",
        cmp.max_mag_err_pct,
        cmp.worst_f_hz
    );
}

#[test]
fn scan_matches_model_at_three_frequencies() {
    let cfg = SimConfig::table1();
    let scan = ScanConfig {
        frequencies_hz: vec![150.0, 348.0, 1000.0],
        ..ScanConfig::with_amplitude_for(cfg.grid.v_g_ll_rms)
    };
    let r = frequency_scan(&scan, &cfg).unwrap();
    for rec in &r.records {
        assert!(rec.mag_err_pct.unwrap() <= 5.0, "{rec:?}");
        assert!(rec.phase_err_deg.unwrap() <= 5.0, "{rec:?}");
    }
}
