use std::f64::consts::PI;

use gfmp_core::impedance::{
    default_grid, passivity_scan_with, return_ratio_assessment, stability_grid, z_eq_delay,
    z_eq_ideal, ScanSettings, Verdict,
};
use gfmp_core::measurement::{spectrum_of_samples, FftOptions, Window};
use gfmp_core::models::{
    design_proposed_va, design_residual, grid_impedance_at_pcc, yv_conv, yv_prop, zg_from_scr,
    ControllerParams, DesignPoint, GridParams, PlantParams, ProposedVaParams, VaParams,
};
use gfmp_core::sim::plant::{PlantModel, PlantState};
use gfmp_core::tf::{frequency_response, Complex, FrequencyGrid, TransferElement};
use proptest::prelude::*;

fn rel(a: Complex, b: Complex) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(f64::MIN_POSITIVE)
}

fn coeffs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.1..10.0f64, 1..=4)
}

fn element() -> impl Strategy<Value = TransferElement> {
    (coeffs(), coeffs(), 0.0..2e-4f64).prop_map(|(n, d, td)| {
        TransferElement::rational(n, d)
            .unwrap()
            .series(TransferElement::delay(td).unwrap())
    })
}

fn proposed() -> impl Strategy<Value = ProposedVaParams> {
    (0.01..2.0f64, 1.0..100.0f64, 1e-3..50e-3f64)
        .prop_map(|(s, p, l)| ProposedVaParams::new(s, p, l).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn series_and_parallel_are_product_and_sum(a in element(), b in element(), w in 1.0..1e5f64) {
        let s = Complex::new(0.0, w);
        let (va, vb) = (a.evaluate(s).unwrap(), b.evaluate(s).unwrap());
        prop_assert!(rel(a.clone().series(b.clone()).evaluate(s).unwrap(), va * vb) <= 1e-12);
        prop_assert!(rel(a.parallel(b).evaluate(s).unwrap(), va + vb) <= 1e-12);
    }

    #[test]
    fn inverse_is_reciprocal(a in element(), w in 1.0..1e5f64) {
        let s = Complex::new(0.0, w);
        let v = a.evaluate(s).unwrap();
        prop_assert!(rel(a.inverse().evaluate(s).unwrap(), v.inv()) <= 1e-12);
    }

    #[test]
    fn delay_has_unit_magnitude(td in 0.0..1e-3f64, w in 0.0..1e6f64) {
        let d = TransferElement::delay(td).unwrap().at_omega(w).unwrap();
        prop_assert!((d.norm() - 1.0).abs() <= 1e-12);
        let mut err = (d.arg() + w * td).rem_euclid(2.0 * PI);
        if err > PI {
            err -= 2.0 * PI;
        }
        prop_assert!(err.abs() <= 1e-9);
    }

    #[test]
    fn conjugate_symmetry(a in element(), w in 1.0..1e5f64, sigma in -50.0..50.0f64) {
        let s = Complex::new(sigma, w);
        prop_assert!(rel(a.evaluate(s).unwrap().conj(), a.evaluate(s.conj()).unwrap()) <= 1e-12);
    }

    #[test]
    fn design_round_trip(r_v in 0.05..5.0f64, l_v in 1e-3..50e-3f64, frac in 0.0..0.95f64) {
        let va = VaParams::new(r_v, l_v).unwrap();
        let d = DesignPoint::matching(&va, 2.0 * PI * 60.0, frac * r_v);
        let p = design_proposed_va(&d).unwrap();
        prop_assert!(design_residual(&d, &p) <= 1e-9 * (r_v + d.x_v));
    }

    #[test]
    fn proposed_resistance_rises_between_its_limits(p in proposed()) {
        let z = yv_prop(&p).inverse();
        let mut last = f64::NEG_INFINITY;
        for k in 0..200 {
            let f = 1.0 * 1e5f64.powf(k as f64 / 199.0);
            let r = z.at_hz(f).unwrap().re;
            prop_assert!(r >= last - 1e-9 * r.abs());
            prop_assert!(r >= p.r_v_sigma - 1e-9 && r <= p.r_v_sigma + p.r_v_pi + 1e-9);
            last = r;
        }
    }

    #[test]
    fn conventional_resistance_is_constant(r_v in 0.01..10.0f64, l_v in 1e-4..0.1f64, f in 1.0..1e4f64) {
        let z = yv_conv(&VaParams::new(r_v, l_v).unwrap()).inverse().at_hz(f).unwrap();
        prop_assert!((z.re - r_v).abs() <= 1e-9 * r_v.max(z.norm()));
    }

    #[test]
    fn grid_from_strength_identity(scr in 0.5..20.0f64, xr in 0.2..20.0f64) {
        let w = 2.0 * PI * 60.0;
        let g = GridParams::from_strength(220.0, scr, xr, 3000.0);
        let (filled, zg) = zg_from_scr(&g, w);
        let z = zg.at_omega(w).unwrap();
        prop_assert!((z.norm() - 220.0 * 220.0 / (scr * 3000.0)).abs() <= 1e-9 * z.norm());
        prop_assert!((z.im / z.re - xr).abs() <= 1e-9 * xr);
        prop_assert!((filled.l_g * w - z.im).abs() <= 1e-12 * z.im);
    }

    #[test]
    fn zero_delay_reduces_to_ideal(p in proposed(), k in 2.0..40.0f64) {
        let plant = PlantParams::table1();
        let c = ControllerParams::table1().with_proportional_gain(k).with_delay(0.0);
        let grid = FrequencyGrid::from_hz(
            &(0..500).map(|i| 10.0 * 1000f64.powf(i as f64 / 499.0)).collect::<Vec<_>>(),
        ).unwrap();
        let va = yv_prop(&p);
        let a = frequency_response(&z_eq_ideal(&va, &c, &plant), &grid).unwrap();
        let b = frequency_response(&z_eq_delay(&va, &c, &plant).unwrap(), &grid).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!(rel(*x, *y) <= 1e-9);
        }
    }

    #[test]
    fn lossless_network_keeps_energy(
        l_f in 1e-3..10e-3f64,
        c_f in 5e-6..100e-6f64,
        l_g in 1e-3..30e-3f64,
        dt in 1e-7..5e-5f64,
        x in prop::array::uniform6(-100.0..100.0f64),
    ) {
        let p = PlantParams { l_f, c_f, v_dc: None };
        let g = GridParams { r_g: 0.0, l_g, ..GridParams::table1() };
        let m = PlantModel::new(&p, &g, dt).unwrap();
        let mut s = PlantState {
            i_f: Complex::new(x[0], x[1]),
            v_c: Complex::new(x[2], x[3]),
            i_g: Complex::new(x[4], x[5]),
        };
        let zero = Complex::new(0.0, 0.0);
        for _ in 0..50 {
            let next = m.step(&s, zero, zero);
            let (e0, e1) = (s.stored_energy(&p, &g), next.stored_energy(&p, &g));
            prop_assert!((e1 - e0).abs() <= 1e-9 * e0);
            s = next;
        }
    }

    #[test]
    fn window_choice_keeps_the_tone(f in 150.0..900.0f64, a in 0.05..2.0f64, phase in 0.0..(2.0 * PI)) {
        let ts = 1.0 / 20e3;
        let x: Vec<f64> = (0..10_000)
            .map(|k| {
                let t = k as f64 * ts;
                (2.0 * PI * 60.0 * t).cos() + a * (2.0 * PI * f * t + phase).cos()
            })
            .collect();
        let opts = FftOptions::default();
        let hann = spectrum_of_samples(&x, ts, 0.0, Window::Hann, &opts).unwrap();
        let rect = spectrum_of_samples(&x, ts, 0.0, Window::Rectangular, &opts).unwrap();
        let bin = hann.window.bin_hz;
        prop_assert!((hann.dominant_harmonic_hz - f).abs() <= bin);
        prop_assert!((rect.dominant_harmonic_hz - f).abs() <= bin);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn passive_elements_never_destabilize(
        r1 in 0.1..10.0f64, l1 in 1e-4..0.05f64, r2 in 0.1..10.0f64, l2 in 1e-4..0.05f64,
    ) {
        let a = TransferElement::polynomial(vec![r1, l1]);
        let b = TransferElement::polynomial(vec![r2, l2]);
        let settings = ScanSettings::default();
        prop_assert!(passivity_scan_with(&a, &default_grid(), &settings).unwrap().is_passive());
        prop_assert!(passivity_scan_with(&b, &default_grid(), &settings).unwrap().is_passive());
        let v = return_ratio_assessment(&a, &b, &stability_grid()).unwrap().verdict;
        prop_assert!(v != Verdict::Unstable);
    }

    #[test]
    fn passive_points_stay_within_ninety_degrees(p in proposed(), k in 2.0..40.0f64) {
        let plant = PlantParams::table1();
        let c = ControllerParams::table1().with_proportional_gain(k);
        let z = z_eq_delay(&yv_prop(&p), &c, &plant).unwrap();
        let r = frequency_response(&z, &default_grid()).unwrap();
        for v in &r.values {
            if v.re >= 0.0 {
                prop_assert!(v.arg().abs() <= PI / 2.0 + 1e-9);
            }
        }
    }

    #[test]
    fn band_edges_are_real_part_zeros(k in 5.0..40.0f64, td in 0.0..100e-6f64) {
        let plant = PlantParams::table1();
        let c = ControllerParams::table1().with_proportional_gain(k).with_delay(td);
        let z = z_eq_delay(&yv_conv(&VaParams::table1()), &c, &plant).unwrap();
        let report = passivity_scan_with(&z, &default_grid(), &ScanSettings::default()).unwrap();
        let top = *report.grid_hz.last().unwrap();
        for b in &report.non_passive_bands {
            for f in [b.f_lo_hz, b.f_hi_hz] {
                if f > report.grid_hz[0] && f < top {
                    // a sign change through a resonance pole also ends a band
                    let v = z.at_hz(f).unwrap();
                    prop_assert!(v.re.abs() < 1e-3 || v.norm() > 1e3, "Z = {v} at {f} Hz");
                }
            }
        }
    }

    #[test]
    fn pcc_grid_stays_passive(scr in 1.5..10.0f64, xr in 1.0..10.0f64) {
        let g = zg_from_scr(&GridParams::from_strength(220.0, scr, xr, 3000.0), 2.0 * PI * 60.0).0;
        let zg = grid_impedance_at_pcc(&g, &PlantParams::table1());
        let r = frequency_response(&zg, &default_grid()).unwrap();
        prop_assert!(r.values.iter().all(|v| v.re >= -1e-12));
    }
}
