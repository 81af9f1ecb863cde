//! Equivalent output impedance of the VA-CC inverter, passivity scanning and
//! return-ratio stability assessment.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{
    gcc_pr, ControllerParams, PlantParams, VaParams, VirtualAdmittance,
};
use crate::tf::{
    frequency_response, unwrap_phase, Complex, FrequencyGrid, FrequencyResponse, TfError,
    TransferElement,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImpedanceError {
    #[error(transparent)]
    Tf(#[from] TfError),
    #[error(
        "grid too coarse: phase step of {step_deg:.1} deg between {f_lo_hz:.3} Hz and {f_hi_hz:.3} Hz; \
         increase points per decade"
    )]
    GridTooCoarse {
        f_lo_hz: f64,
        f_hi_hz: f64,
        step_deg: f64,
    },
    #[error("the closed-form impedance requires a series R-L admittance")]
    ClosedFormNeedsSeriesRl,
    #[error("calibration range is empty or invalid")]
    InvalidCalibration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeqVariant {
    /// `1/Y_v + sL_f / (G_cc Y_v)` with the full PR controller.
    Ideal,
    /// Proportional-gain approximation for the series R-L admittance.
    ConventionalClosedForm,
    /// Includes the control delay `T_d`.
    DelayAware,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeqModel {
    pub variant: ZeqVariant,
    pub va: VirtualAdmittance,
    pub controller: ControllerParams,
    pub plant: PlantParams,
}

impl ZeqModel {
    pub fn build(&self) -> Result<TransferElement, ImpedanceError> {
        match (self.variant, &self.va) {
            (ZeqVariant::Ideal, va) => Ok(z_eq_ideal(&va.element(), &self.controller, &self.plant)),
            (ZeqVariant::ConventionalClosedForm, VirtualAdmittance::Conventional(p)) => {
                Ok(z_eq_conv_closed_form(p, &self.controller, &self.plant))
            }
            (ZeqVariant::ConventionalClosedForm, VirtualAdmittance::Proposed(_)) => {
                Err(ImpedanceError::ClosedFormNeedsSeriesRl)
            }
            (ZeqVariant::DelayAware, va) => {
                Ok(z_eq_delay(&va.element(), &self.controller, &self.plant)?)
            }
        }
    }
}

fn s_lf(p: &PlantParams) -> TransferElement {
    TransferElement::polynomial(vec![0.0, p.l_f])
}

/// `1/Y_v(s) + sL_f / (G_cc(s) Y_v(s))`.
pub fn z_eq_ideal(
    va_elem: &TransferElement,
    c: &ControllerParams,
    p: &PlantParams,
) -> TransferElement {
    z_eq_ideal_with_controller(va_elem, &gcc_pr(c), p)
}

/// Same as [`z_eq_ideal`] with an arbitrary current-controller element.
pub fn z_eq_ideal_with_controller(
    va_elem: &TransferElement,
    gcc: &TransferElement,
    p: &PlantParams,
) -> TransferElement {
    let virtual_z = va_elem.clone().inverse();
    let coupling = s_lf(p).series(gcc.clone().series(va_elem.clone()).inverse());
    virtual_z.parallel(coupling)
}

/// `R_v + sL_v + sL_f (R_v + sL_v) / K_p`.
pub fn z_eq_conv_closed_form(
    va: &VaParams,
    c: &ControllerParams,
    p: &PlantParams,
) -> TransferElement {
    let (r, l, k, lf) = (va.r_v, va.l_v, c.k_cc_p, p.l_f);
    TransferElement::polynomial(vec![r, l + lf * r / k, lf * l / k])
}

/// The `s^2 L_f L_v / K_p` term at `s = j 2 pi f`: `-(2 pi f)^2 L_f L_v / K_p`.
pub fn negative_resistance_term(
    va: &VaParams,
    c: &ControllerParams,
    p: &PlantParams,
    f_hz: f64,
) -> f64 {
    let w = 2.0 * PI * f_hz;
    -w * w * p.l_f * va.l_v / c.k_cc_p
}

/// `[e^{-sT_d} G_cc + sL_f] / [1 - e^{-sT_d} + G_cc Y_v]`.
pub fn z_eq_delay(
    va_elem: &TransferElement,
    c: &ControllerParams,
    p: &PlantParams,
) -> Result<TransferElement, TfError> {
    let delay = TransferElement::delay(c.t_d)?;
    let gcc = gcc_pr(c);
    let num = delay.clone().series(gcc.clone()).parallel(s_lf(p));
    let den = TransferElement::constant(1.0)
        .parallel(delay.scale(-1.0))
        .parallel(gcc.series(va_elem.clone()));
    Ok(num.series(den.inverse()))
}

/// Closed frequency interval in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
}

/// Scan options shared by the passivity and stability routines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanSettings {
    pub fundamental_hz: f64,
    /// Points within `fundamental_hz +- guard_hz` are excluded from the
    /// passivity test.
    pub guard_hz: f64,
    /// Bisection stops once the bracket is narrower than this.
    pub edge_tol_hz: f64,
}

impl Default for ScanSettings {
    fn default() -> Self {
        Self {
            fundamental_hz: 60.0,
            guard_hz: 5.0,
            edge_tol_hz: 1e-4,
        }
    }
}

impl ScanSettings {
    fn in_guard(&self, f_hz: f64) -> bool {
        (f_hz - self.fundamental_hz).abs() <= self.guard_hz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassivityReport {
    pub grid_hz: Vec<f64>,
    /// `None` for points inside the fundamental guard band.
    pub re_zeq: Vec<Option<f64>>,
    pub non_passive_bands: Vec<Band>,
    pub first_violation_hz: Option<f64>,
}

impl PassivityReport {
    pub fn is_passive(&self) -> bool {
        self.non_passive_bands.is_empty()
    }
}

/// Default analysis grid: 200 points/decade from 10 Hz to 10 kHz.
pub fn default_grid() -> FrequencyGrid {
    crate::tf::log_grid(10.0, 10_000.0, 200).expect("static range")
}

/// Grid for return-ratio assessment: 2000 points/decade from 10 Hz to
/// 10 kHz, fine enough to follow the sharp delay-induced resonances.
pub fn stability_grid() -> FrequencyGrid {
    crate::tf::log_grid(10.0, 10_000.0, 2000).expect("static range")
}

/// Bisects `g` on `[lo, hi]` where `g(lo)` and `g(hi)` differ in sign.
fn bisect(
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    g: impl Fn(f64) -> Result<f64, TfError>,
) -> Result<f64, TfError> {
    let neg_lo = g(lo)? < 0.0;
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if (g(mid)? < 0.0) == neg_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn passivity_scan(
    zeq: &TransferElement,
    grid: &FrequencyGrid,
) -> Result<PassivityReport, ImpedanceError> {
    passivity_scan_with(zeq, grid, &ScanSettings::default())
}

pub fn passivity_scan_with(
    zeq: &TransferElement,
    grid: &FrequencyGrid,
    settings: &ScanSettings,
) -> Result<PassivityReport, ImpedanceError> {
    let grid_hz = grid.hz();
    let re_zeq = grid_hz
        .iter()
        .map(|&f| {
            if settings.in_guard(f) {
                Ok(None)
            } else {
                zeq.at_hz(f).map(|z| Some(z.re))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;

    let re_at = |f: f64| zeq.at_hz(f).map(|z| z.re);
    let mut bands = Vec::new();
    let mut open: Option<f64> = None;
    for k in 0..grid_hz.len() {
        let here = re_zeq[k].map(|r| r < 0.0);
        let prev = if k == 0 { None } else { re_zeq[k - 1] };
        match (open, here) {
            (None, Some(true)) => {
                let start = match prev {
                    Some(r) if r >= 0.0 => {
                        bisect(grid_hz[k - 1], grid_hz[k], settings.edge_tol_hz, re_at)?
                    }
                    _ => grid_hz[k],
                };
                open = Some(start);
            }
            (Some(start), Some(false)) => {
                let end = bisect(grid_hz[k - 1], grid_hz[k], settings.edge_tol_hz, re_at)?;
                bands.push(Band {
                    f_lo_hz: start,
                    f_hi_hz: end,
                });
                open = None;
            }
            (Some(start), None) => {
                bands.push(Band {
                    f_lo_hz: start,
                    f_hi_hz: grid_hz[k - 1],
                });
                open = None;
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        bands.push(Band {
            f_lo_hz: start,
            f_hi_hz: *grid_hz.last().expect("grid is non-empty"),
        });
    }
    let first_violation_hz = bands.first().map(|b| b.f_lo_hz);
    Ok(PassivityReport {
        grid_hz,
        re_zeq,
        non_passive_bands: bands,
        first_violation_hz,
    })
}

/// Frequencies where `arg Z_eq` crosses +-90 deg, i.e. where the real part
/// changes sign. Refined by bisection on the element.
pub fn zeq_phase_crossovers(
    zeq: &TransferElement,
    grid: &FrequencyGrid,
    settings: &ScanSettings,
) -> Result<Vec<f64>, ImpedanceError> {
    let report = passivity_scan_with(zeq, grid, settings)?;
    let mut out = Vec::new();
    for b in &report.non_passive_bands {
        if b.f_lo_hz > report.grid_hz[0] {
            out.push(b.f_lo_hz);
        }
        if b.f_hi_hz < *report.grid_hz.last().expect("non-empty") {
            out.push(b.f_hi_hz);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stable,
    Unstable,
    Marginal,
}

/// Crossing of the negative real axis by the return ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisCrossing {
    pub f_hz: f64,
    /// Real part of the return ratio at the crossing.
    pub re: f64,
    /// +1 when the locus passes the axis clockwise about the origin.
    pub direction: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityAssessment {
    pub return_ratio: FrequencyResponse,
    pub gain_crossover_hz: Vec<f64>,
    pub phase_crossover_hz: Vec<f64>,
    pub crossings: Vec<AxisCrossing>,
    /// Clockwise encirclements of -1 by the locus closed over negative
    /// frequencies.
    pub encirclements_of_minus_one: i32,
    /// Smallest `|1 + L|` seen on the grid or at a crossing.
    pub min_distance_to_minus_one: f64,
    pub verdict: Verdict,
}

/// Locus distance from -1 below which the verdict is marginal.
pub const MARGINAL_DISTANCE: f64 = 1e-6;

/// `| |L| - 1 |` below which a sign change is treated as rounding noise.
const UNIT_GAIN_TOL: f64 = 1e-9;

/// Nyquist test of `L = Z_g / Z_eq`. `L` is assumed open-loop stable, i.e.
/// the inverter is stable on a stiff grid; the locus is truncated to the
/// grid span and closed by conjugate symmetry.
pub fn return_ratio_assessment(
    zeq: &TransferElement,
    zg: &TransferElement,
    grid: &FrequencyGrid,
) -> Result<StabilityAssessment, ImpedanceError> {
    let ratio = zg.clone().series(zeq.clone().inverse());
    let response = frequency_response(&ratio, grid)?;
    let hz = grid.hz();
    let values = &response.values;

    for k in 1..values.len() {
        let step = (values[k] / values[k - 1]).arg().abs();
        if step >= PI / 2.0 {
            return Err(ImpedanceError::GridTooCoarse {
                f_lo_hz: hz[k - 1],
                f_hi_hz: hz[k],
                step_deg: step.to_degrees(),
            });
        }
    }

    let tol = 1e-4;
    let eval = |f: f64| ratio.at_hz(f);
    let mut gain_crossover_hz = Vec::new();
    let mut phase_crossover_hz = Vec::new();
    let mut crossings = Vec::new();
    let mut min_distance = values
        .iter()
        .map(|v| (v + 1.0).norm())
        .fold(f64::INFINITY, f64::min);

    let phase = unwrap_phase(values.iter().map(|v| v.arg()));
    for k in 1..values.len() {
        let (a, b) = (values[k - 1], values[k]);
        let (ga, gb) = (a.norm() - 1.0, b.norm() - 1.0);
        if ga * gb < 0.0 && ga.abs().max(gb.abs()) > UNIT_GAIN_TOL {
            gain_crossover_hz.push(bisect(hz[k - 1], hz[k], tol, |f| {
                eval(f).map(|v| v.norm() - 1.0)
            })?);
        }
        // odd multiple of pi inside [phase[k-1], phase[k]]
        let (p0, p1) = (phase[k - 1], phase[k]);
        let n0 = ((p0 - PI) / (2.0 * PI)).floor();
        let n1 = ((p1 - PI) / (2.0 * PI)).floor();
        if n0 != n1 {
            let f = bisect(hz[k - 1], hz[k], tol, |f| eval(f).map(|v| v.im))?;
            let at = eval(f)?;
            phase_crossover_hz.push(f);
            min_distance = min_distance.min((at + 1.0).norm());
            crossings.push(AxisCrossing {
                f_hz: f,
                re: at.re,
                direction: if p1 < p0 { 1 } else { -1 },
            });
        }
    }

    let encirclements: i32 = 2 * crossings
        .iter()
        .filter(|c| c.re < -1.0)
        .map(|c| c.direction)
        .sum::<i32>();
    let verdict = if encirclements != 0 {
        Verdict::Unstable
    } else if min_distance < MARGINAL_DISTANCE {
        Verdict::Marginal
    } else {
        Verdict::Stable
    };
    Ok(StabilityAssessment {
        return_ratio: response,
        gain_crossover_hz,
        phase_crossover_hz,
        crossings,
        encirclements_of_minus_one: encirclements,
        min_distance_to_minus_one: min_distance,
        verdict,
    })
}

/// Outcome of fitting `K_p` to a pair of target crossover frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossoverFit {
    pub k_cc_p: f64,
    pub k_cc_r: f64,
    pub gain_crossover_hz: f64,
    pub phase_crossover_hz: f64,
    pub gain_error: f64,
    pub phase_error: f64,
    /// Crossings of `arg Z_eq` through +-90 deg at the chosen gain.
    pub zeq_phase_crossover_hz: Vec<f64>,
}

impl CrossoverFit {
    /// Worst of the two relative errors.
    pub fn joint_error(&self) -> f64 {
        self.gain_error.max(self.phase_error)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    pub gain_crossover_hz: f64,
    pub phase_crossover_hz: f64,
    pub k_min: f64,
    pub k_max: f64,
    pub samples: usize,
}

impl Default for CalibrationTarget {
    fn default() -> Self {
        Self {
            gain_crossover_hz: 358.0,
            phase_crossover_hz: 293.0,
            k_min: 5.0,
            k_max: 200.0,
            samples: 160,
        }
    }
}

fn nearest_rel(values: &[f64], target: f64) -> Option<(f64, f64)> {
    values
        .iter()
        .map(|&v| (v, (v - target).abs() / target))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

fn evaluate_fit(
    k: f64,
    va: &VirtualAdmittance,
    base: &ControllerParams,
    plant: &PlantParams,
    zg: &TransferElement,
    grid: &FrequencyGrid,
    target: &CalibrationTarget,
) -> Result<Option<CrossoverFit>, ImpedanceError> {
    let c = base.with_proportional_gain(k);
    let zeq = z_eq_delay(&va.element(), &c, plant)?;
    let a = return_ratio_assessment(&zeq, zg, grid)?;
    let (Some((g, ge)), Some((p, pe))) = (
        nearest_rel(&a.gain_crossover_hz, target.gain_crossover_hz),
        nearest_rel(&a.phase_crossover_hz, target.phase_crossover_hz),
    ) else {
        return Ok(None);
    };
    let settings = ScanSettings {
        fundamental_hz: c.f_1_hz(),
        ..ScanSettings::default()
    };
    Ok(Some(CrossoverFit {
        k_cc_p: k,
        k_cc_r: c.k_cc_r,
        gain_crossover_hz: g,
        phase_crossover_hz: p,
        gain_error: ge,
        phase_error: pe,
        zeq_phase_crossover_hz: zeq_phase_crossovers(&zeq, grid, &settings)?,
    }))
}

/// Sweeps `K_p` log-uniformly over the target range (with `K_r` following
/// the default rule) and returns the best joint fit of the return-ratio gain
/// and phase crossovers of the delay-aware impedance.
pub fn calibrate_proportional_gain(
    va: &VirtualAdmittance,
    base: &ControllerParams,
    plant: &PlantParams,
    zg: &TransferElement,
    grid: &FrequencyGrid,
    target: &CalibrationTarget,
) -> Result<Option<CrossoverFit>, ImpedanceError> {
    if !(target.k_min > 0.0 && target.k_max > target.k_min && target.samples >= 2) {
        return Err(ImpedanceError::InvalidCalibration);
    }
    let ratio = (target.k_max / target.k_min).ln();
    let mut best: Option<CrossoverFit> = None;
    for i in 0..target.samples {
        let k = target.k_min * (ratio * i as f64 / (target.samples - 1) as f64).exp();
        if let Some(fit) = evaluate_fit(k, va, base, plant, zg, grid, target)? {
            if best
                .as_ref()
                .is_none_or(|b| fit.joint_error() < b.joint_error())
            {
                best = Some(fit);
            }
        }
    }
    Ok(best)
}

pub const BODE_COLUMNS: [&str; 5] = ["f_hz", "re_zeq_ohm", "im_zeq_ohm", "mag_db", "phase_deg"];

/// Bode table of an impedance response.
pub fn write_bode_csv<W: std::io::Write>(resp: &FrequencyResponse, w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(BODE_COLUMNS)?;
    let (db, ph) = (resp.magnitude_db(), resp.phase_deg());
    for (k, f) in resp.grid.hz().into_iter().enumerate() {
        let v = resp.values[k];
        wr.write_record([f, v.re, v.im, db[k], ph[k]].iter().map(|x| format!("{x:e}")))?;
    }
    wr.flush()?;
    Ok(())
}

/// Value of `Z_eq` at `f_hz`.
pub fn zeq_at(zeq: &TransferElement, f_hz: f64) -> Result<Complex, TfError> {
    zeq.at_hz(f_hz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{
        design_proposed_va, grid_impedance_at_pcc, yv_conv, DesignPoint, GridParams,
    };

    fn table1() -> (VaParams, ControllerParams, PlantParams) {
        (
            VaParams::table1(),
            ControllerParams::table1(),
            PlantParams::table1(),
        )
    }

    #[test]
    fn ideal_at_dc_is_virtual_resistance() {
        let (va, c, p) = table1();
        let z = z_eq_ideal(&yv_conv(&va), &c, &p)
            .evaluate(Complex::new(0.0, 0.0))
            .unwrap();
        assert!((z - Complex::new(0.754, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn infinite_gain_limit() {
        let (va, _, p) = table1();
        let y = yv_conv(&va);
        let z = z_eq_ideal_with_controller(&y, &TransferElement::constant(1e9), &p);
        for f in [10.0, 348.0, 5000.0] {
            let a = z.at_hz(f).unwrap();
            let b = y.at_hz(f).unwrap().inv();
            assert!((a - b).norm() / b.norm() < 1e-6);
        }
    }

    #[test]
    fn closed_form_real_part_at_348hz() {
        let (va, c, p) = table1();
        let z = z_eq_conv_closed_form(&va, &c, &p).at_hz(348.0).unwrap();
        // 0.754 - (2 pi 348)^2 * 3.4e-3 * 10e-3 / 10.681
        let expect = 0.754 - (2.0 * PI * 348.0f64).powi(2) * 3.4e-5 / c.k_cc_p;
        assert!((z.re - expect).abs() < 1e-9);
        assert!((z.re + 14.47).abs() < 0.02, "{}", z.re);
        let r = negative_resistance_term(&va, &c, &p, 348.0);
        assert!((r + 15.22).abs() < 0.01, "{r}");
    }

    #[test]
    fn negative_resistance_scaling() {
        let (va, c, p) = table1();
        assert!(negative_resistance_term(&va, &c, &p, 1e-9).abs() < 1e-15);
        let a = negative_resistance_term(&va, &c, &p, 200.0);
        let b = negative_resistance_term(&va, &c, &p, 400.0);
        assert!((b / a - 4.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_is_proportional_only_ideal() {
        let (va, c, p) = table1();
        let y = yv_conv(&va);
        let full = z_eq_ideal_with_controller(&y, &TransferElement::constant(c.k_cc_p), &p);
        let approx = z_eq_conv_closed_form(&va, &c, &p);
        for f in crate::tf::log_grid(10.0, 10_000.0, 20).unwrap().hz() {
            let a = full.at_hz(f).unwrap();
            let b = approx.at_hz(f).unwrap();
            assert!((a - b).norm() / a.norm() < 1e-12, "f = {f}");
        }
    }

    #[test]
    fn resonant_term_fades_with_frequency() {
        let (va, c, p) = table1();
        let full = z_eq_ideal(&yv_conv(&va), &c, &p);
        let approx = z_eq_conv_closed_form(&va, &c, &p);
        let err = |f: f64| {
            let a = full.at_hz(f).unwrap();
            (a - approx.at_hz(f).unwrap()).norm() / a.norm()
        };
        assert!(err(10_000.0) < 0.02);
        assert!(err(10_000.0) < err(2000.0) && err(2000.0) < err(500.0) && err(500.0) < err(200.0));
    }

    #[test]
    fn closed_form_real_zero_and_positive_imag() {
        let (va, c, p) = table1();
        let z = z_eq_conv_closed_form(&va, &c, &p);
        let w0 = (va.r_v * c.k_cc_p / (p.l_f * va.l_v)).sqrt();
        let v = z.at_omega(w0).unwrap();
        assert!(v.re.abs() < 1e-12, "{}", v.re);
        for f in [1.0, 100.0, 1e4] {
            assert!(z.at_hz(f).unwrap().im > 0.0);
        }
    }

    #[test]
    fn delay_free_reduction() {
        let (va, c, p) = table1();
        let y = yv_conv(&va);
        let ideal = z_eq_ideal(&y, &c, &p);
        let delayed = z_eq_delay(&y, &c.with_delay(0.0), &p).unwrap();
        for f in [10.0, 120.0, 700.0, 9000.0] {
            let a = ideal.at_hz(f).unwrap();
            let b = delayed.at_hz(f).unwrap();
            assert!((a - b).norm() / a.norm() < 1e-10);
        }
    }

    #[test]
    fn passivity_of_resistor() {
        let r = passivity_scan(&TransferElement::constant(5.0), &default_grid()).unwrap();
        assert!(r.is_passive());
        assert_eq!(r.first_violation_hz, None);
    }

    #[test]
    fn closed_form_first_violation() {
        let (va, c, p) = table1();
        let z = z_eq_conv_closed_form(&va, &c, &p);
        let r = passivity_scan(&z, &default_grid()).unwrap();
        let f0 = (va.r_v * c.k_cc_p / (p.l_f * va.l_v)).sqrt() / (2.0 * PI);
        assert!((f0 - 77.5).abs() < 0.1, "{f0}");
        let got = r.first_violation_hz.unwrap();
        assert!((got - f0).abs() < 0.1, "{got} vs {f0}");
        assert_eq!(r.non_passive_bands.len(), 1);
        assert_eq!(r.non_passive_bands[0].f_hi_hz, 10_000.0);
    }

    #[test]
    fn band_edges_are_zeros_of_real_part() {
        let (va, c, p) = table1();
        let z = z_eq_delay(&yv_conv(&va), &c, &p).unwrap();
        let r = passivity_scan(&z, &default_grid()).unwrap();
        assert!(!r.is_passive());
        let last = *r.grid_hz.last().unwrap();
        for b in &r.non_passive_bands {
            for edge in [b.f_lo_hz, b.f_hi_hz] {
                if edge == last || edge == r.grid_hz[0] {
                    continue;
                }
                // an edge is a zero of the real part or a resonance pole
                let v = z.at_hz(edge).unwrap();
                assert!(v.re.abs() < 1e-3 || v.norm() > 1e3, "edge {edge}: {v}");
            }
        }
    }

    #[test]
    fn proposed_without_delay_is_passive() {
        let (_, c, p) = table1();
        let prop = design_proposed_va(&DesignPoint::table1()).unwrap();
        let y = crate::models::yv_prop(&prop);
        let z = z_eq_delay(&y, &c.with_delay(0.0), &p).unwrap();
        assert!(passivity_scan(&z, &default_grid()).unwrap().is_passive());
    }

    #[test]
    fn identical_elements_give_unit_ratio() {
        let z = TransferElement::polynomial(vec![1.0, 1e-3]);
        let a = return_ratio_assessment(&z, &z, &default_grid()).unwrap();
        assert!(a.gain_crossover_hz.is_empty());
        assert_eq!(a.encirclements_of_minus_one, 0);
        assert_eq!(a.verdict, Verdict::Stable);
    }

    #[test]
    fn coarse_grid_rejected() {
        // pure delay spins rapidly at high frequency
        let z = TransferElement::constant(1.0);
        let zg = TransferElement::delay(1e-3).unwrap().scale(2.0);
        let grid = FrequencyGrid::from_hz(&[100.0, 400.0]).unwrap();
        assert!(matches!(
            return_ratio_assessment(&z, &zg, &grid),
            Err(ImpedanceError::GridTooCoarse { .. })
        ));
    }

    #[test]
    fn conventional_against_pcc_grid_is_unstable() {
        let (va, c, p) = table1();
        let z = z_eq_delay(&yv_conv(&va), &c, &p).unwrap();
        let zg = grid_impedance_at_pcc(&GridParams::table1(), &p);
        let a = return_ratio_assessment(&z, &zg, &stability_grid()).unwrap();
        assert_eq!(a.verdict, Verdict::Unstable);
        assert!(a
            .gain_crossover_hz
            .iter()
            .any(|f| (f / 358.0 - 1.0).abs() < 0.15));
    }

    #[test]
    fn proposed_against_pcc_grid_is_stable() {
        let (_, c, p) = table1();
        let prop = design_proposed_va(&DesignPoint::table1()).unwrap();
        let z = z_eq_delay(&crate::models::yv_prop(&prop), &c, &p).unwrap();
        let zg = grid_impedance_at_pcc(&GridParams::table1(), &p);
        let a = return_ratio_assessment(&z, &zg, &stability_grid()).unwrap();
        assert_eq!(a.verdict, Verdict::Stable);
    }

    #[test]
    fn closed_form_requires_series_rl() {
        let (_, c, p) = table1();
        let prop = design_proposed_va(&DesignPoint::table1()).unwrap();
        let m = ZeqModel {
            variant: ZeqVariant::ConventionalClosedForm,
            va: VirtualAdmittance::Proposed(prop),
            controller: c,
            plant: p,
        };
        assert_eq!(m.build(), Err(ImpedanceError::ClosedFormNeedsSeriesRl));
    }
}
