//! Component models: virtual admittances, PR current controller, grid
//! Thevenin branch and plant constants, plus the synthesis of the
//! parallel-resistor admittance from a fundamental-frequency design point.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tf::{Complex, TransferElement};

/// Reference operating point of the 3 kW laboratory inverter.
pub mod table1 {
    pub const P_RATED_W: f64 = 3000.0;
    pub const F_1_HZ: f64 = 60.0;
    pub const F_SW_HZ: f64 = 10_000.0;
    pub const F_S_HZ: f64 = 20_000.0;
    pub const V_G_LL_RMS_V: f64 = 220.0;
    pub const SCR: f64 = 4.0;
    pub const XR_RATIO: f64 = 4.0;
    pub const V_DC_V: f64 = 400.0;
    pub const L_F_H: f64 = 3.4e-3;
    pub const C_F_F: f64 = 30e-6;
    pub const OMEGA_PQ_PU: f64 = 0.1;
    pub const K_PQ_PU: f64 = 0.1;
    pub const F_CC_HZ: f64 = 500.0;
    pub const L_V_H: f64 = 10e-3;
    pub const R_V_OHM: f64 = 0.754;
    pub const R_V_PI_OHM: f64 = 25.698;
    pub const P_REF_W: f64 = 2000.0;
    pub const Q_REF_VAR: f64 = 0.0;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
}

fn require(name: &'static str, value: f64, ok: bool, reason: &'static str) -> Result<(), ModelError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            value,
            reason,
        })
    }
}

/// Series R-L virtual admittance `(R_v + sL_v)^-1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaParams {
    pub r_v: f64,
    pub l_v: f64,
}

impl VaParams {
    pub fn new(r_v: f64, l_v: f64) -> Result<Self, ModelError> {
        require("r_v", r_v, r_v > 0.0, "must be > 0")?;
        require("l_v", l_v, l_v > 0.0, "must be > 0")?;
        Ok(Self { r_v, l_v })
    }

    pub fn table1() -> Self {
        Self {
            r_v: table1::R_V_OHM,
            l_v: table1::L_V_H,
        }
    }
}

/// Series resistor followed by an inductor shunted by a parallel resistor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposedVaParams {
    pub r_v_sigma: f64,
    pub r_v_pi: f64,
    pub l_v0: f64,
}

impl ProposedVaParams {
    pub fn new(r_v_sigma: f64, r_v_pi: f64, l_v0: f64) -> Result<Self, ModelError> {
        require("r_v_sigma", r_v_sigma, r_v_sigma > 0.0, "must be > 0")?;
        require("r_v_pi", r_v_pi, r_v_pi > 0.0, "must be > 0")?;
        require("l_v0", l_v0, l_v0 > 0.0, "must be > 0")?;
        Ok(Self {
            r_v_sigma,
            r_v_pi,
            l_v0,
        })
    }

    /// Admittance numerator and denominator in ascending powers of `s`:
    /// `(R_pi + s L0) / (R_sigma R_pi + s L0 (R_sigma + R_pi))`.
    pub fn admittance_coeffs(&self) -> ([f64; 2], [f64; 2]) {
        let (rs, rp, l0) = (self.r_v_sigma, self.r_v_pi, self.l_v0);
        ([rp, l0], [rs * rp, l0 * (rs + rp)])
    }
}

/// Either admittance structure; the simulator switches between them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VirtualAdmittance {
    Conventional(VaParams),
    Proposed(ProposedVaParams),
}

impl VirtualAdmittance {
    pub fn element(&self) -> TransferElement {
        match self {
            Self::Conventional(p) => yv_conv(p),
            Self::Proposed(p) => yv_prop(p),
        }
    }

    /// Admittance numerator/denominator, ascending powers of `s`.
    pub fn coeffs(&self) -> ([f64; 2], [f64; 2]) {
        match self {
            Self::Conventional(p) => ([1.0, 0.0], [p.r_v, p.l_v]),
            Self::Proposed(p) => p.admittance_coeffs(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Conventional(_) => "conventional",
            Self::Proposed(_) => "proposed",
        }
    }
}

/// PR current controller gains, delay and sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub k_cc_p: f64,
    pub k_cc_r: f64,
    pub omega_1: f64,
    pub omega_cc: f64,
    pub t_d: f64,
    pub f_s: f64,
}

impl ControllerParams {
    /// Bandwidth-based tuning `K_p = omega_cc L_f`, resonant gain
    /// `K_r = 2 K_p omega_cc / 10` and `T_d = 1.5 / f_s`.
    pub fn tuned(plant: &PlantParams, omega_1: f64, omega_cc: f64, f_s: f64) -> Self {
        let k_cc_p = omega_cc * plant.l_f;
        Self {
            k_cc_p,
            k_cc_r: default_resonant_gain(k_cc_p, omega_cc),
            omega_1,
            omega_cc,
            t_d: 1.5 / f_s,
            f_s,
        }
    }

    pub fn table1() -> Self {
        Self::tuned(
            &PlantParams::table1(),
            2.0 * PI * table1::F_1_HZ,
            2.0 * PI * table1::F_CC_HZ,
            table1::F_S_HZ,
        )
    }

    pub fn with_delay(mut self, t_d: f64) -> Self {
        self.t_d = t_d;
        self
    }

    /// Changes `K_p` and moves `K_r` with it by the default rule.
    pub fn with_proportional_gain(mut self, k_cc_p: f64) -> Self {
        self.k_cc_p = k_cc_p;
        self.k_cc_r = default_resonant_gain(k_cc_p, self.omega_cc);
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        require("k_cc_p", self.k_cc_p, self.k_cc_p > 0.0, "must be > 0")?;
        require("k_cc_r", self.k_cc_r, self.k_cc_r >= 0.0, "must be >= 0")?;
        require("omega_1", self.omega_1, self.omega_1 > 0.0, "must be > 0")?;
        require("omega_cc", self.omega_cc, self.omega_cc > 0.0, "must be > 0")?;
        require("t_d", self.t_d, self.t_d >= 0.0, "must be >= 0")?;
        require("f_s", self.f_s, self.f_s > 0.0, "must be > 0")
    }

    pub fn ts(&self) -> f64 {
        1.0 / self.f_s
    }

    pub fn f_1_hz(&self) -> f64 {
        self.omega_1 / (2.0 * PI)
    }
}

pub fn default_resonant_gain(k_cc_p: f64, omega_cc: f64) -> f64 {
    2.0 * k_cc_p * omega_cc / 10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    pub l_f: f64,
    pub c_f: f64,
    /// DC-link voltage; when set, `|v_cmd|` is clamped at `v_dc / sqrt(3)`.
    pub v_dc: Option<f64>,
}

impl PlantParams {
    pub fn table1() -> Self {
        Self {
            l_f: table1::L_F_H,
            c_f: table1::C_F_F,
            v_dc: Some(table1::V_DC_V),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        require("l_f", self.l_f, self.l_f > 0.0, "must be > 0")?;
        require("c_f", self.c_f, self.c_f >= 0.0, "must be >= 0")?;
        if let Some(v) = self.v_dc {
            require("v_dc", v, v > 0.0, "must be > 0")?;
        }
        Ok(())
    }
}

/// Grid Thevenin branch; `r_g` and `l_g` are filled by [`zg_from_scr`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub r_g: f64,
    pub l_g: f64,
    pub v_g_ll_rms: f64,
    pub scr: f64,
    pub xr_ratio: f64,
    pub p_rated: f64,
}

impl GridParams {
    /// Unresolved grid description; call [`zg_from_scr`] to size the branch.
    pub fn from_strength(v_g_ll_rms: f64, scr: f64, xr_ratio: f64, p_rated: f64) -> Self {
        Self {
            r_g: 0.0,
            l_g: 0.0,
            v_g_ll_rms,
            scr,
            xr_ratio,
            p_rated,
        }
    }

    pub fn table1() -> Self {
        zg_from_scr(
            &Self::from_strength(
                table1::V_G_LL_RMS_V,
                table1::SCR,
                table1::XR_RATIO,
                table1::P_RATED_W,
            ),
            2.0 * PI * table1::F_1_HZ,
        )
        .0
    }

    /// Peak phase voltage, i.e. the amplitude-invariant space-vector length.
    pub fn v_phase_peak(&self) -> f64 {
        self.v_g_ll_rms * (2.0f64 / 3.0).sqrt()
    }

    pub fn element(&self) -> TransferElement {
        TransferElement::polynomial(vec![self.r_g, self.l_g])
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        require("r_g", self.r_g, self.r_g >= 0.0, "must be >= 0")?;
        require("l_g", self.l_g, self.l_g >= 0.0, "must be >= 0")?;
        require("scr", self.scr, self.scr > 0.0, "must be > 0")?;
        require("xr_ratio", self.xr_ratio, self.xr_ratio > 0.0, "must be > 0")?;
        require("p_rated", self.p_rated, self.p_rated > 0.0, "must be > 0")?;
        require("v_g_ll_rms", self.v_g_ll_rms, self.v_g_ll_rms > 0.0, "must be > 0")
    }
}

/// Fundamental-frequency target for the parallel-resistor admittance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub r_v: f64,
    /// Reactance at `omega_1`, not an inductance.
    pub x_v: f64,
    pub omega_1: f64,
    pub r_v_sigma: f64,
}

impl DesignPoint {
    /// Design point matching a series R-L admittance at `omega_1`.
    pub fn matching(va: &VaParams, omega_1: f64, r_v_sigma: f64) -> Self {
        Self {
            r_v: va.r_v,
            x_v: omega_1 * va.l_v,
            omega_1,
            r_v_sigma,
        }
    }

    pub fn table1() -> Self {
        Self::matching(
            &VaParams::table1(),
            2.0 * PI * table1::F_1_HZ,
            table1::R_V_OHM / 4.0,
        )
    }
}

pub fn yv_conv(p: &VaParams) -> TransferElement {
    TransferElement::polynomial(vec![p.r_v, p.l_v]).inverse()
}

pub fn yv_prop(p: &ProposedVaParams) -> TransferElement {
    // s R_pi L0 / (R_pi + s L0)
    let shunted = TransferElement::Rational(
        crate::tf::Rational::new(vec![0.0, p.r_v_pi * p.l_v0], vec![p.r_v_pi, p.l_v0])
            .expect("R_pi > 0 keeps the denominator nonzero"),
    );
    TransferElement::constant(p.r_v_sigma)
        .parallel(shunted)
        .inverse()
}

pub fn design_proposed_va(d: &DesignPoint) -> Result<ProposedVaParams, ModelError> {
    if !(d.x_v.is_finite() && d.x_v > 0.0) {
        return Err(ModelError::DegenerateDesign(format!(
            "x_v must be > 0, got {}",
            d.x_v
        )));
    }
    if !(d.omega_1.is_finite() && d.omega_1 > 0.0) {
        return Err(ModelError::DegenerateDesign(format!(
            "omega_1 must be > 0, got {}",
            d.omega_1
        )));
    }
    if !(d.r_v_sigma >= 0.0 && d.r_v_sigma < d.r_v) {
        return Err(ModelError::DegenerateDesign(format!(
            "need 0 <= r_v_sigma < r_v, got r_v_sigma = {} and r_v = {}",
            d.r_v_sigma, d.r_v
        )));
    }
    let dr = d.r_v - d.r_v_sigma;
    let m = d.x_v * d.x_v + dr * dr;
    Ok(ProposedVaParams {
        r_v_sigma: d.r_v_sigma,
        r_v_pi: m / dr,
        l_v0: m / (d.omega_1 * d.x_v),
    })
}

/// Residual `|1/Y_prop(j omega_1) - (R_v + j X_v)|` of a finished design.
pub fn design_residual(d: &DesignPoint, p: &ProposedVaParams) -> f64 {
    let z = yv_prop(p)
        .at_omega(d.omega_1)
        .map(|y| y.inv())
        .unwrap_or(Complex::new(f64::INFINITY, 0.0));
    (z - Complex::new(d.r_v, d.x_v)).norm()
}

/// `K_p + K_r s / (s^2 + omega_1^2)`.
pub fn gcc_pr(c: &ControllerParams) -> TransferElement {
    let resonant = TransferElement::Rational(
        crate::tf::Rational::new(
            vec![0.0, c.k_cc_r],
            vec![c.omega_1 * c.omega_1, 0.0, 1.0],
        )
        .expect("monic denominator"),
    );
    TransferElement::constant(c.k_cc_p).parallel(resonant)
}

/// Sizes the grid branch from SCR and X/R; returns the filled parameters and
/// `r_g + s l_g`.
pub fn zg_from_scr(g: &GridParams, omega_1: f64) -> (GridParams, TransferElement) {
    let z_mag = g.v_g_ll_rms * g.v_g_ll_rms / (g.scr * g.p_rated);
    let r_g = z_mag / (1.0 + g.xr_ratio * g.xr_ratio).sqrt();
    let x_g = g.xr_ratio * r_g;
    let filled = GridParams {
        r_g,
        l_g: x_g / omega_1,
        ..*g
    };
    let elem = filled.element();
    (filled, elem)
}

/// Impedance seen from the inverter-side inductor at the PCC: the grid
/// branch in parallel with the filter capacitor. Reduces to the grid branch
/// when `c_f = 0`.
pub fn grid_impedance_at_pcc(g: &GridParams, p: &PlantParams) -> TransferElement {
    let branch = g.element();
    if p.c_f == 0.0 {
        return branch;
    }
    branch
        .inverse()
        .parallel(TransferElement::polynomial(vec![0.0, p.c_f]))
        .inverse()
}

/// High-frequency resistance `R_sigma + R_pi` of the proposed admittance.
pub fn harmonic_asymptote(p: &ProposedVaParams) -> f64 {
    p.r_v_sigma + p.r_v_pi
}
