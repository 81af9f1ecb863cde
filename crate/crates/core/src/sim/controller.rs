//! Sampled-data GFM controller: droop-driven IVS, virtual admittance, PR
//! current control with voltage feedforward, and a computation delay line.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::discrete::DiscreteFilter;
use crate::models::{ControllerParams, VirtualAdmittance};
use crate::tf::Complex;

/// Droop gains in per unit. `k_p` maps `S_base` of active-power error to
/// `omega_base` of frequency deviation; `k_q` maps `S_base` of reactive-power
/// error to the peak phase voltage `v_base * sqrt(2/3)`. Cutoffs are in
/// per unit of `omega_base`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroopParams {
    pub k_p: f64,
    pub k_q: f64,
    pub omega_p: f64,
    pub omega_q: f64,
    pub s_base: f64,
    /// Line-to-line RMS voltage base.
    pub v_base: f64,
    pub omega_base: f64,
}

impl DroopParams {
    pub fn table1() -> Self {
        use crate::models::table1::*;
        Self {
            k_p: K_PQ_PU,
            k_q: K_PQ_PU,
            omega_p: OMEGA_PQ_PU,
            omega_q: OMEGA_PQ_PU,
            s_base: P_RATED_W,
            v_base: V_G_LL_RMS_V,
            omega_base: 2.0 * std::f64::consts::PI * F_1_HZ,
        }
    }

    /// rad/s per W.
    pub fn k_p_si(&self) -> f64 {
        self.k_p * self.omega_base / self.s_base
    }

    /// Peak volts per var.
    pub fn k_q_si(&self) -> f64 {
        self.k_q * self.v_base * (2.0f64 / 3.0).sqrt() / self.s_base
    }

    pub fn omega_p_si(&self) -> f64 {
        self.omega_p * self.omega_base
    }

    pub fn omega_q_si(&self) -> f64 {
        self.omega_q * self.omega_base
    }

    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("k_p", self.k_p, self.k_p >= 0.0),
            ("k_q", self.k_q, self.k_q >= 0.0),
            ("omega_p", self.omega_p, self.omega_p > 0.0),
            ("omega_q", self.omega_q, self.omega_q > 0.0),
            ("s_base", self.s_base, self.s_base > 0.0),
            ("v_base", self.v_base, self.v_base >= 0.0),
            ("omega_base", self.omega_base, self.omega_base > 0.0),
        ];
        for (name, v, ok) in fields {
            if !(v.is_finite() && ok) {
                return Err(format!("droop.{name} out of range: {v}"));
            }
        }
        Ok(())
    }
}

/// Where the one-sample computation delay sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayPlacement {
    /// `G_cc (i_ref - i) + v` is evaluated at the plant sub-step rate with
    /// the reference undelayed; the measured current and the feedforward
    /// voltage are sampled at `f_s` and delayed.
    #[default]
    FeedbackPaths,
    /// The full command `G_cc (i_ref - i) + v` is computed at `f_s` and
    /// delayed as a whole.
    WholeCommand,
}

/// Source of the current reference.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceSource {
    #[default]
    VirtualAdmittance,
    /// Admittance bypassed: `i_ref = value * e^{j omega_1 t}`, a constant in
    /// the synchronous frame.
    Synchronous { value: Complex },
}

/// Droop state: filtered power errors and the IVS angle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DroopState {
    pub x_p: f64,
    pub x_q: f64,
    pub phase: f64,
    pub omega: f64,
    pub magnitude: f64,
}

/// Result of one control sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub e: Complex,
    pub i_ref: Complex,
    pub p: f64,
    pub q: f64,
    /// Voltage applied over the first plant sub-step of this period.
    pub v_cmd: Complex,
}

/// One droop step. Filters the power errors and advances nothing else;
/// returns the IVS frequency and magnitude for this sample.
pub fn droop_update(
    s: &mut DroopState,
    p_meas: f64,
    q_meas: f64,
    p_ref: f64,
    q_ref: f64,
    e_0: f64,
    omega_1: f64,
    d: &DroopParams,
    ts: f64,
) -> (f64, f64) {
    let ap = 1.0 - (-d.omega_p_si() * ts).exp();
    let aq = 1.0 - (-d.omega_q_si() * ts).exp();
    s.x_p += ap * ((p_ref - p_meas) - s.x_p);
    s.x_q += aq * ((q_ref - q_meas) - s.x_q);
    s.omega = omega_1 + d.k_p_si() * s.x_p;
    s.magnitude = e_0 + d.k_q_si() * s.x_q;
    (s.omega, s.magnitude)
}

/// Instantaneous `(P, Q)` from amplitude-invariant space vectors.
pub fn instantaneous_power(v: Complex, i: Complex) -> (f64, f64) {
    let s = 1.5 * v * i.conj();
    (s.re, s.im)
}

fn clamp_magnitude(v: Complex, limit: Option<f64>) -> Complex {
    match limit {
        Some(l) if v.norm() > l => v * (l / v.norm()),
        _ => v,
    }
}

/// Delay-line length in control samples for a total delay `t_d`; the half
/// sample of PWM hold is not part of the line.
pub fn delay_samples(t_d: f64, f_s: f64) -> usize {
    (t_d * f_s - 0.5).round().max(0.0) as usize
}

#[derive(Debug, Clone)]
pub struct Controller {
    params: ControllerParams,
    droop: DroopParams,
    placement: DelayPlacement,
    reference: ReferenceSource,
    v_limit: Option<f64>,
    substeps: usize,
    va: VirtualAdmittance,
    va_filter: DiscreteFilter,
    va_in: Complex,
    va_out: Complex,
    resonator: DiscreteFilter,
    /// Whole-command placement: delayed voltage commands.
    cmd_line: VecDeque<Complex>,
    /// Feedback placement: delayed `(i, v_pcc)` samples.
    iv_line: VecDeque<(Complex, Complex)>,
    held_cmd: Complex,
    held_iv: (Complex, Complex),
    droop_state: DroopState,
    e_0: f64,
    p_ref: f64,
    q_ref: f64,
    t_k: f64,
}

/// Everything the controller needs at construction.
#[derive(Debug, Clone, Copy)]
pub struct ControllerSetup {
    pub params: ControllerParams,
    pub droop: DroopParams,
    pub placement: DelayPlacement,
    pub reference: ReferenceSource,
    pub v_limit: Option<f64>,
    pub substeps: usize,
    pub va: VirtualAdmittance,
    pub e_0: f64,
    pub p_ref: f64,
    pub q_ref: f64,
}

/// Phasor operating point used to place every internal state on its
/// periodic orbit at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub e: Complex,
    pub v: Complex,
    pub i: Complex,
    pub i_ref: Complex,
    /// Fundamental inverter output voltage.
    pub v_o: Complex,
}

impl Controller {
    pub fn new(s: ControllerSetup) -> Self {
        let fast = Self::fast_step(&s.params, s.placement, s.substeps);
        let va_filter = Self::build_va(&s.va, &s.params, fast);
        let resonator = DiscreteFilter::bilinear(
            &[0.0, s.params.k_cc_r],
            &[s.params.omega_1 * s.params.omega_1, 0.0, 1.0],
            fast,
            Some(s.params.omega_1),
        );
        let n = delay_samples(s.params.t_d, s.params.f_s);
        let zero = Complex::new(0.0, 0.0);
        let (cmd_line, iv_line) = match s.placement {
            DelayPlacement::FeedbackPaths => (VecDeque::new(), vec![(zero, zero); n].into()),
            DelayPlacement::WholeCommand => (vec![zero; n].into(), VecDeque::new()),
        };
        Self {
            params: s.params,
            droop: s.droop,
            placement: s.placement,
            reference: s.reference,
            v_limit: s.v_limit,
            substeps: s.substeps,
            va: s.va,
            va_filter,
            va_in: zero,
            va_out: zero,
            resonator,
            cmd_line,
            iv_line,
            held_cmd: zero,
            held_iv: (zero, zero),
            droop_state: DroopState {
                omega: s.params.omega_1,
                magnitude: s.e_0,
                ..Default::default()
            },
            e_0: s.e_0,
            p_ref: s.p_ref,
            q_ref: s.q_ref,
            t_k: 0.0,
        }
    }

    /// Step of the admittance and resonator filters.
    fn fast_step(params: &ControllerParams, placement: DelayPlacement, substeps: usize) -> f64 {
        match placement {
            DelayPlacement::FeedbackPaths => params.ts() / substeps as f64,
            DelayPlacement::WholeCommand => params.ts(),
        }
    }

    fn build_va(va: &VirtualAdmittance, params: &ControllerParams, step: f64) -> DiscreteFilter {
        let (num, den) = va.coeffs();
        DiscreteFilter::bilinear(&num, &den, step, Some(params.omega_1))
    }

    /// Fundamental-frequency ratio between the delayed current seen by the
    /// controller and the plant current. The operating point satisfies
    /// `i_ref = factor * i`.
    pub fn fundamental_delay_factor(
        params: &ControllerParams,
        placement: DelayPlacement,
        substeps: usize,
    ) -> Complex {
        match placement {
            DelayPlacement::WholeCommand => Complex::new(1.0, 0.0),
            DelayPlacement::FeedbackPaths => {
                let w = params.omega_1;
                let ts = params.ts();
                let dt = ts / substeps as f64;
                let n = delay_samples(params.t_d, params.f_s) as f64;
                let avg = (0..substeps)
                    .map(|j| Complex::from_polar(1.0, -w * j as f64 * dt))
                    .sum::<Complex>()
                    / substeps as f64;
                Complex::from_polar(1.0, -w * n * ts) * avg
            }
        }
    }

    pub fn va(&self) -> &VirtualAdmittance {
        &self.va
    }

    pub fn droop_state(&self) -> &DroopState {
        &self.droop_state
    }

    pub fn delay_len(&self) -> usize {
        self.cmd_line.len().max(self.iv_line.len())
    }

    /// Swaps the admittance. The new filter starts from the last
    /// input/output pair of the old one.
    pub fn switch_va(&mut self, va: VirtualAdmittance) {
        if va == self.va {
            return;
        }
        self.va = va;
        let step = Self::fast_step(&self.params, self.placement, self.substeps);
        self.va_filter = Self::build_va(&va, &self.params, step);
        self.va_filter.warm_start(self.va_in, self.va_out);
    }

    fn ivs(&self, offset: f64) -> Complex {
        Complex::from_polar(
            self.droop_state.magnitude,
            self.droop_state.phase + self.droop_state.omega * offset,
        )
    }

    fn reference_at(&mut self, e: Complex, v: Complex, t: f64) -> Complex {
        let x = e - v;
        let y = self.va_filter.step(x);
        self.va_in = x;
        self.va_out = y;
        match self.reference {
            ReferenceSource::VirtualAdmittance => y,
            ReferenceSource::Synchronous { value } => {
                value * Complex::from_polar(1.0, self.params.omega_1 * t)
            }
        }
    }

    /// `G_cc (i_ref - i_delayed) + v_delayed` at the fast rate.
    fn feedback_command(&mut self, i_ref: Complex) -> Complex {
        let (i_d, v_d) = self.held_iv;
        let err = i_ref - i_d;
        let cmd = self.params.k_cc_p * err + self.resonator.step(err) + v_d;
        clamp_magnitude(cmd, self.v_limit)
    }

    /// Samples `v_pcc` and `i` at the start of a control period, updates the
    /// droop, and returns the command for the first plant sub-step.
    pub fn control_step(&mut self, v: Complex, i: Complex) -> ControlOutput {
        let ts = self.params.ts();
        let (p, q) = instantaneous_power(v, i);
        droop_update(
            &mut self.droop_state,
            p,
            q,
            self.p_ref,
            self.q_ref,
            self.e_0,
            self.params.omega_1,
            &self.droop,
            ts,
        );
        let e = self.ivs(0.0);
        let t = self.t_k;
        let i_ref = self.reference_at(e, v, t);
        let v_cmd = match self.placement {
            DelayPlacement::FeedbackPaths => {
                self.iv_line.push_back((i, v));
                self.held_iv = self.iv_line.pop_front().expect("line holds the new sample");
                self.feedback_command(i_ref)
            }
            DelayPlacement::WholeCommand => {
                let err = i_ref - i;
                let cmd = self.params.k_cc_p * err + self.resonator.step(err) + v;
                self.cmd_line.push_back(cmd);
                let out = self.cmd_line.pop_front().expect("line holds the new command");
                self.held_cmd = clamp_magnitude(out, self.v_limit);
                self.held_cmd
            }
        };
        ControlOutput { e, i_ref, p, q, v_cmd }
    }

    /// Command for plant sub-step `j` (1-based within the period) given the
    /// PCC voltage at its start.
    pub fn substep(&mut self, j: usize, v: Complex) -> Complex {
        match self.placement {
            DelayPlacement::FeedbackPaths => {
                let off = j as f64 * self.params.ts() / self.substeps as f64;
                let e = self.ivs(off);
                let i_ref = self.reference_at(e, v, self.t_k + off);
                self.feedback_command(i_ref)
            }
            DelayPlacement::WholeCommand => self.held_cmd,
        }
    }

    /// Closes the control period: advances the IVS angle and the clock.
    pub fn end_period(&mut self) {
        let ts = self.params.ts();
        self.droop_state.phase += self.droop_state.omega * ts;
        self.t_k += ts;
    }

    /// Places all internal states on the steady-state orbit of `op` at
    /// `t = 0`, with the droop at rest.
    pub fn initialize(&mut self, op: &OperatingPoint, q_meas: f64) {
        let w = self.params.omega_1;
        let ts = self.params.ts();
        let k = self.params.k_cc_p;
        let j = Complex::new(0.0, 1.0);
        let rot = |t: f64| Complex::from_polar(1.0, w * t);
        self.droop_state = DroopState {
            x_p: 0.0,
            x_q: self.q_ref - q_meas,
            phase: op.e.arg(),
            omega: w,
            magnitude: op.e.norm(),
        };
        self.t_k = 0.0;

        let fast = Self::fast_step(&self.params, self.placement, self.substeps);
        let x0 = op.e - op.v;
        self.va_filter.set_sinusoidal(x0, op.i_ref, rot(fast));
        // the last pair the filter saw, one step before t = 0
        self.va_in = x0 * rot(-fast);
        self.va_out = op.i_ref * rot(-fast);

        match self.placement {
            DelayPlacement::FeedbackPaths => {
                let n = self.iv_line.len() as i64;
                for (slot, kk) in self.iv_line.iter_mut().zip(-n..0) {
                    let r = rot(kk as f64 * ts);
                    *slot = (op.i * r, op.v * r);
                }
                let d = Self::fundamental_delay_factor(&self.params, self.placement, self.substeps);
                self.resonator
                    .set_sinusoidal(Complex::new(0.0, 0.0), op.v_o - op.v * d, rot(fast));
            }
            DelayPlacement::WholeCommand => {
                // held commands equal interval averages of the fundamental
                let n = self.cmd_line.len();
                let avg = (rot(ts) - 1.0) / (j * w * ts);
                let cmd_at = |kk: i64| op.v_o * rot((kk as f64 + n as f64) * ts) * avg;
                for (slot, kk) in self.cmd_line.iter_mut().zip(-(n as i64)..0) {
                    *slot = cmd_at(kk);
                }
                self.resonator.set_sinusoidal(
                    Complex::new(0.0, 0.0),
                    cmd_at(0) - op.v - k * (op.i_ref - op.i),
                    rot(ts),
                );
            }
        }
    }
}
