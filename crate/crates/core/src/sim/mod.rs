//! Time-domain simulation of the grid-forming loop.

pub mod controller;
pub mod discrete;
pub mod plant;

use std::f64::consts::PI;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

pub use controller::{
    delay_samples, droop_update, instantaneous_power, ControlOutput, Controller, ControllerSetup,
    DelayPlacement, DroopParams, DroopState, OperatingPoint, ReferenceSource,
};
pub use discrete::DiscreteFilter;
pub use plant::{plant_step, PlantError, PlantModel, PlantState};

use crate::models::{
    design_proposed_va, ControllerParams, DesignPoint, GridParams, PlantParams, VaParams,
    VirtualAdmittance,
};
use crate::tf::Complex;

/// Trip level for divergence, as a multiple of rated peak current.
pub const DIVERGENCE_FACTOR: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VaMode {
    Conventional,
    Proposed,
}

impl VaMode {
    pub fn of(va: &VirtualAdmittance) -> Self {
        match va {
            VirtualAdmittance::Conventional(_) => Self::Conventional,
            VirtualAdmittance::Proposed(_) => Self::Proposed,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Conventional => "conventional",
            Self::Proposed => "proposed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "conventional" | "conv" => Some(Self::Conventional),
            "proposed" | "prop" => Some(Self::Proposed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub t_start: f64,
    pub va: VirtualAdmittance,
}

/// Positive-sequence series voltage in the grid branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub amplitude_v: f64,
    pub f_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// Phasor steady state of the first scheduled admittance.
    #[default]
    SteadyState,
    /// Every state zero, IVS at angle zero.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub plant: PlantParams,
    pub grid: GridParams,
    pub controller: ControllerParams,
    pub va_schedule: Vec<ScheduleEntry>,
    pub droop: DroopParams,
    pub p_ref: f64,
    pub q_ref: f64,
    pub t_end: f64,
    pub plant_substeps: usize,
    /// Unused: the simulation has no random elements.
    pub seed: Option<u64>,
    pub delay_placement: DelayPlacement,
    pub initial: InitialCondition,
    pub reference: ReferenceSource,
    pub injection: Option<Injection>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("operating point: {0}")]
    OperatingPoint(String),
}

/// The two admittances of the mode-transition experiment at reference values.
pub fn table1_admittances() -> (VirtualAdmittance, VirtualAdmittance) {
    let conv = VaParams::table1();
    let prop = design_proposed_va(&DesignPoint::table1()).expect("reference design is valid");
    (
        VirtualAdmittance::Proposed(prop),
        VirtualAdmittance::Conventional(conv),
    )
}

/// Proposed, then the other admittance from `t_switch` for `duration`, then
/// proposed again.
pub fn mode_transition_schedule(
    proposed: VirtualAdmittance,
    other: VirtualAdmittance,
    t_switch: f64,
    duration: f64,
) -> Vec<ScheduleEntry> {
    vec![
        ScheduleEntry {
            t_start: 0.0,
            va: proposed,
        },
        ScheduleEntry {
            t_start: t_switch,
            va: other,
        },
        ScheduleEntry {
            t_start: t_switch + duration,
            va: proposed,
        },
    ]
}

impl SimConfig {
    /// Reference operating point with the proposed admittance throughout.
    pub fn table1() -> Self {
        let (prop, _) = table1_admittances();
        Self {
            plant: PlantParams::table1(),
            grid: GridParams::table1(),
            controller: ControllerParams::table1(),
            va_schedule: vec![ScheduleEntry {
                t_start: 0.0,
                va: prop,
            }],
            droop: DroopParams::table1(),
            p_ref: crate::models::table1::P_REF_W,
            q_ref: crate::models::table1::Q_REF_VAR,
            t_end: 1.0,
            plant_substeps: 20,
            seed: None,
            delay_placement: DelayPlacement::default(),
            initial: InitialCondition::default(),
            reference: ReferenceSource::default(),
            injection: None,
        }
    }

    /// Proposed until 0.4 s, conventional for 0.1 s, proposed to 0.6 s.
    pub fn table1_mode_transition() -> Self {
        let (prop, conv) = table1_admittances();
        Self {
            va_schedule: mode_transition_schedule(prop, conv, 0.4, 0.1),
            t_end: 0.6,
            ..Self::table1()
        }
    }

    pub fn ts(&self) -> f64 {
        self.controller.ts()
    }

    pub fn steps(&self) -> usize {
        (self.t_end * self.controller.f_s).round() as usize
    }

    /// Nominal IVS magnitude, the peak phase value of `droop.v_base`.
    pub fn e_nominal(&self) -> f64 {
        self.droop.v_base * (2.0f64 / 3.0).sqrt()
    }

    /// Rated peak current `2 S / (3 V_peak)`.
    pub fn rated_peak_current(&self) -> f64 {
        let v = self.grid.v_phase_peak().max(self.e_nominal());
        if v > 0.0 {
            self.grid.p_rated / (1.5 * v)
        } else {
            f64::INFINITY
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        self.plant
            .validate()
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        self.controller
            .validate()
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        self.droop.validate().map_err(SimError::InvalidConfig)?;
        let g = &self.grid;
        if !(g.r_g >= 0.0 && g.l_g >= 0.0 && g.v_g_ll_rms >= 0.0 && g.p_rated > 0.0) {
            return bad(format!("grid parameters out of range: {g:?}"));
        }
        if self.plant_substeps < 10 {
            return bad(format!(
                "plant_substeps must be >= 10, got {}",
                self.plant_substeps
            ));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return bad(format!("t_end must be >= 0, got {}", self.t_end));
        }
        match self.va_schedule.first() {
            None => return bad("va_schedule is empty".into()),
            Some(e) if e.t_start != 0.0 => {
                return bad(format!("first schedule entry must start at 0, got {}", e.t_start))
            }
            _ => {}
        }
        if self
            .va_schedule
            .windows(2)
            .any(|w| !(w[1].t_start > w[0].t_start))
        {
            return bad("schedule times must be strictly ascending".into());
        }
        if !(self.p_ref.is_finite() && self.q_ref.is_finite()) {
            return bad("p_ref and q_ref must be finite".into());
        }
        if let Some(inj) = &self.injection {
            if !(inj.amplitude_v.is_finite() && inj.f_hz.is_finite()) {
                return bad("injection must be finite".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t_s: f64,
    pub e: Complex,
    pub v_pcc: Complex,
    pub i: Complex,
    pub i_ref: Complex,
    pub v_cmd: Complex,
    pub p: f64,
    pub q: f64,
    pub va_mode: VaMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    /// Current passed the trip level or a state became non-finite.
    Diverged { t_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub ts: f64,
    pub records: Vec<TraceRecord>,
    pub outcome: Outcome,
    pub operating_point: Option<OperatingPointReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPointReport {
    pub e: Complex,
    pub v_pcc: Complex,
    pub i: Complex,
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceIoError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace file: {0}")]
    Format(String),
}

pub const TRACE_COLUMNS: [&str; 12] = [
    "t_s",
    "e_alpha",
    "e_beta",
    "vpcc_alpha",
    "vpcc_beta",
    "i_alpha",
    "i_beta",
    "iref_alpha",
    "iref_beta",
    "p_w",
    "q_var",
    "va_mode",
];

impl SimTrace {
    pub fn diverged(&self) -> bool {
        matches!(self.outcome, Outcome::Diverged { .. })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TraceIoError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(TRACE_COLUMNS)?;
        for r in &self.records {
            let nums = [
                r.t_s, r.e.re, r.e.im, r.v_pcc.re, r.v_pcc.im, r.i.re, r.i.im, r.i_ref.re,
                r.i_ref.im, r.p, r.q,
            ];
            let mut row: Vec<String> = nums.iter().map(|v| format!("{v:e}")).collect();
            row.push(r.va_mode.as_str().to_string());
            wr.write_record(&row)?;
        }
        wr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads a trace CSV. Commands are not stored in the file and come back
    /// as zero; the sample time is taken from the first two rows.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, TraceIoError> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != TRACE_COLUMNS {
            return Err(TraceIoError::Format(format!(
                "expected columns {}, got {}",
                TRACE_COLUMNS.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut records = Vec::new();
        for (line, row) in rd.records().enumerate() {
            let row = row?;
            let num = |k: usize| -> Result<f64, TraceIoError> {
                row[k].trim().parse::<f64>().map_err(|_| {
                    TraceIoError::Format(format!(
                        "row {}: column {} is not a number: {:?}",
                        line + 2,
                        TRACE_COLUMNS[k],
                        &row[k]
                    ))
                })
            };
            let c = |a: f64, b: f64| Complex::new(a, b);
            let va_mode = VaMode::parse(row[11].trim()).ok_or_else(|| {
                TraceIoError::Format(format!("row {}: unknown va_mode {:?}", line + 2, &row[11]))
            })?;
            records.push(TraceRecord {
                t_s: num(0)?,
                e: c(num(1)?, num(2)?),
                v_pcc: c(num(3)?, num(4)?),
                i: c(num(5)?, num(6)?),
                i_ref: c(num(7)?, num(8)?),
                v_cmd: c(0.0, 0.0),
                p: num(9)?,
                q: num(10)?,
                va_mode,
            });
        }
        let ts = match records.as_slice() {
            [a, b, ..] => b.t_s - a.t_s,
            _ => return Err(TraceIoError::Format("need at least two rows".into())),
        };
        if !(ts > 0.0) {
            return Err(TraceIoError::Format("timestamps must increase".into()));
        }
        for w in records.windows(2) {
            let d = w[1].t_s - w[0].t_s;
            if (d - ts).abs() > 1e-6 * ts {
                return Err(TraceIoError::Format(format!(
                    "non-uniform sampling near t = {}",
                    w[0].t_s
                )));
            }
        }
        Ok(Self {
            ts,
            records,
            outcome: Outcome::Completed,
            operating_point: None,
        })
    }
}

/// Fundamental phasors of the network for an IVS phasor `e` and admittance
/// response `y` at `omega_1`: returns `(v_pcc, i)`.
fn network_phasors(
    e: Complex,
    y: Complex,
    d: Complex,
    vg: Complex,
    cfg: &SimConfig,
) -> Result<(Complex, Complex), SimError> {
    let w = cfg.controller.omega_1;
    let j = Complex::new(0.0, 1.0);
    let zg = Complex::new(cfg.grid.r_g, w * cfg.grid.l_g);
    let ycf = j * w * cfg.plant.c_f;
    if zg.norm() == 0.0 {
        return Err(SimError::OperatingPoint("grid impedance is zero".into()));
    }
    let v = match cfg.reference {
        ReferenceSource::VirtualAdmittance => (y * e + vg / zg) / (y + ycf + 1.0 / zg),
        ReferenceSource::Synchronous { value } => (value / d + vg / zg) / (ycf + 1.0 / zg),
    };
    let i = match cfg.reference {
        ReferenceSource::VirtualAdmittance => y * (e - v),
        ReferenceSource::Synchronous { value } => value / d,
    };
    Ok((v, i))
}

/// Solves the fundamental operating point with the droop at rest:
/// `P = P_ref` (or IVS angle zero when `k_p = 0`) and
/// `E = E_0 + K_q (Q_ref - Q)`.
pub fn operating_point(cfg: &SimConfig) -> Result<OperatingPoint, SimError> {
    let va = cfg
        .va_schedule
        .first()
        .ok_or_else(|| SimError::InvalidConfig("va_schedule is empty".into()))?
        .va;
    let w = cfg.controller.omega_1;
    let y = va
        .element()
        .at_omega(w)
        .map_err(|e| SimError::OperatingPoint(e.to_string()))?;
    let d = Controller::fundamental_delay_factor(
        &cfg.controller,
        cfg.delay_placement,
        cfg.plant_substeps,
    );
    // the current settles where its delayed image matches the reference
    let y_eff = y / d;
    let vg = Complex::new(cfg.grid.v_phase_peak(), 0.0);
    let e0 = cfg.e_nominal();
    let kq = cfg.droop.k_q_si();
    let fixed_angle = cfg.droop.k_p == 0.0;

    let residual = |x: [f64; 2]| -> Result<[f64; 2], SimError> {
        let e = Complex::from_polar(x[0], x[1]);
        let (v, i) = network_phasors(e, y_eff, d, vg, cfg)?;
        let (p, q) = instantaneous_power(v, i);
        let r0 = if fixed_angle { x[1] } else { (p - cfg.p_ref) / cfg.grid.p_rated };
        let r1 = (x[0] - e0 - kq * (cfg.q_ref - q)) / e0.max(1.0);
        Ok([r0, r1])
    };

    let mut x = [e0.max(cfg.grid.v_phase_peak()), 0.0];
    if x[0] == 0.0 {
        x[0] = 1e-9;
    }
    let mut converged = false;
    for _ in 0..100 {
        let r = residual(x)?;
        if r[0].abs().max(r[1].abs()) < 1e-13 {
            converged = true;
            break;
        }
        let h = [1e-7 * x[0].abs().max(1.0), 1e-7];
        let mut jac = [[0.0; 2]; 2];
        for c in 0..2 {
            let mut xp = x;
            xp[c] += h[c];
            let rp = residual(xp)?;
            for row in 0..2 {
                jac[row][c] = (rp[row] - r[row]) / h[c];
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det == 0.0 || !det.is_finite() {
            return Err(SimError::OperatingPoint("singular Jacobian".into()));
        }
        let dx0 = (r[0] * jac[1][1] - r[1] * jac[0][1]) / det;
        let dx1 = (jac[0][0] * r[1] - jac[1][0] * r[0]) / det;
        // damped step keeps the angle inside the transferable range
        let scale = (0.5 / dx1.abs()).min(1.0);
        x[0] -= scale * dx0;
        x[1] -= scale * dx1;
    }
    if !converged {
        let r = residual(x)?;
        if r[0].abs().max(r[1].abs()) > 1e-9 {
            return Err(SimError::OperatingPoint(format!(
                "no convergence (residual {:e}, {:e}); the requested power may not be transferable",
                r[0], r[1]
            )));
        }
    }
    let e = Complex::from_polar(x[0], x[1]);
    let (v, i) = network_phasors(e, y_eff, d, vg, cfg)?;
    let v_o = v + Complex::new(0.0, w * cfg.plant.l_f) * i;
    let i_ref = match cfg.reference {
        ReferenceSource::VirtualAdmittance => y * (e - v),
        ReferenceSource::Synchronous { value } => value,
    };
    Ok(OperatingPoint { e, v, i, i_ref, v_o })
}

fn schedule_index(cfg: &SimConfig, t_start: f64) -> usize {
    (t_start * cfg.controller.f_s).round() as usize
}

/// Runs the closed loop at the control rate with `plant_substeps` exact
/// plant updates per period. Divergence is reported in the outcome.
pub fn run(cfg: &SimConfig) -> Result<SimTrace, SimError> {
    cfg.validate()?;
    let ts = cfg.ts();
    let n_sub = cfg.plant_substeps;
    let dt = ts / n_sub as f64;
    let plant = PlantModel::new(&cfg.plant, &cfg.grid, dt)?;
    let first = cfg.va_schedule[0].va;
    let mut ctrl = Controller::new(ControllerSetup {
        params: cfg.controller,
        droop: cfg.droop,
        placement: cfg.delay_placement,
        reference: cfg.reference,
        v_limit: cfg.plant.v_dc.map(|v| v / 3f64.sqrt()),
        substeps: n_sub,
        va: first,
        e_0: cfg.e_nominal(),
        p_ref: cfg.p_ref,
        q_ref: cfg.q_ref,
    });

    let w1 = cfg.controller.omega_1;
    let vg = cfg.grid.v_phase_peak();
    let mut x = PlantState::default();
    let mut op_report = None;
    if cfg.initial == InitialCondition::SteadyState {
        let op = operating_point(cfg)?;
        let (p, q) = instantaneous_power(op.v, op.i);
        ctrl.initialize(&op, q);
        let zg = Complex::new(cfg.grid.r_g, w1 * cfg.grid.l_g);
        x = PlantState {
            i_f: op.i,
            v_c: op.v,
            i_g: (op.v - vg) / zg,
        };
        op_report = Some(OperatingPointReport {
            e: op.e,
            v_pcc: op.v,
            i: op.i,
            p,
            q,
        });
    }

    let switches: Vec<(usize, VirtualAdmittance)> = cfg.va_schedule[1..]
        .iter()
        .map(|s| (schedule_index(cfg, s.t_start), s.va))
        .collect();
    let mut next_switch = 0;
    let trip = DIVERGENCE_FACTOR * cfg.rated_peak_current();
    let steps = cfg.steps();
    let mut records = Vec::with_capacity(steps);
    let mut outcome = Outcome::Completed;
    let inj = cfg.injection;

    for k in 0..steps {
        let t_k = k as f64 * ts;
        while next_switch < switches.len() && switches[next_switch].0 <= k {
            ctrl.switch_va(switches[next_switch].1);
            next_switch += 1;
        }
        let out = ctrl.control_step(x.v_c, x.i_f);
        records.push(TraceRecord {
            t_s: t_k,
            e: out.e,
            v_pcc: x.v_c,
            i: x.i_f,
            i_ref: out.i_ref,
            v_cmd: out.v_cmd,
            p: out.p,
            q: out.q,
            va_mode: VaMode::of(ctrl.va()),
        });
        let mut v_o = out.v_cmd;
        for j in 0..n_sub {
            if j > 0 {
                v_o = ctrl.substep(j, x.v_c);
            }
            let t_mid = t_k + (j as f64 + 0.5) * dt;
            let mut emf = Complex::from_polar(vg, w1 * t_mid);
            if let Some(inj) = &inj {
                emf += Complex::from_polar(inj.amplitude_v, 2.0 * PI * inj.f_hz * t_mid);
            }
            x = plant.step(&x, v_o, emf);
        }
        ctrl.end_period();
        if !x.is_finite() || x.i_f.norm() > trip {
            outcome = Outcome::Diverged { t_s: t_k + ts };
            break;
        }
    }

    Ok(SimTrace {
        ts,
        records,
        outcome,
        operating_point: op_report,
    })
}
