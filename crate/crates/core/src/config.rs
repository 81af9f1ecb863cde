//! TOML configuration with reference defaults. Every physical key carries its
//! SI unit as a suffix; unknown keys are rejected.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::measurement::{Channel, FftOptions, ScanConfig, Window};
use crate::models::{
    default_resonant_gain, design_proposed_va, table1, zg_from_scr, ControllerParams, DesignPoint,
    GridParams, ModelError, PlantParams, ProposedVaParams, VaParams, VirtualAdmittance,
};
use crate::sim::{
    DelayPlacement, DroopParams, InitialCondition, ReferenceSource, ScheduleEntry, SimConfig,
    VaMode,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config value {key} = {value}: {reason}")]
    Invalid {
        key: String,
        value: String,
        reason: String,
    },
    #[error("schedule: {0}")]
    Schedule(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn invalid(key: &str, value: impl ToString, reason: &str) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    pub l_f_h: f64,
    pub c_f_f: f64,
    pub v_dc_v: f64,
    /// Clamp `|v_cmd|` at `v_dc_v / sqrt(3)`.
    pub saturation: bool,
}

impl Default for PlantSection {
    fn default() -> Self {
        Self {
            l_f_h: table1::L_F_H,
            c_f_f: table1::C_F_F,
            v_dc_v: table1::V_DC_V,
            saturation: true,
        }
    }
}

/// Either `r_g_ohm` and `l_g_h` are given, or both follow from SCR and X/R.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub v_g_ll_rms_v: f64,
    pub scr: f64,
    pub xr_ratio: f64,
    pub p_rated_w: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_g_ohm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_g_h: Option<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            v_g_ll_rms_v: table1::V_G_LL_RMS_V,
            scr: table1::SCR,
            xr_ratio: table1::XR_RATIO,
            p_rated_w: table1::P_RATED_W,
            r_g_ohm: None,
            l_g_h: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub f_1_hz: f64,
    pub f_cc_hz: f64,
    pub f_s_hz: f64,
    /// Defaults to `1.5 / f_s`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_d_s: Option<f64>,
    /// Defaults to `2 pi f_cc L_f`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_cc_p_ohm: Option<f64>,
    /// Defaults to `2 K_p omega_cc / 10`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_cc_r_ohm_per_s: Option<f64>,
    pub delay_placement: DelayPlacement,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            f_1_hz: table1::F_1_HZ,
            f_cc_hz: table1::F_CC_HZ,
            f_s_hz: table1::F_S_HZ,
            t_d_s: None,
            k_cc_p_ohm: None,
            k_cc_r_ohm_per_s: None,
            delay_placement: DelayPlacement::default(),
        }
    }
}

/// Gains and cutoffs in per unit; bases default to the rated power, the
/// grid voltage and the fundamental.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DroopSection {
    pub k_p_pu: f64,
    pub k_q_pu: f64,
    pub omega_p_pu: f64,
    pub omega_q_pu: f64,
    pub p_ref_w: f64,
    pub q_ref_var: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_base_va: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_base_v: Option<f64>,
}

impl Default for DroopSection {
    fn default() -> Self {
        Self {
            k_p_pu: table1::K_PQ_PU,
            k_q_pu: table1::K_PQ_PU,
            omega_p_pu: table1::OMEGA_PQ_PU,
            omega_q_pu: table1::OMEGA_PQ_PU,
            p_ref_w: table1::P_REF_W,
            q_ref_var: table1::Q_REF_VAR,
            s_base_va: None,
            v_base_v: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaConventionalSection {
    pub r_v_ohm: f64,
    pub l_v_h: f64,
}

impl Default for VaConventionalSection {
    fn default() -> Self {
        Self {
            r_v_ohm: table1::R_V_OHM,
            l_v_h: table1::L_V_H,
        }
    }
}

/// The proposed admittance matches `R_v + j omega_1 L_v` of the conventional
/// section at the fundamental.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaDesignPointSection {
    pub r_v_sigma_ohm: f64,
}

impl Default for VaDesignPointSection {
    fn default() -> Self {
        Self {
            r_v_sigma_ohm: table1::R_V_OHM / 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub t_end_s: f64,
    pub plant_substeps: usize,
    /// Comma-separated `mode@t_start_s` entries.
    pub schedule: String,
    pub initial: InitialCondition,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            t_end_s: 0.6,
            plant_substeps: 20,
            schedule: "proposed@0,conventional@0.4,proposed@0.5".into(),
            initial: InitialCondition::SteadyState,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub points: usize,
    /// Replaces the log-spaced list when given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequencies_hz: Option<Vec<f64>>,
    /// Defaults to 0.5 % of the peak phase voltage.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude_v: Option<f64>,
    pub settle_cycles: usize,
    pub measure_cycles: usize,
    pub min_settle_s: f64,
    pub guard_hz: f64,
    pub growth_tolerance: f64,
}

impl Default for ScanSection {
    fn default() -> Self {
        let base = ScanConfig::with_amplitude_for(table1::V_G_LL_RMS_V);
        Self {
            f_min_hz: 100.0,
            f_max_hz: 2000.0,
            points: 20,
            frequencies_hz: None,
            amplitude_v: None,
            settle_cycles: base.settle_cycles,
            measure_cycles: base.measure_cycles,
            min_settle_s: base.min_settle_s,
            guard_hz: base.guard_hz,
            growth_tolerance: base.growth_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FftSection {
    pub channel: String,
    pub window: String,
    pub t0_s: f64,
    pub t1_s: f64,
    pub min_cycles: f64,
    pub exclusion_bins: usize,
}

impl Default for FftSection {
    fn default() -> Self {
        Self {
            channel: "i_a".into(),
            window: "hann".into(),
            t0_s: 0.4,
            t1_s: 0.5,
            min_cycles: FftOptions::default().min_cycles,
            exclusion_bins: FftOptions::default().exclusion_bins,
        }
    }
}

/// The configuration document. Missing sections and keys take the reference
/// defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub plant: PlantSection,
    pub grid: GridSection,
    pub controller: ControllerSection,
    pub droop: DroopSection,
    pub va_conventional: VaConventionalSection,
    pub va_design_point: VaDesignPointSection,
    pub simulation: SimulationSection,
    pub scan: ScanSection,
    pub fft: FftSection,
}

/// Parsed document plus the dotted keys that fell back to defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub file: ConfigFile,
    pub defaulted: Vec<(String, String)>,
}

fn flatten(v: &toml::Value, prefix: &str, out: &mut BTreeMap<String, String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(v, &key, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

fn keys_of(v: &toml::Value) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    flatten(v, "", &mut out);
    out
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<LoadedConfig, ConfigError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let given: toml::Value = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let given = keys_of(&given);
        let full = toml::Value::try_from(&file).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let defaulted = keys_of(&full)
            .into_iter()
            .filter(|(k, _)| !given.contains_key(k))
            .collect();
        Ok(LoadedConfig { file, defaulted })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Fills every derived value. The result re-parses to itself.
    pub fn resolve(&self) -> Result<ResolvedConfig, ConfigError> {
        ResolvedConfig::from_file(self)
    }
}

/// `"proposed@0,conventional@0.4,proposed@0.5"`. A bare mode name means the
/// whole run.
pub fn parse_schedule(text: &str) -> Result<Vec<(f64, VaMode)>, ConfigError> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, t) = match part.split_once('@') {
            Some((n, t)) => {
                let t: f64 = t
                    .trim()
                    .parse()
                    .map_err(|_| ConfigError::Schedule(format!("bad start time in '{part}'")))?;
                (n.trim(), t)
            }
            None => (part, 0.0),
        };
        let mode = VaMode::parse(name)
            .ok_or_else(|| ConfigError::Schedule(format!("unknown admittance '{name}'")))?;
        if !(t.is_finite() && t >= 0.0) {
            return Err(ConfigError::Schedule(format!("negative start time in '{part}'")));
        }
        if let Some(&(prev, _)) = out.last() {
            if t <= prev {
                return Err(ConfigError::Schedule("start times must increase".into()));
            }
        }
        out.push((t, mode));
    }
    match out.first() {
        None => Err(ConfigError::Schedule("empty schedule".into())),
        Some(&(t, _)) if t != 0.0 => Err(ConfigError::Schedule("first entry must start at 0".into())),
        _ => Ok(out),
    }
}

pub fn format_schedule(entries: &[(f64, VaMode)]) -> String {
    entries
        .iter()
        .map(|(t, m)| format!("{}@{t}", m.as_str()))
        .collect::<Vec<_>>()
        .join(",")
}

/// Everything the subcommands need, with derived values filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub file: ConfigFile,
    pub plant: PlantParams,
    pub grid: GridParams,
    pub controller: ControllerParams,
    pub droop: DroopParams,
    pub conventional: VaParams,
    pub design_point: DesignPoint,
    pub schedule: Vec<(f64, VaMode)>,
}

fn positive(key: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(invalid(key, v, "must be finite and > 0"))
    }
}

impl ResolvedConfig {
    fn from_file(f: &ConfigFile) -> Result<Self, ConfigError> {
        let plant = PlantParams {
            l_f: positive("plant.l_f_h", f.plant.l_f_h)?,
            c_f: f.plant.c_f_f,
            v_dc: f.plant.saturation.then_some(f.plant.v_dc_v),
        };
        plant.validate()?;
        if !(f.plant.v_dc_v.is_finite() && f.plant.v_dc_v > 0.0) {
            return Err(invalid("plant.v_dc_v", f.plant.v_dc_v, "must be finite and > 0"));
        }

        let omega_1 = 2.0 * PI * positive("controller.f_1_hz", f.controller.f_1_hz)?;
        let omega_cc = 2.0 * PI * positive("controller.f_cc_hz", f.controller.f_cc_hz)?;
        let f_s = positive("controller.f_s_hz", f.controller.f_s_hz)?;
        let mut controller = ControllerParams::tuned(&plant, omega_1, omega_cc, f_s);
        if let Some(t) = f.controller.t_d_s {
            controller.t_d = t;
        }
        if let Some(k) = f.controller.k_cc_p_ohm {
            controller.k_cc_p = k;
            controller.k_cc_r = default_resonant_gain(k, omega_cc);
        }
        if let Some(kr) = f.controller.k_cc_r_ohm_per_s {
            controller.k_cc_r = kr;
        }
        controller.validate()?;

        let g = &f.grid;
        let strength = GridParams::from_strength(g.v_g_ll_rms_v, g.scr, g.xr_ratio, g.p_rated_w);
        let grid = match (g.r_g_ohm, g.l_g_h) {
            (Some(r_g), Some(l_g)) => GridParams { r_g, l_g, ..strength },
            (None, None) => {
                positive("grid.v_g_ll_rms_v", g.v_g_ll_rms_v)?;
                positive("grid.p_rated_w", g.p_rated_w)?;
                positive("grid.scr", g.scr)?;
                positive("grid.xr_ratio", g.xr_ratio)?;
                zg_from_scr(&strength, omega_1).0
            }
            _ => {
                return Err(invalid(
                    "grid.r_g_ohm/l_g_h",
                    "one of two",
                    "give both or neither",
                ))
            }
        };
        grid.validate()?;

        let d = &f.droop;
        let droop = DroopParams {
            k_p: d.k_p_pu,
            k_q: d.k_q_pu,
            omega_p: d.omega_p_pu,
            omega_q: d.omega_q_pu,
            s_base: d.s_base_va.unwrap_or(grid.p_rated),
            v_base: d.v_base_v.unwrap_or(grid.v_g_ll_rms),
            omega_base: omega_1,
        };
        droop
            .validate()
            .map_err(|m| invalid("droop", "", &m))?;

        let conventional = VaParams::new(f.va_conventional.r_v_ohm, f.va_conventional.l_v_h)?;
        let design_point =
            DesignPoint::matching(&conventional, omega_1, f.va_design_point.r_v_sigma_ohm);
        let schedule = parse_schedule(&f.simulation.schedule)?;

        let mut file = f.clone();
        file.grid.r_g_ohm = Some(grid.r_g);
        file.grid.l_g_h = Some(grid.l_g);
        file.controller.t_d_s = Some(controller.t_d);
        file.controller.k_cc_p_ohm = Some(controller.k_cc_p);
        file.controller.k_cc_r_ohm_per_s = Some(controller.k_cc_r);
        file.droop.s_base_va = Some(droop.s_base);
        file.droop.v_base_v = Some(droop.v_base);
        file.simulation.schedule = format_schedule(&schedule);
        if file.scan.amplitude_v.is_none() {
            file.scan.amplitude_v =
                Some(ScanConfig::with_amplitude_for(droop.v_base).injection_amplitude);
        }

        Ok(Self {
            file,
            plant,
            grid,
            controller,
            droop,
            conventional,
            design_point,
            schedule,
        })
    }

    pub fn proposed(&self) -> Result<ProposedVaParams, ModelError> {
        design_proposed_va(&self.design_point)
    }

    pub fn admittance(&self, mode: VaMode) -> Result<VirtualAdmittance, ModelError> {
        Ok(match mode {
            VaMode::Conventional => VirtualAdmittance::Conventional(self.conventional),
            VaMode::Proposed => VirtualAdmittance::Proposed(self.proposed()?),
        })
    }

    pub fn sim_config(&self) -> Result<SimConfig, ConfigError> {
        self.sim_config_with(&self.schedule)
    }

    pub fn sim_config_with(&self, schedule: &[(f64, VaMode)]) -> Result<SimConfig, ConfigError> {
        let va_schedule = schedule
            .iter()
            .map(|&(t_start, m)| Ok(ScheduleEntry { t_start, va: self.admittance(m)? }))
            .collect::<Result<Vec<_>, ModelError>>()?;
        let s = &self.file.simulation;
        Ok(SimConfig {
            plant: self.plant,
            grid: self.grid,
            controller: self.controller,
            va_schedule,
            droop: self.droop,
            p_ref: self.file.droop.p_ref_w,
            q_ref: self.file.droop.q_ref_var,
            t_end: s.t_end_s,
            plant_substeps: s.plant_substeps,
            seed: None,
            delay_placement: self.file.controller.delay_placement,
            initial: s.initial,
            reference: ReferenceSource::default(),
            injection: None,
        })
    }

    pub fn scan_config(&self) -> ScanConfig {
        let s = &self.file.scan;
        let mut cfg = match &s.frequencies_hz {
            Some(list) => ScanConfig {
                frequencies_hz: list.clone(),
                ..ScanConfig::with_amplitude_for(self.droop.v_base)
            },
            None => ScanConfig::log_spaced(s.f_min_hz, s.f_max_hz, s.points, self.droop.v_base),
        };
        if let Some(a) = s.amplitude_v {
            cfg.injection_amplitude = a;
        }
        cfg.settle_cycles = s.settle_cycles;
        cfg.measure_cycles = s.measure_cycles;
        cfg.min_settle_s = s.min_settle_s;
        cfg.guard_hz = s.guard_hz;
        cfg.growth_tolerance = s.growth_tolerance;
        cfg
    }

    pub fn fft_options(&self) -> FftOptions {
        FftOptions {
            fundamental_hz: self.controller.f_1_hz(),
            min_cycles: self.file.fft.min_cycles,
            exclusion_bins: self.file.fft.exclusion_bins,
        }
    }

    pub fn fft_channel(&self) -> Result<Channel, ConfigError> {
        Channel::parse(&self.file.fft.channel)
            .ok_or_else(|| invalid("fft.channel", &self.file.fft.channel, "unknown channel"))
    }

    pub fn fft_window(&self) -> Result<Window, ConfigError> {
        Window::parse(&self.file.fft.window)
            .ok_or_else(|| invalid("fft.window", &self.file.fft.window, "rectangular or hann"))
    }
}
