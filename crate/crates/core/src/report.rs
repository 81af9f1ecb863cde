//! Summary statistics of a simulation trace: power, saturation, and the
//! envelope of the non-fundamental current per schedule interval.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::measurement::{fft_spectrum, growth_rate, Channel, FftOptions, Window};
use crate::sim::{Outcome, SimConfig, SimTrace, VaMode, DIVERGENCE_FACTOR};

/// Oscillations below this fraction of the rated peak current count as
/// absent.
pub const OSCILLATION_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerStats {
    pub t_start_s: f64,
    pub t_end_s: f64,
    pub p_mean_w: f64,
    pub p_std_w: f64,
    pub p_min_w: f64,
    pub p_max_w: f64,
    pub q_mean_var: f64,
    pub q_std_var: f64,
}

impl PowerStats {
    fn of(trace: &SimTrace, t0: f64, t1: f64) -> Option<Self> {
        let r: Vec<_> = trace.records.iter().filter(|r| r.t_s >= t0 && r.t_s < t1).collect();
        if r.is_empty() {
            return None;
        }
        let n = r.len() as f64;
        let pm = r.iter().map(|x| x.p).sum::<f64>() / n;
        let qm = r.iter().map(|x| x.q).sum::<f64>() / n;
        let ps = (r.iter().map(|x| (x.p - pm).powi(2)).sum::<f64>() / n).sqrt();
        let qs = (r.iter().map(|x| (x.q - qm).powi(2)).sum::<f64>() / n).sqrt();
        Some(Self {
            t_start_s: t0,
            t_end_s: t1,
            p_mean_w: pm,
            p_std_w: ps,
            p_min_w: r.iter().map(|x| x.p).fold(f64::INFINITY, f64::min),
            p_max_w: r.iter().map(|x| x.p).fold(f64::NEG_INFINITY, f64::max),
            q_mean_var: qm,
            q_std_var: qs,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationStats {
    pub limit_v: Option<f64>,
    /// Fraction of control periods with `|v_cmd|` at the limit.
    pub fraction: f64,
    pub first_t_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSummary {
    pub mode: VaMode,
    pub t_start_s: f64,
    pub t_end_s: f64,
    pub power: Option<PowerStats>,
    /// RMS of phase-A current after removing dc and the fundamental, over
    /// the first, largest and last fundamental cycle of the interval.
    pub harmonic_rms_start_a: f64,
    pub harmonic_rms_peak_a: f64,
    pub harmonic_rms_end_a: f64,
    pub dominant_hz: Option<f64>,
    pub growth_rate_per_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceVerdict {
    /// No oscillation above the floor.
    Stable,
    /// Oscillation grew and had decayed by the end of the run.
    Restabilized,
    /// Oscillation still above the floor at the end of the run.
    SustainedOscillation,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub outcome: Outcome,
    pub current_peak_a: f64,
    pub current_trip_a: f64,
    pub saturation: SaturationStats,
    /// Second half of the final interval, at most its last 0.2 s.
    pub steady_state: Option<PowerStats>,
    pub intervals: Vec<IntervalSummary>,
    /// The interval with the largest harmonic envelope.
    pub dominant_oscillation: Option<IntervalSummary>,
    pub verdict: TraceVerdict,
}

fn cycle_rms(x: &[f64], t0_index: usize, ts: f64, f1: f64) -> Vec<f64> {
    let n = ((1.0 / f1) / ts).round().max(5.0) as usize;
    let w = 2.0 * PI * f1;
    x.chunks_exact(n)
        .enumerate()
        .map(|(c, chunk)| {
            let mut ata = SMatrix::<f64, 3, 3>::zeros();
            let mut atb = SVector::<f64, 3>::zeros();
            let phis: Vec<_> = (0..n)
                .map(|k| {
                    let t = (t0_index + c * n + k) as f64 * ts;
                    SVector::<f64, 3>::from([1.0, (w * t).cos(), (w * t).sin()])
                })
                .collect();
            for (phi, v) in phis.iter().zip(chunk) {
                ata += phi * phi.transpose();
                atb += phi * *v;
            }
            let Some(coef) = ata.lu().solve(&atb) else {
                return 0.0;
            };
            let ss: f64 = phis.iter().zip(chunk).map(|(p, v)| (v - p.dot(&coef)).powi(2)).sum();
            (ss / n as f64).sqrt()
        })
        .collect()
}

pub fn summarize(trace: &SimTrace, cfg: &SimConfig) -> SimSummary {
    let ts = trace.ts;
    let f1 = cfg.controller.f_1_hz();
    let t_last = trace.records.last().map(|r| r.t_s + ts).unwrap_or(0.0);
    let limit = cfg.plant.v_dc.map(|v| v / 3f64.sqrt());
    let mut sat_count = 0usize;
    let mut first_sat = None;
    if let Some(l) = limit {
        for r in &trace.records {
            if r.v_cmd.norm() >= l * (1.0 - 1e-9) {
                sat_count += 1;
                first_sat.get_or_insert(r.t_s);
            }
        }
    }
    let saturation = SaturationStats {
        limit_v: limit,
        fraction: if trace.records.is_empty() {
            0.0
        } else {
            sat_count as f64 / trace.records.len() as f64
        },
        first_t_s: first_sat,
    };

    let ia: Vec<f64> = trace.records.iter().map(|r| Channel::IA.sample(r)).collect();
    let fft_opts = FftOptions {
        fundamental_hz: f1,
        ..FftOptions::default()
    };
    let mut intervals = Vec::new();
    for (k, entry) in cfg.va_schedule.iter().enumerate() {
        let t0 = entry.t_start;
        let t1 = cfg.va_schedule.get(k + 1).map(|e| e.t_start).unwrap_or(cfg.t_end).min(t_last);
        if t1 <= t0 {
            continue;
        }
        let i0 = ((t0 / ts).round() as usize).min(ia.len());
        let i1 = ((t1 / ts).round() as usize).min(ia.len());
        let env = cycle_rms(&ia[i0..i1], i0, ts, f1);
        let dominant_hz = fft_spectrum(trace, Channel::IA, Window::Hann, t0, t1, &fft_opts)
            .ok()
            .map(|s| s.dominant_harmonic_hz);
        intervals.push(IntervalSummary {
            mode: crate::sim::VaMode::of(&entry.va),
            t_start_s: t0,
            t_end_s: t1,
            power: PowerStats::of(trace, t0, t1),
            harmonic_rms_start_a: env.first().copied().unwrap_or(0.0),
            harmonic_rms_peak_a: env.iter().copied().fold(0.0, f64::max),
            harmonic_rms_end_a: env.last().copied().unwrap_or(0.0),
            dominant_hz,
            growth_rate_per_s: None,
        });
    }

    let rated = cfg.rated_peak_current();
    let floor = OSCILLATION_FLOOR * rated;
    let run_peak = intervals
        .iter()
        .max_by(|a, b| a.harmonic_rms_peak_a.total_cmp(&b.harmonic_rms_peak_a))
        .filter(|i| i.harmonic_rms_peak_a > floor)
        .and_then(|i| i.dominant_hz);
    // every interval is measured at the frequency of the largest oscillation
    if let Some(f) = run_peak {
        for iv in &mut intervals {
            let i0 = ((iv.t_start_s / ts).round() as usize).min(ia.len());
            let i1 = ((iv.t_end_s / ts).round() as usize).min(ia.len());
            let segments = (((iv.t_end_s - iv.t_start_s) * f1).floor() as usize).clamp(2, 20);
            iv.growth_rate_per_s = growth_rate(&ia[i0..i1], ts, f, f1, segments);
        }
    }

    let dominant_oscillation = intervals
        .iter()
        .max_by(|a, b| a.harmonic_rms_peak_a.total_cmp(&b.harmonic_rms_peak_a))
        .filter(|i| i.harmonic_rms_peak_a > floor)
        .cloned();
    let verdict = match (trace.outcome, &dominant_oscillation, intervals.last()) {
        (Outcome::Diverged { .. }, _, _) => TraceVerdict::Diverged,
        (_, None, _) => TraceVerdict::Stable,
        (_, Some(_), Some(last)) if last.harmonic_rms_end_a <= floor => TraceVerdict::Restabilized,
        _ => TraceVerdict::SustainedOscillation,
    };
    let steady_state = intervals.last().and_then(|last| {
        let t0 = (last.t_end_s - 0.2).max(0.5 * (last.t_start_s + last.t_end_s));
        PowerStats::of(trace, t0, last.t_end_s)
    });
    SimSummary {
        outcome: trace.outcome,
        current_peak_a: trace.records.iter().map(|r| r.i.norm()).fold(0.0, f64::max),
        current_trip_a: DIVERGENCE_FACTOR * rated,
        saturation,
        steady_state,
        intervals,
        dominant_oscillation,
        verdict,
    }
}
