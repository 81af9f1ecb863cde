//! Injection-based impedance scanning of the simulated inverter, spectra of
//! trace channels and response comparison.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::impedance::z_eq_delay;
use crate::sim::{self, Injection, SimConfig, SimError, SimTrace, TraceRecord};
use crate::tf::{Complex, FrequencyResponse, TfError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScanError {
    #[error("scan frequency {f_hz} Hz lies within {guard_hz} Hz of the {fundamental_hz} Hz fundamental")]
    InGuardBand {
        f_hz: f64,
        fundamental_hz: f64,
        guard_hz: f64,
    },
    #[error("scan frequency must be finite and positive, got {0}")]
    InvalidFrequency(f64),
    #[error("injection amplitude must be > 0, got {0}")]
    InvalidAmplitude(f64),
    #[error("settle_cycles and measure_cycles must be >= 1")]
    InvalidCycles,
    #[error("response grew by {growth:.3} between measurement windows at {f_hz} Hz")]
    ScanUnstable { f_hz: f64, growth: f64 },
    #[error("simulation diverged at {t_s} s during the scan")]
    Diverged { t_s: f64 },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Tf(#[from] TfError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub frequencies_hz: Vec<f64>,
    /// Peak of the positive-sequence series voltage.
    pub injection_amplitude: f64,
    /// Injection periods discarded before measuring.
    pub settle_cycles: usize,
    /// Injection periods per measurement window.
    pub measure_cycles: usize,
    /// Lower bound on the settling time, seconds.
    pub min_settle_s: f64,
    pub guard_hz: f64,
    /// Allowed growth of `|dI|` between the two measurement windows.
    pub growth_tolerance: f64,
}

impl ScanConfig {
    /// `n` log-spaced points over `[f_lo, f_hi]` with reference defaults.
    pub fn log_spaced(f_lo: f64, f_hi: f64, n: usize, v_base_ll_rms: f64) -> Self {
        let frequencies_hz = match n {
            0 => Vec::new(),
            1 => vec![f_lo],
            _ => (0..n)
                .map(|k| f_lo * (f_hi / f_lo).powf(k as f64 / (n - 1) as f64))
                .collect(),
        };
        Self {
            frequencies_hz,
            ..Self::with_amplitude_for(v_base_ll_rms)
        }
    }

    /// Empty frequency list; amplitude 0.5 % of the peak phase voltage.
    pub fn with_amplitude_for(v_base_ll_rms: f64) -> Self {
        Self {
            frequencies_hz: Vec::new(),
            injection_amplitude: 0.005 * v_base_ll_rms * (2.0f64 / 3.0).sqrt(),
            settle_cycles: 30,
            measure_cycles: 20,
            min_settle_s: 0.25,
            guard_hz: 5.0,
            growth_tolerance: 0.05,
        }
    }

    pub fn validate(&self, fundamental_hz: f64) -> Result<(), ScanError> {
        if !(self.injection_amplitude.is_finite() && self.injection_amplitude > 0.0) {
            return Err(ScanError::InvalidAmplitude(self.injection_amplitude));
        }
        if self.settle_cycles == 0 || self.measure_cycles == 0 {
            return Err(ScanError::InvalidCycles);
        }
        for &f in &self.frequencies_hz {
            if !(f.is_finite() && f > 0.0) {
                return Err(ScanError::InvalidFrequency(f));
            }
            if (f - fundamental_hz).abs() <= self.guard_hz {
                return Err(ScanError::InGuardBand {
                    f_hz: f,
                    fundamental_hz,
                    guard_hz: self.guard_hz,
                });
            }
        }
        Ok(())
    }

    fn schedule(&self, f: f64, f_s: f64) -> (usize, usize) {
        let settle_s = (self.settle_cycles as f64 / f).max(self.min_settle_s);
        let start = (settle_s * f_s).ceil() as usize;
        let len = ((self.measure_cycles as f64 / f) * f_s).round().max(1.0) as usize;
        (start, len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScanStatus {
    Ok,
    Unstable { growth: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub f_hz: f64,
    pub z_measured: Option<Complex>,
    pub z_analytic: Complex,
    pub mag_err_pct: Option<f64>,
    pub phase_err_deg: Option<f64>,
    pub status: ScanStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub records: Vec<ScanRecord>,
    pub injection_amplitude: f64,
}

impl ScanResult {
    pub fn max_mag_err_pct(&self) -> Option<f64> {
        self.records
            .iter()
            .filter_map(|r| r.mag_err_pct)
            .reduce(f64::max)
    }

    pub fn max_phase_err_deg(&self) -> Option<f64> {
        self.records
            .iter()
            .filter_map(|r| r.phase_err_deg)
            .reduce(f64::max)
    }

    pub fn unstable(&self) -> impl Iterator<Item = &ScanRecord> {
        self.records
            .iter()
            .filter(|r| matches!(r.status, ScanStatus::Unstable { .. }))
    }

    /// Fails with the first unstable frequency.
    pub fn into_strict(self) -> Result<Self, ScanError> {
        if let Some(r) = self.unstable().next() {
            let ScanStatus::Unstable { growth } = r.status else {
                unreachable!()
            };
            return Err(ScanError::ScanUnstable {
                f_hz: r.f_hz,
                growth,
            });
        }
        Ok(self)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "f_hz",
            "z_measured_re",
            "z_measured_im",
            "z_analytic_re",
            "z_analytic_im",
            "mag_err_pct",
            "phase_err_deg",
            "status",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for r in &self.records {
            wr.write_record([
                format!("{:e}", r.f_hz),
                opt(r.z_measured.map(|z| z.re)),
                opt(r.z_measured.map(|z| z.im)),
                format!("{:e}", r.z_analytic.re),
                format!("{:e}", r.z_analytic.im),
                opt(r.mag_err_pct),
                opt(r.phase_err_deg),
                match r.status {
                    ScanStatus::Ok => "ok".to_string(),
                    ScanStatus::Unstable { .. } => "unstable".to_string(),
                },
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Single-bin DFT of `x` at `f_hz`, normalized to the phasor amplitude.
pub fn single_bin_dft(x: &[Complex], t0: f64, ts: f64, f_hz: f64) -> Complex {
    let w = 2.0 * PI * f_hz;
    let step = Complex::from_polar(1.0, -w * ts);
    let mut rot = Complex::from_polar(1.0, -w * t0);
    let mut acc = Complex::new(0.0, 0.0);
    for &v in x {
        acc += v * rot;
        rot *= step;
    }
    acc / x.len() as f64
}

fn delta(
    pert: &[TraceRecord],
    base: &[TraceRecord],
    range: std::ops::Range<usize>,
    pick: impl Fn(&TraceRecord) -> Complex,
) -> Vec<Complex> {
    range.map(|k| pick(&pert[k]) - pick(&base[k])).collect()
}

fn measure_one(
    cfg: &ScanConfig,
    sim_cfg: &SimConfig,
    baseline: &SimTrace,
    f: f64,
    z_analytic: Complex,
) -> Result<ScanRecord, ScanError> {
    let fs = sim_cfg.controller.f_s;
    let ts = sim_cfg.ts();
    let (start, len) = cfg.schedule(f, fs);
    let steps = start + 2 * len;
    let mut run_cfg = sim_cfg.clone();
    run_cfg.t_end = steps as f64 * ts;
    run_cfg.injection = Some(Injection {
        amplitude_v: cfg.injection_amplitude,
        f_hz: f,
    });
    let pert = sim::run(&run_cfg)?;
    if let sim::Outcome::Diverged { t_s } = pert.outcome {
        return Err(ScanError::Diverged { t_s });
    }
    let t_at = |k: usize| k as f64 * ts;
    let w1 = start..start + len;
    let w2 = start + len..start + 2 * len;
    let di1 = single_bin_dft(&delta(&pert.records, &baseline.records, w1, |r| r.i), t_at(start), ts, f);
    let di2 = single_bin_dft(
        &delta(&pert.records, &baseline.records, w2.clone(), |r| r.i),
        t_at(start + len),
        ts,
        f,
    );
    let dv2 = single_bin_dft(
        &delta(&pert.records, &baseline.records, w2, |r| r.v_pcc),
        t_at(start + len),
        ts,
        f,
    );
    let growth = di2.norm() / di1.norm() - 1.0;
    if !growth.is_finite() || growth > cfg.growth_tolerance {
        return Ok(ScanRecord {
            f_hz: f,
            z_measured: None,
            z_analytic,
            mag_err_pct: None,
            phase_err_deg: None,
            status: ScanStatus::Unstable { growth },
        });
    }
    let z = -dv2 / di2;
    Ok(ScanRecord {
        f_hz: f,
        z_measured: Some(z),
        z_analytic,
        mag_err_pct: Some((z.norm() / z_analytic.norm() - 1.0).abs() * 100.0),
        phase_err_deg: Some((z / z_analytic).arg().abs().to_degrees()),
        status: ScanStatus::Ok,
    })
}

/// Worker count: `GFMP_THREADS` when set to a positive integer, otherwise
/// rayon's default.
pub fn thread_cap() -> Option<usize> {
    std::env::var("GFMP_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Measures the inverter-side impedance `-dV_pcc / dI` at each frequency by
/// differencing an injected run against an unperturbed baseline, and pairs
/// it with the delay-aware model of the first scheduled admittance.
pub fn frequency_scan(cfg: &ScanConfig, sim_cfg: &SimConfig) -> Result<ScanResult, ScanError> {
    let f1 = sim_cfg.controller.f_1_hz();
    cfg.validate(f1)?;
    sim_cfg.validate()?;
    if cfg.frequencies_hz.is_empty() {
        return Ok(ScanResult {
            records: Vec::new(),
            injection_amplitude: cfg.injection_amplitude,
        });
    }
    let va = sim_cfg.va_schedule[0].va;
    let zeq = z_eq_delay(&va.element(), &sim_cfg.controller, &sim_cfg.plant)?;
    let fs = sim_cfg.controller.f_s;
    let longest = cfg
        .frequencies_hz
        .iter()
        .map(|&f| {
            let (s, l) = cfg.schedule(f, fs);
            s + 2 * l
        })
        .max()
        .expect("non-empty");
    let mut base_cfg = sim_cfg.clone();
    base_cfg.injection = None;
    base_cfg.t_end = longest as f64 * sim_cfg.ts();
    let baseline = Arc::new(sim::run(&base_cfg)?);
    if let sim::Outcome::Diverged { t_s } = baseline.outcome {
        return Err(ScanError::Diverged { t_s });
    }

    let work = || {
        cfg.frequencies_hz
            .par_iter()
            .map(|&f| {
                let za = zeq.at_hz(f)?;
                measure_one(cfg, sim_cfg, &baseline, f, za)
            })
            .collect::<Result<Vec<_>, ScanError>>()
    };
    let records = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(work))
            .unwrap_or_else(|_| work())?,
        None => work()?,
    };
    Ok(ScanResult {
        records,
        injection_amplitude: cfg.injection_amplitude,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Rectangular,
    Hann,
}

impl Window {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rectangular" | "rect" => Some(Self::Rectangular),
            "hann" => Some(Self::Hann),
            _ => None,
        }
    }

    fn weights(&self, n: usize) -> Vec<f64> {
        match self {
            Self::Rectangular => vec![1.0; n],
            Self::Hann => (0..n)
                .map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / n as f64).cos())
                .collect(),
        }
    }
}

/// Trace channel for spectra. Vectors are projected on phase A, which is
/// the real part of the amplitude-invariant space vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    IA,
    VpccA,
    IrefA,
    EA,
    P,
    Q,
}

impl Channel {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "i_a" => Some(Self::IA),
            "vpcc_a" => Some(Self::VpccA),
            "iref_a" => Some(Self::IrefA),
            "e_a" => Some(Self::EA),
            "p" => Some(Self::P),
            "q" => Some(Self::Q),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::IA => "i_a",
            Self::VpccA => "vpcc_a",
            Self::IrefA => "iref_a",
            Self::EA => "e_a",
            Self::P => "p",
            Self::Q => "q",
        }
    }

    pub fn sample(&self, r: &TraceRecord) -> f64 {
        match self {
            Self::IA => r.i.re,
            Self::VpccA => r.v_pcc.re,
            Self::IrefA => r.i_ref.re,
            Self::EA => r.e.re,
            Self::P => r.p,
            Self::Q => r.q,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FftOptions {
    pub fundamental_hz: f64,
    /// Minimum window length in fundamental periods.
    pub min_cycles: f64,
    /// Bins on each side of the fundamental skipped by the harmonic search.
    pub exclusion_bins: usize,
}

impl Default for FftOptions {
    fn default() -> Self {
        Self {
            fundamental_hz: 60.0,
            min_cycles: 6.0,
            exclusion_bins: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FftError {
    #[error("window of {got_s} s is shorter than {need_s} s ({cycles} fundamental cycles)")]
    WindowTooShort { got_s: f64, need_s: f64, cycles: f64 },
    #[error("t_end ({t_end}) must be greater than t_start ({t_start})")]
    InvalidRange { t_start: f64, t_end: f64 },
    #[error("sample time must be positive")]
    InvalidSampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowDescriptor {
    pub kind: Window,
    pub t_start: f64,
    pub t_end: f64,
    pub samples: usize,
    pub bin_hz: f64,
    pub coherent_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub channel: Option<Channel>,
    pub f_hz: Vec<f64>,
    pub magnitude: Vec<f64>,
    /// Largest bin overall, DC excluded.
    pub peak_hz: f64,
    pub peak_magnitude: f64,
    /// Largest bin outside DC and the fundamental neighborhood.
    pub dominant_harmonic_hz: f64,
    pub dominant_magnitude: f64,
    pub window: WindowDescriptor,
}

impl SpectrumReport {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["f_hz", "magnitude"])?;
        for (f, m) in self.f_hz.iter().zip(&self.magnitude) {
            wr.write_record([format!("{f:e}"), format!("{m:e}")])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Single-sided amplitude spectrum of uniformly sampled `x`, corrected for
/// the window's coherent gain.
pub fn spectrum_of_samples(
    x: &[f64],
    ts: f64,
    t_start: f64,
    window: Window,
    opts: &FftOptions,
) -> Result<SpectrumReport, FftError> {
    if !(ts.is_finite() && ts > 0.0) {
        return Err(FftError::InvalidSampling);
    }
    let n = x.len();
    let got_s = n as f64 * ts;
    let need_s = opts.min_cycles / opts.fundamental_hz;
    if n < 4 || got_s < need_s * (1.0 - 1e-9) {
        return Err(FftError::WindowTooShort {
            got_s,
            need_s,
            cycles: opts.min_cycles,
        });
    }
    let w = window.weights(n);
    let cg = w.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex> = x
        .iter()
        .zip(&w)
        .map(|(&v, &wk)| Complex::new(v * wk, 0.0))
        .collect();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
    let bin_hz = 1.0 / got_s;
    let half = n / 2;
    let scale = 1.0 / (n as f64 * cg);
    let magnitude: Vec<f64> = (0..=half)
        .map(|k| {
            let m = buf[k].norm() * scale;
            if k == 0 || (n % 2 == 0 && k == half) {
                m
            } else {
                2.0 * m
            }
        })
        .collect();
    let f_hz: Vec<f64> = (0..=half).map(|k| k as f64 * bin_hz).collect();
    let fund_bin = (opts.fundamental_hz / bin_hz).round() as i64;
    let argmax = |skip: &dyn Fn(usize) -> bool| {
        (1..magnitude.len())
            .filter(|&k| !skip(k))
            .fold((0usize, f64::NEG_INFINITY), |best, k| {
                if magnitude[k] > best.1 {
                    (k, magnitude[k])
                } else {
                    best
                }
            })
    };
    let (pk, pm) = argmax(&|_| false);
    let excl = opts.exclusion_bins as i64;
    let (dk, dm) = argmax(&|k| (k as i64 - fund_bin).abs() <= excl);
    Ok(SpectrumReport {
        channel: None,
        peak_hz: f_hz[pk],
        peak_magnitude: pm.max(0.0),
        dominant_harmonic_hz: f_hz[dk],
        dominant_magnitude: dm.max(0.0),
        f_hz,
        magnitude,
        window: WindowDescriptor {
            kind: window,
            t_start,
            t_end: t_start + got_s,
            samples: n,
            bin_hz,
            coherent_gain: cg,
        },
    })
}

/// Spectrum of one trace channel over `[t_start, t_end)`.
pub fn fft_spectrum(
    trace: &SimTrace,
    channel: Channel,
    window: Window,
    t_start: f64,
    t_end: f64,
    opts: &FftOptions,
) -> Result<SpectrumReport, FftError> {
    if !(t_end > t_start) {
        return Err(FftError::InvalidRange { t_start, t_end });
    }
    let eps = 1e-9 * trace.ts;
    let picked: Vec<&TraceRecord> = trace
        .records
        .iter()
        .filter(|r| r.t_s >= t_start - eps && r.t_s < t_end - eps)
        .collect();
    let x: Vec<f64> = picked.iter().map(|r| channel.sample(r)).collect();
    let t0 = picked.first().map(|r| r.t_s).unwrap_or(t_start);
    let mut rep = spectrum_of_samples(&x, trace.ts, t0, window, opts)?;
    rep.channel = Some(channel);
    Ok(rep)
}

/// Exponential growth rate (1/s) of the tone at `f_hz`. Each of the
/// `segments` sub-windows gets a joint least-squares fit of dc, the
/// fundamental and the tone; the log tone amplitude is then fitted by a line.
pub fn growth_rate(x: &[f64], ts: f64, f_hz: f64, fundamental_hz: f64, segments: usize) -> Option<f64> {
    if segments < 2 || x.len() < 5 * segments || !(ts > 0.0) {
        return None;
    }
    let (w1, wh) = (2.0 * PI * fundamental_hz, 2.0 * PI * f_hz);
    let seg = x.len() / segments;
    let pts: Vec<(f64, f64)> = (0..segments)
        .filter_map(|s| {
            let mut ata = SMatrix::<f64, 5, 5>::zeros();
            let mut atb = SVector::<f64, 5>::zeros();
            for k in s * seg..(s + 1) * seg {
                let t = k as f64 * ts;
                let phi = SVector::<f64, 5>::from([1.0, (w1 * t).cos(), (w1 * t).sin(), (wh * t).cos(), (wh * t).sin()]);
                ata += phi * phi.transpose();
                atb += phi * x[k];
            }
            let c = ata.lu().solve(&atb)?;
            let a = c[3].hypot(c[4]);
            (a > 0.0).then(|| (((s as f64) + 0.5) * seg as f64 * ts, a.ln()))
        })
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ma = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ma)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Some(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("responses are on different frequency grids")]
pub struct GridMismatch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseComparison {
    pub max_mag_err_pct: f64,
    pub max_phase_err_deg: f64,
    /// Grid point of the largest magnitude error.
    pub worst_f_hz: f64,
}

/// Pointwise `| |b| / |a| - 1 |` in percent and `|arg(b / a)|` in degrees.
pub fn compare_responses(
    a: &FrequencyResponse,
    b: &FrequencyResponse,
) -> Result<ResponseComparison, GridMismatch> {
    if a.grid != b.grid || a.values.len() != b.values.len() {
        return Err(GridMismatch);
    }
    let hz = a.grid.hz();
    let mut out = ResponseComparison {
        max_mag_err_pct: 0.0,
        max_phase_err_deg: 0.0,
        worst_f_hz: hz.first().copied().unwrap_or(f64::NAN),
    };
    for ((va, vb), f) in a.values.iter().zip(&b.values).zip(hz) {
        let mag = (vb.norm() / va.norm() - 1.0).abs() * 100.0;
        let ph = (vb / va).arg().abs().to_degrees();
        if mag > out.max_mag_err_pct {
            out.max_mag_err_pct = mag;
            out.worst_f_hz = f;
        }
        out.max_phase_err_deg = out.max_phase_err_deg.max(ph);
    }
    Ok(out)
}
