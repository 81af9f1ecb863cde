use std::fs::File;
use std::io::{BufReader, Write};

use anyhow::{anyhow, Context};
use serde::Serialize;
use serde_json::json;

use gfmp_core::config::{format_schedule, parse_schedule, ConfigFile, ResolvedConfig};
use gfmp_core::impedance::{
    calibrate_proportional_gain, default_grid, passivity_scan_with, return_ratio_assessment,
    stability_grid, write_bode_csv, CalibrationTarget, ImpedanceError, ScanSettings, ZeqModel,
    ZeqVariant,
};
use gfmp_core::measurement::{
    fft_spectrum, frequency_scan, Channel, FftError, ScanError, ScanStatus, Window,
};
use gfmp_core::models::{
    design_residual, grid_impedance_at_pcc, harmonic_asymptote, zg_from_scr, GridParams,
    ModelError,
};
use gfmp_core::report::summarize;
use gfmp_core::sim::{run, SimError, SimTrace, VaMode};
use gfmp_core::tf::frequency_response;

use crate::output::{OutputDir, SCHEMA_VERSION};
use crate::{Cli, Command, Failure, VaArg, Variant};

type CmdResult = Result<(), Failure>;

fn load(cli: &Cli) -> Result<ResolvedConfig, Failure> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))
            .map_err(Failure::Input)?,
        None => String::new(),
    };
    let loaded = ConfigFile::parse(&text).map_err(Failure::input)?;
    let mut file = loaded.file;
    match &cli.command {
        Command::Simulate { schedule, t_end } => {
            if let Some(s) = schedule {
                let parsed = parse_schedule(s).map_err(Failure::input)?;
                file.simulation.schedule = format_schedule(&parsed);
            }
            if let Some(t) = t_end {
                file.simulation.t_end_s = *t;
            }
        }
        Command::Scan { frequencies: Some(f) } => file.scan.frequencies_hz = Some(f.clone()),
        Command::Fft {
            channel,
            window,
            t0,
            t1,
            ..
        } => {
            if let Some(c) = channel {
                file.fft.channel = c.clone();
            }
            if let Some(w) = window {
                file.fft.window = w.clone();
            }
            if let Some(t) = t0 {
                file.fft.t0_s = *t;
            }
            if let Some(t) = t1 {
                file.fft.t1_s = *t;
            }
        }
        _ => {}
    }
    if !cli.quiet && !loaded.defaulted.is_empty() {
        let mut err = std::io::stderr().lock();
        let _ = writeln!(err, "Reference defaults in use:");
        for (k, v) in &loaded.defaulted {
            let _ = writeln!(err, "  {k} = {v}");
        }
    }
    file.resolve().map_err(Failure::input)
}

fn model_failure(e: ModelError) -> Failure {
    Failure::input(e)
}

fn impedance_failure(e: ImpedanceError) -> Failure {
    match e {
        ImpedanceError::GridTooCoarse { .. } => Failure::numeric(anyhow!(
            "{e}; raise the points per decade of the analysis grid"
        )),
        ImpedanceError::ClosedFormNeedsSeriesRl | ImpedanceError::InvalidCalibration => {
            Failure::input(e)
        }
        ImpedanceError::Tf(_) => Failure::numeric(e),
    }
}

fn sim_failure(e: SimError) -> Failure {
    match e {
        SimError::InvalidConfig(_) | SimError::Plant(_) => Failure::input(e),
        SimError::OperatingPoint(_) => Failure::numeric(e),
    }
}

fn snapshot(cfg: &ResolvedConfig) -> String {
    cfg.file.to_toml()
}

pub fn dispatch(cli: &Cli) -> CmdResult {
    let cfg = load(cli)?;
    match &cli.command {
        Command::Design => design(cli, &cfg),
        Command::Impedance {
            variant,
            va,
            grid_spec,
            calibrate,
        } => impedance(cli, &cfg, *variant, *va, grid_spec.as_deref(), *calibrate),
        Command::Simulate { .. } => simulate(cli, &cfg),
        Command::Scan { .. } => scan(cli, &cfg),
        Command::Fft { trace, .. } => fft(cli, &cfg, trace),
    }
}

fn out_dir(cli: &Cli) -> Result<OutputDir, Failure> {
    OutputDir::create(&cli.out, cli.plot_scripts).map_err(Failure::Input)
}

fn io(e: anyhow::Error) -> Failure {
    Failure::Numeric(e)
}

fn design(cli: &Cli, cfg: &ResolvedConfig) -> CmdResult {
    let dp = cfg.design_point;
    let p = cfg.proposed().map_err(model_failure)?;
    let residual = design_residual(&dp, &p);
    println!("R_v_sigma = {:.6} ohm", p.r_v_sigma);
    println!("R_v_pi    = {:.6} ohm", p.r_v_pi);
    println!("L_v0      = {:.6e} H", p.l_v0);
    println!("residual  = {residual:.3e} ohm");
    let mut out = out_dir(cli)?;
    out.json(
        "design.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "design_point": {
                "r_v_ohm": dp.r_v,
                "x_v_ohm": dp.x_v,
                "f_1_hz": dp.omega_1 / (2.0 * std::f64::consts::PI),
                "r_v_sigma_ohm": dp.r_v_sigma,
            },
            "proposed": {
                "r_v_sigma_ohm": p.r_v_sigma,
                "r_v_pi_ohm": p.r_v_pi,
                "l_v0_h": p.l_v0,
            },
            "residual_ohm": residual,
            "harmonic_resistance_ohm": harmonic_asymptote(&p),
        }),
    )
    .map_err(io)?;
    out.finish("design", snapshot(cfg)).map_err(io)
}

fn parse_grid_spec(spec: &str, base: &GridParams, omega_1: f64) -> Result<GridParams, Failure> {
    let mut fields = std::collections::BTreeMap::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Failure::input(anyhow!("grid spec entry '{part}' is not key=value")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Failure::input(anyhow!("grid spec value in '{part}' is not a number")))?;
        if !(v.is_finite() && v > 0.0) {
            return Err(Failure::input(anyhow!("grid spec value in '{part}' must be > 0")));
        }
        fields.insert(k.trim().to_string(), v);
    }
    let keys: Vec<&str> = fields.keys().map(String::as_str).collect();
    match keys.as_slice() {
        ["scr", "xr"] => Ok(zg_from_scr(
            &GridParams {
                scr: fields["scr"],
                xr_ratio: fields["xr"],
                ..*base
            },
            omega_1,
        )
        .0),
        ["l", "r"] => Ok(GridParams {
            r_g: fields["r"],
            l_g: fields["l"],
            ..*base
        }),
        _ => Err(Failure::input(anyhow!(
            "grid spec must be 'scr=..,xr=..' or 'r=..,l=..'"
        ))),
    }
}

#[allow(clippy::too_many_arguments)]
fn impedance(
    cli: &Cli,
    cfg: &ResolvedConfig,
    variant: Variant,
    va: VaArg,
    grid_spec: Option<&str>,
    calibrate: bool,
) -> CmdResult {
    let mode = match va {
        VaArg::Conv => VaMode::Conventional,
        VaArg::Prop => VaMode::Proposed,
    };
    let admittance = cfg.admittance(mode).map_err(model_failure)?;
    let variant_kind = match variant {
        Variant::Ideal => ZeqVariant::Ideal,
        Variant::Closed => ZeqVariant::ConventionalClosedForm,
        Variant::Delay => ZeqVariant::DelayAware,
    };
    let zeq = ZeqModel {
        variant: variant_kind,
        va: admittance,
        controller: cfg.controller,
        plant: cfg.plant,
    }
    .build()
    .map_err(impedance_failure)?;
    let grid = match grid_spec {
        Some(s) => parse_grid_spec(s, &cfg.grid, cfg.controller.omega_1)?,
        None => cfg.grid,
    };
    let settings = ScanSettings {
        fundamental_hz: cfg.controller.f_1_hz(),
        ..ScanSettings::default()
    };
    let bode_grid = default_grid();
    let passivity = passivity_scan_with(&zeq, &bode_grid, &settings).map_err(impedance_failure)?;
    let zg = grid_impedance_at_pcc(&grid, &cfg.plant);
    let stability = return_ratio_assessment(&zeq, &zg, &stability_grid()).map_err(impedance_failure)?;
    let calibration = if calibrate {
        let conv = cfg.admittance(VaMode::Conventional).map_err(model_failure)?;
        let fit = calibrate_proportional_gain(
            &conv,
            &cfg.controller,
            &cfg.plant,
            &zg,
            &stability_grid(),
            &CalibrationTarget::default(),
        )
        .map_err(impedance_failure)?;
        match &fit {
            Some(f) => eprintln!(
                "calibrated K_cc,p = {:.4} ohm: gain crossover {:.1} Hz ({:+.1} %), phase crossover {:.1} Hz ({:+.1} %)",
                f.k_cc_p,
                f.gain_crossover_hz,
                100.0 * (f.gain_crossover_hz / CalibrationTarget::default().gain_crossover_hz - 1.0),
                f.phase_crossover_hz,
                100.0 * (f.phase_crossover_hz / CalibrationTarget::default().phase_crossover_hz - 1.0),
            ),
            None => eprintln!("calibration: no K_cc,p in range produced both crossovers"),
        }
        Some(fit)
    } else {
        None
    };

    let tag = format!(
        "{}_{}",
        mode.as_str(),
        match variant {
            Variant::Ideal => "ideal",
            Variant::Closed => "closed",
            Variant::Delay => "delay",
        }
    );
    let zeq_resp = frequency_response(&zeq, &bode_grid).map_err(Failure::numeric)?;
    let yv_inv = frequency_response(&admittance.element().inverse(), &bode_grid).map_err(Failure::numeric)?;
    let mut out = out_dir(cli)?;
    let cols = ["mag_db", "phase_deg"];
    out.csv(&format!("zeq_{tag}.csv"), "f_hz", &cols, true, |w| {
        write_bode_csv(&zeq_resp, w).map_err(Into::into)
    })
    .map_err(io)?;
    out.csv(&format!("yv_inv_{}.csv", mode.as_str()), "f_hz", &cols, true, |w| {
        write_bode_csv(&yv_inv, w).map_err(Into::into)
    })
    .map_err(io)?;

    println!(
        "{tag}: {} non-passive band(s)",
        passivity.non_passive_bands.len()
    );
    for b in &passivity.non_passive_bands {
        println!("  {:.2} .. {:.2} Hz", b.f_lo_hz, b.f_hi_hz);
    }
    println!(
        "return ratio: verdict {:?}, gain crossovers {:?} Hz, phase crossovers {:?} Hz",
        stability.verdict, stability.gain_crossover_hz, stability.phase_crossover_hz
    );
    out.json(
        &format!("passivity_{tag}.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "va": mode.as_str(),
            "variant": tag,
            "grid": {
                "r_g_ohm": grid.r_g,
                "l_g_h": grid.l_g,
                "scr": grid.scr,
                "xr_ratio": grid.xr_ratio,
            },
            "passivity": {
                "is_passive": passivity.is_passive(),
                "non_passive_bands": passivity.non_passive_bands,
                "first_violation_hz": passivity.first_violation_hz,
                "guard_hz": settings.guard_hz,
            },
            "return_ratio": {
                "verdict": stability.verdict,
                "gain_crossover_hz": stability.gain_crossover_hz,
                "phase_crossover_hz": stability.phase_crossover_hz,
                "crossings": stability.crossings,
                "encirclements_of_minus_one": stability.encirclements_of_minus_one,
                "min_distance_to_minus_one": stability.min_distance_to_minus_one,
            },
            "calibration": calibration,
        }),
    )
    .map_err(io)?;
    out.finish("impedance", snapshot(cfg)).map_err(io)
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    schema_version: u32,
    schedule: String,
    t_end_s: f64,
    operating_point: Option<gfmp_core::sim::OperatingPointReport>,
    #[serde(flatten)]
    summary: &'a gfmp_core::report::SimSummary,
}

fn simulate(cli: &Cli, cfg: &ResolvedConfig) -> CmdResult {
    let sim = cfg.sim_config().map_err(Failure::input)?;
    let trace = run(&sim).map_err(sim_failure)?;
    let summary = summarize(&trace, &sim);
    let mut out = out_dir(cli)?;
    out.csv("trace.csv", "t_s", &["i_alpha", "i_beta", "p_w", "q_var"], false, |w| {
        trace.write_csv(w).map_err(Into::into)
    })
    .map_err(io)?;
    out.json(
        "summary.json",
        &SimulateReport {
            schema_version: SCHEMA_VERSION,
            schedule: cfg.file.simulation.schedule.clone(),
            t_end_s: sim.t_end,
            operating_point: trace.operating_point,
            summary: &summary,
        },
    )
    .map_err(io)?;

    println!("schedule {}", cfg.file.simulation.schedule);
    println!("outcome {:?}, verdict {:?}", summary.outcome, summary.verdict);
    println!(
        "peak current {:.2} A (trip {:.1} A), saturated {:.1} % of periods",
        summary.current_peak_a,
        summary.current_trip_a,
        100.0 * summary.saturation.fraction
    );
    for iv in &summary.intervals {
        println!(
            "  {:>12} {:.3}-{:.3} s: harmonic rms {:.3e} -> peak {:.3e} -> {:.3e} A, dominant {} Hz, growth {} 1/s",
            iv.mode.as_str(),
            iv.t_start_s,
            iv.t_end_s,
            iv.harmonic_rms_start_a,
            iv.harmonic_rms_peak_a,
            iv.harmonic_rms_end_a,
            iv.dominant_hz.map_or("-".into(), |f| format!("{f:.1}")),
            iv.growth_rate_per_s.map_or("-".into(), |g| format!("{g:.1}")),
        );
    }
    if let Some(s) = &summary.steady_state {
        println!(
            "steady state {:.2}-{:.2} s: P {:.1} +- {:.1} W, Q {:.1} +- {:.1} var",
            s.t_start_s, s.t_end_s, s.p_mean_w, s.p_std_w, s.q_mean_var, s.q_std_var
        );
    }
    out.finish("simulate", snapshot(cfg)).map_err(io)
}

fn scan(cli: &Cli, cfg: &ResolvedConfig) -> CmdResult {
    let scan_cfg = cfg.scan_config();
    if scan_cfg.frequencies_hz.is_empty() {
        eprintln!("warning: empty frequency list, nothing to scan");
    }
    // the scan runs about the first scheduled admittance
    let first = cfg
        .schedule
        .first()
        .map(|&(_, m)| m)
        .unwrap_or(VaMode::Proposed);
    let sim = cfg.sim_config_with(&[(0.0, first)]).map_err(Failure::input)?;
    let result = frequency_scan(&scan_cfg, &sim).map_err(|e| match e {
        ScanError::InGuardBand { .. }
        | ScanError::InvalidFrequency(_)
        | ScanError::InvalidAmplitude(_)
        | ScanError::InvalidCycles => Failure::input(e),
        ScanError::Sim(s) => sim_failure(s),
        other => Failure::numeric(other),
    })?;
    let mut out = out_dir(cli)?;
    out.csv("scan.csv", "f_hz", &["mag_err_pct", "phase_err_deg"], true, |w| {
        result.write_csv(w).map_err(Into::into)
    })
    .map_err(io)?;
    for r in &result.records {
        match r.status {
            ScanStatus::Ok => println!(
                "{:9.2} Hz  |dZ| {:6.3} %  dphase {:6.3} deg",
                r.f_hz,
                r.mag_err_pct.unwrap_or(f64::NAN),
                r.phase_err_deg.unwrap_or(f64::NAN)
            ),
            ScanStatus::Unstable { growth } => {
                println!("{:9.2} Hz  unstable (growth {growth:.3})", r.f_hz)
            }
        }
    }
    println!(
        "worst: {:.3} % magnitude, {:.3} deg phase",
        result.max_mag_err_pct().unwrap_or(0.0),
        result.max_phase_err_deg().unwrap_or(0.0)
    );
    out.json(
        "scan.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "va": first.as_str(),
            "max_mag_err_pct": result.max_mag_err_pct(),
            "max_phase_err_deg": result.max_phase_err_deg(),
            "unstable_hz": result.unstable().map(|r| r.f_hz).collect::<Vec<_>>(),
            "result": result,
        }),
    )
    .map_err(io)?;
    out.finish("scan", snapshot(cfg)).map_err(io)
}

fn fft(cli: &Cli, cfg: &ResolvedConfig, path: &std::path::Path) -> CmdResult {
    let f = &cfg.file.fft;
    if f.t1_s <= f.t0_s {
        return Err(Failure::input(anyhow!(
            "--t1 ({}) must be after --t0 ({})",
            f.t1_s,
            f.t0_s
        )));
    }
    let channel: Channel = cfg.fft_channel().map_err(Failure::input)?;
    let window: Window = cfg.fft_window().map_err(Failure::input)?;
    let file = File::open(path)
        .with_context(|| format!("opening {}", path.display()))
        .map_err(Failure::Input)?;
    let trace = SimTrace::read_csv(BufReader::new(file)).map_err(Failure::input)?;
    let report = fft_spectrum(&trace, channel, window, f.t0_s, f.t1_s, &cfg.fft_options()).map_err(
        |e| match e {
            FftError::WindowTooShort { .. } | FftError::InvalidRange { .. } => Failure::input(e),
            other => Failure::input(other),
        },
    )?;
    let mut out = out_dir(cli)?;
    out.csv("spectrum.csv", "f_hz", &["magnitude"], false, |w| {
        report.write_csv(w).map_err(Into::into)
    })
    .map_err(io)?;
    println!(
        "{} {:.3}-{:.3} s ({:?}): dominant non-fundamental {:.1} Hz, {:.4e}",
        channel.name(),
        f.t0_s,
        f.t1_s,
        window,
        report.dominant_harmonic_hz,
        report.dominant_magnitude
    );
    out.json(
        "spectrum.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "trace": path.display().to_string(),
            "report": report,
        }),
    )
    .map_err(io)?;
    out.finish("fft", snapshot(cfg)).map_err(io)
}
