//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context, Result};
use lwr_core::bloch_bands::{find_gap, high_symmetry_path, solve_bands, BlochProblem};
use lwr_core::constants::TWO_PI;
use lwr_core::elastic_modes::{electron_phonon_rate, plate_wave_speeds};
use lwr_core::fitting::{fit_lorentzians, fit_sinusoid, q_factor, synth_noise, NoiseModel};
use lwr_core::gradient_drive::{steady_state_amplitude, sweep_beam_offset, sweep_beam_radius};
use lwr_core::qed_designer::cooperativity;
use lwr_core::siv_spectroscopy::{
    fringe_amplitude_sweep, interference_fringes, mech_response_sweep, obe_ple_spectrum, phase_grid, ple_spectrum,
    FringeSweepConfig, InterferometerSetup, PhononState,
};
use lwr_core::spectrum::{linspace, AxisKind, Spectrum};
use serde_json::{json, Value};

use crate::config::{FitModel, NoiseConfig, NoiseKind, PleSolver, RunConfig};
use crate::output::{num, read_spectrum_csv, Outputs};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Subcommand {
    Modes,
    Bands,
    Drive,
    Ple,
    SweepMech,
    Interfere,
    Fit { input: PathBuf },
    Qed,
}

impl Subcommand {
    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::Modes => "modes",
            Subcommand::Bands => "bands",
            Subcommand::Drive => "drive",
            Subcommand::Ple => "ple",
            Subcommand::SweepMech => "sweep-mech",
            Subcommand::Interfere => "interfere",
            Subcommand::Fit { .. } => "fit",
            Subcommand::Qed => "qed",
        }
    }
}

/// 1 for configuration and input problems, 2 for numerical failures.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.is::<lwr_core::Error>()) {
        2
    } else {
        1
    }
}

/// Run one subcommand and write its outputs plus `manifest.json`.
pub fn execute(cmd: &Subcommand, cfg: &RunConfig, output_dir: &Path, seed: u64) -> Result<Vec<String>> {
    let start = Instant::now();
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut out = Outputs::new(output_dir)?;
    match cmd {
        Subcommand::Modes => modes(cfg, &mut out)?,
        Subcommand::Bands => bands(cfg, &mut out)?,
        Subcommand::Drive => drive(cfg, &mut out)?,
        Subcommand::Ple => ple(cfg, seed, &mut out)?,
        Subcommand::SweepMech => sweep_mech(cfg, seed, &mut out)?,
        Subcommand::Interfere => interfere(cfg, seed, &mut out)?,
        Subcommand::Fit { input } => fit(cfg, input, &mut out)?,
        Subcommand::Qed => qed(cfg, &mut out)?,
    }
    let mut manifest = json!({
        "tool": "lwr",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": cmd.name(),
        "seed": seed,
        "config": cfg.to_table(),
        "outputs": out.files,
        "started_unix_s": started,
        "wall_clock_s": start.elapsed().as_secs_f64(),
    });
    if let Subcommand::Fit { input } = cmd {
        manifest["input"] = json!(input.display().to_string());
    }
    let files = out.files.clone();
    out.json("manifest.json", &manifest)?;
    Ok(files)
}

fn hz(w: f64) -> f64 {
    w / TWO_PI
}

fn symmetric_grid(center: f64, half_span: f64, points: usize) -> Vec<f64> {
    linspace(-half_span, half_span, points).into_iter().map(|d| center + d).collect()
}

fn with_noise(s: Spectrum, noise: &NoiseConfig, seed: u64) -> lwr_core::Result<Spectrum> {
    let peak = s.max_signal();
    if noise.model == NoiseKind::None || peak <= 0.0 {
        return Ok(s);
    }
    let model = match noise.model {
        NoiseKind::Gaussian => NoiseModel::Gaussian { sigma: noise.sigma_rel * peak },
        _ => NoiseModel::Poisson { counts_scale: noise.peak_counts / peak },
    };
    synth_noise(&s, model, seed)
}

fn noise_json(noise: &NoiseConfig, seed: u64) -> Value {
    match noise.model {
        NoiseKind::None => json!({ "model": "none" }),
        NoiseKind::Gaussian => json!({ "model": "gaussian", "sigma_rel": noise.sigma_rel, "seed": seed }),
        NoiseKind::Poisson => json!({ "model": "poisson", "peak_counts": noise.peak_counts, "seed": seed }),
    }
}

fn sidecar(s: &Spectrum, signal_header: &str, extra: Value) -> Value {
    let mut v = json!({
        "abscissa": s.axis_kind.column_header(),
        "signal": signal_header,
        "points": s.len(),
        "meta": s.meta,
    });
    if let (Some(obj), Value::Object(more)) = (v.as_object_mut(), extra) {
        obj.extend(more);
    }
    v
}

fn modes(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let mode = cfg.mode()?;
    let speeds = plate_wave_speeds(&cfg.material)?;
    out.json(
        "modes.json",
        &json!({
            "f_m_Hz": mode.f_m,
            "f_m_GHz": mode.f_m * 1e-9,
            "omega_m_rad_s": mode.omega_m,
            "k_m_rad_per_m": mode.k_m,
            "gamma_m_Hz": hz(mode.gamma_m),
            "Q": mode.q,
            "m_eff_kg": mode.m_eff,
            "x_zpf_m": mode.x_zpf,
            "c_L_m_per_s": speeds.longitudinal,
            "c_T_m_per_s": speeds.transverse,
            "G_Hz": hz(electron_phonon_rate(&cfg.material, &mode)),
        }),
    )
}

fn bands(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let b = &cfg.bands;
    let mut problem = BlochProblem::new(cfg.unit_cell(), b.resolution, b.n_bands);
    problem.k_path = high_symmetry_path(b.period, b.samples_per_segment);
    problem.solver = b.solver;
    let structure = solve_bands(&problem)?;
    let mut rows = Vec::new();
    for (i, (k, freqs)) in structure.k_samples.iter().zip(&structure.frequencies).enumerate() {
        for (j, f) in freqs.iter().enumerate() {
            rows.push(vec![i.to_string(), k.segment.to_string(), num(k.fraction), j.to_string(), num(*f)]);
        }
    }
    out.csv("bands.csv", &["k_index", "segment", "k_fraction", "band", "frequency_Hz"], rows)?;
    let f_m = cfg.mode()?.f_m;
    let gap = find_gap(&structure, (hz(b.search_min), hz(b.search_max)));
    out.json(
        "gap.json",
        &json!({
            "f_m_Hz": f_m,
            "gap_low_Hz": gap.map(|g| g.low),
            "gap_high_Hz": gap.map(|g| g.high),
            "contains_f_m": gap.is_some_and(|g| g.contains(f_m)),
            "resolution": b.resolution,
            "n_bands": b.n_bands,
            "k_points": structure.k_samples.len(),
        }),
    )
}

fn drive(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let dc = cfg.drive_config()?;
    let d = dc.drive()?;
    out.json(
        "drive.json",
        &json!({
            "mode_matched_force_N": d.mode_matched_force,
            "amplitude_m": d.amplitude,
            "phonon_number": d.phonon_number,
            "u_omega_re_m": d.u_omega.re,
            "u_omega_im_m": d.u_omega.im,
            "response_phase_rad": d.u_omega.arg(),
            "modulation_freq_Hz": hz(dc.beam.modulation_freq),
            "f_m_Hz": dc.mode.f_m,
            "gamma_m_Hz": hz(dc.mode.gamma_m),
        }),
    )?;
    let s = &cfg.drive;
    let radii: Vec<f64> =
        linspace(s.radius_min.ln(), s.radius_max.ln(), s.radius_points).into_iter().map(f64::exp).collect();
    let by_radius = sweep_beam_radius(&dc, &radii)?;
    out.spectrum("drive_radius.csv", &by_radius, "amplitude_m")?;
    out.json("drive_radius.json", &sidecar(&by_radius, "amplitude_m", json!({})))?;
    let offsets = linspace(-s.offset_max, s.offset_max, s.offset_points);
    let by_offset = sweep_beam_offset(&dc, &offsets)?;
    out.spectrum("drive_offset.csv", &by_offset, "amplitude_m")?;
    out.json("drive_offset.json", &sidecar(&by_offset, "amplitude_m", json!({})))
}

fn ple(cfg: &RunConfig, seed: u64, out: &mut Outputs) -> Result<()> {
    let mode = cfg.mode()?;
    let p = &cfg.ple;
    let phonon = PhononState::from_amplitude(p.amplitude, &mode, &cfg.material, cfg.emitter.position.0)?;
    let grid = symmetric_grid(0.0, p.half_span, p.points);
    let clean = match p.solver {
        PleSolver::Model => ple_spectrum(&cfg.emitter, &phonon, &mode, &grid)?,
        PleSolver::Obe => obe_ple_spectrum(&cfg.emitter, &phonon, &mode, &grid)?,
    };
    let s = with_noise(clean, &cfg.noise, seed)?;
    out.spectrum("ple.csv", &s, "signal_arb")?;
    let solver = if p.solver == PleSolver::Obe { "obe" } else { "model" };
    let extra = json!({
        "solver": solver,
        "beta": phonon.beta,
        "phonon_number": phonon.n,
        "amplitude_m": phonon.amplitude,
        "f_m_Hz": mode.f_m,
        "linewidth_Hz": hz(cfg.emitter.linewidth()),
        "noise": noise_json(&cfg.noise, seed),
    });
    out.json("ple.json", &sidecar(&s, "signal_arb", extra))
}

fn sweep_mech(cfg: &RunConfig, seed: u64, out: &mut Outputs) -> Result<()> {
    let dc = cfg.drive_config()?;
    let mode = dc.mode;
    let sm = &cfg.sweep_mech;
    let grid = symmetric_grid(mode.omega_m, sm.half_span, sm.points);
    let clean = mech_response_sweep(&cfg.emitter, &dc, -mode.omega_m + sm.probe_offset, &grid)?;
    let s = with_noise(clean, &cfg.noise, seed)?;
    out.spectrum("sweep_mech.csv", &s, "signal_arb")?;
    let fit = fit_lorentzians(&s, 1, None)?;
    let peak = fit.peaks[0];
    let err = fit.std_errors();
    let extra = json!({
        "fit_center_Hz": hz(peak.center),
        "fit_center_err_Hz": hz(err[1]),
        "fit_fwhm_Hz": hz(peak.fwhm),
        "fit_fwhm_err_Hz": hz(err[2]),
        "fit_converged": fit.converged,
        "Q": q_factor(mode.f_m, hz(peak.fwhm))?,
        "f_m_Hz": mode.f_m,
        "noise": noise_json(&cfg.noise, seed),
    });
    out.json("sweep_mech.json", &sidecar(&s, "signal_arb", extra))
}

fn interfere(cfg: &RunConfig, seed: u64, out: &mut Outputs) -> Result<()> {
    let mut dc = cfg.drive_config()?;
    dc.beam.power = cfg.interfere.drive_power;
    let mode = dc.mode;
    let i = &cfg.interfere;
    let setup = InterferometerSetup {
        carrier_detuning: i.carrier_detuning,
        carrier_rabi: i.carrier_rabi,
        sideband_field_rabi: i.sideband_rabi,
        relative_phase: i.relative_phase,
    };
    let d = steady_state_amplitude(dc.force()?, &mode, mode.omega_m)?;
    let phonon = PhononState::from_amplitude(d.amplitude, &mode, &cfg.material, cfg.emitter.position.0)?;
    let clean = interference_fringes(&cfg.emitter, &setup, phonon.beta, d.u_omega.arg(), &phase_grid(i.phase_points))?;
    let fringes = with_noise(clean, &cfg.noise, seed)?;
    out.spectrum("fringes.csv", &fringes, "signal_arb")?;
    let sine = fit_sinusoid(&fringes)?;
    let extra = json!({
        "beta": phonon.beta,
        "fit_amplitude_arb": sine.amplitude,
        "fit_phase_rad": sine.phase,
        "fit_offset_arb": sine.offset,
        "noise": noise_json(&cfg.noise, seed),
    });
    out.json("fringes.json", &sidecar(&fringes, "signal_arb", extra))?;

    let sweep_cfg = FringeSweepConfig { emitter: cfg.emitter, drive: dc, setup, phase_points: i.phase_points };
    let grid = symmetric_grid(mode.omega_m, i.half_span, i.points);
    let sweep = fringe_amplitude_sweep(&sweep_cfg, &grid)?;
    out.spectrum("fringe_amplitude.csv", &sweep.amplitude, "amplitude_arb")?;
    let a = sweep.amplitude_fit.peaks[0];
    let sq = sweep.squared_fit.peaks[0];
    let extra = json!({
        "amplitude_fit_fwhm_Hz": hz(a.fwhm),
        "squared_fit_fwhm_Hz": hz(sq.fwhm),
        "Q_from_squared": q_factor(mode.f_m, hz(sq.fwhm))?,
        "failed_points": sweep.failed_points,
        "f_m_Hz": mode.f_m,
    });
    out.json("fringe_amplitude.json", &sidecar(&sweep.amplitude, "amplitude_arb", extra))
}

fn fit(cfg: &RunConfig, input: &Path, out: &mut Outputs) -> Result<()> {
    let (header, x_file, y) = read_spectrum_csv(input)?;
    let axis = AxisKind::from_column_header(&header).ok_or_else(|| {
        anyhow!(
            "{}: unrecognised abscissa column `{header}` (expected detuning_Hz, mech_detuning_Hz, phase_rad, radius_m or offset_m)",
            input.display()
        )
    })?;
    let unit = header.rsplit('_').next().unwrap_or("");
    let scale = axis.file_scale();
    let x: Vec<f64> = x_file.iter().map(|v| v / scale).collect();
    // a malformed spectrum is an input problem, not a numerical one
    let spectrum = Spectrum::new(axis, x, y).map_err(|e| anyhow!("{}: {e}", input.display()))?;
    let report = match cfg.fit.model {
        FitModel::Lorentzian => {
            let fit = fit_lorentzians(&spectrum, cfg.fit.n_peaks, None)?;
            let err = fit.std_errors();
            let peaks: Vec<Value> = fit
                .peaks
                .iter()
                .enumerate()
                .map(|(k, p)| {
                    let e = &err[1 + 3 * k..4 + 3 * k];
                    let mut v = serde_json::Map::new();
                    v.insert(format!("center_{unit}"), json!(p.center * scale));
                    v.insert(format!("center_err_{unit}"), json!(e[0] * scale));
                    v.insert(format!("fwhm_{unit}"), json!(p.fwhm * scale));
                    v.insert(format!("fwhm_err_{unit}"), json!(e[1] * scale));
                    v.insert("height".into(), json!(p.height));
                    v.insert("height_err".into(), json!(e[2]));
                    v.insert("area".into(), json!(p.area() * scale));
                    Value::Object(v)
                })
                .collect();
            json!({
                "model": "lorentzian",
                "abscissa": header,
                "peaks": peaks,
                "baseline": fit.baseline,
                "baseline_err": err[0],
                "converged": fit.converged,
                "iterations": fit.iterations,
                "residual_norm": fit.residual_norm,
                "collisions": fit.collisions,
                "weighting": fit.weighting,
            })
        }
        FitModel::Sinusoid => {
            let fit = fit_sinusoid(&spectrum)?;
            json!({
                "model": "sinusoid",
                "abscissa": header,
                "offset": fit.offset,
                "offset_err": fit.covariance[0][0].max(0.0).sqrt(),
                "amplitude": fit.amplitude,
                "amplitude_err": fit.covariance[1][1].max(0.0).sqrt(),
                "phase_rad": fit.phase,
                "phase_err_rad": fit.covariance[2][2].max(0.0).sqrt(),
            })
        }
    };
    out.json("fit.json", &report).context("writing fit report")
}

fn qed(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for s in &cfg.scenarios {
        let r = cooperativity(s)?;
        rows.push(vec![
            s.label.clone(),
            num(s.geometry.length),
            num(s.geometry.width),
            num(s.geometry.thickness),
            num(s.q),
            num(s.eta),
            num(hz(s.gamma_s)),
            num(r.mode.f_m),
            num(hz(r.g)),
            num(r.cooperativity),
        ]);
        reports.push(json!({
            "label": s.label,
            "length_m": s.geometry.length,
            "width_m": s.geometry.width,
            "thickness_m": s.geometry.thickness,
            "Q": s.q,
            "eta": s.eta,
            "gamma_s_Hz": hz(s.gamma_s),
            "f_m_Hz": r.mode.f_m,
            "gamma_m_Hz": hz(r.mode.gamma_m),
            "g_Hz": hz(r.g),
            "cooperativity": r.cooperativity,
        }));
    }
    out.csv(
        "qed.csv",
        &["label", "length_m", "width_m", "thickness_m", "Q", "eta", "gamma_s_Hz", "f_m_Hz", "g_Hz", "cooperativity"],
        rows,
    )?;
    out.json("qed.json", &json!({ "scenarios": reports }))
}
