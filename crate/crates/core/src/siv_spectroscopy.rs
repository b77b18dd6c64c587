//! Optical response of a SiV two-level transition whose frequency is
//! modulated by the driven compression mode.
//!
//! The mode is treated as a classical field: strain at the emitter shifts
//! the transition by `delta(t) = beta * omega * cos(omega t + theta)`, which
//! splits the absorption line into sidebands at `k * omega` with weights
//! `J_k(beta)^2`. The fluorescence proxy is the excited-state population
//! times `gamma0`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::bessel::{bessel_j, bessel_j_orders};
use crate::constants::TWO_PI;
use crate::elastic_modes::{Material, MechMode};
use crate::error::{ensure, Error, Result};
use crate::fitting::{fit_lorentzians, fit_sinusoid, LorentzianFit, Peak};
use crate::gradient_drive::DriveConfig;
use crate::ode::{integrate, Tolerance};
use crate::spectrum::{linspace, AxisKind, Spectrum};

/// First zero of `J_0`; `J_1 / J_0` diverges there.
const J0_FIRST_ZERO: f64 = 2.404_825_557_695_773;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Emitter {
    /// Radiative FWHM, rad/s.
    pub natural_linewidth: f64,
    /// Carrier Rabi frequency, rad/s.
    pub carrier_rabi: f64,
    /// (x_s, y_s) on the plate, m.
    pub position: (f64, f64),
    /// Additional homogeneous broadening (FWHM), rad/s.
    pub extra_broadening: f64,
}

impl Emitter {
    /// 100 MHz radiative width, Rabi frequency giving a 310 MHz power-broadened line.
    pub fn paper_emitter() -> Self {
        let gamma0 = TWO_PI * 100e6;
        let target = 3.1;
        Self {
            natural_linewidth: gamma0,
            carrier_rabi: gamma0 * ((target * target - 1.0) / 2.0f64).sqrt(),
            position: (0.0, 0.0),
            extra_broadening: 0.0,
        }
    }

    /// Emitter with the carrier Rabi frequency set for saturation parameter `s`.
    pub fn with_saturation(mut self, s: f64) -> Self {
        self.carrier_rabi = self.natural_linewidth * (0.5 * s).sqrt();
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.natural_linewidth > 0.0, "natural_linewidth", || {
            format!("must be positive, got {}", self.natural_linewidth)
        })?;
        ensure(self.carrier_rabi >= 0.0, "carrier_rabi", || {
            format!("must be non-negative, got {}", self.carrier_rabi)
        })?;
        ensure(self.extra_broadening >= 0.0, "extra_broadening", || {
            format!("must be non-negative, got {}", self.extra_broadening)
        })
    }

    /// `s = 2 Omega0^2 / gamma0^2`.
    pub fn saturation(&self) -> f64 {
        2.0 * (self.carrier_rabi / self.natural_linewidth).powi(2)
    }

    pub fn linewidth(&self) -> f64 {
        self.natural_linewidth * (1.0 + self.saturation()).sqrt() + self.extra_broadening
    }

    /// Pure dephasing rate giving `extra_broadening` of additional FWHM.
    pub fn dephasing(&self) -> f64 {
        0.5 * self.extra_broadening
    }

    /// Peak fluorescence of an unmodulated line: `gamma0 * s / (2 (1 + s))`.
    pub fn peak_fluorescence(&self) -> f64 {
        let s = self.saturation();
        self.natural_linewidth * s / (2.0 * (1.0 + s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhononState {
    /// Peak edge displacement, m.
    pub amplitude: f64,
    pub n: f64,
    pub beta: f64,
}

/// Strain wavenumber seen by an emitter at `x_s`: `k_m |cos(pi x_s / L)|`.
pub fn effective_wavenumber(mode: &MechMode, x_s: f64) -> f64 {
    mode.k_m * (PI * x_s / mode.length).cos().abs()
}

impl PhononState {
    pub fn from_amplitude(amplitude: f64, mode: &MechMode, material: &Material, x_s: f64) -> Result<Self> {
        ensure(amplitude >= 0.0, "amplitude", || format!("must be non-negative, got {amplitude}"))?;
        Ok(Self {
            amplitude,
            n: (amplitude / (2.0 * mode.x_zpf)).powi(2),
            beta: material.deformation_potential * effective_wavenumber(mode, x_s) * amplitude / mode.omega_m,
        })
    }

    /// State for a given modulation index at emitter position `x_s`.
    pub fn from_beta(beta: f64, mode: &MechMode, material: &Material, x_s: f64) -> Result<Self> {
        let k = effective_wavenumber(mode, x_s);
        ensure(k > 0.0, "position", || "emitter sits on a strain node".into())?;
        Self::from_amplitude(beta.abs() * mode.omega_m / (material.deformation_potential * k), mode, material, x_s)
            .map(|p| Self { beta, ..p })
    }
}

/// `beta = 2 G sqrt(n) / omega_m`.
pub fn beta_from_occupation(g: f64, n: f64, omega_m: f64) -> f64 {
    2.0 * g * n.sqrt() / omega_m
}

/// `Omega1 = Omega0 G sqrt(n) / omega_m`.
pub fn sideband_rabi(emitter: &Emitter, g: f64, n: f64, omega_m: f64) -> Result<f64> {
    ensure(omega_m > 0.0, "omega_m", || format!("must be positive, got {omega_m}"))?;
    ensure(n >= 0.0, "n", || format!("must be non-negative, got {n}"))?;
    Ok(emitter.carrier_rabi * g * n.sqrt() / omega_m)
}

/// `gamma' = gamma0 sqrt(1 + 2 Omega0^2 / gamma0^2) + extra`.
pub fn power_broadened_width(gamma0: f64, omega0: f64, extra: f64) -> Result<f64> {
    ensure(gamma0 > 0.0, "gamma0", || format!("must be positive, got {gamma0}"))?;
    ensure(omega0 >= 0.0, "Omega0", || format!("must be non-negative, got {omega0}"))?;
    ensure(extra >= 0.0, "extra", || format!("must be non-negative, got {extra}"))?;
    Ok(gamma0 * (1.0 + 2.0 * (omega0 / gamma0).powi(2)).sqrt() + extra)
}

/// Sideband truncation order `ceil(|beta|) + 6`.
pub fn bessel_truncation(beta: f64) -> usize {
    beta.abs().ceil() as usize + 6
}

/// `J_k(beta)^2` for `k = -K..=K`, indexed by `k + K`.
pub fn sideband_weights(beta: f64) -> Vec<f64> {
    let kmax = bessel_truncation(beta);
    let j = bessel_j_orders(kmax, beta.abs());
    (0..=2 * kmax).map(|i| j[(i as i64 - kmax as i64).unsigned_abs() as usize].powi(2)).collect()
}

/// Multi-sideband PLE spectrum on an optical-detuning grid (rad/s).
pub fn ple_spectrum(emitter: &Emitter, phonon: &PhononState, mode: &MechMode, detuning_grid: &[f64]) -> Result<Spectrum> {
    emitter.validate()?;
    let width = emitter.linewidth();
    if mode.omega_m < width {
        log::warn!(
            "sidebands unresolved: omega_m/2pi = {:.3e} Hz below linewidth {:.3e} Hz",
            mode.omega_m / TWO_PI,
            width / TWO_PI
        );
    }
    let weights = sideband_weights(phonon.beta);
    let kmax = (weights.len() / 2) as i64;
    let s0 = emitter.peak_fluorescence();
    let signal = detuning_grid
        .iter()
        .map(|&d| {
            weights
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    let u = 2.0 * (d - (i as i64 - kmax) as f64 * mode.omega_m) / width;
                    w / (1.0 + u * u)
                })
                .sum::<f64>()
                * s0
        })
        .collect();
    Ok(Spectrum::new(AxisKind::OpticalDetuning, detuning_grid.to_vec(), signal)?
        .with_meta("beta", phonon.beta)
        .with_meta("amplitude_m", phonon.amplitude)
        .with_meta("n", phonon.n)
        .with_meta("linewidth_rad_s", width)
        .with_meta("omega_m_rad_s", mode.omega_m))
}

/// One coherent optical field in the frame of the bare transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveField {
    /// Laser minus bare transition frequency, rad/s.
    pub detuning: f64,
    /// rad/s
    pub rabi: f64,
    pub phase: f64,
}

/// Transition-frequency modulation `beta * omega * cos(omega t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Modulation {
    pub beta: f64,
    /// rad/s
    pub omega: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObeWindow {
    /// Discarded settling time, s.
    pub transient: f64,
    /// Mechanical periods averaged over.
    pub periods: usize,
}

impl ObeWindow {
    /// 30 radiative lifetimes of settling, 50 averaged periods.
    pub fn standard(emitter: &Emitter) -> Self {
        Self { transient: 30.0 / emitter.natural_linewidth, periods: 50 }
    }
}

/// Time-averaged excited-state population from direct integration of the
/// two-level optical Bloch equations.
///
/// `d rho_eg/dt = -i [delta(t) rho_eg + Omega(t)/2 (1 - 2 rho_ee)] - Gamma2 rho_eg`
/// `d rho_ee/dt = Im(Omega(t) rho_eg^*) - gamma0 rho_ee`
/// with `Omega(t) = sum_j Omega_j exp(-i (Delta_j t + phi_j))`,
/// `Gamma2 = gamma0 / 2 + extra / 2`.
pub fn obe_oracle(emitter: &Emitter, fields: &[DriveField], modulation: &Modulation, window: &ObeWindow) -> Result<f64> {
    emitter.validate()?;
    ensure(modulation.omega > 0.0, "omega", || format!("must be positive, got {}", modulation.omega))?;
    ensure(window.periods >= 50, "periods", || format!("need at least 50 mechanical periods, got {}", window.periods))?;
    ensure(window.transient >= 5.0 / emitter.natural_linewidth, "transient", || {
        "must cover at least 5 radiative lifetimes".into()
    })?;
    if fields.iter().all(|f| f.rabi == 0.0) {
        return Ok(0.0);
    }
    let gamma0 = emitter.natural_linewidth;
    let gamma2 = 0.5 * gamma0 + emitter.dephasing();
    let Modulation { beta, omega, phase } = *modulation;

    let rhs = |t: f64, y: &[f64; 4]| -> [f64; 4] {
        let mut rabi = Complex64::new(0.0, 0.0);
        for f in fields {
            rabi += Complex64::from_polar(f.rabi, -(f.detuning * t + f.phase));
        }
        let delta = beta * omega * (omega * t + phase).cos();
        let eg = Complex64::new(y[0], y[1]);
        let ee = y[2];
        let i = Complex64::i();
        let deg = -i * (delta * eg + rabi * 0.5 * (1.0 - 2.0 * ee)) - gamma2 * eg;
        let dee = (rabi * eg.conj()).im - gamma0 * ee;
        [deg.re, deg.im, dee, ee]
    };

    let fastest = fields.iter().map(|f| f.detuning.abs() + f.rabi).fold(0.0, f64::max)
        + beta.abs() * omega
        + omega;
    let h0 = 0.05 / fastest;
    let tol = Tolerance { rtol: 1e-8, atol: 1e-11 };
    let settle = integrate(rhs, 0.0, window.transient, [0.0; 4], h0, tol)?;
    let span = window.periods as f64 * TWO_PI / omega;
    let start = [settle[0], settle[1], settle[2], 0.0];
    let end = integrate(rhs, window.transient, window.transient + span, start, h0, tol)?;
    Ok(end[3] / span)
}

/// PLE spectrum from the Bloch-equation oracle, in the same units as
/// [`ple_spectrum`].
pub fn obe_ple_spectrum(emitter: &Emitter, phonon: &PhononState, mode: &MechMode, detuning_grid: &[f64]) -> Result<Spectrum> {
    let window = ObeWindow::standard(emitter);
    let modulation = Modulation { beta: phonon.beta, omega: mode.omega_m, phase: 0.0 };
    let signal = detuning_grid
        .par_iter()
        .map(|&d| {
            let field = DriveField { detuning: d, rabi: emitter.carrier_rabi, phase: 0.0 };
            obe_oracle(emitter, &[field], &modulation, &window).map(|p| p * emitter.natural_linewidth)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Spectrum::new(AxisKind::OpticalDetuning, detuning_grid.to_vec(), signal)?
        .with_meta("beta", phonon.beta)
        .with_meta("omega_m_rad_s", mode.omega_m))
}

/// Integrated signal in windows `[(k - 1/2) w, (k + 1/2) w]` for `k = -kmax..=kmax`,
/// normalised to unit sum. Trapezoid rule on the sampled grid.
pub fn sideband_window_weights(spectrum: &Spectrum, omega: f64, kmax: usize) -> Vec<f64> {
    let mut w = vec![0.0; 2 * kmax + 1];
    let index = |x: f64| -> Option<usize> {
        let k = (x / omega).round();
        (k.abs() <= kmax as f64).then(|| (k as i64 + kmax as i64) as usize)
    };
    for pair in spectrum.abscissa.windows(2).zip(spectrum.signal.windows(2)) {
        let (x, y) = pair;
        if let Some(i) = index(0.5 * (x[0] + x[1])) {
            w[i] += 0.5 * (y[0] + y[1]) * (x[1] - x[0]);
        }
    }
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter_mut().for_each(|v| *v /= total);
    }
    w
}

/// Fit one Lorentzian per sideband `k = -kmax..=kmax`, seeded at `k * omega`.
pub fn fit_sidebands(spectrum: &Spectrum, omega: f64, kmax: usize, width_guess: f64) -> Result<LorentzianFit> {
    let sample_at = |x: f64| -> f64 {
        let i = spectrum.abscissa.partition_point(|&a| a < x).min(spectrum.len() - 1);
        spectrum.signal[i]
    };
    let init: Vec<Peak> = (-(kmax as i64)..=kmax as i64)
        .map(|k| {
            let c = k as f64 * omega;
            Peak { center: c, fwhm: width_guess, height: sample_at(c).max(0.0) }
        })
        .collect();
    fit_lorentzians(spectrum, init.len(), Some(&init))
}

/// Peak areas of a fit normalised to unit sum.
pub fn normalized_areas(fit: &LorentzianFit) -> Vec<f64> {
    let areas: Vec<f64> = fit.peaks.iter().map(|p| p.area()).collect();
    let total: f64 = areas.iter().sum();
    areas.iter().map(|a| a / total).collect()
}

/// Fluorescence at a fixed probe detuning near the red sideband versus the
/// intensity-modulation frequency. Abscissa is `omega - omega_m`.
///
/// Lowest sideband order: signal `= Omega1^2 Gamma2 / (2 (delta^2 + Gamma2^2))`
/// with `Omega1 = Omega0 beta / 2`, `Gamma2 = gamma'/2` and `delta` the probe
/// offset from `-omega_m`.
pub fn mech_response_sweep(emitter: &Emitter, drive: &DriveConfig, probe_detuning: f64, omega_grid: &[f64]) -> Result<Spectrum> {
    emitter.validate()?;
    let mode = &drive.mode;
    let force = drive.force()?;
    let gamma2 = 0.5 * emitter.linewidth();
    let offset = probe_detuning + mode.omega_m;
    let lineshape = gamma2 / (2.0 * (offset * offset + gamma2 * gamma2));
    let signal = omega_grid
        .iter()
        .map(|&w| {
            let d = crate::gradient_drive::steady_state_amplitude(force, mode, w)?;
            let ph = PhononState::from_amplitude(d.amplitude, mode, &drive.material, emitter.position.0)?;
            Ok((emitter.carrier_rabi * ph.beta / 2.0).powi(2) * lineshape)
        })
        .collect::<Result<Vec<_>>>()?;
    let x = omega_grid.iter().map(|w| w - mode.omega_m).collect();
    Ok(Spectrum::new(AxisKind::MechDetuning, x, signal)?
        .with_meta("omega_m_rad_s", mode.omega_m)
        .with_meta("gamma_m_rad_s", mode.gamma_m)
        .with_meta("probe_detuning_rad_s", probe_detuning)
        .with_meta("power_W", drive.beam.power))
}

/// Two-field sideband interferometer: a carrier near the bare line and a
/// second field `omega` below it that drives the red sideband.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferometerSetup {
    /// Carrier-field detuning from the bare line, rad/s.
    pub carrier_detuning: f64,
    /// rad/s
    pub carrier_rabi: f64,
    /// Rabi frequency of the field at `carrier_detuning - omega`, rad/s.
    pub sideband_field_rabi: f64,
    /// Phase of the sideband field relative to the carrier field, rad.
    pub relative_phase: f64,
}

impl InterferometerSetup {
    pub fn fields(&self, omega: f64) -> [DriveField; 2] {
        [
            DriveField { detuning: self.carrier_detuning, rabi: self.carrier_rabi, phase: 0.0 },
            DriveField {
                detuning: self.carrier_detuning - omega,
                rabi: self.sideband_field_rabi,
                phase: self.relative_phase,
            },
        ]
    }
}

/// Lowest-order interference model:
/// `S(phi) = C01 (Omega0^2 + Omega1^2 + 2 Omega0 Omega1 cos(phi + phi0))`
/// with `Omega0 = Omega_c J0(beta)`, `Omega1 = Omega_r J1(beta)`,
/// `phi0 = pi + relative_phase - psi` and `psi = arg(u_omega)`.
///
/// The mechanical modulation is `beta omega cos(omega t + phi - psi)`.
pub fn interference_fringes(
    emitter: &Emitter,
    setup: &InterferometerSetup,
    beta: f64,
    response_phase: f64,
    phi_grid: &[f64],
) -> Result<Spectrum> {
    emitter.validate()?;
    let gamma2 = 0.5 * emitter.linewidth();
    let d = setup.carrier_detuning;
    let c01 = gamma2 / (2.0 * (d * d + gamma2 * gamma2));
    let o0 = setup.carrier_rabi * bessel_j(0, beta);
    let o1 = setup.sideband_field_rabi * bessel_j(1, beta);
    let phi0 = fringe_phase(setup, response_phase);
    let signal = phi_grid
        .iter()
        .map(|&phi| c01 * (o0 * o0 + o1 * o1 + 2.0 * o0 * o1 * (phi + phi0).cos()).max(0.0))
        .collect();
    Ok(Spectrum::new(AxisKind::Phase, phi_grid.to_vec(), signal)?
        .with_meta("beta", beta)
        .with_meta("phi0_rad", phi0)
        .with_meta("response_phase_rad", response_phase))
}

/// Fringe phase `phi0` wrapped to (-pi, pi].
pub fn fringe_phase(setup: &InterferometerSetup, response_phase: f64) -> f64 {
    let p = (PI + setup.relative_phase - response_phase).rem_euclid(TWO_PI);
    if p > PI {
        p - TWO_PI
    } else {
        p
    }
}

/// Configuration for a fringe-amplitude sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeSweepConfig {
    pub emitter: Emitter,
    pub drive: DriveConfig,
    pub setup: InterferometerSetup,
    /// Phase samples per fringe.
    pub phase_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeSweep {
    /// Fitted fringe amplitude versus `omega - omega_m`.
    pub amplitude: Spectrum,
    /// Lorentzian fit to the amplitude curve (scales as |u|).
    pub amplitude_fit: LorentzianFit,
    /// Lorentzian fit to the squared amplitude (scales as n).
    pub squared_fit: LorentzianFit,
    /// Grid indices whose sinusoid fit failed; amplitude recorded as 0.
    pub failed_points: Vec<usize>,
}

pub fn fringe_amplitude_sweep(config: &FringeSweepConfig, omega_grid: &[f64]) -> Result<FringeSweep> {
    let mode = &config.drive.mode;
    let lo = omega_grid.first().copied().unwrap_or(0.0) - mode.omega_m;
    let hi = omega_grid.last().copied().unwrap_or(0.0) - mode.omega_m;
    if lo > -5.0 * mode.gamma_m || hi < 5.0 * mode.gamma_m {
        log::warn!("fringe sweep covers less than +-5 gamma_m around the resonance");
    }
    ensure(config.phase_points >= 8, "phase_points", || "need at least 8 phase samples".into())?;
    let force = config.drive.force()?;
    let n = config.phase_points;
    let phi: Vec<f64> = (0..n).map(|i| TWO_PI * i as f64 / n as f64).collect();
    let mut failed_points = Vec::new();
    let mut amps = Vec::with_capacity(omega_grid.len());
    for (i, &w) in omega_grid.iter().enumerate() {
        let d = crate::gradient_drive::steady_state_amplitude(force, mode, w)?;
        let ph = PhononState::from_amplitude(d.amplitude, mode, &config.drive.material, config.emitter.position.0)?;
        let fringes = interference_fringes(&config.emitter, &config.setup, ph.beta, d.u_omega.arg(), &phi)?;
        match fit_sinusoid(&fringes) {
            Ok(f) => amps.push(f.amplitude),
            Err(e) => {
                log::warn!("fringe fit failed at grid point {i}: {e}");
                failed_points.push(i);
                amps.push(0.0);
            }
        }
    }
    let x: Vec<f64> = omega_grid.iter().map(|w| w - mode.omega_m).collect();
    let amplitude = Spectrum::new(AxisKind::MechDetuning, x.clone(), amps.clone())?
        .with_meta("omega_m_rad_s", mode.omega_m)
        .with_meta("gamma_m_rad_s", mode.gamma_m);
    let squared = Spectrum::new(AxisKind::MechDetuning, x, amps.iter().map(|a| a * a).collect())?;
    let amplitude_fit = fit_lorentzians(&amplitude, 1, None)?;
    let squared_fit = fit_lorentzians(&squared, 1, None)?;
    Ok(FringeSweep { amplitude, amplitude_fit, squared_fit, failed_points })
}

/// Small-modulation inversion `A_m = 2 (Omega1/Omega0) v / D`.
pub fn amplitude_from_ratio(ratio: f64, v: f64, d: f64) -> Result<f64> {
    ensure(ratio >= 0.0, "ratio", || format!("must be non-negative, got {ratio}"))?;
    ensure(v > 0.0, "v", || format!("must be positive, got {v}"))?;
    ensure(d > 0.0, "D", || format!("must be positive, got {d}"))?;
    Ok(2.0 * ratio * v / d)
}

/// Modulation index with `J1(beta) / J0(beta) = ratio`, on the branch below
/// the first zero of `J0`.
pub fn beta_from_ratio(ratio: f64) -> Result<f64> {
    ensure(ratio >= 0.0 && ratio.is_finite(), "ratio", || format!("must be finite and non-negative, got {ratio}"))?;
    let f = |b: f64| bessel_j(1, b) / bessel_j(0, b) - ratio;
    let (mut lo, mut hi) = (0.0, J0_FIRST_ZERO - 1e-12);
    if f(hi) < 0.0 {
        return Err(Error::InvalidParameter { name: "ratio", reason: "beyond the first J0 zero".into() });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1e-300) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Exact inversion `A_m = beta v / D` with `beta` from the Bessel ratio.
pub fn amplitude_from_ratio_exact(ratio: f64, v: f64, d: f64) -> Result<f64> {
    amplitude_from_ratio(ratio, v, d)?;
    Ok(beta_from_ratio(ratio)? * v / d)
}

/// Uniform phase grid over one period, endpoint excluded.
pub fn phase_grid(n: usize) -> Vec<f64> {
    let mut g = linspace(0.0, TWO_PI, n + 1);
    g.pop();
    g
}
