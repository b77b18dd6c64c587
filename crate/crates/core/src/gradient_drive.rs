//! Optical gradient-force drive of the compression mode.
//!
//! A thin dielectric slab at the waist of a Gaussian beam carries an areal
//! dipole density `p = eps0 (n^2 - 1) d E`; the time-averaged areal force is
//! `kappa * eps0 (n^2 - 1) d / 2 * grad |E|^2` with `|E|^2 = 2 I / (eps0 c)`,
//! pointing toward the beam centre. All reflection and local-field physics is
//! folded into the scalar `kappa`.
//!
//! Modulation bookkeeping: for `I(t) = I0 (1 + m cos wt)` the modal force is
//! `F(t) = F_static + F e^{-iwt} + c.c.` with `F = (m/2) F_static`. The
//! displacement is `u(x, t) = u_w phi(x) e^{-iwt} + c.c.`, so the edge
//! amplitude is `A_m = 2 |u_w|`.
//!
//! The free-space form `u_w = (F / rho_a) / (w_m^2 - w^2 - i w gamma_m)` has
//! no stated mode normalisation. Here `phi` peaks at 1 on the free edges and
//! `rho_a` becomes `m_eff = rho L W d / 2`; with `phi` normalised to
//! `int phi^2 dA = 1` instead, both forms give the same edge displacement.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::constants::{EPSILON_0, SPEED_OF_LIGHT};
use crate::elastic_modes::{Material, MechMode, PlateGeometry};
use crate::error::{ensure, Error, Result};
use crate::quadrature::GaussLegendre;
use crate::spectrum::{AxisKind, Spectrum};

pub const DEFAULT_QUADRATURE_NODES: usize = 64;
/// Relative change between N and 2N node rules above which the overlap is rejected.
pub const QUADRATURE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBeam {
    pub wavelength: f64,
    /// Average power after the objective, W.
    pub power: f64,
    /// 1/e^2 intensity radius, m.
    pub waist_radius: f64,
    /// Beam centre relative to the plate centre, m.
    pub center_offset: (f64, f64),
    pub modulation_depth: f64,
    /// rad/s
    pub modulation_freq: f64,
    /// rad
    pub modulation_phase: f64,
}

impl GaussianBeam {
    /// 1550 nm, 2 mW, 2.25 um radius, centred, full-depth modulation.
    pub fn paper_drive(modulation_freq: f64) -> Self {
        Self {
            wavelength: 1550e-9,
            power: 2e-3,
            waist_radius: 2.25e-6,
            center_offset: (0.0, 0.0),
            modulation_depth: 1.0,
            modulation_freq,
            modulation_phase: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.power >= 0.0, "power", || format!("must be non-negative, got {}", self.power))?;
        ensure(self.waist_radius > 0.0, "waist_radius", || {
            format!("must be positive, got {}", self.waist_radius)
        })?;
        ensure((0.0..=1.0).contains(&self.modulation_depth), "modulation_depth", || {
            format!("must lie in [0, 1], got {}", self.modulation_depth)
        })?;
        ensure(self.wavelength > 0.0, "wavelength", || format!("must be positive, got {}", self.wavelength))
    }

    pub fn rayleigh_range(&self) -> f64 {
        PI * self.waist_radius * self.waist_radius / self.wavelength
    }

    pub fn peak_intensity(&self) -> f64 {
        2.0 * self.power / (PI * self.waist_radius * self.waist_radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalCorrection {
    pub kappa: f64,
}

impl Default for OpticalCorrection {
    fn default() -> Self {
        Self { kappa: 1.0 }
    }
}

impl OpticalCorrection {
    pub fn validate(&self) -> Result<()> {
        ensure(self.kappa > 0.0, "kappa", || format!("must be positive, got {}", self.kappa))
    }
}

/// Time-averaged intensity at the waist, W/m^2.
pub fn field_intensity(beam: &GaussianBeam, x: f64, y: f64) -> f64 {
    let (x0, y0) = beam.center_offset;
    let r2 = (x - x0).powi(2) + (y - y0).powi(2);
    beam.peak_intensity() * (-2.0 * r2 / (beam.waist_radius * beam.waist_radius)).exp()
}

fn check_depth_of_focus(beam: &GaussianBeam, thickness: f64) {
    if thickness > 0.2 * beam.rayleigh_range() {
        log::warn!(
            "plate thickness {:.3e} m exceeds 0.2 x Rayleigh range {:.3e} m; thin-slab force model is approximate",
            thickness,
            beam.rayleigh_range()
        );
    }
}

/// Areal gradient-force density `(f_x, f_y)`, N/m^2.
pub fn gradient_force_density(
    beam: &GaussianBeam,
    material: &Material,
    thickness: f64,
    correction: &OpticalCorrection,
    x: f64,
    y: f64,
) -> (f64, f64) {
    let n2 = material.optical_index * material.optical_index;
    let prefactor = correction.kappa * EPSILON_0 * (n2 - 1.0) * thickness / 2.0;
    // |E|^2 = 2 I / (eps0 c); grad of a Gaussian: -4 (r - r0) / w^2 * I
    let e2 = 2.0 * field_intensity(beam, x, y) / (EPSILON_0 * SPEED_OF_LIGHT);
    let w2 = beam.waist_radius * beam.waist_radius;
    let (x0, y0) = beam.center_offset;
    (
        prefactor * e2 * (-4.0 * (x - x0) / w2),
        prefactor * e2 * (-4.0 * (y - y0) / w2),
    )
}

fn overlap_with_rule(
    rule: &GaussLegendre,
    beam: &GaussianBeam,
    geom: &PlateGeometry,
    material: &Material,
    mode: &MechMode,
    correction: &OpticalCorrection,
) -> f64 {
    let hx = 0.5 * geom.length;
    let hy = 0.5 * geom.width;
    let static_force = rule.integrate_2d((-hx, hx), (-hy, hy), |x, y| {
        mode.shape(x) * gradient_force_density(beam, material, geom.thickness, correction, x, y).0
    });
    0.5 * beam.modulation_depth * static_force
}

/// Natural force scale used to judge quadrature convergence of small overlaps.
fn force_scale(beam: &GaussianBeam, material: &Material, thickness: f64, mode: &MechMode, correction: &OpticalCorrection) -> f64 {
    let n2 = material.optical_index * material.optical_index;
    0.5 * beam.modulation_depth * correction.kappa * (n2 - 1.0) * thickness / SPEED_OF_LIGHT * beam.power * mode.k_m
}

/// Mode-matched force at the modulation frequency: the `e^{-iwt}` coefficient
/// of `int phi(x) f_x dA`, i.e. `(m/2)` times the static overlap. Signed; the
/// force of a centred beam compresses the plate, so `F < 0` there.
pub fn modal_overlap_force(
    beam: &GaussianBeam,
    geom: &PlateGeometry,
    material: &Material,
    mode: &MechMode,
    correction: &OpticalCorrection,
    nodes: usize,
) -> Result<f64> {
    beam.validate()?;
    correction.validate()?;
    geom.validate()?;
    check_depth_of_focus(beam, geom.thickness);
    let coarse = overlap_with_rule(&GaussLegendre::new(nodes), beam, geom, material, mode, correction);
    let fine = overlap_with_rule(&GaussLegendre::new(2 * nodes), beam, geom, material, mode, correction);
    let scale = fine.abs().max(1e-6 * force_scale(beam, material, geom.thickness, mode, correction));
    let change = (fine - coarse).abs() / scale.max(f64::MIN_POSITIVE);
    if change > QUADRATURE_TOLERANCE {
        return Err(Error::QuadratureNotConverged { coarse, fine, change });
    }
    Ok(fine)
}

/// Node count that resolves a beam of this radius on this plate.
pub fn nodes_for_beam(beam: &GaussianBeam, geom: &PlateGeometry) -> usize {
    let need = (6.0 * geom.length.max(geom.width) / beam.waist_radius).ceil() as usize;
    need.clamp(DEFAULT_QUADRATURE_NODES, 2048)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveResult {
    /// N
    pub mode_matched_force: f64,
    /// m
    pub u_omega: Complex64,
    /// Peak edge displacement `2 |u_w|`, m.
    pub amplitude: f64,
    pub phonon_number: f64,
}

/// Mechanical susceptibility `1 / (m_eff (w_m^2 - w^2 - i w gamma_m))`, m/N.
pub fn susceptibility(mode: &MechMode, omega: f64) -> Complex64 {
    let denom = Complex64::new(mode.omega_m * mode.omega_m - omega * omega, -omega * mode.gamma_m) * mode.m_eff;
    denom.inv()
}

pub fn steady_state_amplitude(force: f64, mode: &MechMode, omega: f64) -> Result<DriveResult> {
    ensure(mode.gamma_m > 0.0, "gamma_m", || format!("must be positive, got {}", mode.gamma_m))?;
    let u = susceptibility(mode, omega) * force;
    let amplitude = 2.0 * u.norm();
    Ok(DriveResult {
        mode_matched_force: force,
        u_omega: u,
        amplitude,
        phonon_number: (amplitude / (2.0 * mode.x_zpf)).powi(2),
    })
}

/// Everything needed to go from beam to mechanical amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveConfig {
    pub beam: GaussianBeam,
    pub geometry: PlateGeometry,
    pub material: Material,
    pub mode: MechMode,
    pub correction: OpticalCorrection,
}

impl DriveConfig {
    pub fn force(&self) -> Result<f64> {
        let nodes = nodes_for_beam(&self.beam, &self.geometry);
        modal_overlap_force(&self.beam, &self.geometry, &self.material, &self.mode, &self.correction, nodes)
    }

    /// Drive at the configured modulation frequency.
    pub fn drive(&self) -> Result<DriveResult> {
        steady_state_amplitude(self.force()?, &self.mode, self.beam.modulation_freq)
    }

    /// Drive exactly on mechanical resonance.
    pub fn resonant_drive(&self) -> Result<DriveResult> {
        steady_state_amplitude(self.force()?, &self.mode, self.mode.omega_m)
    }
}

fn sweep(
    config: &DriveConfig,
    grid: &[f64],
    axis: AxisKind,
    apply: impl Fn(&mut GaussianBeam, f64) + Sync,
) -> Result<Spectrum> {
    ensure(!grid.is_empty(), "grid", || "must not be empty".into())?;
    let amplitudes = grid
        .par_iter()
        .map(|&v| {
            let mut c = *config;
            apply(&mut c.beam, v);
            c.resonant_drive().map(|d| d.amplitude)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Spectrum::new(axis, grid.to_vec(), amplitudes)?
        .with_meta("power_W", config.beam.power)
        .with_meta("kappa", config.correction.kappa)
        .with_meta("gamma_m_rad_s", config.mode.gamma_m))
}

/// Resonant amplitude `A_m` versus beam radius (centre offset kept).
pub fn sweep_beam_radius(config: &DriveConfig, radii: &[f64]) -> Result<Spectrum> {
    ensure(radii.iter().all(|&r| r > 0.0), "radius grid", || "radii must be positive".into())?;
    sweep(config, radii, AxisKind::BeamRadius, |b, r| b.waist_radius = r)
        .map(|s| s.with_meta("offset_x_m", config.beam.center_offset.0))
}

/// Resonant amplitude `A_m` versus beam offset along x.
pub fn sweep_beam_offset(config: &DriveConfig, offsets: &[f64]) -> Result<Spectrum> {
    sweep(config, offsets, AxisKind::BeamOffset, |b, x| b.center_offset.0 = x)
        .map(|s| s.with_meta("radius_m", config.beam.waist_radius))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::TWO_PI;
    use crate::elastic_modes::{fundamental_compression_mode, Loss};
    use crate::spectrum::linspace;
    use approx::assert_relative_eq;

    fn config() -> DriveConfig {
        let geometry = PlateGeometry::paper_resonator();
        let material = Material::diamond();
        let mode = fundamental_compression_mode(&geometry, &material, Loss::Gamma(TWO_PI * 83.0)).unwrap();
        DriveConfig {
            beam: GaussianBeam::paper_drive(mode.omega_m),
            geometry,
            material,
            mode,
            correction: OpticalCorrection::default(),
        }
    }

    #[test]
    fn peak_intensity() {
        let beam = GaussianBeam::paper_drive(0.0);
        assert_relative_eq!(field_intensity(&beam, 0.0, 0.0), 2.0 * 2e-3 / (PI * 2.25e-6f64.powi(2)), max_relative = 1e-15);
        assert_relative_eq!(field_intensity(&beam, 0.0, 0.0), 2.515e8, max_relative = 1e-3);
    }

    #[test]
    fn intensity_integrates_to_power() {
        let beam = GaussianBeam { center_offset: (0.4e-6, -0.3e-6), ..GaussianBeam::paper_drive(0.0) };
        let w = beam.waist_radius;
        let rule = GaussLegendre::new(96);
        let (x0, y0) = beam.center_offset;
        let p = rule.integrate_2d((x0 - 6.0 * w, x0 + 6.0 * w), (y0 - 6.0 * w, y0 + 6.0 * w), |x, y| field_intensity(&beam, x, y));
        assert_relative_eq!(p, beam.power, max_relative = 1e-6);
    }

    #[test]
    fn force_points_to_beam_centre() {
        let c = config();
        let corr = OpticalCorrection::default();
        let f0 = gradient_force_density(&c.beam, &c.material, 1.5e-6, &corr, 0.0, 0.0);
        assert_eq!(f0, (0.0, 0.0));
        let d = 0.7e-6;
        let right = gradient_force_density(&c.beam, &c.material, 1.5e-6, &corr, d, 0.0);
        let left = gradient_force_density(&c.beam, &c.material, 1.5e-6, &corr, -d, 0.0);
        assert!(right.0 < 0.0 && left.0 > 0.0);
        assert_relative_eq!(right.0, -left.0, max_relative = 1e-14);
    }

    #[test]
    fn wide_beam_force_vanishes() {
        let c = config();
        let corr = OpticalCorrection::default();
        let mut last = f64::INFINITY;
        for w in [1e-5, 1e-4, 1e-3, 1e-2] {
            let beam = GaussianBeam { waist_radius: w, ..c.beam };
            let f = gradient_force_density(&beam, &c.material, 1.5e-6, &corr, 2e-6, 1e-6).0.abs();
            assert!(f < last);
            last = f;
        }
        assert!(last < 1e-9);
    }

    #[test]
    fn uniform_field_has_no_modal_overlap() {
        let c = config();
        let beam = GaussianBeam { waist_radius: 1.0, ..c.beam };
        let f = overlap_with_rule(&GaussLegendre::new(64), &beam, &c.geometry, &c.material, &c.mode, &c.correction);
        let reference = c.force().unwrap().abs();
        assert!(f.abs() < 1e-12 * reference, "{f} vs {reference}");
    }

    fn midpoint_overlap(c: &DriveConfig, beam: &GaussianBeam, n: usize) -> f64 {
        // independent oracle: composite midpoint rule on the plate
        let (hx, hy) = (0.5 * c.geometry.length, 0.5 * c.geometry.width);
        let (dx, dy) = (2.0 * hx / n as f64, 2.0 * hy / n as f64);
        let mut s = 0.0;
        for i in 0..n {
            let x = -hx + (i as f64 + 0.5) * dx;
            for j in 0..n {
                let y = -hy + (j as f64 + 0.5) * dy;
                s += c.mode.shape(x) * gradient_force_density(beam, &c.material, c.geometry.thickness, &c.correction, x, y).0;
            }
        }
        0.5 * beam.modulation_depth * s * dx * dy
    }

    #[test]
    fn overlap_matches_midpoint_oracle() {
        let c = config();
        for (w, x0) in [(2.25e-6, 0.0), (0.6e-6, 0.0), (1.5e-6, 1.8e-6), (6e-6, -0.7e-6)] {
            let beam = GaussianBeam { waist_radius: w, center_offset: (x0, 0.3e-6), ..c.beam };
            let f = modal_overlap_force(&beam, &c.geometry, &c.material, &c.mode, &c.correction, nodes_for_beam(&beam, &c.geometry)).unwrap();
            assert_relative_eq!(f, midpoint_overlap(&c, &beam, 3000), max_relative = 1e-4);
        }
    }

    #[test]
    fn narrow_centred_beam_reaches_slope_limit() {
        // phi ~ pi x / L near the centre, so int phi dI/dx dA -> -(pi/L) P
        let c = config();
        let n2 = c.material.optical_index.powi(2);
        let limit = -0.5 * (n2 - 1.0) * c.geometry.thickness / SPEED_OF_LIGHT * PI / c.geometry.length * c.beam.power;
        let mut last = 0.0;
        for w in [2.0e-6, 1.0e-6, 0.5e-6, 0.25e-6, 0.1e-6] {
            let beam = GaussianBeam { waist_radius: w, ..c.beam };
            let f = modal_overlap_force(&beam, &c.geometry, &c.material, &c.mode, &c.correction, nodes_for_beam(&beam, &c.geometry)).unwrap();
            assert!(f < 0.0 && f.abs() > last);
            last = f.abs();
        }
        assert_relative_eq!(-last, limit, max_relative = 1e-3);
    }

    #[test]
    fn force_is_linear_in_power_and_kappa() {
        let c = config();
        let f = c.force().unwrap();
        let mut c2 = c;
        c2.beam.power *= 3.0;
        assert_relative_eq!(c2.force().unwrap(), 3.0 * f, max_relative = 1e-10);
        let mut c3 = c;
        c3.correction.kappa = 0.37;
        assert_relative_eq!(c3.force().unwrap(), 0.37 * f, max_relative = 1e-10);
    }

    #[test]
    fn quadrature_refinement_agrees_at_default_nodes() {
        let c = config();
        let n = DEFAULT_QUADRATURE_NODES;
        let a = overlap_with_rule(&GaussLegendre::new(n), &c.beam, &c.geometry, &c.material, &c.mode, &c.correction);
        let b = overlap_with_rule(&GaussLegendre::new(2 * n), &c.beam, &c.geometry, &c.material, &c.mode, &c.correction);
        assert!((a - b).abs() < 1e-3 * b.abs());
    }

    #[test]
    fn under_resolved_beam_raises_diagnostic() {
        let c = config();
        let beam = GaussianBeam { waist_radius: 0.4e-6, center_offset: (1.3e-6, 0.2e-6), ..c.beam };
        let err = modal_overlap_force(&beam, &c.geometry, &c.material, &c.mode, &c.correction, 6);
        assert!(matches!(err, Err(Error::QuadratureNotConverged { .. })));
    }

    #[test]
    fn modulation_bookkeeping_matches_fourier_projection() {
        // F(t) = F_static (1 + m cos wt); the e^{-iwt} coefficient is (1/T) int F(t) e^{iwt} dt.
        let c = config();
        let mut beam = c.beam;
        beam.modulation_depth = 0.6;
        let f_omega = modal_overlap_force(&beam, &c.geometry, &c.material, &c.mode, &c.correction, 64).unwrap();
        beam.modulation_depth = 1.0;
        let unmodulated = 2.0 * modal_overlap_force(&beam, &c.geometry, &c.material, &c.mode, &c.correction, 64).unwrap();
        let n = 1000;
        let mut proj = Complex64::new(0.0, 0.0);
        for i in 0..n {
            let wt = TWO_PI * i as f64 / n as f64;
            let ft = unmodulated * (1.0 + 0.6 * wt.cos());
            proj += Complex64::from_polar(ft, wt);
        }
        proj /= n as f64;
        assert_relative_eq!(proj.re, f_omega, max_relative = 1e-12);
        assert!(proj.im.abs() < 1e-12 * f_omega.abs());
    }

    #[test]
    fn resonant_and_static_limits() {
        let c = config();
        let f = 1e-12;
        let res = steady_state_amplitude(f, &c.mode, c.mode.omega_m).unwrap();
        assert_relative_eq!(res.u_omega.norm(), f / (c.mode.m_eff * c.mode.omega_m * c.mode.gamma_m), max_relative = 1e-12);
        let stat = steady_state_amplitude(f, &c.mode, 0.0).unwrap();
        assert_relative_eq!(stat.u_omega.re, f / (c.mode.m_eff * c.mode.omega_m.powi(2)), max_relative = 1e-12);
        assert_eq!(stat.u_omega.im, 0.0);
        assert_relative_eq!(res.amplitude, 2.0 * res.u_omega.norm());
        assert_relative_eq!(res.phonon_number, (res.amplitude / (2.0 * c.mode.x_zpf)).powi(2));
    }

    #[test]
    fn response_is_lorentzian_with_fwhm_gamma() {
        let c = config();
        let on = susceptibility(&c.mode, c.mode.omega_m).norm_sqr();
        for sign in [-1.0, 1.0] {
            let off = susceptibility(&c.mode, c.mode.omega_m + sign * 0.5 * c.mode.gamma_m).norm_sqr();
            assert_relative_eq!(off, 0.5 * on, max_relative = 1e-6);
        }
    }

    #[test]
    fn centred_radius_sweep_decreases_and_vanishes_for_wide_beams() {
        let c = config();
        let radii: Vec<f64> = (0..40).map(|i| 0.2e-6 * 1.15f64.powi(i)).collect();
        let s = sweep_beam_radius(&c, &radii).unwrap();
        assert!(s.signal.windows(2).all(|p| p[1] < p[0]));
        assert!(s.signal[radii.len() - 1] < 0.05 * s.signal[0]);
    }

    #[test]
    fn offset_sweep_is_even_and_consistent() {
        let c = config();
        let offsets = linspace(-4e-6, 4e-6, 17);
        let s = sweep_beam_offset(&c, &offsets).unwrap();
        for i in 0..offsets.len() {
            let j = offsets.len() - 1 - i;
            assert_relative_eq!(s.signal[i], s.signal[j], max_relative = 1e-9);
        }
        assert_relative_eq!(s.signal[8], c.resonant_drive().unwrap().amplitude, max_relative = 1e-12);
    }
}
