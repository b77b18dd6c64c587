//! Plate acoustics and the fundamental compression mode of a rectangular
//! Lamb wave resonator.
//!
//! The mode is treated as one-dimensional along the length `L` with shape
//! `phi(x) = sin(pi x / L)` on `[-L/2, L/2]`, normalised to unit amplitude at
//! the free edges. With that normalisation the modal amplitude is the edge
//! displacement and the effective mass is `rho L W d / 2`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::constants::{HBAR, TWO_PI};
use crate::error::{ensure, Result};
use crate::quadrature::GaussLegendre;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    /// Pa
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    /// kg/m^3
    pub mass_density: f64,
    /// Refractive index at the drive wavelength.
    pub optical_index: f64,
    /// Deformation potential, rad/s per unit strain.
    pub deformation_potential: f64,
}

impl Material {
    /// Diamond, with the 1550 nm index and SiV deformation potential `D/2pi = 1e15 Hz`.
    pub fn diamond() -> Self {
        Self {
            youngs_modulus: 1200e9,
            poisson_ratio: 0.07,
            mass_density: 3500.0,
            optical_index: 2.4,
            deformation_potential: TWO_PI * 1e15,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.youngs_modulus > 0.0, "youngs_modulus", || {
            format!("must be positive, got {}", self.youngs_modulus)
        })?;
        ensure(
            (0.0..0.5).contains(&self.poisson_ratio),
            "poisson_ratio",
            || format!("must lie in [0, 0.5), got {}", self.poisson_ratio),
        )?;
        ensure(self.mass_density > 0.0, "mass_density", || {
            format!("must be positive, got {}", self.mass_density)
        })?;
        ensure(self.optical_index >= 1.0, "optical_index", || {
            format!("must be >= 1, got {}", self.optical_index)
        })
    }
}

impl Default for Material {
    fn default() -> Self {
        Self::diamond()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateGeometry {
    /// Along the compression axis, m.
    pub length: f64,
    pub width: f64,
    pub thickness: f64,
}

impl PlateGeometry {
    pub fn new(length: f64, width: f64, thickness: f64) -> Self {
        Self { length, width, thickness }
    }

    /// The 9.5 x 4.5 x 1.5 um resonator.
    pub fn paper_resonator() -> Self {
        Self::new(9.5e-6, 4.5e-6, 1.5e-6)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("length_L", self.length), ("width_W", self.width), ("thickness_d", self.thickness)] {
            ensure(v > 0.0 && v.is_finite(), name, || format!("must be positive, got {v}"))?;
        }
        if !(self.thickness < self.width && self.width < self.length) {
            log::warn!(
                "plate {:?} is outside the thin-plate regime d < W < L; 1D compression mode is a rough approximation",
                self
            );
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.thickness
    }
}

/// Mechanical loss given either as a quality factor or as an energy-decay linewidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Q(f64),
    /// rad/s
    Gamma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveSpeeds {
    /// Plane-stress longitudinal speed, m/s.
    pub longitudinal: f64,
    /// Shear speed, m/s.
    pub transverse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechMode {
    pub f_m: f64,
    pub omega_m: f64,
    pub k_m: f64,
    pub gamma_m: f64,
    pub q: f64,
    pub m_eff: f64,
    pub x_zpf: f64,
    /// Plate length the mode shape is defined over.
    pub length: f64,
}

impl MechMode {
    /// `phi(x)` on `[-L/2, L/2]`; zero outside.
    pub fn shape(&self, x: f64) -> f64 {
        if x.abs() > 0.5 * self.length {
            0.0
        } else {
            (PI * x / self.length).sin()
        }
    }

    /// `d phi / dx`.
    pub fn shape_slope(&self, x: f64) -> f64 {
        if x.abs() > 0.5 * self.length {
            0.0
        } else {
            self.k_m * (self.k_m * x).cos()
        }
    }

    /// Same mode with a different loss.
    pub fn with_loss(mut self, loss: Loss) -> Result<Self> {
        let (q, gamma) = resolve_loss(loss, self.omega_m)?;
        self.q = q;
        self.gamma_m = gamma;
        Ok(self)
    }
}

pub fn plate_wave_speeds(material: &Material) -> Result<WaveSpeeds> {
    material.validate()?;
    let e = material.youngs_modulus;
    let nu = material.poisson_ratio;
    let rho = material.mass_density;
    Ok(WaveSpeeds {
        longitudinal: (e / (rho * (1.0 - nu * nu))).sqrt(),
        transverse: (e / (2.0 * rho * (1.0 + nu))).sqrt(),
    })
}

fn resolve_loss(loss: Loss, omega_m: f64) -> Result<(f64, f64)> {
    match loss {
        Loss::Q(q) => {
            ensure(q > 0.0 && q.is_finite(), "Q", || format!("must be positive, got {q}"))?;
            Ok((q, omega_m / q))
        }
        Loss::Gamma(g) => {
            ensure(g > 0.0 && g.is_finite(), "gamma_m", || format!("must be positive, got {g}"))?;
            Ok((omega_m / g, g))
        }
    }
}

/// Fundamental (half-wavelength) compression mode along the plate length.
pub fn fundamental_compression_mode(
    geom: &PlateGeometry,
    material: &Material,
    loss: Loss,
) -> Result<MechMode> {
    geom.validate()?;
    let speeds = plate_wave_speeds(material)?;
    let l = geom.length;
    let f_m = speeds.longitudinal / (2.0 * l);
    let omega_m = TWO_PI * f_m;
    let k_m = PI / l;
    let (q, gamma_m) = resolve_loss(loss, omega_m)?;

    let rule = GaussLegendre::new(32);
    let shape_sq = rule.integrate(-0.5 * l, 0.5 * l, |x| (k_m * x).sin().powi(2)) / l;
    let m_eff = material.mass_density * geom.volume() * shape_sq;
    let x_zpf = (HBAR / (2.0 * m_eff * omega_m)).sqrt();

    Ok(MechMode { f_m, omega_m, k_m, gamma_m, q, m_eff, x_zpf, length: l })
}

/// Single-phonon electron-phonon coupling `G = D k_m x_zpf`, rad/s.
pub fn electron_phonon_rate(material: &Material, mode: &MechMode) -> f64 {
    material.deformation_potential * mode.k_m * mode.x_zpf
}
