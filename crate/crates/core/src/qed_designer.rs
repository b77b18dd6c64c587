//! Spin-phonon coupling and cooperativity for resonator design scenarios.

use serde::{Deserialize, Serialize};

use crate::constants::TWO_PI;
use crate::elastic_modes::{electron_phonon_rate, fundamental_compression_mode, Loss, Material, MechMode, PlateGeometry};
use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QedScenario {
    pub label: String,
    pub geometry: PlateGeometry,
    pub material: Material,
    pub q: f64,
    /// Effective spin mixing ratio.
    pub eta: f64,
    /// Spin transition linewidth, rad/s.
    pub gamma_s: f64,
}

impl QedScenario {
    pub fn validate(&self) -> Result<()> {
        ensure(self.eta > 0.0 && self.eta <= 1.0, "eta", || format!("must lie in (0, 1], got {}", self.eta))?;
        ensure(self.q > 0.0, "Q", || format!("must be positive, got {}", self.q))?;
        ensure(self.gamma_s > 0.0, "gamma_s", || format!("must be positive, got {}", self.gamma_s))?;
        self.geometry.validate()?;
        self.material.validate()
    }

    pub fn mode(&self) -> Result<MechMode> {
        fundamental_compression_mode(&self.geometry, &self.material, Loss::Q(self.q))
    }

    /// Measured resonator, Q = 1e7, eta = 0.2, 1 MHz spin linewidth.
    pub fn scenario_a() -> Self {
        Self {
            label: "A".into(),
            geometry: PlateGeometry::paper_resonator(),
            material: Material::diamond(),
            q: 1e7,
            eta: 0.2,
            gamma_s: TWO_PI * 1e6,
        }
    }

    /// Shrunk resonator (4, 2, 0.3) um, otherwise as A.
    pub fn scenario_b() -> Self {
        Self {
            label: "B".into(),
            geometry: PlateGeometry::new(4e-6, 2e-6, 0.3e-6),
            ..Self::scenario_a()
        }
    }

    /// Shrunk resonator with Q = 5e7 and a 1 kHz spin linewidth.
    pub fn scenario_c() -> Self {
        Self { label: "C".into(), q: 5e7, gamma_s: TWO_PI * 1e3, ..Self::scenario_b() }
    }

    pub fn defaults() -> Vec<Self> {
        vec![Self::scenario_a(), Self::scenario_b(), Self::scenario_c()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QedResult {
    pub mode: MechMode,
    /// rad/s
    pub g: f64,
    pub cooperativity: f64,
}

/// `g = eta * D * k_m * x_zpf`, rad/s.
pub fn spin_coupling_g(scenario: &QedScenario) -> Result<f64> {
    scenario.validate()?;
    let mode = scenario.mode()?;
    Ok(scenario.eta * electron_phonon_rate(&scenario.material, &mode))
}

/// `C = 4 g^2 / (gamma_m gamma_s)` with `gamma_m = omega_m / Q`.
pub fn cooperativity(scenario: &QedScenario) -> Result<QedResult> {
    scenario.validate()?;
    let mode = scenario.mode()?;
    let g = scenario.eta * electron_phonon_rate(&scenario.material, &mode);
    let c = 4.0 * g * g / (mode.gamma_m * scenario.gamma_s);
    Ok(QedResult { mode, g, cooperativity: c })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanParameter {
    Length,
    Width,
    Thickness,
    Q,
    Eta,
    GammaS,
}

impl ScanParameter {
    fn apply(self, s: &mut QedScenario, v: f64) {
        match self {
            ScanParameter::Length => s.geometry.length = v,
            ScanParameter::Width => s.geometry.width = v,
            ScanParameter::Thickness => s.geometry.thickness = v,
            ScanParameter::Q => s.q = v,
            ScanParameter::Eta => s.eta = v,
            ScanParameter::GammaS => s.gamma_s = v,
        }
    }
}

/// Cooperativity along a one-parameter grid, other fields held fixed.
pub fn scan(template: &QedScenario, parameter: ScanParameter, grid: &[f64]) -> Result<Vec<QedResult>> {
    grid.iter()
        .map(|&v| {
            let mut s = template.clone();
            parameter.apply(&mut s, v);
            cooperativity(&s)
        })
        .collect()
}
