//! Sampled spectra: the common currency between simulation, noise and fitting.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisKind {
    /// Optical detuning from the bare transition, rad/s.
    OpticalDetuning,
    /// Modulation frequency minus mechanical frequency, rad/s.
    MechDetuning,
    /// Intensity-modulation phase, rad.
    Phase,
    /// Beam waist radius, m.
    BeamRadius,
    /// Beam centre offset along x, m.
    BeamOffset,
}

impl AxisKind {
    /// Factor converting internal SI abscissa to the file unit.
    pub fn file_scale(self) -> f64 {
        match self {
            AxisKind::OpticalDetuning | AxisKind::MechDetuning => 1.0 / crate::constants::TWO_PI,
            _ => 1.0,
        }
    }

    pub fn column_header(self) -> &'static str {
        match self {
            AxisKind::OpticalDetuning => "detuning_Hz",
            AxisKind::MechDetuning => "mech_detuning_Hz",
            AxisKind::Phase => "phase_rad",
            AxisKind::BeamRadius => "radius_m",
            AxisKind::BeamOffset => "offset_m",
        }
    }

    pub fn from_column_header(h: &str) -> Option<Self> {
        [
            AxisKind::OpticalDetuning,
            AxisKind::MechDetuning,
            AxisKind::Phase,
            AxisKind::BeamRadius,
            AxisKind::BeamOffset,
        ]
        .into_iter()
        .find(|k| k.column_header() == h)
    }
}

/// Ordered `(abscissa, signal)` samples. Abscissa strictly increasing, signal non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub axis_kind: AxisKind,
    pub abscissa: Vec<f64>,
    pub signal: Vec<f64>,
    /// Parameter snapshot written to the JSON sidecar.
    pub meta: BTreeMap<String, f64>,
}

impl Spectrum {
    pub fn new(axis_kind: AxisKind, abscissa: Vec<f64>, signal: Vec<f64>) -> Result<Self> {
        if abscissa.len() != signal.len() {
            return Err(Error::InvalidSpectrum(format!(
                "{} abscissa values but {} signal values",
                abscissa.len(),
                signal.len()
            )));
        }
        if let Some(i) = abscissa.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidSpectrum(format!(
                "abscissa not strictly increasing at index {}",
                i + 1
            )));
        }
        if let Some(i) = signal.iter().position(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidSpectrum(format!(
                "signal at index {i} is negative or NaN ({})",
                signal[i]
            )));
        }
        Ok(Self { axis_kind, abscissa, signal, meta: BTreeMap::new() })
    }

    pub fn with_meta(mut self, key: &str, value: f64) -> Self {
        self.meta.insert(key.to_string(), value);
        self
    }

    pub fn len(&self) -> usize {
        self.abscissa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abscissa.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.abscissa.iter().copied().zip(self.signal.iter().copied())
    }

    pub fn max_signal(&self) -> f64 {
        self.signal.iter().copied().fold(0.0, f64::max)
    }

    /// Abscissa of the largest sample.
    pub fn argmax(&self) -> Option<f64> {
        self.iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(x, _)| x)
    }
}

/// `n` evenly spaced points from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let step = (stop - start) / (n - 1) as f64;
            (0..n).map(|i| start + step * i as f64).collect()
        }
    }
}
