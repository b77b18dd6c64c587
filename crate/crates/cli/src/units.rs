//! Quantities written as `"<number> <unit>"` strings, converted to SI.
//!
//! Frequencies given in Hz-family units are cyclic and become rad/s.

use std::f64::consts::{PI, TAU};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dim {
    Length,
    Power,
    /// Angular frequency, rad/s internally.
    Frequency,
    Pressure,
    Density,
    Angle,
}

impl Dim {
    fn units(self) -> &'static [(&'static str, f64)] {
        match self {
            Dim::Length => &[("m", 1.0), ("mm", 1e-3), ("um", 1e-6), ("µm", 1e-6), ("μm", 1e-6), ("nm", 1e-9), ("pm", 1e-12)],
            Dim::Power => &[("W", 1.0), ("mW", 1e-3), ("uW", 1e-6), ("µW", 1e-6), ("nW", 1e-9)],
            Dim::Frequency => &[
                ("rad/s", 1.0),
                ("Hz", TAU),
                ("kHz", TAU * 1e3),
                ("MHz", TAU * 1e6),
                ("GHz", TAU * 1e9),
                ("THz", TAU * 1e12),
            ],
            Dim::Pressure => &[("Pa", 1.0), ("kPa", 1e3), ("MPa", 1e6), ("GPa", 1e9)],
            Dim::Density => &[("kg/m^3", 1.0), ("kg/m3", 1.0), ("g/cm^3", 1e3), ("g/cm3", 1e3)],
            Dim::Angle => &[("rad", 1.0), ("deg", PI / 180.0)],
        }
    }

    /// Unit used when writing a resolved value back out.
    pub fn canonical_unit(self) -> &'static str {
        match self {
            Dim::Length => "m",
            Dim::Power => "W",
            Dim::Frequency => "rad/s",
            Dim::Pressure => "Pa",
            Dim::Density => "kg/m^3",
            Dim::Angle => "rad",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dim::Length => "length",
            Dim::Power => "power",
            Dim::Frequency => "frequency",
            Dim::Pressure => "pressure",
            Dim::Density => "density",
            Dim::Angle => "angle",
        }
    }

    fn unit_list(self) -> String {
        self.units().iter().map(|(u, _)| *u).collect::<Vec<_>>().join(", ")
    }
}

/// Parse `"9.5 um"` into SI.
pub fn parse_quantity(text: &str, dim: Dim) -> Result<f64, String> {
    let t = text.trim();
    let Some((num, unit)) = t.split_once(char::is_whitespace) else {
        return Err(format!("expected a {} with a unit ({}), got `{t}`", dim.name(), dim.unit_list()));
    };
    let value: f64 = num.parse().map_err(|_| format!("`{num}` is not a number"))?;
    if !value.is_finite() {
        return Err(format!("`{num}` is not finite"));
    }
    let unit = unit.trim();
    dim.units()
        .iter()
        .find(|(u, _)| *u == unit)
        .map(|(_, scale)| value * scale)
        .ok_or_else(|| format!("unit `{unit}` is not a {} unit (expected one of {})", dim.name(), dim.unit_list()))
}

/// Exact round-trip SI representation.
pub fn format_quantity(value: f64, dim: Dim) -> String {
    format!("{value:e} {}", dim.canonical_unit())
}
