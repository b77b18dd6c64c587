//! Run configuration: TOML with unit-annotated quantities, validated into SI.
//!
//! Parameter sections accept per-field overrides of the defaults. `[geometry]`
//! and `[[scenario]]` describe whole objects, so every field is required once
//! they appear.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use lwr_core::bloch_bands::{EigenSolver, UnitCell, MIN_RESOLUTION};
use lwr_core::elastic_modes::{fundamental_compression_mode, Loss, Material, MechMode, PlateGeometry};
use lwr_core::gradient_drive::{DriveConfig, GaussianBeam, OpticalCorrection};
use lwr_core::qed_designer::QedScenario;
use lwr_core::siv_spectroscopy::Emitter;
use toml::{Table, Value};

use crate::units::{format_quantity, parse_quantity, Dim};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// Dotted key path, e.g. `geometry.length_L`.
    pub key: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "config error at line {l}: `{}`: {}", self.key, self.message),
            None => write!(f, "config error: `{}`: {}", self.key, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

type CResult<T> = Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    pub wavelength: f64,
    pub power: f64,
    pub waist_radius: f64,
    pub offset_x: f64,
    pub offset_y: f64,
    pub modulation_depth: f64,
    pub modulation_phase: f64,
    /// Modulation frequency minus mechanical frequency, rad/s.
    pub modulation_detuning: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandsConfig {
    pub period: f64,
    pub bridge_width: f64,
    pub bridge_length: f64,
    pub resolution: usize,
    pub samples_per_segment: usize,
    pub n_bands: usize,
    pub solver: EigenSolver,
    /// Gap search window, rad/s.
    pub search_min: f64,
    pub search_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PleSolver {
    Model,
    Obe,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PleConfig {
    pub amplitude: f64,
    pub half_span: f64,
    pub points: usize,
    pub solver: PleSolver,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepMechConfig {
    /// Probe detuning relative to the red sideband at `-omega_m`, rad/s.
    pub probe_offset: f64,
    pub half_span: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfereConfig {
    /// Drive power used for the interferometer, W.
    pub drive_power: f64,
    pub carrier_detuning: f64,
    pub carrier_rabi: f64,
    pub sideband_rabi: f64,
    pub relative_phase: f64,
    pub phase_points: usize,
    pub half_span: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveSweepConfig {
    pub radius_min: f64,
    pub radius_max: f64,
    pub radius_points: usize,
    pub offset_max: f64,
    pub offset_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    None,
    Gaussian,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub model: NoiseKind,
    /// Gaussian sigma as a fraction of the spectrum maximum.
    pub sigma_rel: f64,
    /// Counts at the spectrum maximum for Poisson noise.
    pub peak_counts: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitModel {
    Lorentzian,
    Sinusoid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub model: FitModel,
    pub n_peaks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub material: Material,
    pub geometry: PlateGeometry,
    pub loss: Loss,
    pub beam: BeamConfig,
    pub correction: OpticalCorrection,
    pub emitter: Emitter,
    pub bands: BandsConfig,
    pub ple: PleConfig,
    pub sweep_mech: SweepMechConfig,
    pub interfere: InterfereConfig,
    pub drive: DriveSweepConfig,
    pub noise: NoiseConfig,
    pub fit: FitConfig,
    pub scenarios: Vec<QedScenario>,
}

const SECTIONS: &[&str] = &[
    "material", "geometry", "mechanics", "beam", "correction", "emitter", "bands", "ple", "sweep_mech", "interfere",
    "drive", "noise", "fit", "scenario",
];

impl RunConfig {
    pub fn mode(&self) -> lwr_core::Result<MechMode> {
        fundamental_compression_mode(&self.geometry, &self.material, self.loss)
    }

    pub fn gaussian_beam(&self, mode: &MechMode) -> GaussianBeam {
        GaussianBeam {
            wavelength: self.beam.wavelength,
            power: self.beam.power,
            waist_radius: self.beam.waist_radius,
            center_offset: (self.beam.offset_x, self.beam.offset_y),
            modulation_depth: self.beam.modulation_depth,
            modulation_freq: mode.omega_m + self.beam.modulation_detuning,
            modulation_phase: self.beam.modulation_phase,
        }
    }

    pub fn drive_config(&self) -> lwr_core::Result<DriveConfig> {
        let mode = self.mode()?;
        Ok(DriveConfig {
            beam: self.gaussian_beam(&mode),
            geometry: self.geometry,
            material: self.material,
            mode,
            correction: self.correction,
        })
    }

    pub fn unit_cell(&self) -> UnitCell {
        UnitCell {
            period: self.bands.period,
            bridge_width: self.bands.bridge_width,
            bridge_length: self.bands.bridge_length,
            thickness: self.geometry.thickness,
            material: self.material,
        }
    }

    /// Resolved configuration in canonical SI units; loading it yields `self` exactly.
    pub fn to_table(&self) -> Table {
        let q = |v: f64, d: Dim| Value::String(format_quantity(v, d));
        let f = Value::Float;
        let n = |v: usize| Value::Integer(v as i64);
        let s = |v: &str| Value::String(v.to_string());
        let table = |entries: Vec<(&str, Value)>| -> Value {
            Value::Table(entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
        };
        let m = &self.material;
        let mut t = Table::new();
        t.insert(
            "material".into(),
            table(vec![
                ("youngs_modulus", q(m.youngs_modulus, Dim::Pressure)),
                ("poisson_ratio", f(m.poisson_ratio)),
                ("mass_density", q(m.mass_density, Dim::Density)),
                ("optical_index", f(m.optical_index)),
                ("deformation_potential", q(m.deformation_potential, Dim::Frequency)),
            ]),
        );
        t.insert(
            "geometry".into(),
            table(vec![
                ("length_L", q(self.geometry.length, Dim::Length)),
                ("width_W", q(self.geometry.width, Dim::Length)),
                ("thickness_d", q(self.geometry.thickness, Dim::Length)),
            ]),
        );
        let loss = match self.loss {
            Loss::Q(v) => ("Q", f(v)),
            Loss::Gamma(v) => ("gamma_m", q(v, Dim::Frequency)),
        };
        t.insert("mechanics".into(), table(vec![loss]));
        let b = &self.beam;
        t.insert(
            "beam".into(),
            table(vec![
                ("wavelength", q(b.wavelength, Dim::Length)),
                ("power", q(b.power, Dim::Power)),
                ("waist_radius", q(b.waist_radius, Dim::Length)),
                ("offset_x", q(b.offset_x, Dim::Length)),
                ("offset_y", q(b.offset_y, Dim::Length)),
                ("modulation_depth", f(b.modulation_depth)),
                ("modulation_phase", q(b.modulation_phase, Dim::Angle)),
                ("modulation_detuning", q(b.modulation_detuning, Dim::Frequency)),
            ]),
        );
        t.insert("correction".into(), table(vec![("kappa", f(self.correction.kappa))]));
        let e = &self.emitter;
        t.insert(
            "emitter".into(),
            table(vec![
                ("natural_linewidth", q(e.natural_linewidth, Dim::Frequency)),
                ("carrier_rabi", q(e.carrier_rabi, Dim::Frequency)),
                ("position_x", q(e.position.0, Dim::Length)),
                ("position_y", q(e.position.1, Dim::Length)),
                ("extra_broadening", q(e.extra_broadening, Dim::Frequency)),
            ]),
        );
        let bd = &self.bands;
        let solver = match bd.solver {
            EigenSolver::Auto => "auto",
            EigenSolver::Dense => "dense",
            EigenSolver::ShiftInvert => "shift_invert",
        };
        t.insert(
            "bands".into(),
            table(vec![
                ("period_a", q(bd.period, Dim::Length)),
                ("bridge_width", q(bd.bridge_width, Dim::Length)),
                ("bridge_length", q(bd.bridge_length, Dim::Length)),
                ("resolution", n(bd.resolution)),
                ("samples_per_segment", n(bd.samples_per_segment)),
                ("n_bands", n(bd.n_bands)),
                ("solver", s(solver)),
                ("search_min", q(bd.search_min, Dim::Frequency)),
                ("search_max", q(bd.search_max, Dim::Frequency)),
            ]),
        );
        let p = &self.ple;
        t.insert(
            "ple".into(),
            table(vec![
                ("amplitude", q(p.amplitude, Dim::Length)),
                ("half_span", q(p.half_span, Dim::Frequency)),
                ("points", n(p.points)),
                ("solver", s(if p.solver == PleSolver::Obe { "obe" } else { "model" })),
            ]),
        );
        let sm = &self.sweep_mech;
        t.insert(
            "sweep_mech".into(),
            table(vec![
                ("probe_offset", q(sm.probe_offset, Dim::Frequency)),
                ("half_span", q(sm.half_span, Dim::Frequency)),
                ("points", n(sm.points)),
            ]),
        );
        let i = &self.interfere;
        t.insert(
            "interfere".into(),
            table(vec![
                ("drive_power", q(i.drive_power, Dim::Power)),
                ("carrier_detuning", q(i.carrier_detuning, Dim::Frequency)),
                ("carrier_rabi", q(i.carrier_rabi, Dim::Frequency)),
                ("sideband_rabi", q(i.sideband_rabi, Dim::Frequency)),
                ("relative_phase", q(i.relative_phase, Dim::Angle)),
                ("phase_points", n(i.phase_points)),
                ("half_span", q(i.half_span, Dim::Frequency)),
                ("points", n(i.points)),
            ]),
        );
        let d = &self.drive;
        t.insert(
            "drive".into(),
            table(vec![
                ("radius_min", q(d.radius_min, Dim::Length)),
                ("radius_max", q(d.radius_max, Dim::Length)),
                ("radius_points", n(d.radius_points)),
                ("offset_max", q(d.offset_max, Dim::Length)),
                ("offset_points", n(d.offset_points)),
            ]),
        );
        let nz = &self.noise;
        let model = match nz.model {
            NoiseKind::None => "none",
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Poisson => "poisson",
        };
        t.insert(
            "noise".into(),
            table(vec![("model", s(model)), ("sigma_rel", f(nz.sigma_rel)), ("peak_counts", f(nz.peak_counts))]),
        );
        let model = if self.fit.model == FitModel::Sinusoid { "sinusoid" } else { "lorentzian" };
        t.insert("fit".into(), table(vec![("model", s(model)), ("n_peaks", n(self.fit.n_peaks))]));
        let scenarios = self
            .scenarios
            .iter()
            .map(|sc| {
                table(vec![
                    ("label", s(&sc.label)),
                    ("length_L", q(sc.geometry.length, Dim::Length)),
                    ("width_W", q(sc.geometry.width, Dim::Length)),
                    ("thickness_d", q(sc.geometry.thickness, Dim::Length)),
                    ("Q", f(sc.q)),
                    ("eta", f(sc.eta)),
                    ("gamma_s", q(sc.gamma_s, Dim::Frequency)),
                ])
            })
            .collect();
        t.insert("scenario".into(), Value::Array(scenarios));
        t
    }
}

/// Line lookup in the original text, for error locations.
#[derive(Default)]
struct Source {
    lines: Vec<String>,
}

impl Source {
    /// 1-based lines of headers and keys: `(section, occurrence) -> line`.
    fn scan(&self, section: &str, index: usize, key: Option<&str>) -> Option<usize> {
        let mut current: Option<(String, usize)> = None;
        let mut seen: std::collections::HashMap<String, usize> = Default::default();
        for (i, raw) in self.lines.iter().enumerate() {
            let t = raw.trim();
            if t.starts_with('[') {
                let name = t.trim_start_matches('[').split(']').next().unwrap_or("").trim().to_string();
                let count = seen.entry(name.clone()).or_insert(0);
                current = Some((name.clone(), *count));
                *count += 1;
                if key.is_none() && name == section && current.as_ref().is_some_and(|c| c.1 == index) {
                    return Some(i + 1);
                }
                continue;
            }
            if let (Some(k), Some((name, occ))) = (key, &current) {
                if name == section && *occ == index {
                    if let Some(rest) = t.strip_prefix(k) {
                        if rest.trim_start().starts_with('=') {
                            return Some(i + 1);
                        }
                    }
                }
            }
        }
        None
    }

    fn line_of(&self, section: &str, index: usize, key: &str) -> Option<usize> {
        self.scan(section, index, Some(key)).or_else(|| self.scan(section, index, None))
    }
}

struct Section<'a> {
    src: &'a Source,
    name: &'static str,
    index: usize,
    label: String,
    table: Option<&'a Table>,
    used: BTreeSet<&'static str>,
}

impl<'a> Section<'a> {
    fn new(src: &'a Source, root: &'a Table, name: &'static str) -> CResult<Self> {
        let table = match root.get(name) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                return Err(ConfigError {
                    key: name.into(),
                    line: src.scan(name, 0, None),
                    message: "must be a table".into(),
                })
            }
        };
        Ok(Self { src, name, index: 0, label: name.to_string(), table, used: BTreeSet::new() })
    }

    fn err(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            key: format!("{}.{key}", self.label),
            line: self.src.line_of(self.name, self.index, key),
            message: message.into(),
        }
    }

    fn present(&self) -> bool {
        self.table.is_some()
    }

    fn raw(&mut self, key: &'static str) -> Option<&'a Value> {
        self.used.insert(key);
        self.table.and_then(|t| t.get(key))
    }

    fn parse_q(&self, key: &str, v: &Value, dim: Dim) -> CResult<f64> {
        match v {
            Value::String(s) => parse_quantity(s, dim).map_err(|m| self.err(key, m)),
            Value::Integer(_) | Value::Float(_) => Err(self.err(
                key,
                format!("missing unit: write the {} as a quoted string such as \"{} {}\"", dim.name(), v, dim.canonical_unit()),
            )),
            _ => Err(self.err(key, format!("expected a {} string with a unit", dim.name()))),
        }
    }

    fn opt_quantity(&mut self, key: &'static str, dim: Dim) -> CResult<Option<f64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => self.parse_q(key, v, dim).map(Some),
        }
    }

    fn quantity(&mut self, key: &'static str, dim: Dim, default: &str) -> CResult<f64> {
        match self.opt_quantity(key, dim)? {
            Some(v) => Ok(v),
            None => parse_quantity(default, dim).map_err(|m| self.err(key, m)),
        }
    }

    fn required_quantity(&mut self, key: &'static str, dim: Dim) -> CResult<f64> {
        self.opt_quantity(key, dim)?.ok_or_else(|| self.err(key, "required key is missing"))
    }

    fn opt_number(&mut self, key: &'static str) -> CResult<Option<f64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Float(x)) => Ok(Some(*x)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(Value::String(s)) => Err(self.err(key, format!("dimensionless value expected, got string `{s}`"))),
            Some(_) => Err(self.err(key, "expected a number")),
        }
    }

    fn number(&mut self, key: &'static str, default: f64) -> CResult<f64> {
        Ok(self.opt_number(key)?.unwrap_or(default))
    }

    fn required_number(&mut self, key: &'static str) -> CResult<f64> {
        self.opt_number(key)?.ok_or_else(|| self.err(key, "required key is missing"))
    }

    fn count(&mut self, key: &'static str, default: usize) -> CResult<usize> {
        match self.raw(key) {
            None => Ok(default),
            Some(Value::Integer(i)) if *i >= 0 => Ok(*i as usize),
            Some(_) => Err(self.err(key, "expected a non-negative integer")),
        }
    }

    fn choice(&mut self, key: &'static str, options: &[&'static str], default: &'static str) -> CResult<&'static str> {
        match self.raw(key) {
            None => Ok(default),
            Some(Value::String(s)) => options
                .iter()
                .find(|o| **o == s.as_str())
                .copied()
                .ok_or_else(|| self.err(key, format!("`{s}` is not one of {}", options.join(", ")))),
            Some(_) => Err(self.err(key, format!("expected one of {}", options.join(", ")))),
        }
    }

    fn text(&mut self, key: &'static str) -> CResult<String> {
        match self.raw(key) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(self.err(key, "expected a string")),
            None => Err(self.err(key, "required key is missing")),
        }
    }

    /// Map a core validation failure onto this section's keys.
    fn check(&self, r: lwr_core::Result<()>) -> CResult<()> {
        r.map_err(|e| match e {
            lwr_core::Error::InvalidParameter { name, reason } => self.err(name, reason),
            other => self.err("", other.to_string()),
        })
    }

    fn finish(self) -> CResult<()> {
        if let Some(t) = self.table {
            if let Some(k) = t.keys().find(|k| !self.used.contains(k.as_str())) {
                let mut known: Vec<&str> = self.used.iter().copied().collect();
                known.sort_unstable();
                return Err(self.err(k, format!("unknown key (known keys: {})", known.join(", "))));
            }
        }
        Ok(())
    }
}

/// Load from a TOML config or from a `manifest.json` written by a previous run.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        key: path.display().to_string(),
        line: None,
        message: format!("cannot read config: {e}"),
    })?;
    if path.extension().is_some_and(|e| e == "json") {
        from_manifest_json(&text)
    } else {
        parse_config(&text)
    }
}

pub fn from_manifest_json(text: &str) -> Result<RunConfig, ConfigError> {
    let err = |m: String| ConfigError { key: "config".into(), line: None, message: m };
    let mut v: serde_json::Value = serde_json::from_str(text).map_err(|e| err(format!("invalid JSON: {e}")))?;
    let cfg = v.get_mut("config").map(serde_json::Value::take).ok_or_else(|| err("manifest has no `config` object".into()))?;
    let table: Table = serde_json::from_value(cfg).map_err(|e| err(format!("config object is not a table: {e}")))?;
    from_table(&table, &Source::default())
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let src = Source { lines: text.lines().map(str::to_string).collect() };
    let root: Table = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1);
        let key = line
            .and_then(|l| src.lines.get(l - 1))
            .and_then(|l| l.split('=').next())
            .map(|k| k.trim().to_string())
            .unwrap_or_default();
        ConfigError { key, line, message: e.message().to_string() }
    })?;
    from_table(&root, &src)
}

fn from_table(root: &Table, src: &Source) -> CResult<RunConfig> {
    if let Some(k) = root.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
        return Err(ConfigError {
            key: k.clone(),
            line: src.scan(k, 0, None).or_else(|| src.line_of("", 0, k)),
            message: format!("unknown section (known sections: {})", SECTIONS.join(", ")),
        });
    }

    // measured diamond film
    let mut s = Section::new(src, root, "material")?;
    let material = Material {
        youngs_modulus: s.quantity("youngs_modulus", Dim::Pressure, "1200 GPa")?,
        poisson_ratio: s.number("poisson_ratio", 0.07)?,
        mass_density: s.quantity("mass_density", Dim::Density, "3500 kg/m^3")?,
        optical_index: s.number("optical_index", 2.4)?,
        deformation_potential: s.quantity("deformation_potential", Dim::Frequency, "1e15 Hz")?,
    };
    s.check(material.validate())?;
    s.finish()?;

    // fabricated resonator, whole record
    let mut s = Section::new(src, root, "geometry")?;
    let geometry = if s.present() {
        PlateGeometry {
            length: s.required_quantity("length_L", Dim::Length)?,
            width: s.required_quantity("width_W", Dim::Length)?,
            thickness: s.required_quantity("thickness_d", Dim::Length)?,
        }
    } else {
        PlateGeometry {
            length: parse_quantity("9.5 um", Dim::Length).unwrap(),
            width: parse_quantity("4.5 um", Dim::Length).unwrap(),
            thickness: parse_quantity("1.5 um", Dim::Length).unwrap(),
        }
    };
    s.check(geometry.validate())?;
    s.finish()?;

    // measured mechanical linewidth
    let mut s = Section::new(src, root, "mechanics")?;
    let q = s.opt_number("Q")?;
    let gamma = s.opt_quantity("gamma_m", Dim::Frequency)?;
    let loss = match (q, gamma) {
        (Some(_), Some(_)) => return Err(s.err("Q", "give either `Q` or `gamma_m`, not both")),
        (Some(q), None) if q > 0.0 => Loss::Q(q),
        (Some(_), None) => return Err(s.err("Q", "must be positive")),
        (None, Some(g)) if g > 0.0 => Loss::Gamma(g),
        (None, Some(_)) => return Err(s.err("gamma_m", "must be positive")),
        (None, None) => Loss::Gamma(parse_quantity("83 Hz", Dim::Frequency).unwrap()),
    };
    s.finish()?;

    // intensity-modulated telecom drive
    let mut s = Section::new(src, root, "beam")?;
    let beam = BeamConfig {
        wavelength: s.quantity("wavelength", Dim::Length, "1550 nm")?,
        power: s.quantity("power", Dim::Power, "2 mW")?,
        waist_radius: s.quantity("waist_radius", Dim::Length, "2.25 um")?,
        offset_x: s.quantity("offset_x", Dim::Length, "0 um")?,
        offset_y: s.quantity("offset_y", Dim::Length, "0 um")?,
        modulation_depth: s.number("modulation_depth", 1.0)?,
        modulation_phase: s.quantity("modulation_phase", Dim::Angle, "0 rad")?,
        modulation_detuning: s.quantity("modulation_detuning", Dim::Frequency, "0 Hz")?,
    };
    let probe = GaussianBeam {
        wavelength: beam.wavelength,
        power: beam.power,
        waist_radius: beam.waist_radius,
        center_offset: (beam.offset_x, beam.offset_y),
        modulation_depth: beam.modulation_depth,
        modulation_freq: 0.0,
        modulation_phase: beam.modulation_phase,
    };
    s.check(probe.validate())?;
    s.finish()?;

    let mut s = Section::new(src, root, "correction")?;
    let correction = OpticalCorrection { kappa: s.number("kappa", 1.0)? };
    s.check(correction.validate())?;
    s.finish()?;

    // SiV C line: 100 MHz radiative width, 310 MHz power-broadened
    let mut s = Section::new(src, root, "emitter")?;
    let natural = s.quantity("natural_linewidth", Dim::Frequency, "100 MHz")?;
    let extra = s.quantity("extra_broadening", Dim::Frequency, "0 Hz")?;
    let rabi = s.opt_quantity("carrier_rabi", Dim::Frequency)?;
    let broadened = s.opt_quantity("linewidth", Dim::Frequency)?;
    let carrier_rabi = match (rabi, broadened) {
        (Some(_), Some(_)) => return Err(s.err("linewidth", "give either `carrier_rabi` or `linewidth`, not both")),
        (Some(r), None) => r,
        (None, lw) => {
            let lw = lw.unwrap_or_else(|| parse_quantity("310 MHz", Dim::Frequency).unwrap());
            let ratio = (lw - extra) / natural;
            if !(ratio >= 1.0) {
                return Err(s.err("linewidth", "must be at least natural_linewidth + extra_broadening"));
            }
            natural * ((ratio * ratio - 1.0) / 2.0).sqrt()
        }
    };
    let emitter = Emitter {
        natural_linewidth: natural,
        carrier_rabi,
        position: (s.quantity("position_x", Dim::Length, "0 um")?, s.quantity("position_y", Dim::Length, "0 um")?),
        extra_broadening: extra,
    };
    s.check(emitter.validate())?;
    s.finish()?;

    // fabricated phononic shield
    let mut s = Section::new(src, root, "bands")?;
    let solver = match s.choice("solver", &["auto", "dense", "shift_invert"], "auto")? {
        "dense" => EigenSolver::Dense,
        "shift_invert" => EigenSolver::ShiftInvert,
        _ => EigenSolver::Auto,
    };
    let bands = BandsConfig {
        period: s.quantity("period_a", Dim::Length, "8 um")?,
        bridge_width: s.quantity("bridge_width", Dim::Length, "1.25 um")?,
        bridge_length: s.quantity("bridge_length", Dim::Length, "1.25 um")?,
        resolution: s.count("resolution", 32)?,
        samples_per_segment: s.count("samples_per_segment", 16)?,
        n_bands: s.count("n_bands", 12)?,
        solver,
        search_min: s.quantity("search_min", Dim::Frequency, "0.1 GHz")?,
        search_max: s.quantity("search_max", Dim::Frequency, "3 GHz")?,
    };
    if bands.resolution < MIN_RESOLUTION {
        return Err(s.err("resolution", format!("must be at least {MIN_RESOLUTION}")));
    }
    if bands.n_bands == 0 {
        return Err(s.err("n_bands", "must be at least 1"));
    }
    let cell = UnitCell {
        period: bands.period,
        bridge_width: bands.bridge_width,
        bridge_length: bands.bridge_length,
        thickness: geometry.thickness,
        material,
    };
    s.check(cell.validate())?;
    if bands.samples_per_segment == 0 {
        return Err(s.err("samples_per_segment", "must be at least 1"));
    }
    if !(bands.search_max > bands.search_min) {
        return Err(s.err("search_max", "must exceed search_min"));
    }
    s.finish()?;

    let mut s = Section::new(src, root, "ple")?;
    let ple = PleConfig {
        amplitude: s.quantity("amplitude", Dim::Length, "3 pm")?,
        half_span: s.quantity("half_span", Dim::Frequency, "3.5 GHz")?,
        points: s.count("points", 1401)?,
        solver: if s.choice("solver", &["model", "obe"], "model")? == "obe" { PleSolver::Obe } else { PleSolver::Model },
    };
    check_grid(&s, ple.half_span, ple.points)?;
    if ple.amplitude < 0.0 {
        return Err(s.err("amplitude", "must be non-negative"));
    }
    s.finish()?;

    let mut s = Section::new(src, root, "sweep_mech")?;
    let sweep_mech = SweepMechConfig {
        probe_offset: s.quantity("probe_offset", Dim::Frequency, "0 Hz")?,
        half_span: s.quantity("half_span", Dim::Frequency, "500 Hz")?,
        points: s.count("points", 241)?,
    };
    check_grid(&s, sweep_mech.half_span, sweep_mech.points)?;
    s.finish()?;

    let mut s = Section::new(src, root, "interfere")?;
    let interfere = InterfereConfig {
        drive_power: s.quantity("drive_power", Dim::Power, "5 uW")?,
        carrier_detuning: s.quantity("carrier_detuning", Dim::Frequency, "0 Hz")?,
        carrier_rabi: s.quantity("carrier_rabi", Dim::Frequency, "10 MHz")?,
        sideband_rabi: s.quantity("sideband_rabi", Dim::Frequency, "20 MHz")?,
        relative_phase: s.quantity("relative_phase", Dim::Angle, "0 rad")?,
        phase_points: s.count("phase_points", 16)?,
        half_span: s.quantity("half_span", Dim::Frequency, "680 Hz")?,
        points: s.count("points", 161)?,
    };
    check_grid(&s, interfere.half_span, interfere.points)?;
    if interfere.phase_points < 8 {
        return Err(s.err("phase_points", "need at least 8 phase samples"));
    }
    if interfere.drive_power < 0.0 {
        return Err(s.err("drive_power", "must be non-negative"));
    }
    s.finish()?;

    let mut s = Section::new(src, root, "drive")?;
    let drive = DriveSweepConfig {
        radius_min: s.quantity("radius_min", Dim::Length, "0.5 um")?,
        radius_max: s.quantity("radius_max", Dim::Length, "20 um")?,
        radius_points: s.count("radius_points", 60)?,
        offset_max: s.quantity("offset_max", Dim::Length, "9.5 um")?,
        offset_points: s.count("offset_points", 61)?,
    };
    if !(drive.radius_min > 0.0 && drive.radius_max > drive.radius_min) {
        return Err(s.err("radius_max", "need 0 < radius_min < radius_max"));
    }
    if drive.radius_points < 2 || drive.offset_points < 2 {
        return Err(s.err("radius_points", "sweeps need at least 2 points"));
    }
    if !(drive.offset_max > 0.0) {
        return Err(s.err("offset_max", "must be positive"));
    }
    s.finish()?;

    let mut s = Section::new(src, root, "noise")?;
    let model = match s.choice("model", &["none", "gaussian", "poisson"], "none")? {
        "gaussian" => NoiseKind::Gaussian,
        "poisson" => NoiseKind::Poisson,
        _ => NoiseKind::None,
    };
    let noise = NoiseConfig { model, sigma_rel: s.number("sigma_rel", 0.02)?, peak_counts: s.number("peak_counts", 1e4)? };
    if !(noise.sigma_rel >= 0.0) {
        return Err(s.err("sigma_rel", "must be non-negative"));
    }
    if !(noise.peak_counts > 0.0) {
        return Err(s.err("peak_counts", "must be positive"));
    }
    s.finish()?;

    let mut s = Section::new(src, root, "fit")?;
    let fit = FitConfig {
        model: if s.choice("model", &["lorentzian", "sinusoid"], "lorentzian")? == "sinusoid" {
            FitModel::Sinusoid
        } else {
            FitModel::Lorentzian
        },
        n_peaks: s.count("n_peaks", 1)?,
    };
    if fit.n_peaks == 0 {
        return Err(s.err("n_peaks", "must be at least 1"));
    }
    s.finish()?;

    let scenarios = scenarios(src, root, &material)?;

    Ok(RunConfig {
        material,
        geometry,
        loss,
        beam,
        correction,
        emitter,
        bands,
        ple,
        sweep_mech,
        interfere,
        drive,
        noise,
        fit,
        scenarios,
    })
}

fn check_grid(s: &Section, half_span: f64, points: usize) -> CResult<()> {
    if !(half_span > 0.0) {
        return Err(s.err("half_span", "must be positive"));
    }
    if points < 2 {
        return Err(s.err("points", "need at least 2 points"));
    }
    Ok(())
}

const DEFAULT_SCENARIOS: &str = r#"
[[scenario]]
label = "A"
length_L = "9.5 um"
width_W = "4.5 um"
thickness_d = "1.5 um"
Q = 1e7
eta = 0.2
gamma_s = "1 MHz"

[[scenario]]
label = "B"
length_L = "4 um"
width_W = "2 um"
thickness_d = "0.3 um"
Q = 1e7
eta = 0.2
gamma_s = "1 MHz"

[[scenario]]
label = "C"
length_L = "4 um"
width_W = "2 um"
thickness_d = "0.3 um"
Q = 5e7
eta = 0.2
gamma_s = "1 kHz"
"#;

// design scenarios A, B, C; a [[scenario]] list replaces them all
fn scenarios(src: &Source, root: &Table, material: &Material) -> CResult<Vec<QedScenario>> {
    let Some(v) = root.get("scenario") else {
        let defaults: Table = toml::from_str(DEFAULT_SCENARIOS).expect("built-in scenarios parse");
        return scenarios(&Source::default(), &defaults, material);
    };
    let Value::Array(items) = v else {
        return Err(ConfigError {
            key: "scenario".into(),
            line: src.scan("scenario", 0, None),
            message: "must be an array of tables, written [[scenario]]".into(),
        });
    };
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let Value::Table(t) = item else {
                return Err(ConfigError {
                    key: format!("scenario[{i}]"),
                    line: src.scan("scenario", i, None),
                    message: "must be a table".into(),
                });
            };
            let mut s = Section { src, name: "scenario", index: i, label: format!("scenario[{i}]"), table: Some(t), used: BTreeSet::new() };
            let sc = QedScenario {
                label: s.text("label")?,
                geometry: PlateGeometry {
                    length: s.required_quantity("length_L", Dim::Length)?,
                    width: s.required_quantity("width_W", Dim::Length)?,
                    thickness: s.required_quantity("thickness_d", Dim::Length)?,
                },
                material: *material,
                q: s.required_number("Q")?,
                eta: s.required_number("eta")?,
                gamma_s: s.required_quantity("gamma_s", Dim::Frequency)?,
            };
            s.check(sc.validate())?;
            s.finish()?;
            Ok(sc)
        })
        .collect()
}
