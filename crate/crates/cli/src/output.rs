//! CSV and JSON writers for run outputs.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lwr_core::spectrum::Spectrum;
use serde::Serialize;

/// Shortest representation that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}

pub struct Outputs {
    dir: PathBuf,
    pub files: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Two-column spectrum with the abscissa in its file unit.
    pub fn spectrum(&mut self, name: &str, s: &Spectrum, signal_header: &str) -> Result<()> {
        let scale = s.axis_kind.file_scale();
        let rows = s.iter().map(|(x, y)| vec![num(x * scale), num(y)]);
        self.csv(name, &[s.axis_kind.column_header(), signal_header], rows)
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(())
    }
}

/// Read a two-column spectrum CSV written by [`Outputs::spectrum`] or by hand.
pub fn read_spectrum_csv(path: &Path) -> Result<(String, Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let header = r.headers()?.clone();
    anyhow::ensure!(header.len() >= 2, "{}: need at least two columns, got {}", path.display(), header.len());
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |j: usize| -> Result<f64> {
            let field = rec.get(j).unwrap_or("").trim();
            field.parse().with_context(|| format!("{}: row {}: `{field}` is not a number", path.display(), i + 2))
        };
        x.push(parse(0)?);
        y.push(parse(1)?);
    }
    Ok((header[0].trim().to_string(), x, y))
}
