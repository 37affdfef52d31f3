//! Run artifacts: CSV tables with fixed column orders, JSON summaries and
//! the solution checkpoint. Everything goes through write-then-rename so a
//! failing stage never leaves a half-written file behind, and all numbers
//! are formatted with fixed precision so identical runs produce bit-identical
//! output.

use crate::error::Result;
use crate::solver::GreensSolution;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// Serialize a float with enough digits to round-trip exactly.
pub fn num(v: f64) -> String {
    format!("{v:.17e}")
}

/// Write `content` to `path` atomically (temp file + rename).
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp: PathBuf = path.with_extension("tmp");
    fs::write(&tmp, content)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// A CSV table with a fixed header, accumulated row by row.
pub struct CsvTable {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&'static str]) -> CsvTable {
        CsvTable { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        assert_eq!(cells.len(), self.header.len(), "csv row width mismatch");
        self.rows.push(cells);
    }

    pub fn to_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_string())
    }
}

/// Field dump of a solution: a textual header (grid spec, model, flux,
/// residual) followed by one u value per line in fixed precision.
pub fn write_checkpoint(sol: &GreensSolution, path: &Path) -> Result<()> {
    let g = &sol.grid;
    let mut out = String::new();
    writeln!(out, "# greenlab solution checkpoint v1").unwrap();
    writeln!(
        out,
        "# grid r_min={} r_max={} n_r={} n_theta={} n_phi={}",
        num(g.spec.r_min),
        num(g.spec.r_max),
        g.spec.n_r,
        g.spec.n_theta,
        g.spec.n_phi
    )
    .unwrap();
    writeln!(out, "# model {:?}", sol.model.kind).unwrap();
    writeln!(out, "# flux_constant {}", num(sol.flux_constant)).unwrap();
    writeln!(out, "# residual {}", num(sol.residual)).unwrap();
    writeln!(out, "# provenance {:?}", sol.provenance).unwrap();
    for v in &sol.u {
        writeln!(out, "{}", num(*v)).unwrap();
    }
    write_atomic(path, &out)
}

/// Pretty JSON with stable key order (struct declaration order).
pub fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| crate::error::LabError::Validation(format!("json encode: {e}")))?;
    write_atomic(path, &text)
}
