//! `.sfld` field files and CSV report writers.
//!
//! An `.sfld` file is one line of JSON header followed by the component
//! values as little-endian `f64`, component-major, in grid node order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::almgren::FrequencyReport;
use crate::blowup::{NodalClassification, NodalLabel};
use crate::error::{Error, Result};
use crate::flatness::InterfacePointSet;
use crate::grid::{Configuration, ExtensionGrid, Mode, ScalarField};
use crate::spectral::EigenReport;

const MAGIC: &str = "sfld";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldHeader {
    pub format: String,
    pub version: u32,
    pub n: usize,
    pub x_extents: Vec<(f64, f64)>,
    pub z_max: f64,
    pub h: f64,
    pub shape: Vec<usize>,
    pub components: usize,
    /// Always `"even"`: the lower half-space is the reflection.
    pub evenness: String,
    pub mode: Mode,
}

impl FieldHeader {
    fn of(u: &Configuration) -> Self {
        let g = u.grid();
        Self {
            format: MAGIC.into(),
            version: VERSION,
            n: g.n(),
            x_extents: g.extents()[..g.n()].to_vec(),
            z_max: g.hi(g.n()),
            h: g.h(),
            shape: g.shape().to_vec(),
            components: u.k(),
            evenness: "even".into(),
            mode: u.mode,
        }
    }
}

pub fn write_field(path: &Path, u: &Configuration) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &FieldHeader::of(u))?;
    w.write_all(b"\n")?;
    for c in &u.components {
        for v in c.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<Configuration> {
    let bad = |reason: String| Error::FieldFormat { path: path.to_path_buf(), reason };
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let head: FieldHeader = serde_json::from_str(line.trim_end()).map_err(|e| bad(format!("header: {e}")))?;
    if head.format != MAGIC || head.version != VERSION {
        return Err(bad(format!("unsupported format {} v{}", head.format, head.version)));
    }
    if head.evenness != "even" {
        return Err(bad(format!("unsupported evenness {}", head.evenness)));
    }
    if head.components == 0 {
        return Err(bad("no components".into()));
    }
    let grid = ExtensionGrid::new(head.n, &head.x_extents, head.z_max, head.h).map_err(|e| bad(e.to_string()))?;
    if grid.shape() != head.shape.as_slice() {
        return Err(bad(format!("shape {:?} does not match extents ({:?})", head.shape, grid.shape())));
    }
    let grid = Arc::new(grid);
    let len = grid.len();
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() != 8 * len * head.components {
        return Err(bad(format!("{} payload bytes, expected {}", buf.len(), 8 * len * head.components)));
    }
    let components = buf
        .chunks_exact(8 * len)
        .map(|chunk| {
            let values = chunk.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
            ScalarField::from_values(grid.clone(), values)
        })
        .collect::<Result<Vec<_>>>()?;
    Configuration::new(components, head.mode)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn axis_names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("{prefix}{k}")).collect()
}

fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

/// One row per radius: centre coordinates, `r`, `E`, `H`, `N`.
pub fn write_frequency_csv(path: &Path, report: &FrequencyReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut head = axis_names("x", report.center.len());
    head.extend(["r", "E", "H", "N"].map(String::from));
    w.write_record(&head)?;
    for j in 0..report.radii.len() {
        let mut row: Vec<String> = report.center.iter().map(|&c| fmt(c)).collect();
        row.extend([report.radii[j], report.e[j], report.h[j], report.n[j]].map(fmt));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_classification_csv(path: &Path, c: &NodalClassification) -> Result<()> {
    let mut w = csv_writer(path)?;
    let n = c.points.first().map_or(0, |p| p.point.len());
    let mut head = axis_names("x", n);
    head.extend(["n_estimate", "label"].map(String::from));
    w.write_record(&head)?;
    for p in &c.points {
        let mut row: Vec<String> = p.point.iter().map(|&v| fmt(v)).collect();
        row.push(fmt(p.n_estimate));
        row.push(match p.label {
            NodalLabel::Regular => "regular".into(),
            NodalLabel::Singular => "singular".into(),
        });
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_interface_csv(path: &Path, pts: &InterfacePointSet) -> Result<()> {
    let mut w = csv_writer(path)?;
    let n = pts.points.first().map_or(0, Vec::len);
    w.write_record(axis_names("x", n))?;
    for p in &pts.points {
        w.write_record(p.iter().map(|&v| fmt(v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_spectral_csv(path: &Path, sweep: &[EigenReport]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["opening", "lambda1", "gamma", "iterations", "residual"])?;
    for r in sweep {
        w.write_record([fmt(r.opening), fmt(r.lambda1), fmt(r.gamma), r.iterations.to_string(), fmt(r.residual)])?;
    }
    w.flush()?;
    Ok(())
}

/// Generic numeric table with a header row.
pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::param("row width differs from header"));
        }
        w.write_record(row.iter().map(|&v| fmt(v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::half_plane;

    #[test]
    fn field_round_trip_is_exact() {
        let g = Arc::new(ExtensionGrid::cube(2, 1.0, 0.5, 0.25).unwrap());
        let u = Configuration::from_fns(
            g,
            &[|x: &[f64]| half_plane(x[1], x[2]), |x: &[f64]| half_plane(-x[1], x[2]) + 1e-300],
            Mode::Penalized { beta: 3.5 },
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.sfld");
        write_field(&p, &u).unwrap();
        let v = read_field(&p).unwrap();
        assert_eq!(v.mode, u.mode);
        assert_eq!(v.grid(), u.grid());
        for (a, b) in u.components.iter().zip(&v.components) {
            assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn truncated_field_is_rejected() {
        let g = Arc::new(ExtensionGrid::cube(1, 1.0, 1.0, 0.5).unwrap());
        let u = Configuration::from_fns(g, &[|x: &[f64]| x[0]], Mode::Segregated);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.sfld");
        write_field(&p, &u).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_field(&p), Err(Error::FieldFormat { .. })));
        std::fs::write(&p, b"{\"format\":\"nope\"}\n").unwrap();
        assert!(matches!(read_field(&p), Err(Error::FieldFormat { .. })));
    }

    #[test]
    fn table_rows_must_match_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_table_csv(&p, &["a", "b"], &[vec![1.0, 2.0]]).unwrap();
        let s = std::fs::read_to_string(&p).unwrap();
        assert!(s.starts_with("a,b\n1.00000000000000000e0,2.00000000000000000e0\n"), "{s}");
        assert!(write_table_csv(&p, &["a"], &[vec![1.0, 2.0]]).is_err());
    }
}
