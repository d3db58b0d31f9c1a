use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use micromode_core::experiments::{Cell, Table};
use micromode_core::Dataset;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Floats are written with 17 significant digits so they round-trip exactly.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

fn fmt_cell(c: &Cell) -> String {
    match c {
        Cell::Bool(b) => b.to_string(),
        Cell::Int(i) => i.to_string(),
        Cell::Float(v) => fmt_f64(*v),
        Cell::Text(s) => s.clone(),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub file: String,
    pub sha256: String,
}

/// Writes files into one output directory and remembers their digests.
pub struct OutputDir {
    dir: PathBuf,
    written: Vec<OutputDigest>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(OutputDir { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        self.written.push(OutputDigest { file: name.to_owned(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
        self.write(name, &bytes)
    }

    pub fn write_table(&mut self, name: &str, table: &Table) -> anyhow::Result<()> {
        let header: Vec<&str> = table.columns.iter().map(String::as_str).collect();
        self.write_csv(name, &header, table.rows.iter().map(|r| r.iter().map(fmt_cell).collect()))
    }

    pub fn digests(&self) -> &[OutputDigest] {
        &self.written
    }
}

pub fn dataset_rows(ds: &Dataset) -> (Vec<String>, Vec<Vec<String>>) {
    let header = (1..=ds.dim()).map(|i| format!("y{i}")).collect();
    let rows = ds.points().map(|p| p.iter().map(|&v| fmt_f64(v)).collect()).collect();
    (header, rows)
}

/// Reads a points CSV with header `y1,...,yd`.
pub fn read_dataset(path: &Path) -> anyhow::Result<Dataset> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let headers = r.headers()?.clone();
    let d = headers.len();
    if d == 0 || headers.iter().enumerate().any(|(i, h)| h.trim() != format!("y{}", i + 1)) {
        bail!("{}: expected header y1,...,yd, got {:?}", path.display(), headers.iter().collect::<Vec<_>>());
    }
    let mut flat = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: malformed row {}", path.display(), line + 2))?;
        for field in rec.iter() {
            let v: f64 = field.trim().parse().with_context(|| format!("{}: row {}: `{field}` is not a number", path.display(), line + 2))?;
            flat.push(v);
        }
    }
    Ok(Dataset::from_flat(d, flat)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, f64::MIN_POSITIVE, 2f64.sqrt()] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert!(fmt_f64(f64::NAN).parse::<f64>().unwrap().is_nan());
        assert_eq!(fmt_f64(f64::INFINITY).parse::<f64>().unwrap(), f64::INFINITY);
    }

    #[test]
    fn dataset_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::from_points(&[vec![0.1, -2.5], vec![1e10, 3.0]]).unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        let (h, rows) = dataset_rows(&ds);
        let h: Vec<&str> = h.iter().map(String::as_str).collect();
        out.write_csv("p.csv", &h, rows).unwrap();
        let back = read_dataset(&dir.path().join("p.csv")).unwrap();
        assert_eq!(back.flat(), ds.flat());
        assert_eq!(out.digests().len(), 1);
    }
}
