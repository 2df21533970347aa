//! Row-major feature matrix with per-column provenance.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binfmt::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::io::{create_file, csv_writer, fmt_num, open_file, read_json, werr, write_json};
use crate::records::PatientId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureCategory {
    Static,
    Time,
    Current,
    Multires,
    Intensity,
    Instability,
    Shapelet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureInfo {
    pub name: String,
    /// Source variable; selection removes features by this key.
    pub variable: String,
    pub category: FeatureCategory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowKey {
    pub patient_id: PatientId,
    pub grid_index: u32,
    pub label: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    pub columns: Vec<FeatureInfo>,
    pub rows: Vec<RowKey>,
    /// Row-major, `rows.len() × columns.len()`.
    pub values: Vec<f64>,
}

/// SHA-256 over the manifest's JSON text; models record it to detect
/// column mismatches.
pub fn manifest_hash(columns: &[FeatureInfo]) -> String {
    let text = serde_json::to_string(columns).expect("manifest serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.n_cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.get(i, j)).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn manifest_hash(&self) -> String {
        manifest_hash(&self.columns)
    }

    /// Labels of the labeled rows as 0/1.
    pub fn labels(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.label.map(|l| l as u8 as f64).unwrap_or(f64::NAN))
            .collect()
    }

    pub fn filter_rows(&self, keep: impl Fn(&RowKey) -> bool) -> FeatureMatrix {
        let mut out = FeatureMatrix { columns: self.columns.clone(), ..Default::default() };
        for (i, r) in self.rows.iter().enumerate() {
            if keep(r) {
                out.rows.push(*r);
                out.values.extend_from_slice(self.row(i));
            }
        }
        out
    }

    /// Keeps only the named columns, in the order given.
    pub fn select_columns(&self, names: &[String]) -> Result<FeatureMatrix> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.column_index(n).ok_or_else(|| Error::MissingColumn(n.clone())))
            .collect::<Result<_>>()?;
        let mut out = FeatureMatrix {
            columns: idx.iter().map(|j| self.columns[*j].clone()).collect(),
            rows: self.rows.clone(),
            values: Vec::with_capacity(self.n_rows() * idx.len()),
        };
        for i in 0..self.n_rows() {
            let row = self.row(i);
            out.values.extend(idx.iter().map(|j| row[*j]));
        }
        Ok(out)
    }

    /// Appends rows of another matrix with the same columns.
    pub fn append(&mut self, other: FeatureMatrix) -> Result<()> {
        if self.columns.is_empty() && self.rows.is_empty() {
            *self = other;
            return Ok(());
        }
        if other.columns != self.columns {
            return Err(Error::Internal("feature column sets differ".into()));
        }
        self.rows.extend(other.rows);
        self.values.extend(other.values);
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        if self.values.len() != self.n_rows() * self.n_cols() {
            return Err(Error::Internal(format!(
                "matrix holds {} values for {} rows × {} columns",
                self.values.len(),
                self.n_rows(),
                self.n_cols()
            )));
        }
        Ok(())
    }
}

const MAGIC: &[u8; 8] = b"CEWSFM01";

fn category_code(c: FeatureCategory) -> u8 {
    c as u8
}

fn category_from(code: u8) -> Result<FeatureCategory> {
    use FeatureCategory::*;
    [Static, Time, Current, Multires, Intensity, Instability, Shapelet]
        .get(code as usize)
        .copied()
        .ok_or_else(|| Error::validation("feature matrix", format!("bad category code {code}")))
}

pub fn encode_matrix(m: &FeatureMatrix) -> Vec<u8> {
    let mut e = Encoder::new(MAGIC);
    e.len(m.n_cols());
    for c in &m.columns {
        e.str(&c.name);
        e.str(&c.variable);
        e.u8(category_code(c.category));
    }
    e.len(m.n_rows());
    for r in &m.rows {
        e.u64(r.patient_id);
        e.u32(r.grid_index);
        e.u8(match r.label {
            None => 2,
            Some(l) => l as u8,
        });
    }
    e.f64s(&m.values);
    e.finish()
}

pub fn decode_matrix(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut d = Decoder::new(bytes, MAGIC, "feature matrix")?;
    let nc = d.len(9)?;
    let mut columns = Vec::with_capacity(nc);
    for _ in 0..nc {
        let name = d.str()?;
        let variable = d.str()?;
        let category = category_from(d.u8()?)?;
        columns.push(FeatureInfo { name, variable, category });
    }
    let nr = d.len(13)?;
    let mut rows = Vec::with_capacity(nr);
    for _ in 0..nr {
        let patient_id = d.u64()?;
        let grid_index = d.u32()?;
        let label = match d.u8()? {
            0 => Some(false),
            1 => Some(true),
            2 => None,
            x => return Err(Error::validation("feature matrix", format!("bad label code {x}"))),
        };
        rows.push(RowKey { patient_id, grid_index, label });
    }
    let n = nr
        .checked_mul(nc)
        .ok_or_else(|| Error::validation("feature matrix", "size overflow"))?;
    let values = d.f64s(n)?;
    d.finish()?;
    Ok(FeatureMatrix { columns, rows, values })
}

pub fn save_matrix(path: &Path, m: &FeatureMatrix) -> Result<()> {
    let mut w = create_file(path)?;
    w.write_all(&encode_matrix(m))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_matrix(path: &Path) -> Result<FeatureMatrix> {
    let mut buf = Vec::new();
    open_file(path)?
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    decode_matrix(&buf)
}

pub fn save_manifest(path: &Path, columns: &[FeatureInfo]) -> Result<()> {
    write_json(path, &columns)
}

pub fn load_manifest(path: &Path) -> Result<Vec<FeatureInfo>> {
    read_json(path)
}

/// CSV export: `patient_id,grid_index,label,<feature names>`; label is
/// empty for unlabeled rows.
pub fn write_matrix_csv<W: Write>(writer: W, m: &FeatureMatrix) -> Result<()> {
    let mut w = csv_writer(writer);
    let mut header = vec!["patient_id".to_string(), "grid_index".into(), "label".into()];
    header.extend(m.names());
    w.write_record(&header).map_err(werr)?;
    for (i, r) in m.rows.iter().enumerate() {
        let mut rec = vec![
            r.patient_id.to_string(),
            r.grid_index.to_string(),
            r.label.map(|l| (l as u8).to_string()).unwrap_or_default(),
        ];
        rec.extend(m.row(i).iter().map(|v| fmt_num(*v)));
        w.write_record(&rec).map_err(werr)?;
    }
    w.flush().map_err(|e| Error::Internal(e.to_string()))
}

#[cfg(test)]
pub(crate) fn toy(n_rows: usize, cols: &[&str]) -> FeatureMatrix {
    FeatureMatrix {
        columns: cols
            .iter()
            .map(|c| FeatureInfo { name: c.to_string(), variable: c.to_string(), category: FeatureCategory::Current })
            .collect(),
        rows: (0..n_rows)
            .map(|i| RowKey { patient_id: i as u64 / 3, grid_index: i as u32, label: Some(i % 2 == 0) })
            .collect(),
        values: (0..n_rows * cols.len()).map(|x| x as f64 * 0.5).collect(),
    }
}
