//! Per-point prediction scores: `patient_id,grid_index,label,score`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{create_file, csv_writer, fmt_num, open_file, parse_f64, werr};
use crate::records::PatientId;

const HEADER: [&str; 4] = ["patient_id", "grid_index", "label", "score"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRow {
    pub patient_id: PatientId,
    pub grid_index: usize,
    pub label: Option<bool>,
    pub score: f64,
}

pub fn write_scores<W: Write>(writer: W, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv_writer(writer);
    w.write_record(HEADER).map_err(werr)?;
    for r in rows {
        let label = match r.label {
            Some(true) => "1",
            Some(false) => "0",
            None => "",
        };
        w.write_record([r.patient_id.to_string(), r.grid_index.to_string(), label.to_string(), fmt_num(r.score)]).map_err(werr)?;
    }
    w.flush().map_err(|e| Error::Internal(e.to_string()))
}

pub fn save_scores(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    write_scores(create_file(path)?, rows)
}

/// Reads scores; each must lie in [0, 1] and (patient, index) pairs must be unique.
pub fn read_scores<R: Read>(reader: R, file: &str) -> Result<Vec<ScoreRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| crate::catalog::csv_error(file, e))?;
        let line = i + 1;
        if i == 0 {
            if row.iter().collect::<Vec<_>>() != HEADER {
                return Err(Error::parse(file, 1, "unexpected header"));
            }
            continue;
        }
        if row.len() != 4 {
            return Err(Error::parse(file, line, format!("expected 4 fields, found {}", row.len())));
        }
        let p = |m: String| Error::parse(file, line, m);
        let patient_id = row[0].trim().parse().map_err(|_| p(format!("invalid patient id `{}`", &row[0])))?;
        let grid_index: u32 = row[1].trim().parse().map_err(|_| p(format!("invalid grid index `{}`", &row[1])))?;
        let label = match row[2].trim() {
            "" => None,
            "0" => Some(false),
            "1" => Some(true),
            other => return Err(p(format!("invalid label `{other}`"))),
        };
        let score = parse_f64(&row[3]).map_err(p)?;
        if !(0.0..=1.0).contains(&score) {
            return Err(p(format!("score {score} outside [0, 1]")));
        }
        out.push(ScoreRow { patient_id, grid_index: grid_index as usize, label, score });
    }
    let mut keys: Vec<(PatientId, usize)> = out.iter().map(|r| (r.patient_id, r.grid_index)).collect();
    keys.sort_unstable();
    if let Some(w) = keys.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::parse(file, 0, format!("duplicate score for patient {} at grid index {}", w[0].0, w[0].1)));
    }
    Ok(out)
}

pub fn load_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    read_scores(open_file(path)?, &path.display().to_string())
}
