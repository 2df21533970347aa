//! The per-patient 5-minute grid and its file formats.

use std::io::{Read, Write};
use std::path::Path;

use chrono::DateTime;
use serde::{Deserialize, Serialize};

use crate::binfmt::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::io::{create_file, csv_writer, fmt_num, open_file, werr};
use crate::records::PatientId;
use crate::time::{grid_time, Timestamp, MAX_GRID_POINTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CircState {
    Stable,
    Failure,
    Ambiguous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
    Unlabeled,
}

impl Label {
    pub fn as_f64(self) -> Option<f64> {
        match self {
            Label::Positive => Some(1.0),
            Label::Negative => Some(0.0),
            Label::Unlabeled => None,
        }
    }
}

/// One variable on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSeries {
    pub variable_id: String,
    pub values: Vec<f64>,
    /// True where the 5-minute bucket holds at least one real measurement.
    pub measured: Vec<bool>,
}

/// Statics after mean/mode filling. Sex is 1 for male, 0 for female.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticValues {
    pub age: f64,
    pub sex: f64,
    pub height_cm: f64,
    pub emergency: f64,
    pub surgical: f64,
    pub apache_group: f64,
    pub apache_score: f64,
}

impl StaticValues {
    pub const NAMES: [&'static str; 7] = [
        "age",
        "sex",
        "height_cm",
        "emergency",
        "surgical",
        "apache_group",
        "apache_score",
    ];

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.age,
            self.sex,
            self.height_cm,
            self.emergency,
            self.surgical,
            self.apache_group,
            self.apache_score,
        ]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        StaticValues {
            age: a[0],
            sex: a[1],
            height_cm: a[2],
            emergency: a[3],
            surgical: a[4],
            apache_group: a[5],
            apache_score: a[6],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridStay {
    pub patient_id: PatientId,
    pub admission_time: Timestamp,
    pub grid_start: Timestamp,
    pub len: usize,
    pub statics: StaticValues,
    pub series: Vec<GridSeries>,
    /// Empty until annotated.
    pub states: Vec<CircState>,
    /// Empty until annotated.
    pub labels: Vec<Label>,
}

impl GridStay {
    pub fn series(&self, id: &str) -> Option<&GridSeries> {
        self.series.iter().find(|s| s.variable_id == id)
    }

    pub fn time_at(&self, k: usize) -> Timestamp {
        grid_time(&self.grid_start, k)
    }

    /// Minutes from admission to the grid start.
    pub fn start_offset_min(&self) -> f64 {
        crate::time::minutes_between(&self.admission_time, &self.grid_start)
    }

    pub fn is_annotated(&self) -> bool {
        self.states.len() == self.len && self.labels.len() == self.len
    }
}

const MAGIC: &[u8; 8] = b"CEWSGRD1";

fn state_code(s: CircState) -> u8 {
    match s {
        CircState::Stable => 0,
        CircState::Failure => 1,
        CircState::Ambiguous => 2,
    }
}

fn label_code(l: Label) -> u8 {
    match l {
        Label::Positive => 1,
        Label::Negative => 0,
        Label::Unlabeled => 2,
    }
}

fn ts_from_secs(secs: i64) -> Result<Timestamp> {
    DateTime::from_timestamp(secs, 0)
        .map(|d| d.naive_utc())
        .ok_or_else(|| Error::validation("grid file", "timestamp out of range"))
}

/// Encodes stays into the binary grid format.
pub fn encode_grids(stays: &[GridStay]) -> Vec<u8> {
    let mut e = Encoder::new(MAGIC);
    e.len(stays.len());
    for s in stays {
        e.u64(s.patient_id);
        e.i64(s.admission_time.and_utc().timestamp());
        e.i64(s.grid_start.and_utc().timestamp());
        e.len(s.len);
        e.f64s(&s.statics.to_array());
        e.len(s.series.len());
        for v in &s.series {
            e.str(&v.variable_id);
            e.f64s(&v.values);
            for m in &v.measured {
                e.u8(*m as u8);
            }
        }
        let annotated = s.is_annotated();
        e.u8(annotated as u8);
        if annotated {
            for st in &s.states {
                e.u8(state_code(*st));
            }
            for l in &s.labels {
                e.u8(label_code(*l));
            }
        }
    }
    e.finish()
}

pub fn decode_grids(bytes: &[u8]) -> Result<Vec<GridStay>> {
    let mut d = Decoder::new(bytes, MAGIC, "grid file")?;
    let n = d.len(40)?;
    let mut stays = Vec::with_capacity(n);
    for _ in 0..n {
        let patient_id = d.u64()?;
        let admission_time = ts_from_secs(d.i64()?)?;
        let grid_start = ts_from_secs(d.i64()?)?;
        let len = d.u32()? as usize;
        if len == 0 || len > MAX_GRID_POINTS {
            return Err(Error::validation("grid file", format!("grid length {len} out of range")));
        }
        let statics = StaticValues::from_array(d.f64s(7)?.try_into().unwrap());
        let nv = d.len(4 + 9 * len)?;
        let mut series = Vec::with_capacity(nv);
        for _ in 0..nv {
            let variable_id = d.str()?;
            let values = d.f64s(len)?;
            let measured = d
                .bytes(len)?
                .iter()
                .map(|b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    _ => Err(Error::validation("grid file", "bad measured flag")),
                })
                .collect::<Result<Vec<_>>>()?;
            series.push(GridSeries { variable_id, values, measured });
        }
        let (states, labels) = match d.u8()? {
            0 => (Vec::new(), Vec::new()),
            1 => {
                let states = d
                    .bytes(len)?
                    .iter()
                    .map(|b| match b {
                        0 => Ok(CircState::Stable),
                        1 => Ok(CircState::Failure),
                        2 => Ok(CircState::Ambiguous),
                        _ => Err(Error::validation("grid file", "bad state code")),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let labels = d
                    .bytes(len)?
                    .iter()
                    .map(|b| match b {
                        0 => Ok(Label::Negative),
                        1 => Ok(Label::Positive),
                        2 => Ok(Label::Unlabeled),
                        _ => Err(Error::validation("grid file", "bad label code")),
                    })
                    .collect::<Result<Vec<_>>>()?;
                (states, labels)
            }
            _ => return Err(Error::validation("grid file", "bad annotation flag")),
        };
        stays.push(GridStay {
            patient_id,
            admission_time,
            grid_start,
            len,
            statics,
            series,
            states,
            labels,
        });
    }
    d.finish()?;
    Ok(stays)
}

pub fn save_grids(path: &Path, stays: &[GridStay]) -> Result<()> {
    let mut w = create_file(path)?;
    w.write_all(&encode_grids(stays))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_grids(path: &Path) -> Result<Vec<GridStay>> {
    let mut buf = Vec::new();
    open_file(path)?
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    decode_grids(&buf)
}

/// Long-format dump: `patient_id,grid_index,variable_id,value,measured`.
pub fn write_grid_dump<W: Write>(writer: W, stays: &[GridStay]) -> Result<()> {
    let mut w = csv_writer(writer);
    w.write_record(["patient_id", "grid_index", "variable_id", "value", "measured"])
        .map_err(werr)?;
    for s in stays {
        for k in 0..s.len {
            for v in &s.series {
                w.write_record([
                    s.patient_id.to_string(),
                    k.to_string(),
                    v.variable_id.clone(),
                    fmt_num(v.values[k]),
                    (v.measured[k] as u8).to_string(),
                ])
                .map_err(werr)?;
            }
        }
    }
    w.flush().map_err(|e| Error::Internal(e.to_string()))
}
