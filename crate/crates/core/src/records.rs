//! Raw measurement records, static patient attributes and cohort assembly.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::{csv_error, VariableCatalog};
use crate::error::{Error, Result};
use crate::io::{
    create_file, csv_writer, fmt_num, open_file, parse_f64, parse_flag, parse_opt_f64, werr,
};
use crate::time::{format_timestamp, parse_timestamp, Timestamp};

pub type PatientId = u64;

pub const RECORDS_HEADER: [&str; 6] = [
    "patient_id",
    "variable_id",
    "sample_time",
    "enter_time",
    "value",
    "status",
];

pub const STATICS_HEADER: [&str; 10] = [
    "patient_id",
    "admission_time",
    "age",
    "sex",
    "height_cm",
    "emergency",
    "surgical",
    "apache_group",
    "apache_score",
    "mortality",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Infusion,
    Bolus,
    Tablet,
    Zero,
    Plain,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Infusion => "infusion",
            Status::Bolus => "bolus",
            Status::Tablet => "tablet",
            Status::Zero => "zero",
            Status::Plain => "plain",
        }
    }

    /// Bolus and tablet doses act over the drug's acting period.
    pub fn is_discrete_dose(self) -> bool {
        matches!(self, Status::Bolus | Status::Tablet)
    }
}

impl FromStr for Status {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "infusion" => Ok(Status::Infusion),
            "bolus" => Ok(Status::Bolus),
            "tablet" => Ok(Status::Tablet),
            "zero" => Ok(Status::Zero),
            "plain" => Ok(Status::Plain),
            other => Err(format!("unknown status `{other}`")),
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub patient_id: PatientId,
    pub variable_id: String,
    pub sample_time: Timestamp,
    pub enter_time: Timestamp,
    pub value: f64,
    pub status: Status,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    M,
    F,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statics {
    pub age: f64,
    pub sex: Option<Sex>,
    pub height_cm: Option<f64>,
    pub emergency: bool,
    pub surgical: bool,
    pub apache_group: Option<u32>,
    pub apache_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticsRow {
    pub patient_id: PatientId,
    pub admission_time: Timestamp,
    pub statics: Statics,
    pub mortality: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientStay {
    pub patient_id: PatientId,
    pub admission_time: Timestamp,
    pub statics: Statics,
    pub mortality: bool,
    pub records: Vec<RawRecord>,
}

impl PatientStay {
    pub fn sort_records(&mut self) {
        self.records
            .sort_by_key(|a| (a.sample_time, a.enter_time));
    }

    pub fn statics_row(&self) -> StaticsRow {
        StaticsRow {
            patient_id: self.patient_id,
            admission_time: self.admission_time,
            statics: self.statics.clone(),
            mortality: self.mortality,
        }
    }
}

/// Records grouped per patient, each group ordered by (sample-time, enter-time).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordStream {
    pub by_patient: BTreeMap<PatientId, Vec<RawRecord>>,
    /// Records dropped because their variable is not in the catalog.
    pub dropped_unknown: usize,
    pub total_read: usize,
}

impl RecordStream {
    pub fn record_count(&self) -> usize {
        self.by_patient.values().map(Vec::len).sum()
    }
}

pub fn read_records<R: Read>(reader: R, file: &str, catalog: &VariableCatalog) -> Result<RecordStream> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut out = RecordStream::default();
    let mut seen_header = false;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(file, e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if !seen_header {
            if rec.iter().ne(RECORDS_HEADER.iter().copied()) {
                return Err(Error::parse(file, line, "records header does not match schema"));
            }
            seen_header = true;
            continue;
        }
        if rec.len() != RECORDS_HEADER.len() {
            return Err(Error::parse(
                file,
                line,
                format!("expected {} fields, found {}", RECORDS_HEADER.len(), rec.len()),
            ));
        }
        let p = |e: String| Error::parse(file, line, e);
        let patient_id: PatientId = rec[0]
            .trim()
            .parse()
            .map_err(|_| p(format!("invalid patient_id `{}`", &rec[0])))?;
        let sample_time =
            parse_timestamp(&rec[2]).ok_or_else(|| p(format!("malformed timestamp `{}`", &rec[2])))?;
        let enter_time =
            parse_timestamp(&rec[3]).ok_or_else(|| p(format!("malformed timestamp `{}`", &rec[3])))?;
        let value = parse_f64(&rec[4]).map_err(p)?;
        let status: Status = rec[5].parse().map_err(p)?;
        out.total_read += 1;
        if !catalog.contains(&rec[1]) {
            out.dropped_unknown += 1;
            continue;
        }
        out.by_patient.entry(patient_id).or_default().push(RawRecord {
            patient_id,
            variable_id: rec[1].to_string(),
            sample_time,
            enter_time,
            value,
            status,
        });
    }
    for recs in out.by_patient.values_mut() {
        recs.sort_by_key(|a| (a.sample_time, a.enter_time));
    }
    Ok(out)
}

pub fn load_records(path: &Path, catalog: &VariableCatalog) -> Result<RecordStream> {
    read_records(open_file(path)?, &path.display().to_string(), catalog)
}

pub fn write_records<'a, W: Write>(
    writer: W,
    records: impl IntoIterator<Item = &'a RawRecord>,
) -> Result<()> {
    let mut w = csv_writer(writer);
    w.write_record(RECORDS_HEADER).map_err(werr)?;
    for r in records {
        w.write_record([
            r.patient_id.to_string(),
            r.variable_id.clone(),
            format_timestamp(&r.sample_time),
            format_timestamp(&r.enter_time),
            fmt_num(r.value),
            r.status.as_str().to_string(),
        ])
        .map_err(werr)?;
    }
    w.flush().map_err(|e| Error::Internal(e.to_string()))
}

pub fn save_records<'a>(path: &Path, records: impl IntoIterator<Item = &'a RawRecord>) -> Result<()> {
    write_records(create_file(path)?, records)
}

pub fn read_statics<R: Read>(reader: R, file: &str) -> Result<Vec<StaticsRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    let mut seen_header = false;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(file, e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if !seen_header {
            if rec.iter().ne(STATICS_HEADER.iter().copied()) {
                return Err(Error::parse(file, line, "statics header does not match schema"));
            }
            seen_header = true;
            continue;
        }
        if rec.len() != STATICS_HEADER.len() {
            return Err(Error::parse(
                file,
                line,
                format!("expected {} fields, found {}", STATICS_HEADER.len(), rec.len()),
            ));
        }
        let p = |e: String| Error::parse(file, line, e);
        let patient_id: PatientId = rec[0]
            .trim()
            .parse()
            .map_err(|_| p(format!("invalid patient_id `{}`", &rec[0])))?;
        let admission_time =
            parse_timestamp(&rec[1]).ok_or_else(|| p(format!("malformed timestamp `{}`", &rec[1])))?;
        let sex = match &rec[3] {
            "M" => Some(Sex::M),
            "F" => Some(Sex::F),
            "" => None,
            other => return Err(p(format!("invalid sex `{other}`"))),
        };
        let apache_group = if rec[7].is_empty() {
            None
        } else {
            Some(
                rec[7]
                    .parse::<u32>()
                    .map_err(|_| p(format!("invalid apache_group `{}`", &rec[7])))?,
            )
        };
        out.push(StaticsRow {
            patient_id,
            admission_time,
            statics: Statics {
                age: parse_f64(&rec[2]).map_err(p)?,
                sex,
                height_cm: parse_opt_f64(&rec[4]).map_err(p)?,
                emergency: parse_flag(&rec[5]).map_err(p)?,
                surgical: parse_flag(&rec[6]).map_err(p)?,
                apache_group,
                apache_score: parse_opt_f64(&rec[8]).map_err(p)?,
            },
            mortality: parse_flag(&rec[9]).map_err(p)?,
        });
    }
    Ok(out)
}

pub fn load_statics(path: &Path) -> Result<Vec<StaticsRow>> {
    read_statics(open_file(path)?, &path.display().to_string())
}

pub fn write_statics<'a, W: Write>(
    writer: W,
    rows: impl IntoIterator<Item = &'a StaticsRow>,
) -> Result<()> {
    let mut w = csv_writer(writer);
    w.write_record(STATICS_HEADER).map_err(werr)?;
    let flag = |b: bool| if b { "1" } else { "0" }.to_string();
    for r in rows {
        let s = &r.statics;
        w.write_record([
            r.patient_id.to_string(),
            format_timestamp(&r.admission_time),
            fmt_num(s.age),
            match s.sex {
                Some(Sex::M) => "M".into(),
                Some(Sex::F) => "F".into(),
                None => String::new(),
            },
            s.height_cm.map(fmt_num).unwrap_or_default(),
            flag(s.emergency),
            flag(s.surgical),
            s.apache_group.map(|g| g.to_string()).unwrap_or_default(),
            s.apache_score.map(fmt_num).unwrap_or_default(),
            flag(r.mortality),
        ])
        .map_err(werr)?;
    }
    w.flush().map_err(|e| Error::Internal(e.to_string()))
}

pub fn save_statics<'a>(path: &Path, rows: impl IntoIterator<Item = &'a StaticsRow>) -> Result<()> {
    write_statics(create_file(path)?, rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    AgeOutOfRange,
    NoStatics,
    NoHeartRate,
    /// Heart-rate measurements exist but none fall inside the first 28 days.
    EmptyGrid,
}

#[derive(Debug, Clone, Default)]
pub struct Cohort {
    pub stays: Vec<PatientStay>,
    pub excluded: Vec<(PatientId, ExclusionReason)>,
}

/// Joins statics and records into stays, dropping patients outside 16-100 years.
pub fn assemble_cohort(statics: &[StaticsRow], mut records: RecordStream) -> Cohort {
    let mut cohort = Cohort::default();
    let mut rows: Vec<&StaticsRow> = statics.iter().collect();
    rows.sort_by_key(|r| r.patient_id);
    for row in rows {
        let recs = records.by_patient.remove(&row.patient_id).unwrap_or_default();
        if !(16.0..=100.0).contains(&row.statics.age) {
            cohort
                .excluded
                .push((row.patient_id, ExclusionReason::AgeOutOfRange));
            continue;
        }
        cohort.stays.push(PatientStay {
            patient_id: row.patient_id,
            admission_time: row.admission_time,
            statics: row.statics.clone(),
            mortality: row.mortality,
            records: recs,
        });
    }
    for pid in records.by_patient.keys() {
        cohort.excluded.push((*pid, ExclusionReason::NoStatics));
    }
    cohort.excluded.sort_by_key(|(p, _)| *p);
    cohort
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::VariableCatalog;

    fn catalog() -> VariableCatalog {
        let text = "variable_id,name,kind,range_lo,range_hi,default,freq_class,acting_period_min,merge_group,merge_weight\n\
                    hr,Heart rate,continuous,0,300,75,high,,,\n\
                    map,MAP,continuous,0,200,80,high,,,\n";
        VariableCatalog::from_reader(text.as_bytes(), "c").unwrap()
    }

    const H: &str = "patient_id,variable_id,sample_time,enter_time,value,status\n";

    #[test]
    fn out_of_order_records_are_sorted() {
        let body = format!(
            "{H}1,hr,2014-01-01T02:00:00Z,2014-01-01T02:00:00Z,80,plain\n\
             1,hr,2014-01-01T00:00:00Z,2014-01-01T00:00:00Z,70,plain\n\
             1,hr,2014-01-01T01:00:00Z,2014-01-01T01:00:00Z,75,plain\n"
        );
        let s = read_records(body.as_bytes(), "r", &catalog()).unwrap();
        let vals: Vec<f64> = s.by_patient[&1].iter().map(|r| r.value).collect();
        assert_eq!(vals, vec![70.0, 75.0, 80.0]);
    }

    #[test]
    fn unknown_variable_dropped_and_counted() {
        let body = format!(
            "{H}1,hr,2014-01-01T00:00:00Z,2014-01-01T00:00:00Z,80,plain\n\
             1,zzz,2014-01-01T00:00:00Z,2014-01-01T00:00:00Z,1,plain\n"
        );
        let s = read_records(body.as_bytes(), "r", &catalog()).unwrap();
        assert_eq!(s.dropped_unknown, 1);
        assert_eq!(s.total_read, s.dropped_unknown + s.record_count());
    }

    #[test]
    fn duplicates_survive_loading() {
        let body = format!(
            "{H}1,hr,2014-01-01T00:00:00Z,2014-01-01T00:00:00Z,80,plain\n\
             1,hr,2014-01-01T00:00:00Z,2014-01-01T00:00:00Z,81,plain\n"
        );
        let s = read_records(body.as_bytes(), "r", &catalog()).unwrap();
        assert_eq!(s.by_patient[&1].len(), 2);
    }

    #[test]
    fn malformed_timestamp_is_parse_error_and_empty_is_empty() {
        let body = format!("{H}1,hr,2014-01-01 00:00,2014-01-01T00:00:00Z,80,plain\n");
        let err = read_records(body.as_bytes(), "r", &catalog()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
        let empty = read_records(H.as_bytes(), "r", &catalog()).unwrap();
        assert!(empty.by_patient.is_empty());
        let truly_empty = read_records("".as_bytes(), "r", &catalog()).unwrap();
        assert_eq!(truly_empty.total_read, 0);
    }

    #[test]
    fn statics_roundtrip_and_age_filter() {
        let text = "patient_id,admission_time,age,sex,height_cm,emergency,surgical,apache_group,apache_score,mortality\n\
                    1,2014-01-01T00:00:00Z,15,F,160,1,0,3,12,0\n\
                    2,2014-01-02T00:00:00Z,64,M,,0,1,,,1\n";
        let rows = read_statics(text.as_bytes(), "s").unwrap();
        let mut out = Vec::new();
        write_statics(&mut out, &rows).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
        let cohort = assemble_cohort(&rows, RecordStream::default());
        assert_eq!(cohort.stays.len(), 1);
        assert_eq!(cohort.excluded, vec![(1, ExclusionReason::AgeOutOfRange)]);
    }
}
