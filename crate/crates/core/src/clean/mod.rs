//! Artefact removal and harmonisation of raw record streams.
//!
//! Passes run in a fixed order: timestamps, value artefacts (range,
//! duplicates, venous relabel, BMI swap), pharmaceutical rates, merging.

mod merge;
mod pharma;
mod timestamps;
mod values;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use merge::merge_variables;
pub use pharma::pharma_to_rates;
pub use timestamps::{repair_timestamps, RepairAction, RuleKind, TimestampRule};
pub use values::remove_value_artefacts;

use crate::catalog::{VariableCatalog, VariableRoles};
use crate::error::{Error, Result};
use crate::io::{create_file, csv_writer, werr};
use crate::records::{PatientId, PatientStay};
use crate::time::{format_timestamp, Timestamp};

/// Training-cohort dispersion used by the duplicate and venous rules.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GlobalStats {
    pub std_by_variable: BTreeMap<String, f64>,
    pub o2_sat_std: f64,
}

impl GlobalStats {
    /// Sample standard deviation of in-range values per variable across
    /// the given (training) stays.
    pub fn fit(stays: &[PatientStay], catalog: &VariableCatalog, roles: &VariableRoles) -> Self {
        let mut acc: BTreeMap<&str, (usize, f64, f64)> = BTreeMap::new();
        for stay in stays {
            for r in &stay.records {
                let Some(e) = catalog.get(&r.variable_id) else { continue };
                if r.value < e.range_lo || r.value > e.range_hi {
                    continue;
                }
                // Welford
                let s = acc.entry(e.id.as_str()).or_insert((0, 0.0, 0.0));
                s.0 += 1;
                let d = r.value - s.1;
                s.1 += d / s.0 as f64;
                s.2 += d * (r.value - s.1);
            }
        }
        let std_by_variable: BTreeMap<String, f64> = acc
            .into_iter()
            .map(|(k, (n, _, m2))| {
                let sd = if n > 1 { (m2 / (n - 1) as f64).sqrt() } else { 0.0 };
                (k.to_string(), sd)
            })
            .collect();
        let o2_sat_std = std_by_variable
            .get(&roles.blood_gas_sat)
            .copied()
            .unwrap_or(0.0);
        GlobalStats {
            std_by_variable,
            o2_sat_std,
        }
    }

    pub fn std_of(&self, var: &str) -> f64 {
        self.std_by_variable.get(var).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditAction {
    TimestampRepaired,
    TimestampDeleted,
    OutOfRange,
    DuplicateIdentical,
    DuplicateAveraged,
    DuplicateUnreliable,
    ZeroDoseDropped,
    DoseSummed,
    DoseAveraged,
    RelabelledVenous,
    BmiSwapped,
    ConvertedToRate,
    Merged,
}

impl AuditAction {
    pub fn as_str(self) -> &'static str {
        match self {
            AuditAction::TimestampRepaired => "timestamp-repaired",
            AuditAction::TimestampDeleted => "timestamp-deleted",
            AuditAction::OutOfRange => "out-of-range",
            AuditAction::DuplicateIdentical => "duplicate-identical",
            AuditAction::DuplicateAveraged => "duplicate-averaged",
            AuditAction::DuplicateUnreliable => "duplicate-unreliable",
            AuditAction::ZeroDoseDropped => "zero-dose-dropped",
            AuditAction::DoseSummed => "dose-summed",
            AuditAction::DoseAveraged => "dose-averaged",
            AuditAction::RelabelledVenous => "relabelled-venous",
            AuditAction::BmiSwapped => "bmi-swapped",
            AuditAction::ConvertedToRate => "converted-to-rate",
            AuditAction::Merged => "merged",
        }
    }

    /// True when the logged record no longer exists afterwards.
    pub fn removes_record(self) -> bool {
        matches!(
            self,
            AuditAction::TimestampDeleted
                | AuditAction::OutOfRange
                | AuditAction::DuplicateIdentical
                | AuditAction::DuplicateAveraged
                | AuditAction::DuplicateUnreliable
                | AuditAction::ZeroDoseDropped
                | AuditAction::DoseSummed
                | AuditAction::DoseAveraged
                | AuditAction::Merged
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub patient_id: PatientId,
    pub variable_id: String,
    pub sample_time: Timestamp,
    pub action: AuditAction,
    pub rule_id: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditLog {
    pub entries: Vec<AuditEntry>,
}

impl AuditLog {
    pub fn push(
        &mut self,
        patient_id: PatientId,
        variable_id: &str,
        sample_time: Timestamp,
        action: AuditAction,
        rule_id: &str,
    ) {
        self.entries.push(AuditEntry {
            patient_id,
            variable_id: variable_id.to_string(),
            sample_time,
            action,
            rule_id: rule_id.to_string(),
        });
    }

    pub fn removed_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.action.removes_record())
            .count()
    }

    pub fn count(&self, action: AuditAction) -> usize {
        self.entries.iter().filter(|e| e.action == action).count()
    }

    pub fn extend(&mut self, other: AuditLog) {
        self.entries.extend(other.entries);
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv_writer(writer);
        w.write_record(["patient_id", "variable_id", "sample_time", "action", "rule_id"])
            .map_err(werr)?;
        for e in &self.entries {
            w.write_record([
                e.patient_id.to_string(),
                e.variable_id.clone(),
                format_timestamp(&e.sample_time),
                e.action.as_str().to_string(),
                e.rule_id.clone(),
            ])
            .map_err(werr)?;
        }
        w.flush().map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_writer(create_file(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanConfig {
    /// Relative dispersion under which differing duplicates are averaged.
    pub duplicate_rel_std: f64,
    /// Fraction of the O2-saturation std under which a sample is venous.
    pub venous_rel_std: f64,
    pub bmi_range: (f64, f64),
    pub timestamp_rules: Vec<TimestampRule>,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            duplicate_rel_std: 0.05,
            venous_rel_std: 0.10,
            bmi_range: (10.0, 60.0),
            timestamp_rules: TimestampRule::defaults(),
        }
    }
}

/// Runs every cleaning pass on one stay.
pub fn clean_stay(
    stay: &PatientStay,
    catalog: &VariableCatalog,
    stats: &GlobalStats,
    roles: &VariableRoles,
    config: &CleanConfig,
) -> Result<(PatientStay, AuditLog)> {
    let mut log = AuditLog::default();
    let (s, l) = repair_timestamps(stay, &config.timestamp_rules);
    log.extend(l);
    let (s, l) = remove_value_artefacts(&s, catalog, stats, roles, config);
    log.extend(l);
    let (s, l) = pharma_to_rates(&s, catalog);
    log.extend(l);
    let (s, l) = merge_variables(&s, catalog)?;
    log.extend(l);
    Ok((s, log))
}

/// Cleans every stay in parallel; output order follows input order.
pub fn clean_cohort(
    stays: &[PatientStay],
    catalog: &VariableCatalog,
    stats: &GlobalStats,
    roles: &VariableRoles,
    config: &CleanConfig,
) -> Result<(Vec<PatientStay>, AuditLog)> {
    let results: Vec<Result<(PatientStay, AuditLog)>> = stays
        .par_iter()
        .map(|s| clean_stay(s, catalog, stats, roles, config))
        .collect();
    let mut out = Vec::with_capacity(stays.len());
    let mut log = AuditLog::default();
    for r in results {
        let (s, l) = r?;
        out.push(s);
        log.extend(l);
    }
    Ok((out, log))
}

/// Sample standard deviation; zero for fewer than two values.
pub(crate) fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

#[cfg(test)]
pub(crate) mod test_util {
    use crate::catalog::VariableCatalog;
    use crate::records::{PatientStay, RawRecord, Sex, Statics, Status};
    use crate::time::{parse_timestamp, Timestamp};

    pub fn ts(s: &str) -> Timestamp {
        parse_timestamp(s).unwrap()
    }

    pub fn rec(var: &str, sample: &str, enter: &str, value: f64, status: Status) -> RawRecord {
        RawRecord {
            patient_id: 1,
            variable_id: var.into(),
            sample_time: ts(sample),
            enter_time: ts(enter),
            value,
            status,
        }
    }

    pub fn plain(var: &str, t: &str, value: f64) -> RawRecord {
        rec(var, t, t, value, Status::Plain)
    }

    pub fn stay(records: Vec<RawRecord>) -> PatientStay {
        PatientStay {
            patient_id: 1,
            admission_time: ts("2014-03-01T00:00:00Z"),
            statics: Statics {
                age: 60.0,
                sex: Some(Sex::M),
                height_cm: Some(175.0),
                emergency: false,
                surgical: false,
                apache_group: Some(1),
                apache_score: Some(10.0),
            },
            mortality: false,
            records,
        }
    }

    pub fn catalog() -> VariableCatalog {
        let text = "variable_id,name,kind,range_lo,range_hi,default,freq_class,acting_period_min,merge_group,merge_weight\n\
hr,Heart rate,continuous,0,300,75,high,,,\n\
map,MAP,continuous,0,200,80,high,,,\n\
temp,Temperature,continuous,25,45,37,medium,,,\n\
temp_core,Core probe,continuous,25,45,37,medium,,temp,\n\
temp_skin,Skin probe,continuous,25,45,37,medium,,temp,\n\
a_lac,Arterial lactate,continuous,0,30,1,low,,,\n\
v_lac,Venous lactate,continuous,0,30,1,low,,,\n\
sao2,Blood gas O2 sat,continuous,0,100,97,low,,,\n\
svo2,Venous blood gas O2 sat,continuous,0,100,70,low,,,\n\
scvo2,Central venous sat,continuous,0,100,70,low,,,\n\
weight,Weight,continuous,0,400,75,low,,,\n\
norepi,Norepinephrine,drug,0,100,0,high,60,,\n\
vasoactive,Vasoactive merged,drug,0,1000,0,high,60,,\n\
drug_a,Drug A,drug,0,1000,0,high,60,vasoactive,1\n\
drug_b,Drug B,drug,0,1000,0,high,60,vasoactive,0.5\n\
abx,Antibiotics,binary,0,1,0,low,,,\n\
abx_count,Antibiotic count,continuous,0,10,0,low,,,\n\
abx_1,Antibiotic 1,drug,0,10000,0,low,240,abx,\n\
abx_2,Antibiotic 2,drug,0,10000,0,low,240,abx,\n\
pcm,Paracetamol,drug,0,10000,0,medium,240,,\n";
        VariableCatalog::from_reader(text.as_bytes(), "catalog.csv").unwrap()
    }
}
