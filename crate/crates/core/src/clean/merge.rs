use std::collections::BTreeMap;

use super::pharma::step_value;
use super::{AuditAction, AuditLog};
use crate::catalog::{VarKind, VariableCatalog};
use crate::error::{Error, Result};
use crate::records::{PatientStay, RawRecord, Status};
use crate::time::{truncate_to_step, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq)]
enum MergeMode {
    Median,
    WeightedSum,
    Presence,
    Count,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn merge_mode(target: &str, catalog: &VariableCatalog, members: &[&str]) -> Result<MergeMode> {
    let entries: Vec<_> = members.iter().map(|m| catalog.get(m).unwrap()).collect();
    let kind = entries[0].kind;
    if entries.iter().any(|e| e.kind != kind) {
        return Err(Error::validation(
            format!("merge group `{target}`"),
            "members mix variable kinds",
        ));
    }
    let target_kind = catalog.get(target).map(|e| e.kind).unwrap_or(kind);
    let class_mode = if target_kind == VarKind::Binary {
        MergeMode::Presence
    } else {
        MergeMode::Count
    };
    Ok(match kind {
        VarKind::Continuous | VarKind::Categorical => MergeMode::Median,
        VarKind::Binary => class_mode,
        VarKind::Drug => {
            let weighted = entries.iter().filter(|e| e.merge_weight.is_some()).count();
            if weighted == entries.len() {
                if target_kind != VarKind::Drug {
                    return Err(Error::validation(
                        format!("merge group `{target}`"),
                        "weighted drug merge needs a drug target",
                    ));
                }
                MergeMode::WeightedSum
            } else if weighted == 0 {
                class_mode
            } else {
                return Err(Error::validation(
                    format!("merge group `{target}`"),
                    "members mix weighted and unweighted drugs",
                ));
            }
        }
    })
}

/// Collapses each merge group onto its target variable. Simultaneous
/// physiological values (same 5-minute truncated time) are reduced to their
/// median; drug rates are combined instant by instant as a weighted sum,
/// a presence flag or a count of active members.
pub fn merge_variables(stay: &PatientStay, catalog: &VariableCatalog) -> Result<(PatientStay, AuditLog)> {
    let mut log = AuditLog::default();
    let mut out = stay.clone();
    for (target, members) in catalog.merge_groups() {
        let member_ids: Vec<&str> = members.iter().map(|e| e.id.as_str()).collect();
        let mode = merge_mode(&target, catalog, &member_ids)?;
        if !out.records.iter().any(|r| member_ids.contains(&r.variable_id.as_str())) {
            continue;
        }
        let (group, rest): (Vec<RawRecord>, Vec<RawRecord>) = out
            .records
            .drain(..)
            .partition(|r| member_ids.contains(&r.variable_id.as_str()) || r.variable_id == target);
        out.records = rest;
        for r in group.iter().filter(|r| r.variable_id != target) {
            log.push(r.patient_id, &r.variable_id, r.sample_time, AuditAction::Merged, &target);
        }
        let merged = match mode {
            MergeMode::Median => merge_median(&group, &target),
            _ => merge_steps(&group, &target, mode, catalog),
        };
        out.records.extend(merged);
    }
    out.sort_records();
    Ok((out, log))
}

fn merge_median(group: &[RawRecord], target: &str) -> Vec<RawRecord> {
    let mut buckets: BTreeMap<Timestamp, Vec<&RawRecord>> = BTreeMap::new();
    for r in group {
        buckets.entry(truncate_to_step(&r.sample_time)).or_default().push(r);
    }
    buckets
        .into_values()
        .map(|rs| {
            let mut vals: Vec<f64> = rs.iter().map(|r| r.value).collect();
            let latest = rs
                .iter()
                .max_by_key(|r| (r.sample_time, r.enter_time))
                .unwrap();
            RawRecord {
                patient_id: latest.patient_id,
                variable_id: target.to_string(),
                sample_time: latest.sample_time,
                enter_time: latest.enter_time,
                value: median(&mut vals),
                status: Status::Plain,
            }
        })
        .collect()
}

fn merge_steps(group: &[RawRecord], target: &str, mode: MergeMode, catalog: &VariableCatalog) -> Vec<RawRecord> {
    let mut series: BTreeMap<&str, Vec<(Timestamp, f64)>> = BTreeMap::new();
    let mut enter_at: BTreeMap<Timestamp, Timestamp> = BTreeMap::new();
    for r in group {
        series
            .entry(r.variable_id.as_str())
            .or_default()
            .push((r.sample_time, r.value));
        enter_at.entry(r.sample_time).or_insert(r.enter_time);
    }
    let weight = |v: &str| {
        if v == target {
            1.0
        } else {
            catalog.get(v).and_then(|e| e.merge_weight).unwrap_or(1.0)
        }
    };
    let status = if mode == MergeMode::WeightedSum {
        Status::Infusion
    } else {
        Status::Plain
    };
    let pid = group[0].patient_id;
    let mut out: Vec<RawRecord> = Vec::new();
    for (t, enter) in enter_at {
        let mut acc = 0.0;
        for (var, steps) in &series {
            let v = step_value(steps, &t);
            acc += match mode {
                MergeMode::WeightedSum => weight(var) * v,
                _ => (v > 0.0) as u8 as f64,
            };
        }
        if mode == MergeMode::Presence {
            acc = acc.min(1.0);
        }
        if out.last().map(|r| r.value != acc).unwrap_or(true) {
            out.push(RawRecord {
                patient_id: pid,
                variable_id: target.to_string(),
                sample_time: t,
                enter_time: enter,
                value: acc,
                status,
            });
        }
    }
    out
}
