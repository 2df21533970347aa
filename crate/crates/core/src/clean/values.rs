use std::collections::BTreeMap;

use super::{sample_std, AuditAction, AuditLog, CleanConfig, GlobalStats};
use crate::catalog::{VariableCatalog, VariableRoles};
use crate::records::{PatientStay, RawRecord, Status};
use crate::time::truncate_to_step;

/// Range filter, duplicate resolution, venous relabelling and the
/// height/weight swap, in that order.
pub fn remove_value_artefacts(
    stay: &PatientStay,
    catalog: &VariableCatalog,
    stats: &GlobalStats,
    roles: &VariableRoles,
    config: &CleanConfig,
) -> (PatientStay, AuditLog) {
    let mut log = AuditLog::default();
    let mut out = stay.clone();

    out.records.retain(|r| {
        let Some(e) = catalog.get(&r.variable_id) else { return true };
        let ok = r.value >= e.range_lo && r.value <= e.range_hi;
        if !ok {
            log.push(r.patient_id, &r.variable_id, r.sample_time, AuditAction::OutOfRange, "range");
        }
        ok
    });

    resolve_duplicates(&mut out.records, catalog, stats, config, &mut log);
    relabel_venous(&mut out.records, catalog, stats, roles, config, &mut log);
    swap_height_weight(&mut out, roles, config, &mut log);
    out.sort_records();
    (out, log)
}

fn resolve_duplicates(
    records: &mut Vec<RawRecord>,
    catalog: &VariableCatalog,
    stats: &GlobalStats,
    config: &CleanConfig,
    log: &mut AuditLog,
) {
    let mut groups: BTreeMap<(&str, chrono::NaiveDateTime), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups
            .entry((r.variable_id.as_str(), r.sample_time))
            .or_default()
            .push(i);
    }
    let mut keep = vec![true; records.len()];
    let mut new_values: Vec<(usize, f64)> = Vec::new();
    for ((var, _), idx) in &groups {
        if idx.len() < 2 {
            continue;
        }
        let is_drug = catalog.get(var).map(|e| e.is_drug()).unwrap_or(false);
        let mut drop = |i: usize, action: AuditAction, keep: &mut Vec<bool>| {
            let r = &records[i];
            log.push(r.patient_id, &r.variable_id, r.sample_time, action, "duplicate");
            keep[i] = false;
        };
        if !is_drug {
            let vals: Vec<f64> = idx.iter().map(|&i| records[i].value).collect();
            if vals.iter().all(|&v| v == vals[0]) {
                for &i in &idx[1..] {
                    drop(i, AuditAction::DuplicateIdentical, &mut keep);
                }
            } else if sample_std(&vals) < config.duplicate_rel_std * stats.std_of(var) {
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                new_values.push((idx[0], mean));
                for &i in &idx[1..] {
                    drop(i, AuditAction::DuplicateAveraged, &mut keep);
                }
            } else {
                for &i in idx {
                    drop(i, AuditAction::DuplicateUnreliable, &mut keep);
                }
            }
            continue;
        }

        let (zeros, live): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| records[i].status == Status::Zero);
        if live.is_empty() {
            for &i in &zeros[1..] {
                drop(i, AuditAction::ZeroDoseDropped, &mut keep);
            }
            continue;
        }
        for &i in &zeros {
            drop(i, AuditAction::ZeroDoseDropped, &mut keep);
        }
        let (discrete, rates): (Vec<usize>, Vec<usize>) = live
            .iter()
            .partition(|&&i| records[i].status.is_discrete_dose());
        if discrete.len() > 1 {
            let sum: f64 = discrete.iter().map(|&i| records[i].value).sum();
            new_values.push((discrete[0], sum));
            for &i in &discrete[1..] {
                drop(i, AuditAction::DoseSummed, &mut keep);
            }
        }
        if rates.len() > 1 {
            let mean = rates.iter().map(|&i| records[i].value).sum::<f64>() / rates.len() as f64;
            new_values.push((rates[0], mean));
            for &i in &rates[1..] {
                drop(i, AuditAction::DoseAveraged, &mut keep);
            }
        }
    }
    for (i, v) in new_values {
        records[i].value = v;
    }
    let mut it = keep.iter();
    records.retain(|_| *it.next().unwrap());
}

fn relabel_venous(
    records: &mut [RawRecord],
    catalog: &VariableCatalog,
    stats: &GlobalStats,
    roles: &VariableRoles,
    config: &CleanConfig,
    log: &mut AuditLog,
) {
    let limit = config.venous_rel_std * stats.o2_sat_std;
    if !(limit > 0.0) {
        return;
    }
    let mut central: BTreeMap<chrono::NaiveDateTime, f64> = BTreeMap::new();
    for r in records.iter().filter(|r| r.variable_id == roles.central_venous_sat) {
        central.insert(truncate_to_step(&r.sample_time), r.value);
    }
    let venous_times: Vec<chrono::NaiveDateTime> = records
        .iter()
        .filter(|r| r.variable_id == roles.blood_gas_sat)
        .filter(|r| {
            central
                .get(&truncate_to_step(&r.sample_time))
                .is_some_and(|cv| (r.value - cv).abs() < limit)
        })
        .map(|r| r.sample_time)
        .collect();
    if venous_times.is_empty() {
        return;
    }
    for r in records.iter_mut() {
        if !venous_times.contains(&r.sample_time) {
            continue;
        }
        if let Some((_, venous)) = roles
            .blood_gas_pairs
            .iter()
            .find(|(art, ven)| *art == r.variable_id && catalog.contains(ven))
        {
            log.push(
                r.patient_id,
                &r.variable_id,
                r.sample_time,
                AuditAction::RelabelledVenous,
                "venous",
            );
            r.variable_id = venous.clone();
        }
    }
}

fn bmi(weight_kg: f64, height_cm: f64) -> f64 {
    let h = height_cm / 100.0;
    weight_kg / (h * h)
}

fn swap_height_weight(
    stay: &mut PatientStay,
    roles: &VariableRoles,
    config: &CleanConfig,
    log: &mut AuditLog,
) {
    let (lo, hi) = config.bmi_range;
    let in_range = |b: f64| b >= lo && b <= hi;
    for r in stay.records.iter_mut() {
        if r.variable_id != roles.weight {
            continue;
        }
        let Some(height) = stay.statics.height_cm else { return };
        let w = r.value;
        if !(height > 0.0 && w > 0.0) || in_range(bmi(w, height)) {
            continue;
        }
        if in_range(bmi(height, w)) {
            log.push(r.patient_id, &r.variable_id, r.sample_time, AuditAction::BmiSwapped, "bmi");
            r.value = height;
            stay.statics.height_cm = Some(w);
        }
    }
}
