use std::collections::BTreeMap;

use super::{AuditAction, AuditLog};
use crate::catalog::{VarKind, VariableCatalog};
use crate::records::{PatientStay, RawRecord, Status};
use crate::time::{add_minutes, Timestamp};

/// Value of a step function at `t` (zero before the first change point).
pub(crate) fn step_value(steps: &[(Timestamp, f64)], t: &Timestamp) -> f64 {
    match steps.partition_point(|(s, _)| s <= t) {
        0 => 0.0,
        i => steps[i - 1].1,
    }
}

/// Effective dose rate of one drug from its (time-ordered) records.
/// Infusion and plain records set the running infusion rate, zero records
/// stop it, and bolus/tablet doses add dose/acting-period over the acting
/// period. Only change points are kept.
pub(crate) fn effective_rate(records: &[&RawRecord], acting_min: f64) -> Vec<(Timestamp, f64, Timestamp)> {
    let mut infusion: Vec<(Timestamp, f64)> = Vec::new();
    let mut boluses: Vec<(Timestamp, Timestamp, f64)> = Vec::new();
    let mut enter_at: BTreeMap<Timestamp, Timestamp> = BTreeMap::new();
    for r in records {
        match r.status {
            Status::Infusion | Status::Plain => infusion.push((r.sample_time, r.value)),
            Status::Zero => infusion.push((r.sample_time, 0.0)),
            Status::Bolus | Status::Tablet => {
                let end = add_minutes(&r.sample_time, acting_min);
                boluses.push((r.sample_time, end, r.value / acting_min));
                enter_at.entry(end).or_insert(r.enter_time);
            }
        }
        enter_at.entry(r.sample_time).or_insert(r.enter_time);
    }
    let times: Vec<Timestamp> = enter_at.keys().copied().collect();
    let mut out: Vec<(Timestamp, f64, Timestamp)> = Vec::new();
    for t in times {
        let mut rate = step_value(&infusion, &t);
        for (s, e, r) in &boluses {
            if *s <= t && t < *e {
                rate += r;
            }
        }
        if out.last().map(|(_, v, _)| *v != rate).unwrap_or(true) {
            out.push((t, rate, enter_at[&t]));
        }
    }
    out
}

/// Converts every drug stream to a piecewise-constant effective rate
/// (dose units per minute). Binary variables become presence flags.
pub fn pharma_to_rates(stay: &PatientStay, catalog: &VariableCatalog) -> (PatientStay, AuditLog) {
    let mut log = AuditLog::default();
    let mut out = stay.clone();
    let mut by_drug: BTreeMap<&str, Vec<&RawRecord>> = BTreeMap::new();
    let mut kept: Vec<RawRecord> = Vec::with_capacity(stay.records.len());
    for r in &stay.records {
        match catalog.get(&r.variable_id).map(|e| e.kind) {
            Some(VarKind::Drug) => by_drug.entry(r.variable_id.as_str()).or_default().push(r),
            Some(VarKind::Binary) => {
                let mut r = r.clone();
                r.value = if r.value > 0.0 { 1.0 } else { 0.0 };
                kept.push(r);
            }
            _ => kept.push(r.clone()),
        }
    }
    for (var, recs) in by_drug {
        let acting = catalog
            .get(var)
            .and_then(|e| e.acting_period_min)
            .expect("catalog validation guarantees acting periods for drugs");
        let changed = recs
            .iter()
            .any(|r| r.status != Status::Infusion)
            || recs.len() > 1;
        let steps = effective_rate(&recs, acting);
        if changed {
            log.push(
                stay.patient_id,
                var,
                recs[0].sample_time,
                AuditAction::ConvertedToRate,
                "pharma",
            );
        }
        kept.extend(steps.into_iter().map(|(t, rate, enter)| RawRecord {
            patient_id: stay.patient_id,
            variable_id: var.to_string(),
            sample_time: t,
            enter_time: enter,
            value: rate,
            status: Status::Infusion,
        }));
    }
    out.records = kept;
    out.sort_records();
    (out, log)
}
