//! Patient-adaptive imputation onto the 5-minute grid.
//!
//! Each non-medication variable is forward-filled while the last real
//! measurement is younger than `m + iqr` minutes (its median and IQR
//! sampling interval). After that the series moves linearly from the last
//! value to the median of the preceding `2(m + 2·iqr)` minutes over that same
//! span, and stays there until the next measurement. Drug rates and binary
//! flags are step functions and are carried forward indefinitely.

use std::collections::BTreeMap;

use chrono::TimeDelta;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{FreqClass, VarKind, VariableCatalog, VariableEntry, VariableRoles};
use crate::error::{Error, Result};
use crate::grid::{GridSeries, GridStay, StaticValues};
use crate::records::{ExclusionReason, PatientId, PatientStay, Sex};
use crate::stats::{iqr_sorted, mean, mode, quantile_sorted, sorted_copy};
use crate::time::{
    grid_index_floor, minutes_between, Timestamp, GRID_STEP_MIN, MAX_GRID_POINTS, MAX_STAY_MIN,
};

/// Fewer observed intervals than this and the frequency-class fallback is used.
pub const MIN_INTERVALS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub median_min: f64,
    pub iqr_min: f64,
    pub fallback: bool,
}

impl SamplingParams {
    pub fn fallback_for(class: FreqClass) -> Self {
        let (m, iqr) = match class {
            FreqClass::High => (5.0, 5.0),
            FreqClass::Medium => (240.0, 240.0),
            FreqClass::Low => (960.0, 480.0),
        };
        SamplingParams { median_min: m, iqr_min: iqr, fallback: true }
    }

    pub fn forward_fill_min(&self) -> f64 {
        self.median_min + self.iqr_min
    }

    pub fn return_window_min(&self) -> f64 {
        2.0 * (self.median_min + 2.0 * self.iqr_min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationParams {
    pub sampling: BTreeMap<String, SamplingParams>,
    /// Training mean or mode of each static attribute.
    pub statics: StaticValues,
}

fn is_step_kind(entry: &VariableEntry) -> bool {
    matches!(entry.kind, VarKind::Drug | VarKind::Binary)
}

/// Fits sampling-interval statistics and static fill values on training stays.
pub fn fit_imputation_params(stays: &[PatientStay], catalog: &VariableCatalog) -> Result<ImputationParams> {
    if stays.is_empty() {
        return Err(Error::InsufficientData("imputation fit needs at least one training stay".into()));
    }
    let mut intervals: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for stay in stays {
        let mut last: BTreeMap<&str, Timestamp> = BTreeMap::new();
        for r in &stay.records {
            if let Some(prev) = last.insert(r.variable_id.as_str(), r.sample_time) {
                let gap = minutes_between(&prev, &r.sample_time);
                if gap > 0.0 {
                    intervals.entry(r.variable_id.as_str()).or_default().push(gap);
                }
            }
        }
    }
    let mut sampling = BTreeMap::new();
    for entry in catalog.output_variables() {
        let p = match intervals.get(entry.id.as_str()) {
            Some(iv) if iv.len() >= MIN_INTERVALS => {
                let sorted = sorted_copy(iv);
                SamplingParams {
                    median_min: quantile_sorted(&sorted, 0.5),
                    iqr_min: iqr_sorted(&sorted),
                    fallback: false,
                }
            }
            _ => SamplingParams::fallback_for(entry.freq_class),
        };
        sampling.insert(entry.id.clone(), p);
    }
    Ok(ImputationParams { sampling, statics: fit_static_fill(stays) })
}

fn fit_static_fill(stays: &[PatientStay]) -> StaticValues {
    let collect = |f: &dyn Fn(&PatientStay) -> Option<f64>| -> Vec<f64> { stays.iter().filter_map(f).collect() };
    let or = |v: f64, d: f64| if v.is_nan() { d } else { v };
    StaticValues {
        age: or(mean(&collect(&|s| Some(s.statics.age))), 65.0),
        sex: or(
            mode(&collect(&|s| s.statics.sex.map(|x| (x == Sex::M) as u8 as f64))),
            1.0,
        ),
        height_cm: or(mean(&collect(&|s| s.statics.height_cm)), 170.0),
        emergency: or(mode(&collect(&|s| Some(s.statics.emergency as u8 as f64))), 0.0),
        surgical: or(mode(&collect(&|s| Some(s.statics.surgical as u8 as f64))), 0.0),
        apache_group: or(mode(&collect(&|s| s.statics.apache_group.map(|g| g as f64))), 0.0),
        apache_score: or(mean(&collect(&|s| s.statics.apache_score)), 0.0),
    }
}

fn fill_statics(stay: &PatientStay, fill: &StaticValues) -> StaticValues {
    let s = &stay.statics;
    StaticValues {
        age: s.age,
        sex: s.sex.map(|x| (x == Sex::M) as u8 as f64).unwrap_or(fill.sex),
        height_cm: s.height_cm.unwrap_or(fill.height_cm),
        emergency: s.emergency as u8 as f64,
        surgical: s.surgical as u8 as f64,
        apache_group: s.apache_group.map(|g| g as f64).unwrap_or(fill.apache_group),
        apache_score: s.apache_score.unwrap_or(fill.apache_score),
    }
}

fn bucket(t_min: f64) -> i64 {
    (t_min / GRID_STEP_MIN as f64).floor() as i64
}

/// Adaptive fill of one variable. `obs` holds (minutes after grid start,
/// value) in time order; times may be negative (history before the grid).
pub fn fill_adaptive(obs: &[(f64, f64)], len: usize, default: f64, p: &SamplingParams) -> (Vec<f64>, Vec<bool>) {
    let thr = p.forward_fill_min();
    let w = p.return_window_min();
    let mut values = Vec::with_capacity(len);
    let mut measured = Vec::with_capacity(len);
    let mut n_seen = 0usize;
    let mut target: Option<f64> = None;
    for k in 0..len {
        let tk = (k as i64 * GRID_STEP_MIN) as f64;
        let before = n_seen;
        while n_seen < obs.len() && bucket(obs[n_seen].0) <= k as i64 {
            n_seen += 1;
        }
        if n_seen != before {
            target = None;
        }
        measured.push(n_seen > 0 && bucket(obs[n_seen - 1].0) == k as i64);
        if n_seen == 0 {
            values.push(default);
            continue;
        }
        let (tl, vl) = obs[n_seen - 1];
        if tk - tl < thr {
            values.push(vl);
            continue;
        }
        let start = tl + thr;
        let tgt = *target.get_or_insert_with(|| {
            let recent: Vec<f64> = obs[..n_seen]
                .iter()
                .filter(|(t, _)| *t >= start - w)
                .map(|(_, v)| *v)
                .collect();
            quantile_sorted(&sorted_copy(&recent), 0.5)
        });
        let frac = if w > 0.0 { ((tk - start) / w).min(1.0) } else { 1.0 };
        values.push(vl + (tgt - vl) * frac);
    }
    (values, measured)
}

/// Step-function fill: the last value at or before each grid bucket.
pub fn fill_step(obs: &[(f64, f64)], len: usize, default: f64) -> (Vec<f64>, Vec<bool>) {
    let mut values = Vec::with_capacity(len);
    let mut measured = Vec::with_capacity(len);
    let mut n_seen = 0usize;
    for k in 0..len {
        while n_seen < obs.len() && bucket(obs[n_seen].0) <= k as i64 {
            n_seen += 1;
        }
        measured.push(n_seen > 0 && bucket(obs[n_seen - 1].0) == k as i64);
        values.push(if n_seen == 0 { default } else { obs[n_seen - 1].1 });
    }
    (values, measured)
}

/// Grid bounds: first heart rate to the earlier of the last heart rate and
/// admission + 28 days.
fn grid_bounds(stay: &PatientStay, roles: &VariableRoles) -> std::result::Result<(Timestamp, usize), ExclusionReason> {
    let mut hr = stay
        .records
        .iter()
        .filter(|r| r.variable_id == roles.heart_rate)
        .map(|r| r.sample_time);
    let first = hr.next().ok_or(ExclusionReason::NoHeartRate)?;
    let (first, last) = hr.fold((first, first), |(lo, hi), t| (lo.min(t), hi.max(t)));
    let end = last.min(stay.admission_time + TimeDelta::minutes(MAX_STAY_MIN));
    if end < first {
        return Err(ExclusionReason::EmptyGrid);
    }
    let len = (grid_index_floor(&first, &end) + 1) as usize;
    Ok((first, len.min(MAX_GRID_POINTS)))
}

pub fn impute_stay(
    stay: &PatientStay,
    params: &ImputationParams,
    catalog: &VariableCatalog,
    roles: &VariableRoles,
) -> std::result::Result<GridStay, ExclusionReason> {
    let (start, len) = grid_bounds(stay, roles)?;
    let mut by_var: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &stay.records {
        by_var
            .entry(r.variable_id.as_str())
            .or_default()
            .push((minutes_between(&start, &r.sample_time), r.value));
    }
    let series = catalog
        .output_variables()
        .map(|entry| {
            let obs = by_var.get(entry.id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            let (values, measured) = if is_step_kind(entry) {
                fill_step(obs, len, entry.default)
            } else {
                let p = params
                    .sampling
                    .get(&entry.id)
                    .copied()
                    .unwrap_or_else(|| SamplingParams::fallback_for(entry.freq_class));
                fill_adaptive(obs, len, entry.default, &p)
            };
            GridSeries { variable_id: entry.id.clone(), values, measured }
        })
        .collect();
    Ok(GridStay {
        patient_id: stay.patient_id,
        admission_time: stay.admission_time,
        grid_start: start,
        len,
        statics: fill_statics(stay, &params.statics),
        series,
        states: Vec::new(),
        labels: Vec::new(),
    })
}

/// Imputes every stay in parallel, keeping input order.
pub fn impute_cohort(
    stays: &[PatientStay],
    params: &ImputationParams,
    catalog: &VariableCatalog,
    roles: &VariableRoles,
) -> (Vec<GridStay>, Vec<(PatientId, ExclusionReason)>) {
    let results: Vec<_> = stays
        .par_iter()
        .map(|s| (s.patient_id, impute_stay(s, params, catalog, roles)))
        .collect();
    let mut grids = Vec::new();
    let mut excluded = Vec::new();
    for (pid, r) in results {
        match r {
            Ok(g) => grids.push(g),
            Err(reason) => {
                log::info!("patient {pid} excluded from grid: {reason:?}");
                excluded.push((pid, reason));
            }
        }
    }
    (grids, excluded)
}
