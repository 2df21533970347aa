//! Event-based and time-slice metrics, threshold sweeps, prevalence correction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{minutes, run_alarm_system, AlarmConfig, AlarmTrace, PatientTrack};
use crate::endpoint::Event;
use crate::error::{Error, Result};
use crate::metrics::{auprc_from_curve, auroc, pr_curve};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrevalencePair {
    /// Prevalence of the dataset results are made comparable to.
    pub reference: f64,
    /// Prevalence of the evaluated dataset.
    pub target: f64,
}

impl PrevalencePair {
    pub fn validate(&self) -> Result<()> {
        for v in [self.reference, self.target] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::validation("prevalence", format!("{v} is not in (0, 1)")));
            }
        }
        Ok(())
    }

    pub fn factor(&self) -> Result<f64> {
        correction_factor(self.reference, self.target)
    }
}

/// `s = (1/p_ref − 1) / (1/p_target − 1)`; false positives are scaled by `s`.
pub fn correction_factor(reference: f64, target: f64) -> Result<f64> {
    PrevalencePair { reference, target }.validate()?;
    Ok((1.0 / reference - 1.0) / (1.0 / target - 1.0))
}

/// `TP / (TP + s·FP)`, or 1 when nothing was flagged.
pub fn corrected_precision(tp: f64, fp: f64, s: f64) -> f64 {
    if tp + fp == 0.0 {
        1.0
    } else {
        tp / (tp + s * fp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EventCounts {
    pub tp_alarms: u64,
    pub fp_alarms: u64,
    pub caught_events: u64,
    pub missed_events: u64,
}

impl EventCounts {
    fn add(&mut self, o: &EventCounts) {
        self.tp_alarms += o.tp_alarms;
        self.fp_alarms += o.fp_alarms;
        self.caught_events += o.caught_events;
        self.missed_events += o.missed_events;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEvaluation {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
    pub counts: EventCounts,
    pub correction: f64,
    /// Precision was set to 1 because no alarm fired.
    pub no_alarms: bool,
}

impl EventEvaluation {
    pub fn from_counts(threshold: f64, c: EventCounts, s: f64) -> Self {
        let events = c.caught_events + c.missed_events;
        EventEvaluation {
            threshold,
            recall: if events == 0 { 0.0 } else { c.caught_events as f64 / events as f64 },
            precision: corrected_precision(c.tp_alarms as f64, c.fp_alarms as f64, s),
            counts: c,
            correction: s,
            no_alarms: c.tp_alarms + c.fp_alarms == 0,
        }
    }
}

/// Alarms in `[lo, hi]` minutes, from a sorted alarm list.
fn any_alarm_in(alarms_min: &[f64], lo: f64, hi: f64) -> bool {
    let i = alarms_min.partition_point(|a| *a < lo);
    i < alarms_min.len() && alarms_min[i] <= hi
}

/// Counts for one patient's alarms against its events.
pub fn count_events(alarms: &[usize], events: &[Event], cfg: &AlarmConfig) -> EventCounts {
    let a_min: Vec<f64> = alarms.iter().map(|k| minutes(*k)).collect();
    let mut starts: Vec<f64> = events.iter().map(|e| minutes(e.start)).collect();
    starts.sort_by(f64::total_cmp);
    let mut c = EventCounts::default();
    for ts in &starts {
        if any_alarm_in(&a_min, ts - cfg.horizon_min, ts - cfg.min_lead_min) {
            c.caught_events += 1;
        } else {
            c.missed_events += 1;
        }
    }
    let window = cfg.horizon_min + cfg.grey_zone_min;
    for a in &a_min {
        let i = starts.partition_point(|s| *s <= *a);
        if i < starts.len() && starts[i] - a <= window {
            c.tp_alarms += 1;
        } else {
            c.fp_alarms += 1;
        }
    }
    c
}

/// Runs the alarm system at `threshold` for every patient and aggregates.
pub fn event_metrics(tracks: &[PatientTrack], cfg: &AlarmConfig, threshold: f64) -> Result<(Vec<AlarmTrace>, EventEvaluation)> {
    let s = match &cfg.event_prevalence {
        Some(p) => p.factor()?,
        None => 1.0,
    };
    let policy = cfg.policy(threshold);
    let per: Vec<(AlarmTrace, EventCounts)> = tracks
        .par_iter()
        .map(|t| {
            let tr = run_alarm_system(t, &policy);
            let c = count_events(&tr.alarms, &t.events, cfg);
            (tr, c)
        })
        .collect();
    let mut total = EventCounts::default();
    for (_, c) in &per {
        total.add(c);
    }
    let ev = EventEvaluation::from_counts(threshold, total, s);
    Ok((per.into_iter().map(|x| x.0).collect(), ev))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub alarms: u64,
}

/// Distinct score quantiles at `n` evenly spaced levels, descending.
pub fn sweep_thresholds(tracks: &[PatientTrack], n: usize) -> Vec<f64> {
    let mut all: Vec<f64> = tracks.iter().flat_map(|t| t.points.iter().map(|p| p.1)).collect();
    if all.is_empty() {
        return Vec::new();
    }
    all.sort_by(f64::total_cmp);
    let last = all.len() - 1;
    let mut th: Vec<f64> = (0..n)
        .map(|i| all[((i as f64 / (n - 1).max(1) as f64) * last as f64).round() as usize])
        .collect();
    th.dedup();
    th.reverse();
    th
}

pub fn pr_sweep(tracks: &[PatientTrack], cfg: &AlarmConfig) -> Result<Vec<SweepPoint>> {
    sweep_thresholds(tracks, cfg.sweep_points)
        .into_iter()
        .map(|t| {
            let (_, e) = event_metrics(tracks, cfg, t)?;
            Ok(SweepPoint { threshold: t, precision: e.precision, recall: e.recall, alarms: e.counts.tp_alarms + e.counts.fp_alarms })
        })
        .collect()
}

/// Highest swept threshold reaching `target` recall; the lowest threshold
/// when none does.
pub fn threshold_for_recall(sweep: &[SweepPoint], target: f64) -> Option<f64> {
    sweep
        .iter()
        .filter(|p| p.recall >= target)
        .map(|p| p.threshold)
        .fold(None, |a: Option<f64>, t| Some(a.map_or(t, |a| a.max(t))))
        .or_else(|| sweep.iter().map(|p| p.threshold).reduce(f64::min))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimesliceMetrics {
    pub auroc: f64,
    pub auprc: f64,
    pub positives: u64,
    pub negatives: u64,
    pub prevalence: f64,
    /// AUPRC with false positives scaled by the time-slice correction factor.
    pub corrected_auprc: Option<f64>,
}

pub fn timeslice_metrics(scores: &[f64], labels: &[bool], prevalence: Option<&PrevalencePair>) -> Result<TimesliceMetrics> {
    let positives = labels.iter().filter(|l| **l).count() as u64;
    let negatives = labels.len() as u64 - positives;
    let curve = pr_curve(scores, labels)?;
    let corrected_auprc = match prevalence {
        Some(p) => {
            let s = p.factor()?;
            let adj: Vec<_> = curve
                .iter()
                .map(|pt| {
                    let mut q = *pt;
                    q.precision = if pt.precision > 0.0 { 1.0 / (1.0 + s * (1.0 - pt.precision) / pt.precision) } else { 0.0 };
                    q
                })
                .collect();
            Some(auprc_from_curve(&adj))
        }
        None => None,
    };
    Ok(TimesliceMetrics {
        auroc: auroc(scores, labels)?,
        auprc: auprc_from_curve(&curve),
        positives,
        negatives,
        prevalence: positives as f64 / labels.len() as f64,
        corrected_auprc,
    })
}
