//! Alarm state machine, event-based and time-slice evaluation, reports.

pub mod eval;
pub mod reports;
pub mod scores;

use serde::{Deserialize, Serialize};

use crate::endpoint::Event;
use crate::error::{Error, Result};
use crate::records::PatientId;
use crate::time::GRID_STEP_MIN;

pub use eval::{
    correction_factor, corrected_precision, event_metrics, pr_sweep, sweep_thresholds, threshold_for_recall,
    timeslice_metrics, EventEvaluation, PrevalencePair, SweepPoint, TimesliceMetrics,
};
pub use scores::{load_scores, read_scores, save_scores, write_scores, ScoreRow};

const STEP: f64 = GRID_STEP_MIN as f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlarmConfig {
    pub silencing_min: f64,
    pub reset_min: f64,
    pub grey_zone_min: f64,
    /// Alarms up to this long before an onset are true positives.
    pub horizon_min: f64,
    /// Events count as caught only by alarms at least this early.
    pub min_lead_min: f64,
    /// Recall the operating threshold is chosen for on validation.
    pub target_recall: f64,
    pub sweep_points: usize,
    /// Overrides the validation-chosen threshold.
    pub threshold: Option<f64>,
    /// Time-slice label prevalences for precision correction.
    pub timeslice_prevalence: Option<PrevalencePair>,
    /// Event prevalences (random-alarm AUPRCs) for event precision correction.
    pub event_prevalence: Option<PrevalencePair>,
}

impl Default for AlarmConfig {
    fn default() -> Self {
        AlarmConfig {
            silencing_min: 30.0,
            reset_min: 25.0,
            grey_zone_min: 0.0,
            horizon_min: 480.0,
            min_lead_min: 5.0,
            target_recall: 0.9,
            sweep_points: 200,
            threshold: None,
            timeslice_prevalence: None,
            event_prevalence: None,
        }
    }
}

impl AlarmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::validation(format!("alarm.{f}"), m));
        for (f, v) in [("silencing_min", self.silencing_min), ("grey_zone_min", self.grey_zone_min), ("horizon_min", self.horizon_min)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(f, "must be a non-negative number of minutes");
            }
            if v % STEP != 0.0 {
                return bad(f, "must be a multiple of the 5-minute grid step");
            }
        }
        if !(self.reset_min >= 0.0) || !self.reset_min.is_finite() {
            return bad("reset_min", "must be a non-negative number of minutes");
        }
        if !(self.min_lead_min >= 0.0) || self.min_lead_min > self.horizon_min {
            return bad("min_lead_min", "must lie in [0, horizon_min]");
        }
        if !(self.target_recall > 0.0 && self.target_recall <= 1.0) {
            return bad("target_recall", "must lie in (0, 1]");
        }
        if self.sweep_points < 2 {
            return bad("sweep_points", "must be at least 2");
        }
        if let Some(t) = self.threshold {
            if !(0.0..=1.0).contains(&t) {
                return bad("threshold", "must lie in [0, 1]");
            }
        }
        for p in [&self.timeslice_prevalence, &self.event_prevalence].into_iter().flatten() {
            p.validate()?;
        }
        Ok(())
    }

    pub fn policy(&self, threshold: f64) -> AlarmPolicy {
        AlarmPolicy { threshold, silencing_min: self.silencing_min, reset_min: self.reset_min, grey_zone_min: self.grey_zone_min }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlarmPolicy {
    pub threshold: f64,
    pub silencing_min: f64,
    pub reset_min: f64,
    pub grey_zone_min: f64,
}

/// Scores at the stable grid points of one patient, plus their events.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatientTrack {
    pub patient_id: PatientId,
    /// `(grid index, score)`, ascending by index.
    pub points: Vec<(usize, f64)>,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AlarmTrace {
    pub patient_id: PatientId,
    pub alarms: Vec<usize>,
    /// `(event end index, new deadline in minutes)` for each reset applied.
    pub resets: Vec<(usize, f64)>,
}

fn minutes(k: usize) -> f64 {
    k as f64 * STEP
}

/// Runs the alarm state machine over one patient's scored points.
///
/// An alarm fires at a point with score ≥ τ once the silencing deadline has
/// passed, and sets the deadline `silencing_min` ahead. When an event ends
/// while the system is silenced, the deadline becomes event end + reset.
pub fn run_alarm_system(track: &PatientTrack, policy: &AlarmPolicy) -> AlarmTrace {
    let mut ends: Vec<usize> = track.events.iter().map(|e| e.end).collect();
    ends.sort_unstable();
    let mut next_end = 0;
    let mut deadline = f64::NEG_INFINITY;
    let mut trace = AlarmTrace { patient_id: track.patient_id, ..Default::default() };
    for &(k, score) in &track.points {
        let t = minutes(k);
        while next_end < ends.len() && minutes(ends[next_end]) < t {
            let te = minutes(ends[next_end]);
            if deadline > te {
                deadline = te + policy.reset_min;
                trace.resets.push((ends[next_end], deadline));
            }
            next_end += 1;
        }
        if t >= deadline && score >= policy.threshold {
            trace.alarms.push(k);
            deadline = t + policy.silencing_min;
        }
    }
    trace
}

/// Groups score rows and events into per-patient tracks. Only patients with
/// scores are evaluated.
pub fn build_tracks(scores: &[ScoreRow], events: &crate::endpoint::EventTable) -> Vec<PatientTrack> {
    use std::collections::BTreeMap;
    let mut map: BTreeMap<PatientId, PatientTrack> = BTreeMap::new();
    for r in scores {
        map.entry(r.patient_id)
            .or_insert_with(|| PatientTrack { patient_id: r.patient_id, ..Default::default() })
            .points
            .push((r.grid_index, r.score));
    }
    for (pid, evs) in events {
        if let Some(t) = map.get_mut(pid) {
            t.events = evs.clone();
        }
    }
    let mut out: Vec<PatientTrack> = map.into_values().collect();
    for t in &mut out {
        t.points.sort_by_key(|p| p.0);
        t.events.sort_by_key(|e| e.start);
    }
    out
}
