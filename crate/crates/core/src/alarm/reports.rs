//! Analysis tables computed from a fixed-threshold alarm trace.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::eval::{count_events, corrected_precision, EventCounts};
use super::{minutes, AlarmConfig, AlarmTrace, PatientTrack};
use crate::error::{Error, Result};
use crate::grid::StaticValues;
use crate::io::{create_file, csv_writer, fmt_num, werr};
use crate::records::PatientId;

#[derive(Debug, Clone, PartialEq)]
pub struct PatientMeta {
    pub statics: StaticValues,
    /// Minutes from admission to grid index 0.
    pub start_offset_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventOutcome {
    pub patient_id: PatientId,
    pub event_start: usize,
    pub event_end: usize,
    pub caught: bool,
    /// Earliest qualifying alarm, in minutes before onset.
    pub first_alarm_lead_min: Option<f64>,
    /// Lead of the earliest alarm in (0, horizon].
    pub max_lead_min: Option<f64>,
    pub onset_since_admission_min: Option<f64>,
    pub duration_min: f64,
    /// Minutes since the previous event of the same patient ended.
    pub since_previous_min: Option<f64>,
}

pub fn event_outcomes(tracks: &[PatientTrack], traces: &[AlarmTrace], meta: &BTreeMap<PatientId, PatientMeta>, cfg: &AlarmConfig) -> Vec<EventOutcome> {
    let mut out = Vec::new();
    for (t, tr) in tracks.iter().zip(traces) {
        let a_min: Vec<f64> = tr.alarms.iter().map(|k| minutes(*k)).collect();
        let offset = meta.get(&t.patient_id).map(|m| m.start_offset_min);
        let mut prev_end: Option<f64> = None;
        for e in &t.events {
            let ts = minutes(e.start);
            let leads: Vec<f64> = a_min.iter().map(|a| ts - a).filter(|l| *l > 0.0 && *l <= cfg.horizon_min).collect();
            let first = leads.iter().copied().filter(|l| *l >= cfg.min_lead_min).reduce(f64::max);
            out.push(EventOutcome {
                patient_id: t.patient_id,
                event_start: e.start,
                event_end: e.end,
                caught: first.is_some(),
                first_alarm_lead_min: first,
                max_lead_min: leads.iter().copied().reduce(f64::max),
                onset_since_admission_min: offset.map(|o| o + ts),
                duration_min: e.duration_min() as f64,
                since_previous_min: prev_end.map(|p| ts - p),
            });
            prev_end = Some(minutes(e.end));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallRow {
    pub label: String,
    pub lower_min: f64,
    pub upper_min: f64,
    pub events: u64,
    pub caught: u64,
    pub recall: f64,
}

fn recall(caught: u64, events: u64) -> f64 {
    if events == 0 {
        0.0
    } else {
        caught as f64 / events as f64
    }
}

/// Fraction of events with an alarm whose lead lies in `(t, horizon]`,
/// for `t` in 30-minute steps.
pub fn lead_time_recall(outcomes: &[EventOutcome], cfg: &AlarmConfig) -> Vec<RecallRow> {
    let n = outcomes.len() as u64;
    let mut rows = Vec::new();
    let mut t = 0.0;
    while t < cfg.horizon_min {
        let caught = outcomes.iter().filter(|o| o.max_lead_min.is_some_and(|l| l > t)).count() as u64;
        rows.push(RecallRow { label: format!("({},{}]", fmt_num(t), fmt_num(cfg.horizon_min)), lower_min: t, upper_min: cfg.horizon_min, events: n, caught, recall: recall(caught, n) });
        t += 30.0;
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeadHistogramRow {
    pub lower_min: f64,
    pub upper_min: f64,
    pub events: u64,
}

pub fn first_alarm_histogram(outcomes: &[EventOutcome], cfg: &AlarmConfig) -> (Vec<LeadHistogramRow>, Option<f64>) {
    let leads: Vec<f64> = outcomes.iter().filter_map(|o| o.first_alarm_lead_min).collect();
    let mut rows = Vec::new();
    let mut lo = 0.0;
    while lo < cfg.horizon_min {
        let hi = lo + 30.0;
        let events = leads.iter().filter(|l| **l > lo && **l <= hi).count() as u64;
        rows.push(LeadHistogramRow { lower_min: lo, upper_min: hi, events });
        lo = hi;
    }
    let mean = if leads.is_empty() { None } else { Some(leads.iter().sum::<f64>() / leads.len() as f64) };
    (rows, mean)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumRow {
    pub stratum: String,
    pub value: String,
    pub patients: u64,
    pub events: u64,
    pub caught: u64,
    pub recall: f64,
    pub tp_alarms: u64,
    pub fp_alarms: u64,
    pub precision: f64,
}

fn band(v: f64, edges: &[f64]) -> String {
    let i = edges.partition_point(|e| *e <= v);
    match i {
        0 => format!("<{}", fmt_num(edges[0])),
        i if i == edges.len() => format!(">={}", fmt_num(edges[i - 1])),
        i => format!("[{},{})", fmt_num(edges[i - 1]), fmt_num(edges[i])),
    }
}

/// Stratum keys per patient: APACHE group, APACHE score band, age band, sex,
/// and admission type.
fn strata_of(s: &StaticValues) -> Vec<(&'static str, String)> {
    vec![
        ("apache_group", fmt_num(s.apache_group)),
        ("apache_score", band(s.apache_score, &[10.0, 20.0, 30.0, 40.0])),
        ("age", band(s.age, &[30.0, 45.0, 60.0, 75.0])),
        ("sex", if s.sex >= 0.5 { "M".into() } else { "F".into() }),
        ("admission", format!("{}{}", if s.emergency >= 0.5 { "emergency" } else { "elective" }, if s.surgical >= 0.5 { "_surgical" } else { "_medical" })),
    ]
}

/// Recall and precision per stratum. Empty strata are omitted and named in
/// the returned notes.
pub fn stratified(tracks: &[PatientTrack], traces: &[AlarmTrace], meta: &BTreeMap<PatientId, PatientMeta>, cfg: &AlarmConfig, s: f64) -> (Vec<StratumRow>, Vec<String>) {
    let mut acc: BTreeMap<(&'static str, String), (u64, EventCounts)> = BTreeMap::new();
    let mut notes = Vec::new();
    for (t, tr) in tracks.iter().zip(traces) {
        let Some(m) = meta.get(&t.patient_id) else {
            notes.push(format!("patient {} has no metadata and is not stratified", t.patient_id));
            continue;
        };
        let c = count_events(&tr.alarms, &t.events, cfg);
        for key in strata_of(&m.statics) {
            let e = acc.entry(key).or_default();
            e.0 += 1;
            e.1.tp_alarms += c.tp_alarms;
            e.1.fp_alarms += c.fp_alarms;
            e.1.caught_events += c.caught_events;
            e.1.missed_events += c.missed_events;
        }
    }
    let mut rows = Vec::new();
    for ((stratum, value), (patients, c)) in acc {
        let events = c.caught_events + c.missed_events;
        if events == 0 && c.tp_alarms + c.fp_alarms == 0 {
            notes.push(format!("stratum {stratum}={value} has no events and no alarms; omitted"));
            continue;
        }
        rows.push(StratumRow {
            stratum: stratum.into(),
            value,
            patients,
            events,
            caught: c.caught_events,
            recall: recall(c.caught_events, events),
            tp_alarms: c.tp_alarms,
            fp_alarms: c.fp_alarms,
            precision: corrected_precision(c.tp_alarms as f64, c.fp_alarms as f64, s),
        });
    }
    (rows, notes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissionRecallRow {
    pub lower_h: f64,
    pub upper_h: f64,
    pub events: u64,
    pub caught: u64,
    pub recall: f64,
    pub cumulative_events: u64,
    pub cumulative_caught: u64,
    pub cumulative_recall: f64,
}

/// Recall by event onset time since admission, per 12-hour period and
/// cumulatively, up to seven days (the last period is open-ended).
pub fn admission_recall(outcomes: &[EventOutcome]) -> Vec<AdmissionRecallRow> {
    let mut rows = Vec::new();
    let (mut ce, mut cc) = (0, 0);
    for p in 0..14 {
        let lo = p as f64 * 720.0;
        let hi = if p == 13 { f64::INFINITY } else { lo + 720.0 };
        let sel: Vec<&EventOutcome> = outcomes.iter().filter(|o| o.onset_since_admission_min.is_some_and(|t| t >= lo && t < hi)).collect();
        let events = sel.len() as u64;
        let caught = sel.iter().filter(|o| o.caught).count() as u64;
        ce += events;
        cc += caught;
        rows.push(AdmissionRecallRow {
            lower_h: lo / 60.0,
            upper_h: hi / 60.0,
            events,
            caught,
            recall: recall(caught, events),
            cumulative_events: ce,
            cumulative_caught: cc,
            cumulative_recall: recall(cc, ce),
        });
    }
    rows
}

fn binned_recall(values: &[(Option<f64>, bool)], edges: &[f64], none_label: &str) -> Vec<RecallRow> {
    let mut rows = Vec::new();
    if values.iter().any(|v| v.0.is_none()) {
        let sel: Vec<_> = values.iter().filter(|v| v.0.is_none()).collect();
        let caught = sel.iter().filter(|v| v.1).count() as u64;
        rows.push(RecallRow { label: none_label.into(), lower_min: f64::NAN, upper_min: f64::NAN, events: sel.len() as u64, caught, recall: recall(caught, sel.len() as u64) });
    }
    let mut bounds = vec![0.0];
    bounds.extend_from_slice(edges);
    bounds.push(f64::INFINITY);
    for w in bounds.windows(2) {
        let sel: Vec<_> = values.iter().filter(|v| v.0.is_some_and(|x| x >= w[0] && x < w[1])).collect();
        let caught = sel.iter().filter(|v| v.1).count() as u64;
        rows.push(RecallRow { label: band(w[0], edges), lower_min: w[0], upper_min: w[1], events: sel.len() as u64, caught, recall: recall(caught, sel.len() as u64) });
    }
    rows
}

pub fn duration_recall(outcomes: &[EventOutcome]) -> Vec<RecallRow> {
    let v: Vec<_> = outcomes.iter().map(|o| (Some(o.duration_min), o.caught)).collect();
    binned_recall(&v, &[30.0, 60.0, 120.0, 240.0, 480.0], "")
}

pub fn gap_recall(outcomes: &[EventOutcome]) -> Vec<RecallRow> {
    let v: Vec<_> = outcomes.iter().map(|o| (o.since_previous_min, o.caught)).collect();
    binned_recall(&v, &[240.0, 720.0, 1440.0], "first_event")
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(create_file(path)?);
    for r in rows {
        w.serialize(r).map_err(werr)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub events: u64,
    pub caught: u64,
    pub mean_first_alarm_lead_min: Option<f64>,
    pub notes: Vec<String>,
}

/// Writes every analysis table into `dir` and returns the summary.
pub fn write_reports(dir: &Path, tracks: &[PatientTrack], traces: &[AlarmTrace], meta: &BTreeMap<PatientId, PatientMeta>, cfg: &AlarmConfig, s: f64) -> Result<ReportSummary> {
    let outcomes = event_outcomes(tracks, traces, meta, cfg);
    write_rows(&dir.join("events.csv"), &outcomes)?;
    write_rows(&dir.join("lead_time_recall.csv"), &lead_time_recall(&outcomes, cfg))?;
    let (hist, mean) = first_alarm_histogram(&outcomes, cfg);
    write_rows(&dir.join("first_alarm_lead.csv"), &hist)?;
    let (strata, notes) = stratified(tracks, traces, meta, cfg, s);
    write_rows(&dir.join("strata.csv"), &strata)?;
    write_rows(&dir.join("admission_recall.csv"), &admission_recall(&outcomes))?;
    write_rows(&dir.join("duration_recall.csv"), &duration_recall(&outcomes))?;
    write_rows(&dir.join("gap_recall.csv"), &gap_recall(&outcomes))?;
    for n in &notes {
        log::info!("{n}");
    }
    let mut w = csv_writer(create_file(&dir.join("notes.csv"))?);
    w.write_record(["note"]).map_err(werr)?;
    for n in &notes {
        w.write_record([n]).map_err(werr)?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;
    Ok(ReportSummary {
        events: outcomes.len() as u64,
        caught: outcomes.iter().filter(|o| o.caught).count() as u64,
        mean_first_alarm_lead_min: mean,
        notes,
    })
}
