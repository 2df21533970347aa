//! Seeded synthetic ICU cohorts with implanted circulatory deteriorations.
//!
//! Each patient's physiology is a set of mean-reverting walks. Patients
//! picked for events get a precursor phase (falling MAP, rising lactate and
//! heart rate) followed by an interval where MAP ≤ 65 and lactate ≥ 2.

use std::io::Write;
use std::path::Path;

use chrono::{Datelike, TimeDelta};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::catalog::{write_catalog, VariableCatalog};
use crate::error::{Error, Result};
use crate::io::{create_file, csv_writer, werr};
use crate::records::{save_records, save_statics, PatientId, PatientStay, RawRecord, Sex, Statics, StaticsRow, Status};
use crate::time::{format_timestamp, parse_timestamp, Timestamp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub patients: usize,
    pub seed: u64,
    pub stay_hours_median: f64,
    pub stay_hours_sigma: f64,
    pub min_stay_hours: f64,
    pub max_stay_hours: f64,
    /// Fraction of patients given at least one event.
    pub event_rate: f64,
    /// Chance that a patient with an event gets a second one.
    pub second_event_rate: f64,
    pub event_minutes: (f64, f64),
    pub precursor_minutes: (f64, f64),
    /// Scales precursor drift; 0 removes it.
    pub signal_strength: f64,
    /// Baseline shift of event patients (lower MAP, higher lactate and HR).
    pub frailty_shift: f64,
    /// Chance an event is treated with norepinephrine.
    pub vasopressor_rate: f64,
    pub lactate_interval_min: f64,
    pub glucose_interval_min: f64,
    pub temperature_interval_min: f64,
    pub out_of_range_rate: f64,
    pub duplicate_rate: f64,
    pub timestamp_error_rate: f64,
    /// Patients with an age outside the admissible range.
    pub underage_rate: f64,
    pub first_admission: String,
    pub last_admission: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            patients: 200,
            seed: 0,
            stay_hours_median: 30.0,
            stay_hours_sigma: 0.4,
            min_stay_hours: 16.0,
            max_stay_hours: 96.0,
            event_rate: 0.30,
            second_event_rate: 0.2,
            event_minutes: (60.0, 360.0),
            precursor_minutes: (60.0, 480.0),
            signal_strength: 1.0,
            frailty_shift: 0.5,
            vasopressor_rate: 0.5,
            lactate_interval_min: 120.0,
            glucose_interval_min: 240.0,
            temperature_interval_min: 60.0,
            out_of_range_rate: 0.0,
            duplicate_rate: 0.0,
            timestamp_error_rate: 0.0,
            underage_rate: 0.0,
            first_admission: "2008-01-01T00:00:00Z".into(),
            last_admission: "2016-12-31T00:00:00Z".into(),
        }
    }
}

impl SynthConfig {
    /// Stronger precursors and patient-level separation.
    pub fn strong() -> Self {
        SynthConfig { signal_strength: 2.0, frailty_shift: 1.0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: String| Err(Error::validation(format!("synth.{f}"), m));
        for (f, v) in [
            ("event_rate", self.event_rate),
            ("second_event_rate", self.second_event_rate),
            ("vasopressor_rate", self.vasopressor_rate),
            ("out_of_range_rate", self.out_of_range_rate),
            ("duplicate_rate", self.duplicate_rate),
            ("timestamp_error_rate", self.timestamp_error_rate),
            ("underage_rate", self.underage_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(f, format!("{v} is not in [0, 1]"));
            }
        }
        if self.patients == 0 {
            return bad("patients", "must be positive".into());
        }
        if !(self.min_stay_hours > 0.0 && self.min_stay_hours <= self.max_stay_hours && self.max_stay_hours <= 28.0 * 24.0) {
            return bad("max_stay_hours", "need 0 < min_stay_hours <= max_stay_hours <= 672".into());
        }
        if !(self.stay_hours_median > 0.0 && self.stay_hours_sigma >= 0.0) {
            return bad("stay_hours_median", "must be positive".into());
        }
        for (f, (lo, hi)) in [("event_minutes", self.event_minutes), ("precursor_minutes", self.precursor_minutes)] {
            if !(lo > 0.0 && lo <= hi) {
                return bad(f, format!("invalid range ({lo}, {hi})"));
            }
        }
        if self.event_minutes.0 < 30.0 {
            return bad("event_minutes", "events shorter than 30 minutes cannot be annotated".into());
        }
        if !(self.signal_strength >= 0.0 && self.frailty_shift >= 0.0) {
            return bad("signal_strength", "must be non-negative".into());
        }
        for (f, v) in [
            ("lactate_interval_min", self.lactate_interval_min),
            ("glucose_interval_min", self.glucose_interval_min),
            ("temperature_interval_min", self.temperature_interval_min),
        ] {
            if !(v >= 5.0) {
                return bad(f, "must be at least 5 minutes".into());
            }
        }
        let needed = (self.precursor_minutes.1 + self.event_minutes.1 + 2.0 * LEAD_IN_MIN) / 60.0;
        if self.event_rate > 0.0 && needed > self.max_stay_hours {
            return bad("event_minutes", format!("an event with its precursor needs {needed:.1} h but stays last at most {} h", self.max_stay_hours));
        }
        let (a, b) = (parse_timestamp(&self.first_admission), parse_timestamp(&self.last_admission));
        match (a, b) {
            (Some(a), Some(b)) if a <= b => Ok(()),
            _ => bad("last_admission", "admission window must be two ordered timestamps".into()),
        }
    }
}

/// Quiet time before a precursor and after an event's end.
const LEAD_IN_MIN: f64 = 120.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TruthEvent {
    pub patient_id: PatientId,
    pub onset: Timestamp,
    /// Last minute at which failure conditions hold.
    pub end: Timestamp,
}

#[derive(Debug, Clone)]
pub struct SynthCohort {
    pub catalog: VariableCatalog,
    pub stays: Vec<PatientStay>,
    pub truth: Vec<TruthEvent>,
}

pub const CATALOG_CSV: &str = "variable_id,name,kind,range_lo,range_hi,default,freq_class,acting_period_min,merge_group,merge_weight
hr,Heart rate,continuous,0,300,80,high,,,
map,Mean arterial pressure,continuous,0,200,80,high,,,
rr,Respiratory rate,continuous,0,80,18,high,,,
temp,Temperature,continuous,25,45,37,medium,,,
a_lac,Arterial lactate,continuous,0,30,1.2,low,,,
v_lac,Venous lactate,continuous,0,30,1.2,low,,,
glucose,Glucose,continuous,0,50,6.5,low,,,
norepi,Norepinephrine,drug,0,10,0,high,60,,
epi,Epinephrine,drug,0,10,0,high,60,,
vaso,Vasopressin,drug,0,10,0,high,60,,
dobu,Dobutamine,drug,0,100,0,high,60,,
";

pub fn synth_catalog() -> VariableCatalog {
    VariableCatalog::from_reader(CATALOG_CSV.as_bytes(), "synth catalog").expect("built-in catalog is valid")
}

#[derive(Clone, Copy)]
struct Episode {
    precursor_start: f64,
    onset: f64,
    end: f64,
    vasopressor: Option<f64>,
}

/// Stationary OU noise sampled every 5 minutes.
fn ou_path(rng: &mut ChaCha8Rng, n: usize, theta: f64, sd: f64) -> Vec<f64> {
    let step = Normal::new(0.0, sd * (1.0 - (1.0 - theta) * (1.0 - theta)).sqrt()).unwrap();
    let mut x = Normal::new(0.0, sd).unwrap().sample(rng);
    (0..n)
        .map(|_| {
            let cur = x;
            x = (1.0 - theta) * x + step.sample(rng);
            cur
        })
        .collect()
}

/// 0 outside precursors, rising linearly to 1 at onset; `Some(..)` inside
/// an event.
fn phase(eps: &[Episode], t: f64) -> (f64, Option<usize>) {
    for (i, e) in eps.iter().enumerate() {
        if t >= e.onset && t <= e.end {
            return (1.0, Some(i));
        }
        if t >= e.precursor_start && t < e.onset {
            return ((t - e.precursor_start) / (e.onset - e.precursor_start), None);
        }
    }
    (0.0, None)
}

fn near_onset(eps: &[Episode], t: f64, before: f64) -> bool {
    eps.iter().any(|e| t >= e.onset - before && t < e.onset)
}

fn after_end(eps: &[Episode], t: f64, within: f64) -> bool {
    eps.iter().any(|e| t > e.end && t <= e.end + within)
}

struct PatientPlan {
    frail: bool,
    stay_min: f64,
    episodes: Vec<Episode>,
}

fn plan_patient(rng: &mut ChaCha8Rng, cfg: &SynthConfig, with_event: bool) -> PatientPlan {
    let los = LogNormal::new(cfg.stay_hours_median.ln(), cfg.stay_hours_sigma).unwrap();
    let mut stay_min = (los.sample(rng).clamp(cfg.min_stay_hours, cfg.max_stay_hours) * 60.0 / 5.0).round() * 5.0;
    let mut episodes = Vec::new();
    if with_event {
        let n = if rng.gen::<f64>() < cfg.second_event_rate { 2 } else { 1 };
        let mut earliest = 0.0;
        for k in 0..n {
            let p = (rng.gen_range(cfg.precursor_minutes.0..=cfg.precursor_minutes.1) / 5.0).round() * 5.0;
            let d = (rng.gen_range(cfg.event_minutes.0..=cfg.event_minutes.1) / 5.0).round() * 5.0;
            let min_onset = earliest + LEAD_IN_MIN + p;
            if k == 0 && min_onset + d + LEAD_IN_MIN > stay_min {
                stay_min = ((min_onset + d + LEAD_IN_MIN) / 5.0).ceil() * 5.0;
            }
            let max_onset = stay_min - d - LEAD_IN_MIN;
            if max_onset < min_onset {
                break;
            }
            let onset = (rng.gen_range(min_onset..=max_onset) / 5.0).round() * 5.0;
            let vasopressor = (rng.gen::<f64>() < cfg.vasopressor_rate).then(|| rng.gen_range(0.05..0.3));
            episodes.push(Episode { precursor_start: onset - p, onset, end: onset + d, vasopressor });
            earliest = onset + d;
        }
    }
    PatientPlan { frail: with_event, stay_min, episodes }
}

fn record(pid: PatientId, var: &str, adm: &Timestamp, minute: f64, value: f64, status: Status, rng: &mut ChaCha8Rng) -> RawRecord {
    let sample_time = *adm + TimeDelta::seconds((minute * 60.0).round() as i64);
    let enter_time = sample_time + TimeDelta::seconds(rng.gen_range(0..600));
    RawRecord { patient_id: pid, variable_id: var.into(), sample_time, enter_time, value, status }
}

fn round_to(v: f64, digits: i32) -> f64 {
    let f = 10f64.powi(digits);
    (v * f).round() / f
}

fn generate_patient(pid: PatientId, admission: Timestamp, plan: &PatientPlan, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (PatientStay, Vec<TruthEvent>) {
    let s = cfg.signal_strength;
    let shift = if plan.frail { cfg.frailty_shift } else { 0.0 };
    let eps = &plan.episodes;
    let n = (plan.stay_min / 5.0) as usize + 1;
    let mut records = Vec::new();

    let hr_noise = ou_path(rng, n, 0.2, 6.0);
    let map_noise = ou_path(rng, n, 0.2, 3.0);
    let rr_noise = ou_path(rng, n, 0.3, 2.5);
    let hr_base = rng.gen_range(70.0..90.0) + 8.0 * shift;
    let map_base = rng.gen_range(78.0..88.0) - 5.0 * shift;
    let rr_base = rng.gen_range(14.0..20.0);
    for k in 0..n {
        let t = k as f64 * 5.0;
        let (ramp, inside) = phase(eps, t);
        let jitter = if k == 0 { 0.0 } else { rng.gen_range(-2.0f64..=0.0).round() };
        let tm = (t + jitter).max(0.0);
        let hr = if inside.is_some() { hr_base + 25.0 } else { hr_base + 8.0 * s * ramp } + hr_noise[k];
        records.push(record(pid, "hr", &admission, tm, round_to(hr.clamp(35.0, 200.0), 0), Status::Plain, rng));
        let mut map = match inside {
            Some(_) => (57.0 + map_noise[k] * 0.5).min(63.0),
            None => map_base - 6.0 * s * ramp + map_noise[k],
        };
        if inside.is_none() && near_onset(eps, t, 60.0) {
            map = map.max(67.0);
        }
        records.push(record(pid, "map", &admission, tm, round_to(map.clamp(30.0, 150.0), 0), Status::Plain, rng));
        records.push(record(pid, "rr", &admission, tm, round_to((rr_base + rr_noise[k]).clamp(6.0, 45.0), 0), Status::Plain, rng));
    }

    // Lactate: routine draws plus forced draws around events.
    let lac_base = rng.gen_range(0.8..1.2) + 0.4 * shift;
    let lac_noise = Normal::new(0.0, 0.08).unwrap();
    let mut lac_times: Vec<f64> = Vec::new();
    let mut t = rng.gen_range(0.0..cfg.lactate_interval_min);
    while t < plan.stay_min {
        lac_times.push((t / 5.0).round() * 5.0);
        let dense = eps.iter().any(|e| t >= e.precursor_start && t <= e.end);
        let iv = if dense { cfg.lactate_interval_min / 2.0 } else { cfg.lactate_interval_min };
        t += iv * rng.gen_range(0.8..1.2);
    }
    for e in eps {
        let mut t = e.onset;
        while t <= e.end {
            lac_times.push(t);
            t += 30.0;
        }
        lac_times.extend([e.onset - 30.0, e.end, e.end + 10.0]);
    }
    lac_times.retain(|t| *t >= 0.0 && *t <= plan.stay_min);
    lac_times.sort_by(f64::total_cmp);
    lac_times.dedup();
    // Drop routine draws inside events that would break the forced pattern.
    lac_times.retain(|t| !eps.iter().any(|e| *t > e.onset - 30.0 && *t < e.onset));
    for &t in &lac_times {
        let (ramp, inside) = phase(eps, t);
        let v = match inside {
            Some(_) => (3.0 + 0.4 * s + 0.3 * lac_noise.sample(rng) / 0.08).max(2.4),
            None => {
                let v = lac_base + (1.85 - lac_base).max(0.0) * (s / (1.0 + s)) * 2.0 * ramp.min(1.0) + lac_noise.sample(rng);
                let cap = if after_end(eps, t, 60.0) { 1.5 } else { 1.9 };
                v.min(cap)
            }
        };
        records.push(record(pid, "a_lac", &admission, t, round_to(v.max(0.3), 2), Status::Plain, rng));
    }

    for (var, iv, base, sd, lo, hi) in [
        ("temp", cfg.temperature_interval_min, 37.2f64, 0.4, 34.0, 41.0),
        ("glucose", cfg.glucose_interval_min, 6.5, 1.2, 2.5, 20.0),
    ] {
        let noise = Normal::new(0.0, sd).unwrap();
        let mut t = rng.gen_range(0.0..iv);
        while t < plan.stay_min {
            let v = (base + noise.sample(rng)).clamp(lo, hi);
            records.push(record(pid, var, &admission, t.round(), round_to(v, 1), Status::Plain, rng));
            t += iv * rng.gen_range(0.7..1.3);
        }
    }

    for e in eps {
        if let Some(rate) = e.vasopressor {
            records.push(record(pid, "norepi", &admission, e.onset + 15.0, round_to(rate, 3), Status::Infusion, rng));
            records.push(record(pid, "norepi", &admission, e.end, 0.0, Status::Zero, rng));
        }
    }

    let truth = eps
        .iter()
        .map(|e| TruthEvent {
            patient_id: pid,
            onset: admission + TimeDelta::minutes(e.onset as i64),
            end: admission + TimeDelta::minutes(e.end as i64),
        })
        .collect();

    let age = if rng.gen::<f64>() < cfg.underage_rate { rng.gen_range(5.0f64..15.0).round() } else { Normal::new(63.0f64, 15.0).unwrap().sample(rng).clamp(18.0, 95.0).round() };
    let statics = Statics {
        age,
        sex: Some(if rng.gen_bool(0.6) { Sex::M } else { Sex::F }),
        height_cm: Some(round_to(Normal::new(172.0, 9.0).unwrap().sample(rng), 0)),
        emergency: rng.gen_bool(0.5),
        surgical: rng.gen_bool(0.4),
        apache_group: Some(rng.gen_range(1..=6)),
        apache_score: Some(round_to((15.0f64 + 8.0 * shift + Normal::new(0.0, 5.0).unwrap().sample(rng)).clamp(0.0, 70.0), 0)),
    };
    let mortality = rng.gen::<f64>() < if plan.frail { 0.2 } else { 0.05 };
    let mut stay = PatientStay { patient_id: pid, admission_time: admission, statics, mortality, records };
    inject_artefacts(&mut stay, cfg, rng);
    stay.sort_records();
    (stay, truth)
}

fn inject_artefacts(stay: &mut PatientStay, cfg: &SynthConfig, rng: &mut ChaCha8Rng) {
    if cfg.out_of_range_rate == 0.0 && cfg.duplicate_rate == 0.0 && cfg.timestamp_error_rate == 0.0 {
        return;
    }
    let mut extra = Vec::new();
    for r in stay.records.iter_mut() {
        if r.status != Status::Plain {
            continue;
        }
        if rng.gen::<f64>() < cfg.out_of_range_rate {
            r.value = if rng.gen_bool(0.5) { -1.0 } else { 9999.0 };
        } else if rng.gen::<f64>() < cfg.duplicate_rate {
            extra.push(r.clone());
        } else if rng.gen::<f64>() < cfg.timestamp_error_rate {
            let d = r.sample_time.date();
            if !(d.month() == 2 && d.day() == 29) {
                if let Some(nd) = d.with_year(d.year() - 1) {
                    r.sample_time = nd.and_time(r.sample_time.time());
                }
            }
        }
    }
    stay.records.extend(extra);
}

/// Generates a cohort; the output depends only on the config (incl. seed).
pub fn generate_cohort(cfg: &SynthConfig) -> Result<SynthCohort> {
    cfg.validate()?;
    let first = parse_timestamp(&cfg.first_admission).ok_or_else(|| Error::validation("synth.first_admission", "invalid timestamp"))?;
    let last = parse_timestamp(&cfg.last_admission).ok_or_else(|| Error::validation("synth.last_admission", "invalid timestamp"))?;
    let span = (last - first).num_minutes().max(0);
    let mut ids: Vec<usize> = (0..cfg.patients).collect();
    ids.shuffle(&mut crate::rng::stream(cfg.seed, "synth/events"));
    let n_event = (cfg.event_rate * cfg.patients as f64).round() as usize;
    let mut has_event = vec![false; cfg.patients];
    for i in &ids[..n_event] {
        has_event[*i] = true;
    }
    let catalog = synth_catalog();
    let per: Vec<(PatientStay, Vec<TruthEvent>)> = {
        use rayon::prelude::*;
        (0..cfg.patients)
            .into_par_iter()
            .map(|i| {
                let pid = i as PatientId + 1;
                let mut rng = crate::rng::stream(cfg.seed, &format!("synth/patient/{pid}"));
                let offset = if span > 0 { rng.gen_range(0..=span) } else { 0 };
                let admission = first + TimeDelta::minutes(offset);
                let admission = admission - TimeDelta::seconds(admission.and_utc().timestamp() % 60);
                let plan = plan_patient(&mut rng, cfg, has_event[i]);
                generate_patient(pid, admission, &plan, cfg, &mut rng)
            })
            .collect()
    };
    let mut stays = Vec::with_capacity(per.len());
    let mut truth = Vec::new();
    for (s, t) in per {
        stays.push(s);
        truth.extend(t);
    }
    Ok(SynthCohort { catalog, stays, truth })
}

pub fn write_truth<W: Write>(writer: W, truth: &[TruthEvent]) -> Result<()> {
    let mut w = csv_writer(writer);
    w.write_record(["patient_id", "onset_time", "end_time"]).map_err(werr)?;
    for e in truth {
        w.write_record([e.patient_id.to_string(), format_timestamp(&e.onset), format_timestamp(&e.end)]).map_err(werr)?;
    }
    w.flush().map_err(|e| Error::Internal(e.to_string()))
}

/// Writes `catalog.csv`, `records.csv`, `statics.csv` and `truth_events.csv`.
pub fn write_cohort(dir: &Path, cohort: &SynthCohort) -> Result<()> {
    write_catalog(&dir.join("catalog.csv"), &cohort.catalog)?;
    save_records(&dir.join("records.csv"), cohort.stays.iter().flat_map(|s| s.records.iter()))?;
    let rows: Vec<StaticsRow> = cohort.stays.iter().map(PatientStay::statics_row).collect();
    save_statics(&dir.join("statics.csv"), rows.iter())?;
    write_truth(create_file(&dir.join("truth_events.csv"))?, &cohort.truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::VariableRoles;
    use crate::clean::{clean_cohort, CleanConfig, GlobalStats};
    use crate::endpoint::{annotate_grid, EndpointConfig};
    use crate::impute::{fit_imputation_params, impute_stay};

    fn small(n: usize) -> SynthConfig {
        SynthConfig { patients: n, seed: 3, ..Default::default() }
    }

    fn annotated_events(c: &SynthCohort) -> Vec<(PatientId, Vec<crate::endpoint::Event>, crate::grid::GridStay)> {
        let roles = VariableRoles::default();
        let params = fit_imputation_params(&c.stays, &c.catalog).unwrap();
        c.stays
            .iter()
            .filter_map(|s| {
                let mut g = impute_stay(s, &params, &c.catalog, &roles).ok()?;
                let ev = annotate_grid(&mut g, &roles, &EndpointConfig::default());
                Some((s.patient_id, ev, g))
            })
            .collect()
    }

    #[test]
    fn same_seed_same_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let cfg = small(6);
        write_cohort(&a, &generate_cohort(&cfg).unwrap()).unwrap();
        write_cohort(&b, &generate_cohort(&cfg).unwrap()).unwrap();
        for f in ["catalog.csv", "records.csv", "statics.csv", "truth_events.csv"] {
            assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn event_fraction_and_zero_rate() {
        let c = generate_cohort(&small(200)).unwrap();
        let mut with: Vec<PatientId> = c.truth.iter().map(|e| e.patient_id).collect();
        with.dedup();
        assert_eq!(with.len(), 60);
        let annotated = annotated_events(&c).iter().filter(|(_, e, _)| !e.is_empty()).count();
        let frac = annotated as f64 / 200.0;
        assert!((frac - 0.30).abs() <= 0.05, "{frac}");
        let none = generate_cohort(&SynthConfig { event_rate: 0.0, ..small(20) }).unwrap();
        assert!(none.truth.is_empty());
        assert!(annotated_events(&none).iter().all(|(_, e, _)| e.is_empty()));
    }

    #[test]
    fn implanted_onsets_are_annotated() {
        let c = generate_cohort(&SynthConfig { event_rate: 1.0, ..small(40) }).unwrap();
        let ann = annotated_events(&c);
        let mut hit = 0;
        for t in &c.truth {
            let (_, _, g) = ann.iter().find(|a| a.0 == t.patient_id).unwrap();
            let k = (t.onset - g.grid_start).num_minutes() / 5;
            let ok = (k - 3..=k + 3).any(|j| j >= 0 && (j as usize) < g.len && g.states[j as usize] == crate::grid::CircState::Failure);
            hit += ok as usize;
        }
        assert!(hit * 100 >= c.truth.len() * 95, "{hit}/{}", c.truth.len());
    }

    #[test]
    fn cleaning_recovers_injected_artefacts() {
        let base = small(40);
        let dirty_cfg = SynthConfig { out_of_range_rate: 0.01, duplicate_rate: 0.02, timestamp_error_rate: 0.01, ..base.clone() };
        let clean = generate_cohort(&base).unwrap();
        let dirty = generate_cohort(&dirty_cfg).unwrap();
        let roles = VariableRoles::default();
        let stats = GlobalStats::fit(&clean.stays, &clean.catalog, &roles);
        let (repaired, log) = clean_cohort(&dirty.stays, &dirty.catalog, &stats, &roles, &CleanConfig::default()).unwrap();
        assert!(log.removed_count() > 0);
        let reference = annotated_events(&clean);
        let recovered = annotated_events(&SynthCohort { stays: repaired, ..dirty });
        let (mut same, mut total) = (0usize, 0usize);
        for ((_, _, a), (_, _, b)) in reference.iter().zip(&recovered) {
            assert_eq!(a.patient_id, b.patient_id);
            total += a.len.max(b.len);
            same += a.states.iter().zip(&b.states).filter(|(x, y)| x == y).count();
        }
        assert!(same as f64 >= 0.99 * total as f64, "{same}/{total}");
    }

    #[test]
    fn infeasible_event_length_is_rejected() {
        let cfg = SynthConfig { event_minutes: (60.0, 6000.0), ..Default::default() };
        assert!(cfg.validate().unwrap_err().to_string().contains("synth.event_minutes"));
        assert!(SynthConfig { duplicate_rate: 1.5, ..Default::default() }.validate().is_err());
    }
}
