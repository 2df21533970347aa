//! Acceptance criteria 1-9. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use circews_core::alarm::eval::{correction_factor, event_metrics};
use circews_core::alarm::scores::load_scores;
use circews_core::alarm::{AlarmConfig, PatientTrack};
use circews_core::catalog::VariableRoles;
use circews_core::endpoint::{annotate_grid, EndpointConfig, Event};
use circews_core::features::matrix::load_matrix;
use circews_core::features::{FeatureCategory, FeatureInfo, FeatureMatrix, RowKey};
use circews_core::grid::{CircState, GridSeries, GridStay, Label, StaticValues};
use circews_core::impute::{fill_adaptive, SamplingParams};
use circews_core::metrics::{auprc, auroc};
use circews_core::model::selection::SelectionMode;
use circews_core::model::splits::{make_splits, SplitConfig, SplitKind, SplitPlan};
use circews_core::model::{attributions, load_model, predict_scores, train_classifier, ModelConfig, ModelKind, Tree, TrainMeta, TreeEnsemble};
use circews_core::pipeline::{select_variables, PathsConfig, PipelineConfig, StageToggles, ThresholdChoice};
use circews_core::records::load_statics;
use circews_core::synth::SynthConfig;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------- 1

struct EndpointOracle<'a> {
    cfg: &'a EndpointConfig,
    len: usize,
    lactate: Vec<(usize, f64)>,
}

impl EndpointOracle<'_> {
    fn lactate_at(&self, k: usize) -> Option<f64> {
        let meas = &self.lactate;
        if meas.is_empty() {
            return None;
        }
        let ab = |v: f64| v >= self.cfg.lactate_threshold;
        let fill = (self.cfg.boundary_fill_min / 5) as usize;
        let cross = (self.cfg.crossing_limit_min / 5) as usize;
        if let Some((_, v)) = meas.iter().find(|(i, _)| *i == k) {
            return Some(*v);
        }
        let prev = meas.iter().rev().find(|(i, _)| *i < k);
        let next = meas.iter().find(|(i, _)| *i > k);
        match (prev, next) {
            (None, Some(&(j, b))) => (!ab(b) || j - k <= fill).then_some(b),
            (Some(&(i, a)), None) => (!ab(a) || k - i <= fill).then_some(a),
            (Some(&(i, a)), Some(&(j, b))) => {
                if ab(a) == ab(b) || j - i < cross {
                    Some(a + (b - a) * (k - i) as f64 / (j - i) as f64)
                } else if k - i <= fill {
                    Some(a)
                } else if j - k <= fill {
                    Some(b)
                } else {
                    None
                }
            }
            (None, None) => unreachable!(),
        }
    }
}

fn random_stay(rng: &mut ChaCha8Rng, pid: u64) -> GridStay {
    let len = rng.gen_range(5..320);
    let mut series = Vec::new();
    let map_first = rng.gen_range(0..len);
    let mut map = Vec::with_capacity(len);
    let mut v: f64 = rng.gen_range(58.0..72.0);
    for _ in 0..len {
        v = (v + rng.gen_range(-2.0..2.0)).clamp(55.0, 75.0);
        map.push(if rng.gen_bool(0.1) { 65.0 } else { v.round() });
    }
    let measured: Vec<bool> = (0..len).map(|k| k == map_first || (k > map_first && rng.gen_bool(0.8))).collect();
    series.push(GridSeries { variable_id: "map".into(), values: map, measured });
    for var in ["a_lac", "v_lac"] {
        let n = rng.gen_range(0..8);
        let mut measured = vec![false; len];
        let mut values = vec![1.0; len];
        for _ in 0..n {
            let k = rng.gen_range(0..len);
            measured[k] = true;
            values[k] = [1.0, 1.6, 2.0, 2.0, 2.4, 3.5][rng.gen_range(0..6)] + if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(-0.3..0.3) };
        }
        series.push(GridSeries { variable_id: var.into(), values, measured });
    }
    for var in ["norepi", "dobu"] {
        let mut values = vec![0.0; len];
        if rng.gen_bool(0.3) {
            let a = rng.gen_range(0..len);
            let b = rng.gen_range(a..len);
            for x in &mut values[a..=b] {
                *x = 0.1;
            }
        }
        series.push(GridSeries { variable_id: var.into(), values, measured: vec![false; len] });
    }
    let t0 = chrono::NaiveDate::from_ymd_opt(2015, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    GridStay {
        patient_id: pid,
        admission_time: t0,
        grid_start: t0,
        len,
        statics: StaticValues::from_array([60.0, 1.0, 170.0, 0.0, 0.0, 1.0, 10.0]),
        series,
        states: Vec::new(),
        labels: Vec::new(),
    }
}

/// States, labels and events computed minute by minute from first principles.
fn endpoint_oracle(g: &GridStay, cfg: &EndpointConfig) -> (Vec<CircState>, Vec<Label>, Vec<Event>) {
    let s = |id: &str| g.series.iter().find(|x| x.variable_id == id).unwrap();
    let (a, v, map) = (s("a_lac"), s("v_lac"), s("map"));
    let lactate: Vec<(usize, f64)> = (0..g.len)
        .filter_map(|k| match (a.measured[k], v.measured[k]) {
            (true, true) => Some((k, (a.values[k] + v.values[k]) / 2.0)),
            (true, false) => Some((k, a.values[k])),
            (false, true) => Some((k, v.values[k])),
            _ => None,
        })
        .collect();
    let oracle = EndpointOracle { cfg, len: g.len, lactate };
    let first_map = map.measured.iter().position(|m| *m);
    let drug = |k: usize| s("norepi").values[k] > 0.0 || s("dobu").values[k] > 0.0;
    let map_at = |k: usize| first_map.filter(|f| k >= *f).map(|_| map.values[k]);
    let lac: Vec<Option<f64>> = (0..oracle.len).map(|k| oracle.lactate_at(k)).collect();
    let minutes = |k: usize, pred: &dyn Fn(usize) -> bool| -> i64 {
        let centre2 = 10 * k as i64 + 5; // twice the bucket centre, in minutes
        (0..5 * g.len as i64)
            .filter(|m| (2 * m + 1 - centre2).abs() < 45 && pred((*m / 5) as usize))
            .count() as i64
    };
    let req = cfg.required_min;
    let thr_l = cfg.lactate_threshold;
    let thr_m = cfg.map_threshold;
    let states: Vec<CircState> = (0..g.len)
        .map(|k| {
            let low = minutes(k, &|p| drug(p) || map_at(p).is_some_and(|x| x <= thr_m));
            let lh = minutes(k, &|p| lac[p].is_some_and(|x| x >= thr_l));
            let high = minutes(k, &|p| map_at(p).is_some_and(|x| x > thr_m));
            let nd = minutes(k, &|p| !drug(p));
            let ln = minutes(k, &|p| lac[p].is_some_and(|x| x <= thr_l));
            if low >= req && lh >= req {
                CircState::Failure
            } else if high >= req && nd >= req && ln >= req {
                CircState::Stable
            } else {
                CircState::Ambiguous
            }
        })
        .collect();
    let h = (cfg.label_horizon_min / 5) as usize;
    let labels = (0..g.len)
        .map(|k| {
            if states[k] != CircState::Stable {
                return Label::Unlabeled;
            }
            let ahead = &states[k + 1..(k + h + 1).min(g.len)];
            if ahead.contains(&CircState::Failure) {
                Label::Positive
            } else if k + h < g.len && !ahead.contains(&CircState::Ambiguous) {
                Label::Negative
            } else {
                Label::Unlabeled
            }
        })
        .collect();
    let mut events = Vec::new();
    let mut k = 0;
    while k < g.len {
        if states[k] == CircState::Failure {
            let start = k;
            while k + 1 < g.len && states[k + 1] == CircState::Failure {
                k += 1;
            }
            events.push(Event { start, end: k });
        }
        k += 1;
    }
    (states, labels, events)
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let cfg = EndpointConfig::default();
    let roles = VariableRoles::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut points, mut failures) = (0usize, 0usize);
    for pid in 0..1000 {
        let mut g = random_stay(&mut rng, pid);
        let (states, labels, events) = endpoint_oracle(&g, &cfg);
        let got = annotate_grid(&mut g, &roles, &cfg);
        check(g.states == states, format!("stay {pid}: states differ"))?;
        check(g.labels == labels, format!("stay {pid}: labels differ"))?;
        check(got == events, format!("stay {pid}: events differ"))?;
        points += g.len;
        failures += states.iter().filter(|s| **s == CircState::Failure).count();
    }
    let secs = t.elapsed().as_secs_f64();
    check(secs < 30.0, format!("took {secs:.1} s"))?;
    check(failures > 0, "no failure points generated")?;
    Ok(format!("1000 stays, {points} points ({failures} failure) identical, {secs:.1} s"))
}

// ---------------------------------------------------------------- 2

fn plain_median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut exact, mut ffill, mut ret) = (0usize, 0usize, 0usize);
    for case in 0..10_000 {
        let len = rng.gen_range(1..200);
        let p = SamplingParams { median_min: 5.0 * rng.gen_range(1..12) as f64, iqr_min: 5.0 * rng.gen_range(0..7) as f64, fallback: false };
        let (thr, w) = (p.median_min + p.iqr_min, 2.0 * (p.median_min + 2.0 * p.iqr_min));
        let mut t = -rng.gen_range(0.0..100.0f64).floor();
        let mut obs = Vec::new();
        while t < 5.0 * len as f64 {
            obs.push((t, rng.gen_range(0.0..100.0f64).round()));
            let step: f64 = if rng.gen_bool(0.6) { 5.0 * rng.gen_range(0..40) as f64 } else { rng.gen_range(0.0..200.0f64).floor() };
            t += step.max(1.0);
            if rng.gen_bool(0.7) {
                t = (t / 5.0).ceil() * 5.0;
            }
        }
        let (values, measured) = fill_adaptive(&obs, len, -1.0, &p);
        for k in 0..len {
            let tk = 5.0 * k as f64;
            let bucket = obs.iter().rposition(|(t, _)| (t / 5.0).floor() as usize == k && *t >= 0.0);
            check(measured[k] == bucket.is_some(), format!("case {case}: measured flag at {k}"))?;
            if let Some(i) = bucket {
                check(values[k] == obs[i].1, format!("case {case}: measured value at {k}"))?;
                exact += 1;
                continue;
            }
            let Some(last) = obs.iter().rposition(|(t, _)| (t / 5.0).floor() <= k as f64) else {
                check(values[k] == -1.0, format!("case {case}: default before data at {k}"))?;
                continue;
            };
            let (tl, vl) = obs[last];
            if tk - tl < thr {
                check(values[k] == vl, format!("case {case}: forward fill at {k}"))?;
                ffill += 1;
            } else if tk == tl + thr + w / 2.0 {
                let mut window: Vec<f64> = obs[..=last].iter().filter(|(t, _)| *t >= tl + thr - w).map(|(_, v)| *v).collect();
                let want = (vl + plain_median(&mut window)) / 2.0;
                check((values[k] - want).abs() < 1e-9, format!("case {case}: return midpoint at {k}: {} vs {want}", values[k]))?;
                ret += 1;
            }
        }
    }
    check(ret > 100, format!("only {ret} return-phase checks"))?;
    Ok(format!("10000 series: {exact} measured, {ffill} forward-filled, {ret} return midpoints exact"))
}

// ---------------------------------------------------------------- 3

fn random_tree(rng: &mut ChaCha8Rng, n_features: usize, depth: usize) -> Tree {
    let mut t = Tree { split_feature: vec![], threshold: vec![], left: vec![], right: vec![], value: vec![], cover: vec![] };
    fn grow(t: &mut Tree, rng: &mut ChaCha8Rng, nf: usize, depth: usize, cover: f64) -> usize {
        let id = t.split_feature.len();
        t.split_feature.push(-1);
        t.threshold.push(0.0);
        t.left.push(0);
        t.right.push(0);
        t.value.push(rng.gen_range(-1.0..1.0));
        t.cover.push(cover);
        if depth > 0 && cover >= 2.0 && rng.gen_bool(0.8) {
            let lc = rng.gen_range(1..cover as u64) as f64;
            t.split_feature[id] = rng.gen_range(0..nf) as i32;
            t.threshold[id] = rng.gen_range(-1.0..1.0);
            let l = grow(t, rng, nf, depth - 1, lc);
            let r = grow(t, rng, nf, depth - 1, cover - lc);
            t.left[id] = l as u32;
            t.right[id] = r as u32;
            t.value[id] = 0.0;
        }
        id
    }
    let cover = rng.gen_range(4..200) as f64;
    grow(&mut t, rng, n_features, depth, cover);
    t
}

/// E[f | x_S] with unknown features averaged by cover.
fn cond_expect(t: &Tree, node: usize, x: &[f64], known: u32) -> f64 {
    let f = t.split_feature[node];
    if f < 0 {
        return t.value[node];
    }
    let (l, r) = (t.left[node] as usize, t.right[node] as usize);
    if known & (1 << f) != 0 {
        let go_left = x[f as usize] <= t.threshold[node];
        cond_expect(t, if go_left { l } else { r }, x, known)
    } else {
        (t.cover[l] * cond_expect(t, l, x, known) + t.cover[r] * cond_expect(t, r, x, known)) / t.cover[node]
    }
}

fn brute_shapley(m: &TreeEnsemble, x: &[f64]) -> (f64, Vec<f64>) {
    let n = x.len();
    let v = |s: u32| m.base_score + m.trees.iter().map(|t| cond_expect(t, 0, x, s)).sum::<f64>();
    let fact = |k: usize| (1..=k).map(|i| i as f64).product::<f64>();
    let mut phi = vec![0.0; n];
    for (i, p) in phi.iter_mut().enumerate() {
        for s in 0u32..(1 << n) {
            if s & (1 << i) != 0 {
                continue;
            }
            let k = s.count_ones() as usize;
            *p += fact(k) * fact(n - k - 1) / fact(n) * (v(s | (1 << i)) - v(s));
        }
    }
    (v(0), phi)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut rows = 0;
    for _ in 0..200 {
        let nf = rng.gen_range(1..=8);
        let mut trees = Vec::new();
        for _ in 0..rng.gen_range(1..6) {
            let depth = rng.gen_range(1..=3);
            trees.push(random_tree(&mut rng, nf, depth));
        }
        let m = TreeEnsemble { base_score: rng.gen_range(-2.0..2.0), learning_rate: 1.0, trees, meta: TrainMeta::default() };
        for _ in 0..5 {
            let x: Vec<f64> = (0..nf).map(|_| rng.gen_range(-1.2..1.2)).collect();
            let a = attributions(&m, &x);
            let (base, phi) = brute_shapley(&m, &x);
            worst = worst.max((a.base - base).abs());
            for (p, q) in a.phi.iter().zip(&phi) {
                worst = worst.max((p - q).abs());
            }
            let local = (a.total() - m.margin(&x)).abs();
            check(local < 1e-9, format!("local accuracy off by {local:e}"))?;
            rows += 1;
        }
    }
    check(worst < 1e-9, format!("max |Δ| = {worst:e}"))?;
    Ok(format!("200 ensembles, {rows} rows, max |Δ| = {worst:.1e}, local accuracy holds"))
}

// ---------------------------------------------------------------- 4

fn random_track(rng: &mut ChaCha8Rng) -> PatientTrack {
    let len = rng.gen_range(1..400);
    let mut events = Vec::new();
    let mut k = rng.gen_range(0..60);
    while k < len && rng.gen_bool(0.7) {
        let end = (k + rng.gen_range(0..30)).min(len - 1);
        events.push(Event { start: k, end });
        k = end + 2 + rng.gen_range(0..120);
    }
    let mut points = Vec::new();
    for i in 0..len {
        if !events.iter().any(|e| e.start <= i && i <= e.end) && rng.gen_bool(0.85) {
            points.push((i, rng.gen::<f64>()));
        }
    }
    PatientTrack { patient_id: 1, points, events }
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut alarms_seen = 0usize;
    for case in 0..10_000 {
        let track = random_track(&mut rng);
        let cfg = AlarmConfig {
            silencing_min: 5.0 * rng.gen_range(0..25) as f64,
            reset_min: [0.0, 22.5, 25.0, 60.0][rng.gen_range(0..4)],
            grey_zone_min: 5.0 * rng.gen_range(0..4) as f64,
            horizon_min: 5.0 * rng.gen_range(1..100) as f64,
            min_lead_min: 5.0 * rng.gen_range(0..3) as f64,
            ..Default::default()
        };
        let tau = rng.gen::<f64>();
        let (traces, ev) = event_metrics(std::slice::from_ref(&track), &cfg, tau).map_err(|e| e.to_string())?;
        let alarms = &traces[0].alarms;
        alarms_seen += alarms.len();
        let ends: Vec<f64> = track.events.iter().map(|e| 5.0 * e.end as f64).collect();
        // Silencing: a second alarm inside the window needs an event end in
        // between and must respect the reset.
        for w in alarms.windows(2) {
            let (a, b) = (5.0 * w[0] as f64, 5.0 * w[1] as f64);
            if b - a < cfg.silencing_min {
                let ok = ends.iter().any(|te| *te > a && *te < b && b >= te + cfg.reset_min);
                check(ok, format!("case {case}: alarms at {a} and {b} violate silencing"))?;
            }
        }
        // Completeness: a point above τ with no alarm in the preceding
        // silencing window and no event end in between must alarm.
        for &(k, s) in &track.points {
            let t = 5.0 * k as f64;
            let last = alarms.iter().rev().map(|a| 5.0 * *a as f64).find(|a| *a < t);
            let silenced = last.is_some_and(|a| t - a < cfg.silencing_min);
            let reset_between = last.is_some_and(|a| ends.iter().any(|te| *te > a && *te < t));
            if s >= tau && !silenced && !reset_between {
                check(alarms.contains(&k), format!("case {case}: missing alarm at {k}"))?;
            }
        }
        // Brute-force event precision and recall.
        let onsets: Vec<f64> = track.events.iter().map(|e| 5.0 * e.start as f64).collect();
        let (mut tp, mut fp) = (0u64, 0u64);
        for a in alarms {
            let a = 5.0 * *a as f64;
            let hit = onsets.iter().any(|o| *o - a > 0.0 && *o - a <= cfg.horizon_min + cfg.grey_zone_min);
            if hit {
                tp += 1
            } else {
                fp += 1
            }
        }
        let caught = onsets
            .iter()
            .filter(|o| alarms.iter().any(|a| {
                let lead = *o - 5.0 * *a as f64;
                lead >= cfg.min_lead_min && lead <= cfg.horizon_min
            }))
            .count() as u64;
        let c = ev.counts;
        check(
            (c.tp_alarms, c.fp_alarms, c.caught_events, c.missed_events) == (tp, fp, caught, onsets.len() as u64 - caught),
            format!("case {case}: counts {c:?} vs brute force tp {tp} fp {fp} caught {caught}"),
        )?;
        let prec = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        let rec = if onsets.is_empty() { 0.0 } else { caught as f64 / onsets.len() as f64 };
        check(ev.precision == prec && ev.recall == rec, format!("case {case}: precision/recall differ"))?;
    }
    Ok(format!("10000 traces, {alarms_seen} alarms: silencing holds, counts match brute force"))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    for p in [0.001, 0.018, 0.031, 0.5, 0.9] {
        let s = correction_factor(p, p).map_err(|e| e.to_string())?;
        check(s == 1.0, format!("s({p},{p}) = {s}"))?;
    }
    let s = correction_factor(0.031, 0.018).map_err(|e| e.to_string())?;
    let oracle = (1.0 / 0.031 - 1.0) / (1.0 / 0.018 - 1.0);
    check((s - 0.5730).abs() <= 1e-4 && (s - oracle).abs() < 1e-12, format!("s = {s}"))?;
    Ok(format!("s(p,p) = 1 exactly; s(0.031, 0.018) = {s:.6}"))
}

// ---------------------------------------------------------------- 6, 7, 8

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_circews")
}

fn run_cli(cfg: &Path, extra: &[&str]) -> Result<(), String> {
    let out = Command::new(bin())
        .args(["--config", cfg.to_str().unwrap()])
        .args(extra)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), format!("circews {extra:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
}

fn e2e_config(out: &Path, patients: usize, seed: u64) -> PipelineConfig {
    let mut synth = SynthConfig::strong();
    synth.patients = patients;
    synth.seed = seed;
    let mut splits = SplitConfig::default();
    // A larger test share gives the recall estimate more events.
    splits.random_ratios = [3.0, 1.0, 1.0];
    PipelineConfig {
        seed,
        split: "random".into(),
        splits,
        paths: PathsConfig { out_dir: out.to_path_buf(), ..Default::default() },
        stages: StageToggles { synth: true, ..Default::default() },
        synth,
        ..Default::default()
    }
}

fn write_config(dir: &Path, cfg: &PipelineConfig) -> std::path::PathBuf {
    let p = dir.join("config.json");
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn labelled(scores: &[f64], rows: &[RowKey]) -> (Vec<f64>, Vec<bool>) {
    scores.iter().zip(rows).filter_map(|(s, r)| r.label.map(|l| (*s, l))).unzip()
}

fn criterion_6(work: &Path) -> Outcome {
    let t = Instant::now();
    let dir = work.join("e2e");
    let cfg = e2e_config(&dir, 200, 7);
    let path = write_config(&work.join("e2e_cfg"), &cfg);
    run_cli(&path, &["run-all"])?;
    let secs = t.elapsed().as_secs_f64();

    let scores = load_scores(&dir.join("scores.csv")).map_err(|e| e.to_string())?;
    let (s, l): (Vec<f64>, Vec<bool>) = scores.iter().filter_map(|r| r.label.map(|l| (r.score, l))).unzip();
    let gbdt_auroc = auroc(&s, &l).map_err(|e| e.to_string())?;
    let metrics: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("metrics.json")).unwrap()).unwrap();
    let recall = metrics["events"]["recall"].as_f64().unwrap();
    let n_events = metrics["events"]["counts"]["caught_events"].as_u64().unwrap() + metrics["events"]["counts"]["missed_events"].as_u64().unwrap();
    let choice: ThresholdChoice = serde_json::from_slice(&std::fs::read(dir.join("threshold.json")).unwrap()).unwrap();
    check(choice.source == "validation", "threshold not chosen on validation")?;

    let train = load_matrix(&dir.join("train.mat")).map_err(|e| e.to_string())?;
    let test = load_matrix(&dir.join("test.mat")).map_err(|e| e.to_string())?;
    let gbdt = load_model(&dir.join("model.json")).map_err(|e| e.to_string())?;
    let tree_cfg = ModelConfig { kind: ModelKind::Tree, ..cfg.model.clone() };
    let tree = train_classifier(&train, None, &tree_cfg, cfg.seed).map_err(|e| e.to_string())?;
    let (gs, gl) = labelled(&predict_scores(&gbdt, &test).map_err(|e| e.to_string())?, &test.rows);
    let (ts, tl) = labelled(&predict_scores(&tree, &test).map_err(|e| e.to_string())?, &test.rows);
    let ap_gbdt = auprc(&gs, &gl).map_err(|e| e.to_string())?;
    let ap_tree = auprc(&ts, &tl).map_err(|e| e.to_string())?;

    let detail = format!(
        "AUROC {gbdt_auroc:.3}, event recall {recall:.3} over {n_events} events at τ={:.3}, AUPRC gbdt {ap_gbdt:.3} > tree {ap_tree:.3}, {secs:.0} s",
        choice.threshold
    );
    check(gbdt_auroc >= 0.90, format!("AUROC too low: {detail}"))?;
    check(recall >= 0.85, format!("recall too low: {detail}"))?;
    check(ap_tree < ap_gbdt, format!("baseline not lower: {detail}"))?;
    check(secs < 600.0, format!("too slow: {detail}"))?;
    Ok(detail)
}

fn criterion_7(work: &Path) -> Outcome {
    let dir = work.join("e2e");
    let model = load_model(&dir.join("model.json")).map_err(|e| e.to_string())?;
    let ens = model.model.ensemble().map_err(|e| e.to_string())?;
    let meta = &ens.meta;
    for (r, w) in meta.train_loss.windows(2).enumerate() {
        check(w[1] <= w[0], format!("training loss rose at round {}: {} -> {}", r + 1, w[0], w[1]))?;
    }
    let best = meta.valid_auprc.iter().enumerate().fold((0usize, f64::NEG_INFINITY), |b, (i, v)| if *v > b.1 { (i + 1, *v) } else { b });
    check(meta.best_rounds == best.0 && ens.trees.len() == best.0, format!("rollback kept {} trees, best round {}", ens.trees.len(), best.0))?;
    let valid = load_matrix(&dir.join("valid.mat")).map_err(|e| e.to_string())?;
    let (vs, vl) = labelled(&predict_scores(&model, &valid).map_err(|e| e.to_string())?, &valid.rows);
    let ap = auprc(&vs, &vl).map_err(|e| e.to_string())?;
    check((ap - best.1).abs() < 1e-12, format!("rolled-back model AUPRC {ap} vs best {}", best.1))?;

    // Temporal splits on the pipeline's cohort and on a larger random one.
    let statics = load_statics(&dir.join("clean/statics.csv")).map_err(|e| e.to_string())?;
    let adm: BTreeMap<u64, _> = statics.iter().map(|r| (r.patient_id, r.admission_time)).collect();
    let plan: SplitPlan = serde_json::from_slice(&std::fs::read(dir.join("splits.json")).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let t0 = chrono::NaiveDate::from_ymd_opt(2005, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let big: Vec<(u64, _)> = (0..5000u64).map(|p| (p, t0 + chrono::TimeDelta::minutes(rng.gen_range(0..12 * 525_600)))).collect();
    let big_plan = make_splits(&big, &SplitConfig::default(), 7).map_err(|e| e.to_string())?;
    let big_adm: BTreeMap<u64, _> = big.iter().copied().collect();
    let mut n = 0;
    for (plan, adm) in [(&plan, &adm), (&big_plan, &big_adm)] {
        for s in plan.splits.iter().filter(|s| s.kind == SplitKind::Temporal) {
            let max_train = s.train.iter().map(|p| adm[p]).max();
            let min_test = s.test.iter().map(|p| adm[p]).min();
            if let (Some(a), Some(b)) = (max_train, min_test) {
                check(a < b, format!("{}: train admission {a} not before test {b}", s.name))?;
                n += 1;
            }
        }
    }
    check(n >= 6, format!("only {n} temporal splits checked"))?;
    Ok(format!(
        "loss non-increasing over {} rounds; rollback to round {} of {}; {n} temporal splits leak-free",
        meta.train_loss.len() - 1,
        best.0,
        meta.rounds_trained
    ))
}

fn artifact_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_8(work: &Path) -> Outcome {
    let mut runs = Vec::new();
    for (name, threads) in [("det_a", "1"), ("det_b", "1"), ("det_c", "8")] {
        let dir = work.join(name).join("out");
        let cfg = e2e_config(&dir, 80, 5);
        let path = write_config(&work.join(name), &cfg);
        run_cli(&path, &["--threads", threads, "run-all"])?;
        runs.push(artifact_bytes(&dir));
    }
    let n = runs[0].len();
    check(n >= 15, format!("only {n} artifacts"))?;
    for (i, other) in runs.iter().enumerate().skip(1) {
        check(other.keys().eq(runs[0].keys()), format!("run {i}: artifact sets differ"))?;
        for (k, v) in &runs[0] {
            check(&other[k] == v, format!("run {i}: {k} differs"))?;
        }
    }
    Ok(format!("{n} artifacts bit-identical across two runs and --threads 1 vs 8"))
}

// ---------------------------------------------------------------- 9

fn signal_matrix(rng: &mut ChaCha8Rng, rows: usize, prevalence: f64) -> FeatureMatrix {
    let vars = ["hr", "lact", "temp", "rr", "gluc", "spo2"];
    let mut columns = Vec::new();
    for v in vars {
        for f in ["last", "median", "max"] {
            columns.push(FeatureInfo { name: format!("{v}_{f}"), variable: v.into(), category: FeatureCategory::Multires });
        }
    }
    let mut m = FeatureMatrix { columns, ..Default::default() };
    for i in 0..rows {
        let y = rng.gen_bool(prevalence);
        m.rows.push(RowKey { patient_id: i as u64, grid_index: 0, label: Some(y) });
        for v in vars {
            let base: f64 = rng.gen_range(-1.0..1.0);
            for _ in 0..3 {
                let noise: f64 = rng.gen_range(-0.5..0.5);
                let shift = if v == "lact" && y { 1.2 } else { 0.0 };
                m.values.push(base + noise + shift);
            }
        }
    }
    m
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let prevalence = 0.2;
    let train = signal_matrix(&mut rng, 3000, prevalence);
    let valid = signal_matrix(&mut rng, 1500, prevalence);
    let mut cfg = PipelineConfig::default();
    cfg.model.gbdt.max_rounds = 150;
    cfg.model.gbdt.num_leaves = 8;
    cfg.selection.max_variables = 3;
    let full = train_classifier(&train, Some(&valid), &cfg.model, 1).map_err(|e| e.to_string())?;
    let mut firsts = Vec::new();
    for mode in [SelectionMode::ShapGreedy, SelectionMode::ForwardAuprc] {
        cfg.selection.mode = mode;
        let rep = select_variables(&full, &train, &valid, &cfg).map_err(|e| e.to_string())?;
        let first = rep.ranked.first().map(|r| r.variable.clone()).unwrap_or_default();
        check(first == "lact", format!("{mode:?} ranked `{first}` first"))?;
        firsts.push(first);
    }
    let keep: Vec<String> = train.columns.iter().filter(|c| c.variable != "lact").map(|c| c.name.clone()).collect();
    let (tr, va) = (train.select_columns(&keep).unwrap(), valid.select_columns(&keep).unwrap());
    let reduced = train_classifier(&tr, Some(&va), &cfg.model, 1).map_err(|e| e.to_string())?;
    let (s, l) = labelled(&predict_scores(&reduced, &va).unwrap(), &va.rows);
    let ap = auprc(&s, &l).unwrap();
    let prev = l.iter().filter(|x| **x).count() as f64 / l.len() as f64;
    let (fs, fl) = labelled(&predict_scores(&full, &valid).unwrap(), &valid.rows);
    let ap_full = auprc(&fs, &fl).unwrap();
    check((ap - prev).abs() <= 0.05, format!("AUPRC without signal {ap:.3} vs prevalence {prev:.3}"))?;
    Ok(format!("both modes rank `lact` first; AUPRC {ap_full:.3} full, {ap:.3} without it (prevalence {prev:.3})"))
}

// ----------------------------------------------------------------

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let w = work.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("endpoint oracle equivalence", Box::new(criterion_1)),
        ("imputation contract", Box::new(criterion_2)),
        ("TreeSHAP exactness", Box::new(criterion_3)),
        ("alarm state machine", Box::new(criterion_4)),
        ("prevalence correction", Box::new(criterion_5)),
        ("end-to-end synthetic run", Box::new(|| criterion_6(w))),
        ("training properties", Box::new(|| criterion_7(w))),
        ("determinism", Box::new(|| criterion_8(w))),
        ("selection sanity", Box::new(criterion_9)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        match res {
            Ok(msg) => println!("criterion {}: PASS {name}: {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {msg}", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
