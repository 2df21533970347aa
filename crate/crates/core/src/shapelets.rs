//! Shapelet mining before deterioration events and distance features.
//!
//! Candidates are subsequences taken just before event onsets. Each is
//! scored by how well its distance separates case windows from control
//! windows, and a diverse subset is kept by min-max selection.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{FreqClass, VariableCatalog};
use crate::endpoint::Event;
use crate::error::{Error, Result};
use crate::grid::GridStay;
use crate::io::{read_json, write_json};
use crate::time::GRID_STEP_MIN;

/// Distance reported when no complete subsequence fits the segment.
pub const NO_DISTANCE: f64 = f64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shapelet {
    pub id: u32,
    pub variable: String,
    pub length: usize,
    /// Grid steps between consecutive shapelet samples.
    pub stride: usize,
    pub values: Vec<f64>,
    pub accuracy: f64,
}

impl Shapelet {
    /// Grid points spanned by the shapelet minus one.
    pub fn span(&self) -> usize {
        (self.length - 1) * self.stride
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LengthSpec {
    pub lengths: Vec<usize>,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeletConfig {
    pub variables: Vec<String>,
    pub per_group: usize,
    pub max_cases: usize,
    pub padding_min: i64,
    pub lags_min: Vec<i64>,
    /// Length of the history segment searched at each lag.
    pub segment_min: i64,
    /// Spacing of candidate end points inside each case segment.
    pub candidate_step_min: i64,
    pub high_frequency: LengthSpec,
    pub low_frequency: LengthSpec,
}

impl Default for ShapeletConfig {
    fn default() -> Self {
        ShapeletConfig {
            variables: vec!["map".into(), "a_lac".into()],
            per_group: 20,
            max_cases: 300,
            padding_min: 5,
            lags_min: vec![0, 60, 120, 180, 240],
            segment_min: 60,
            candidate_step_min: 15,
            high_frequency: LengthSpec { lengths: vec![6, 12], stride: 1 },
            low_frequency: LengthSpec { lengths: vec![4, 8], stride: 12 },
        }
    }
}

impl ShapeletConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::validation(format!("shapelets.{f}"), m));
        if self.lags_min.iter().any(|l| !(0..=240).contains(l) || l % GRID_STEP_MIN != 0) {
            return bad("lags_min", "lags must be multiples of 5 within [0, 240]");
        }
        if self.padding_min < GRID_STEP_MIN || self.padding_min % GRID_STEP_MIN != 0 {
            return bad("padding_min", "must be a positive multiple of 5");
        }
        if self.segment_min < 0 || self.segment_min % GRID_STEP_MIN != 0 {
            return bad("segment_min", "must be a non-negative multiple of 5");
        }
        if self.candidate_step_min <= 0 || self.candidate_step_min % GRID_STEP_MIN != 0 {
            return bad("candidate_step_min", "must be a positive multiple of 5");
        }
        for (spec, f) in [(&self.high_frequency, "high_frequency"), (&self.low_frequency, "low_frequency")] {
            if spec.stride == 0 || spec.lengths.iter().any(|l| *l < 2) {
                return bad(f, "lengths must be ≥ 2 and stride ≥ 1");
            }
        }
        Ok(())
    }

    fn steps(min: i64) -> usize {
        (min / GRID_STEP_MIN) as usize
    }

    pub fn spec_for(&self, class: FreqClass) -> &LengthSpec {
        match class {
            FreqClass::High => &self.high_frequency,
            _ => &self.low_frequency,
        }
    }
}

/// Euclidean distance between the shapelet and the subsequence ending at `end`.
fn dist_at(values: &[f64], s: &Shapelet, end: usize) -> f64 {
    let first = end - s.span();
    s.values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let d = v - values[first + i * s.stride];
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Distance to the subsequence ending at each index; [`NO_DISTANCE`] where
/// the subsequence would start before the series.
pub fn distance_profile(values: &[f64], s: &Shapelet) -> Vec<f64> {
    (0..values.len())
        .map(|j| if j < s.span() { NO_DISTANCE } else { dist_at(values, s, j) })
        .collect()
}

/// Minimum of `profile` over end points in `[end - segment, end]`.
fn segment_min(profile: &[f64], end: usize, segment: usize) -> f64 {
    let lo = end.saturating_sub(segment);
    profile[lo..=end].iter().copied().fold(NO_DISTANCE, f64::min)
}

/// Distance features for one shapelet: for each lag, the best match within
/// the segment ending `lag` before each point. Result is `[lag][point]`.
pub fn shapelet_features(values: &[f64], s: &Shapelet, lags_min: &[i64], segment_min_len: i64) -> Vec<Vec<f64>> {
    let profile = distance_profile(values, s);
    let seg = ShapeletConfig::steps(segment_min_len);
    lags_min
        .iter()
        .map(|lag| {
            let l = ShapeletConfig::steps(*lag);
            (0..values.len())
                .map(|k| if k < l { NO_DISTANCE } else { segment_min(&profile, k - l, seg) })
                .collect()
        })
        .collect()
}

/// Best single-threshold accuracy of "case iff distance ≤ θ", folded so a
/// reversed rule counts equally.
pub fn best_threshold_accuracy(case_d: &[f64], control_d: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = case_d
        .iter()
        .map(|d| (*d, true))
        .chain(control_d.iter().map(|d| (*d, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = all.len() as f64;
    if all.is_empty() {
        return 0.5;
    }
    let total_controls = control_d.len() as f64;
    // θ below every distance: everything predicted control.
    let mut correct = total_controls;
    let mut best = correct;
    let mut i = 0;
    while i < all.len() {
        let d = all[i].0;
        while i < all.len() && all[i].0 == d {
            correct += if all[i].1 { 1.0 } else { -1.0 };
            i += 1;
        }
        best = best.max(correct).max(n - correct);
    }
    let acc = best / n;
    acc.max(1.0 - acc)
}

/// Picks the most accurate candidate, then repeatedly the one farthest (by
/// minimum distance) from those already chosen. Ties go to the lower index.
pub fn minmax_select(accuracy: &[f64], dist: impl Fn(usize, usize) -> f64, k: usize) -> Vec<usize> {
    let n = accuracy.len();
    if n == 0 || k == 0 {
        return Vec::new();
    }
    let mut first = 0;
    for i in 1..n {
        if accuracy[i] > accuracy[first] {
            first = i;
        }
    }
    let mut chosen = vec![first];
    let mut min_d: Vec<f64> = (0..n).map(|i| dist(i, first)).collect();
    let mut taken = vec![false; n];
    taken[first] = true;
    while chosen.len() < k.min(n) {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if !taken[i] && best.is_none_or(|b| min_d[i] > min_d[b]) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        chosen.push(b);
        for i in 0..n {
            min_d[i] = min_d[i].min(dist(i, b));
        }
    }
    chosen
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// A window of one stay: series values and the end index of its segment.
struct Window<'a> {
    values: &'a [f64],
    end: usize,
}

/// Mines shapelets for every configured variable and length.
pub fn mine_shapelets(
    grids: &[GridStay],
    events: &[Vec<Event>],
    catalog: &VariableCatalog,
    cfg: &ShapeletConfig,
    seed: u64,
) -> Result<Vec<Shapelet>> {
    if grids.len() != events.len() {
        return Err(Error::Internal("grids and events differ in length".into()));
    }
    let mut out: Vec<Shapelet> = Vec::new();
    let padding = ShapeletConfig::steps(cfg.padding_min);
    let seg = ShapeletConfig::steps(cfg.segment_min);
    let cand_step = ShapeletConfig::steps(cfg.candidate_step_min);
    for var in &cfg.variables {
        let Some(entry) = catalog.get(var) else {
            log::warn!("shapelet variable `{var}` is not in the catalog; skipped");
            continue;
        };
        let spec = cfg.spec_for(entry.freq_class);
        for &length in &spec.lengths {
            let span = (length - 1) * spec.stride;
            let mut rng = crate::rng::stream(seed, &format!("shapelets/{var}/{length}"));

            let mut cases: Vec<(usize, usize)> = Vec::new();
            for (gi, (g, evs)) in grids.iter().zip(events).enumerate() {
                if g.series(var).is_none() {
                    continue;
                }
                for e in evs {
                    if e.start >= padding && e.start - padding >= span {
                        cases.push((gi, e.start - padding));
                    }
                }
            }
            if cases.len() < 2 {
                log::info!("fewer than 2 case windows for `{var}` length {length}; no shapelets");
                continue;
            }
            if cases.len() > cfg.max_cases {
                cases = cases.choose_multiple(&mut rng, cfg.max_cases).copied().collect();
                cases.sort_unstable();
            }
            let control_pool: Vec<(usize, usize)> = grids
                .iter()
                .zip(events)
                .enumerate()
                .filter(|(_, (g, evs))| evs.is_empty() && g.len > span && g.series(var).is_some())
                .map(|(gi, (g, _))| (gi, g.len - span))
                .collect();
            let total: usize = control_pool.iter().map(|(_, n)| n).sum();
            if total == 0 {
                log::info!("no control stays for `{var}` length {length}; no shapelets");
                continue;
            }
            let controls: Vec<(usize, usize)> = (0..cases.len())
                .map(|_| {
                    let mut r = rng.gen_range(0..total);
                    for (gi, n) in &control_pool {
                        if r < *n {
                            return (*gi, span + r);
                        }
                        r -= n;
                    }
                    unreachable!()
                })
                .collect();
            let window = |&(gi, end): &(usize, usize)| Window {
                values: &grids[gi].series(var).unwrap().values,
                end,
            };
            let case_w: Vec<Window> = cases.iter().map(window).collect();
            let ctrl_w: Vec<Window> = controls.iter().map(window).collect();

            let mut candidates: Vec<Vec<f64>> = Vec::new();
            for w in &case_w {
                let mut off = 0;
                while off <= seg && w.end >= span + off {
                    let end = w.end - off;
                    candidates.push((0..length).map(|i| w.values[end - span + i * spec.stride]).collect());
                    off += cand_step;
                }
            }
            let probe = |vals: &Vec<f64>| Shapelet {
                id: 0,
                variable: var.clone(),
                length,
                stride: spec.stride,
                values: vals.clone(),
                accuracy: 0.0,
            };
            let seg_dist = |s: &Shapelet, w: &Window| {
                let lo = w.end.saturating_sub(seg).max(span);
                (lo..=w.end).map(|j| dist_at(w.values, s, j)).fold(NO_DISTANCE, f64::min)
            };
            let accuracy: Vec<f64> = candidates
                .par_iter()
                .map(|c| {
                    let s = probe(c);
                    let cd: Vec<f64> = case_w.iter().map(|w| seg_dist(&s, w)).collect();
                    let nd: Vec<f64> = ctrl_w.iter().map(|w| seg_dist(&s, w)).collect();
                    best_threshold_accuracy(&cd, &nd)
                })
                .collect();
            let picked = minmax_select(&accuracy, |a, b| euclid(&candidates[a], &candidates[b]), cfg.per_group);
            for i in picked {
                let mut s = probe(&candidates[i]);
                s.id = out.len() as u32;
                s.accuracy = accuracy[i];
                out.push(s);
            }
        }
    }
    Ok(out)
}

pub fn save_shapelets(path: &Path, shapelets: &[Shapelet]) -> Result<()> {
    write_json(path, &shapelets)
}

pub fn load_shapelets(path: &Path) -> Result<Vec<Shapelet>> {
    check_shapelets(read_json(path)?)
}

pub fn shapelets_from_json(text: &[u8]) -> Result<Vec<Shapelet>> {
    check_shapelets(serde_json::from_slice(text)?)
}

fn check_shapelets(s: Vec<Shapelet>) -> Result<Vec<Shapelet>> {
    for sh in &s {
        if sh.length < 2 || sh.values.len() != sh.length || sh.stride == 0 {
            return Err(Error::validation(format!("shapelet {}", sh.id), "length, values and stride disagree"));
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::test_util::{series, stay};
    use proptest::prelude::*;

    fn sh(values: Vec<f64>) -> Shapelet {
        Shapelet { id: 0, variable: "x".into(), length: values.len(), stride: 1, values, accuracy: 0.0 }
    }

    #[test]
    fn distances() {
        let s = sh(vec![0.0, 0.0]);
        let f = shapelet_features(&[3.0, 4.0], &s, &[0], 60);
        assert_eq!(f[0], vec![NO_DISTANCE, 5.0]);
        let s = sh(vec![2.0, 3.0]);
        let f = shapelet_features(&[1.0, 2.0, 3.0, 9.0], &s, &[0, 5], 60);
        assert_eq!(f[0][3], 0.0);
        assert_eq!(f[1][0], NO_DISTANCE);
        assert_eq!(f[1][3], 0.0);
        assert_eq!(f.len(), 2);
    }

    #[test]
    fn five_lags_give_five_features() {
        let f = shapelet_features(&[0.0; 100], &sh(vec![0.0; 6]), &ShapeletConfig::default().lags_min, 60);
        assert_eq!(f.len(), 5);
        // At lag 240 min (48 steps) the earliest complete window ends at index 5.
        assert_eq!(f[4][53], 0.0);
        assert_eq!(f[4][52], NO_DISTANCE);
        assert_eq!(f[4][47], NO_DISTANCE);
    }

    #[test]
    fn minmax_trace() {
        let acc = [0.9, 0.8, 0.7];
        let d = |a: usize, b: usize| {
            let m = [[0.0, 1.0, 5.0], [1.0, 0.0, 4.0], [5.0, 4.0, 0.0]];
            m[a][b]
        };
        assert_eq!(minmax_select(&acc, d, 2), vec![0, 2]);
        assert_eq!(minmax_select(&acc, d, 10).len(), 3);
    }

    #[test]
    fn accuracy_scoring() {
        assert_eq!(best_threshold_accuracy(&[0.0, 0.1], &[1.0, 2.0]), 1.0);
        assert_eq!(best_threshold_accuracy(&[1.0, 2.0], &[0.0, 0.1]), 1.0);
        assert_eq!(best_threshold_accuracy(&[1.0], &[1.0]), 0.5);
    }

    #[test]
    fn separable_cases_give_perfect_top_shapelet() {
        let mut grids = Vec::new();
        let mut events = Vec::new();
        for p in 0..6 {
            let mut v = vec![0.0; 40];
            if p < 3 {
                // Case: [1,2,3] right before the event at index 20.
                v[17..20].copy_from_slice(&[1.0, 2.0, 3.0]);
                events.push(vec![Event { start: 20, end: 25 }]);
            } else {
                for k in 0..38 {
                    v[k..k + 3].copy_from_slice(&[3.0, 2.0, 1.0]);
                }
                events.push(vec![]);
            }
            grids.push(stay(p, vec![series("x", v)]));
        }
        let text = "variable_id,name,kind,range_lo,range_hi,default,freq_class,acting_period_min,merge_group,merge_weight\n\
x,X,continuous,0,10,0,high,,,\n";
        let cat = VariableCatalog::from_reader(text.as_bytes(), "c").unwrap();
        let cfg = ShapeletConfig {
            variables: vec!["x".into()],
            per_group: 4,
            segment_min: 0,
            high_frequency: LengthSpec { lengths: vec![3], stride: 1 },
            ..Default::default()
        };
        let s = mine_shapelets(&grids, &events, &cat, &cfg, 1).unwrap();
        assert!(!s.is_empty());
        assert_eq!(s[0].accuracy, 1.0);
        assert_eq!(s[0].values, vec![1.0, 2.0, 3.0]);
        assert_eq!(mine_shapelets(&grids, &events, &cat, &cfg, 1).unwrap(), s);
    }

    proptest! {
        #[test]
        fn selection_is_maxmin(points in proptest::collection::vec((0.0f64..10.0, 0.0f64..10.0, 0.5f64..1.0), 1..25), k in 1usize..10) {
            let acc: Vec<f64> = points.iter().map(|p| p.2).collect();
            let d = |a: usize, b: usize| ((points[a].0 - points[b].0).powi(2) + (points[a].1 - points[b].1).powi(2)).sqrt();
            let sel = minmax_select(&acc, d, k);
            prop_assert_eq!(sel.len(), k.min(points.len()));
            let top = acc.iter().cloned().fold(f64::MIN, f64::max);
            prop_assert_eq!(acc[sel[0]], top);
            for step in 1..sel.len() {
                let score = |i: usize| sel[..step].iter().map(|j| d(i, *j)).fold(f64::MAX, f64::min);
                let chosen = score(sel[step]);
                for i in 0..points.len() {
                    if !sel[..step].contains(&i) {
                        prop_assert!(score(i) <= chosen);
                    }
                }
            }
        }

        #[test]
        fn joint_shift_preserves_distance(v in proptest::collection::vec(-5.0f64..5.0, 8..30), s in proptest::collection::vec(-5.0f64..5.0, 3), c in -100.0f64..100.0) {
            let a = shapelet_features(&v, &sh(s.clone()), &[0, 10], 20);
            let vs: Vec<f64> = v.iter().map(|x| x + c).collect();
            let ss: Vec<f64> = s.iter().map(|x| x + c).collect();
            let b = shapelet_features(&vs, &sh(ss), &[0, 10], 20);
            for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
                prop_assert!(*x >= 0.0);
                prop_assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()) || (*x == NO_DISTANCE && *y == NO_DISTANCE));
            }
        }
    }
}
