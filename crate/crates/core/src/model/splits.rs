//! Patient-level train/validation/test splits.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::PatientId;
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Temporal,
    HeldOut,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub name: String,
    pub kind: SplitKind,
    pub train: Vec<PatientId>,
    pub validation: Vec<PatientId>,
    pub test: Vec<PatientId>,
}

impl Split {
    pub fn is_disjoint(&self) -> bool {
        let mut all: Vec<PatientId> = self.train.iter().chain(&self.validation).chain(&self.test).copied().collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        all.len() == n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub splits: Vec<Split>,
}

impl SplitPlan {
    pub fn get(&self, name: &str) -> Result<&Split> {
        self.splits
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::validation("split", format!("no split named `{name}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub temporal_count: usize,
    pub window_years: f64,
    pub shift_months: f64,
    /// Trailing part of each temporal window used for validation and test.
    pub eval_years: f64,
    pub held_out_fraction: f64,
    pub random_ratios: [f64; 3],
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            temporal_count: 5,
            window_years: 5.0,
            shift_months: 6.0,
            eval_years: 1.0,
            held_out_fraction: 0.1,
            random_ratios: [8.0, 1.0, 1.0],
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::validation(format!("splits.{f}"), m));
        if self.window_years <= 0.0 || self.eval_years <= 0.0 || self.eval_years >= self.window_years {
            return bad("eval_years", "must be positive and shorter than window_years");
        }
        if self.shift_months < 0.0 {
            return bad("shift_months", "must be non-negative");
        }
        if !(0.0..1.0).contains(&self.held_out_fraction) {
            return bad("held_out_fraction", "must lie in [0, 1)");
        }
        if self.random_ratios.iter().any(|r| *r <= 0.0) {
            return bad("random_ratios", "must be positive");
        }
        Ok(())
    }
}

const YEAR_SECS: f64 = 365.25 * 24.0 * 3600.0;

/// Alternates admissions (in time order) between validation and test.
fn alternate(ids: &[PatientId]) -> (Vec<PatientId>, Vec<PatientId>) {
    let mut v = Vec::new();
    let mut t = Vec::new();
    for (i, p) in ids.iter().enumerate() {
        if i % 2 == 0 {
            v.push(*p);
        } else {
            t.push(*p);
        }
    }
    (v, t)
}

/// Builds the temporal splits, the held-out split (most recent admissions)
/// and a seeded random split.
pub fn make_splits(admissions: &[(PatientId, Timestamp)], cfg: &SplitConfig, seed: u64) -> Result<SplitPlan> {
    if admissions.len() < 3 {
        return Err(Error::InsufficientData("splits need at least three admissions".into()));
    }
    let mut order: Vec<(Timestamp, PatientId)> = admissions.iter().map(|(p, t)| (*t, *p)).collect();
    order.sort_unstable();
    let n = order.len();
    let mut splits = Vec::new();

    let n_held = ((n as f64 * cfg.held_out_fraction).ceil() as usize).min(n - 1);
    let (dev, held) = order.split_at(n - n_held);
    let held_ids: Vec<PatientId> = held.iter().map(|x| x.1).collect();
    let (hv, ht) = alternate(&held_ids);
    splits.push(Split {
        name: "held_out".into(),
        kind: SplitKind::HeldOut,
        train: dev.iter().map(|x| x.1).collect(),
        validation: hv,
        test: ht,
    });

    if cfg.temporal_count > 0 && dev.len() >= 3 {
        let secs = |t: &Timestamp| t.and_utc().timestamp() as f64;
        let t0 = secs(&dev[0].0);
        let span = secs(&dev[dev.len() - 1].0) - t0;
        let shift = cfg.shift_months / 12.0 * YEAR_SECS;
        let needed = cfg.window_years * YEAR_SECS + shift * (cfg.temporal_count - 1) as f64;
        let scale = if span < needed {
            log::warn!(
                "development cohort spans {:.2} years, temporal splits need {:.2}; compressing",
                span / YEAR_SECS,
                needed / YEAR_SECS
            );
            span / needed
        } else {
            1.0
        };
        // The last window ends at the last development admission.
        let window = cfg.window_years * YEAR_SECS * scale;
        let eval = cfg.eval_years * YEAR_SECS * scale;
        let step = shift * scale;
        let last_end = t0 + span;
        for i in 0..cfg.temporal_count {
            let end = last_end - step * (cfg.temporal_count - 1 - i) as f64;
            let start = end - window;
            let cut = end - eval;
            let mut train = Vec::new();
            let mut eval_ids = Vec::new();
            for (t, p) in dev {
                let s = secs(t);
                if s < start - 1.0 || s > end + 1.0 {
                    continue;
                }
                if s <= cut {
                    train.push(*p);
                } else {
                    eval_ids.push(*p);
                }
            }
            let (validation, test) = alternate(&eval_ids);
            splits.push(Split { name: format!("temporal_{}", i + 1), kind: SplitKind::Temporal, train, validation, test });
        }
    }

    let mut ids: Vec<PatientId> = order.iter().map(|x| x.1).collect();
    ids.sort_unstable();
    ids.shuffle(&mut crate::rng::stream(seed, "splits/random"));
    let total: f64 = cfg.random_ratios.iter().sum();
    let n_train = ((n as f64) * cfg.random_ratios[0] / total).round() as usize;
    let n_val = ((n as f64) * cfg.random_ratios[1] / total).round() as usize;
    let n_train = n_train.min(n - 2);
    let n_val = n_val.clamp(1, n - n_train - 1);
    splits.push(Split {
        name: "random".into(),
        kind: SplitKind::Random,
        train: ids[..n_train].to_vec(),
        validation: ids[n_train..n_train + n_val].to_vec(),
        test: ids[n_train + n_val..].to_vec(),
    });
    Ok(SplitPlan { splits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::parse_timestamp;
    use std::collections::BTreeMap;

    fn cohort(n: usize, days_apart: i64) -> Vec<(PatientId, Timestamp)> {
        let t0 = parse_timestamp("2008-01-01T00:00:00Z").unwrap();
        (0..n)
            .map(|i| (i as PatientId + 100, t0 + chrono::TimeDelta::days(days_apart * i as i64)))
            .collect()
    }

    #[test]
    fn temporal_splits_do_not_leak() {
        let adm = cohort(400, 8);
        let times: BTreeMap<_, _> = adm.iter().copied().collect();
        let plan = make_splits(&adm, &SplitConfig::default(), 0).unwrap();
        assert_eq!(plan.splits.len(), 7);
        for s in &plan.splits {
            assert!(s.is_disjoint(), "{}", s.name);
            assert!(!s.train.is_empty() && !s.validation.is_empty() && !s.test.is_empty(), "{}", s.name);
            if s.kind == SplitKind::Temporal {
                let max_train = s.train.iter().map(|p| times[p]).max().unwrap();
                let min_test = s.test.iter().chain(&s.validation).map(|p| times[p]).min().unwrap();
                assert!(max_train < min_test);
            }
        }
        // Consecutive windows move forward.
        let first = |name: &str| plan.get(name).unwrap().train.iter().map(|p| times[p]).min().unwrap();
        assert!(first("temporal_1") < first("temporal_5"));
    }

    #[test]
    fn held_out_is_most_recent_tenth_alternating() {
        let adm = cohort(100, 30);
        let plan = make_splits(&adm, &SplitConfig::default(), 0).unwrap();
        let h = plan.get("held_out").unwrap();
        assert_eq!(h.validation, vec![190, 192, 194, 196, 198]);
        assert_eq!(h.test, vec![191, 193, 195, 197, 199]);
        assert_eq!(h.train.len(), 90);
    }

    #[test]
    fn random_split_is_seeded() {
        let adm = cohort(50, 1);
        let a = make_splits(&adm, &SplitConfig::default(), 0).unwrap();
        let b = make_splits(&adm, &SplitConfig::default(), 0).unwrap();
        let c = make_splits(&adm, &SplitConfig::default(), 1).unwrap();
        assert_eq!(a.get("random").unwrap(), b.get("random").unwrap());
        assert_ne!(a.get("random").unwrap(), c.get("random").unwrap());
        let r = a.get("random").unwrap();
        assert_eq!((r.train.len(), r.validation.len(), r.test.len()), (40, 5, 5));
    }

    #[test]
    fn ten_monthly_admissions() {
        let t0 = parse_timestamp("2015-01-15T00:00:00Z").unwrap();
        let adm: Vec<_> = (0..10u64)
            .map(|i| (i, t0 + chrono::TimeDelta::days(30 * i as i64)))
            .collect();
        let cfg = SplitConfig { held_out_fraction: 0.0, temporal_count: 1, ..Default::default() };
        let plan = make_splits(&adm, &cfg, 0).unwrap();
        let s = plan.get("temporal_1").unwrap();
        // Nine months compressed into one window: the last fifth (~1.8 months) is evaluation.
        assert_eq!(s.validation, vec![8]);
        assert_eq!(s.test, vec![9]);
        assert_eq!(s.train, (0..8).collect::<Vec<_>>());
    }
}
