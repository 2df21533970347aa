//! Variable ranking by attribution mass or forward AUPRC gain.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::treeshap::attributions;
use super::{Dataset, TreeEnsemble};
use crate::error::{Error, Result};
use crate::features::matrix::FeatureInfo;
use crate::metrics::auprc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    ShapGreedy,
    ForwardAuprc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedVariable {
    pub variable: String,
    /// Mean |φ| of the top feature when ranked, or the AUPRC after adding it.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub mode: SelectionMode,
    pub ranked: Vec<RankedVariable>,
    /// Top-K features by mean |φ| (empty for forward selection).
    pub full_features: Vec<String>,
    /// Every feature of the top compact variables.
    pub compact_features: Vec<String>,
}

/// All positives plus an equal-sized seeded sample of negatives.
pub fn balanced_rows(y: &[bool], seed: u64) -> Result<Vec<usize>> {
    let pos: Vec<usize> = (0..y.len()).filter(|i| y[*i]).collect();
    let neg: Vec<usize> = (0..y.len()).filter(|i| !y[*i]).collect();
    if pos.is_empty() {
        return Err(Error::InsufficientData("validation set has no positive rows".into()));
    }
    let mut rows = pos.clone();
    if neg.len() <= pos.len() {
        rows.extend(&neg);
    } else {
        rows.extend(sample(&mut crate::rng::stream(seed, "selection/balance"), neg.len(), pos.len()).into_iter().map(|k| neg[k]));
    }
    rows.sort_unstable();
    Ok(rows)
}

pub fn mean_abs_shap(model: &TreeEnsemble, d: &Dataset, rows: &[usize]) -> Vec<f64> {
    let phis: Vec<Vec<f64>> = rows.par_iter().map(|r| attributions(model, d.row(*r)).phi).collect();
    let mut out = vec![0.0; d.n_features];
    for phi in &phis {
        for (o, p) in out.iter_mut().zip(phi) {
            *o += p.abs();
        }
    }
    let n = rows.len().max(1) as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// Repeatedly takes the variable owning the highest-ranked remaining
/// feature, then drops all of that variable's features. Features with zero
/// attribution are never ranked.
pub fn shap_greedy_ranking(mean_abs: &[f64], columns: &[FeatureInfo]) -> Vec<RankedVariable> {
    let mut order: Vec<usize> = (0..columns.len()).filter(|j| mean_abs[*j] > 0.0).collect();
    order.sort_by(|a, b| mean_abs[*b].total_cmp(&mean_abs[*a]).then(a.cmp(b)));
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for j in order {
        let v = &columns[j].variable;
        if seen.insert(v.clone()) {
            out.push(RankedVariable { variable: v.clone(), score: mean_abs[j] });
        }
    }
    out
}

pub fn top_features(mean_abs: &[f64], columns: &[FeatureInfo], k: usize) -> Vec<String> {
    let mut order: Vec<usize> = (0..columns.len()).collect();
    order.sort_by(|a, b| mean_abs[*b].total_cmp(&mean_abs[*a]).then(a.cmp(b)));
    order.into_iter().take(k).map(|j| columns[j].name.clone()).collect()
}

/// Features of the first `n_vars` ranked variables, in column order.
/// Statics and time since admission are always kept.
pub fn compact_features(ranked: &[RankedVariable], columns: &[FeatureInfo], n_vars: usize) -> Vec<String> {
    use crate::features::matrix::FeatureCategory as C;
    let keep: std::collections::BTreeSet<&str> = ranked.iter().take(n_vars).map(|r| r.variable.as_str()).collect();
    columns
        .iter()
        .filter(|c| matches!(c.category, C::Static | C::Time) || keep.contains(c.variable.as_str()))
        .map(|c| c.name.clone())
        .collect()
}

fn groups(columns: &[FeatureInfo]) -> BTreeMap<String, Vec<usize>> {
    let mut g: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (j, c) in columns.iter().enumerate() {
        g.entry(c.variable.clone()).or_default().push(j);
    }
    g
}

/// Greedy forward selection: each step adds the variable whose features
/// raise validation AUPRC most, stopping when nothing improves or after
/// `max_vars` steps. `fit` trains on the given training subset and returns
/// validation scores.
pub fn forward_auprc<F>(train: &Dataset, valid: &Dataset, columns: &[FeatureInfo], max_vars: usize, fit: F) -> Result<Vec<RankedVariable>>
where
    F: Fn(&Dataset, &Dataset) -> Result<Vec<f64>> + Sync,
{
    if !valid.y.iter().any(|y| *y) {
        return Err(Error::InsufficientData("validation set has no positive rows".into()));
    }
    let groups = groups(columns);
    let mut chosen: Vec<usize> = Vec::new();
    let mut remaining: Vec<&String> = groups.keys().collect();
    let mut current = valid.y.iter().filter(|y| **y).count() as f64 / valid.n_rows() as f64;
    let mut out = Vec::new();
    while out.len() < max_vars && !remaining.is_empty() {
        let trials: Vec<Result<f64>> = remaining
            .par_iter()
            .map(|v| {
                let mut feats = chosen.clone();
                feats.extend(&groups[*v]);
                feats.sort_unstable();
                let scores = fit(&train.select_features(&feats), &valid.select_features(&feats))?;
                auprc(&scores, &valid.y)
            })
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for (k, t) in trials.into_iter().enumerate() {
            let ap = t?;
            if best.is_none_or(|(_, b)| ap > b) {
                best = Some((k, ap));
            }
        }
        let (k, ap) = best.unwrap();
        if ap <= current {
            break;
        }
        current = ap;
        let v = remaining.remove(k);
        chosen.extend(&groups[v]);
        out.push(RankedVariable { variable: v.clone(), score: ap });
    }
    Ok(out)
}
