//! Exact path-dependent Shapley attributions for tree ensembles.

use serde::{Deserialize, Serialize};

use super::tree::{Tree, TreeEnsemble};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub base: f64,
    /// One value per feature, in log-odds.
    pub phi: Vec<f64>,
}

impl Attribution {
    pub fn total(&self) -> f64 {
        self.base + self.phi.iter().sum::<f64>()
    }
}

#[derive(Clone, Copy)]
struct PathElem {
    feature: i64,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElem>, zero: f64, one: f64, feature: i64) {
    let l = path.len();
    path.push(PathElem { feature, zero, one, weight: if l == 0 { 1.0 } else { 0.0 } });
    for i in (0..l).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / (l + 1) as f64;
        path[i].weight = zero * path[i].weight * (l - i) as f64 / (l + 1) as f64;
    }
}

fn unwind(path: &mut Vec<PathElem>, k: usize) {
    let d = path.len() - 1;
    let (one, zero) = (path[k].one, path[k].zero);
    let mut next = path[d].weight;
    for i in (0..d).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next * (d + 1) as f64 / ((i + 1) as f64 * one);
            next = tmp - path[i].weight * zero * (d - i) as f64 / (d + 1) as f64;
        } else {
            path[i].weight = path[i].weight * (d + 1) as f64 / (zero * (d - i) as f64);
        }
    }
    for i in k..d {
        path[i].feature = path[i + 1].feature;
        path[i].zero = path[i + 1].zero;
        path[i].one = path[i + 1].one;
    }
    path.truncate(d);
}

fn unwound_sum(path: &[PathElem], k: usize) -> f64 {
    let d = path.len() - 1;
    let (one, zero) = (path[k].one, path[k].zero);
    let mut next = path[d].weight;
    let mut total = 0.0;
    for i in (0..d).rev() {
        if one != 0.0 {
            let tmp = next * (d + 1) as f64 / ((i + 1) as f64 * one);
            total += tmp;
            next = path[i].weight - tmp * zero * (d - i) as f64 / (d + 1) as f64;
        } else if zero != 0.0 {
            total += path[i].weight / zero / ((d - i) as f64 / (d + 1) as f64);
        }
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn recurse(t: &Tree, x: &[f64], phi: &mut [f64], node: usize, parent: &[PathElem], zero: f64, one: f64, feature: i64) {
    let mut path = parent.to_vec();
    extend(&mut path, zero, one, feature);
    if t.is_leaf(node) {
        for i in 1..path.len() {
            let w = unwound_sum(&path, i);
            let e = path[i];
            phi[e.feature as usize] += w * (e.one - e.zero) * t.value[node];
        }
        return;
    }
    let f = t.split_feature[node] as usize;
    let (l, r) = (t.left[node] as usize, t.right[node] as usize);
    let (hot, cold) = if x[f] <= t.threshold[node] { (l, r) } else { (r, l) };
    let (mut iz, mut io) = (1.0, 1.0);
    if let Some(k) = path.iter().position(|e| e.feature == f as i64) {
        iz = path[k].zero;
        io = path[k].one;
        unwind(&mut path, k);
    }
    let cover = t.cover[node];
    recurse(t, x, phi, hot, &path, t.cover[hot] / cover * iz, io, f as i64);
    recurse(t, x, phi, cold, &path, t.cover[cold] / cover * iz, 0.0, f as i64);
}

pub fn tree_shap(t: &Tree, x: &[f64], phi: &mut [f64]) {
    recurse(t, x, phi, 0, &[], 1.0, 1.0, -1);
}

/// Attributions of the raw margin; `base + Σφ` equals the margin.
pub fn attributions(model: &TreeEnsemble, x: &[f64]) -> Attribution {
    let mut phi = vec![0.0; x.len()];
    for t in &model.trees {
        tree_shap(t, x, &mut phi);
    }
    let base = model.base_score + model.trees.iter().map(Tree::expected_value).sum::<f64>();
    Attribution { base, phi }
}
