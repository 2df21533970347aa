//! Histogram gradient boosting with logistic loss.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::binning::BinMapper;
use super::tree::{TrainMeta, Tree, TreeEnsemble};
use super::Dataset;
use crate::error::{Error, Result};
use crate::metrics::auprc;
use crate::stats::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtParams {
    pub learning_rate: f64,
    pub num_leaves: usize,
    /// Defaults to `log2(num_leaves)`.
    pub max_depth: Option<usize>,
    pub min_data_in_leaf: usize,
    pub min_sum_hessian: f64,
    pub lambda_l2: f64,
    pub feature_fraction: f64,
    pub bagging_fraction: f64,
    pub max_rounds: usize,
    pub early_stopping_rounds: usize,
    pub max_bins: usize,
    pub bin_sample_rows: usize,
    /// Weight positives by `N_neg / N_pos`.
    pub unbalanced: bool,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            learning_rate: 0.05,
            num_leaves: 128,
            max_depth: None,
            min_data_in_leaf: 20,
            min_sum_hessian: 1e-3,
            lambda_l2: 0.0,
            feature_fraction: 0.66,
            bagging_fraction: 0.66,
            max_rounds: 5000,
            early_stopping_rounds: 50,
            max_bins: 255,
            bin_sample_rows: 1_000_000,
            unbalanced: true,
        }
    }
}

impl GbdtParams {
    /// The single-tree baseline: one round, no subsampling.
    pub fn single_tree(&self) -> Self {
        GbdtParams { max_rounds: 1, feature_fraction: 1.0, bagging_fraction: 1.0, ..self.clone() }
    }

    pub fn depth_limit(&self) -> usize {
        self.max_depth.unwrap_or_else(|| (self.num_leaves as f64).log2().floor().max(1.0) as usize)
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::validation(format!("{prefix}.{f}"), m));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate", "must lie in (0, 1]");
        }
        if self.num_leaves < 2 {
            return bad("num_leaves", "must be at least 2");
        }
        if self.max_depth == Some(0) {
            return bad("max_depth", "must be positive");
        }
        if self.min_data_in_leaf == 0 {
            return bad("min_data_in_leaf", "must be positive");
        }
        if !(self.min_sum_hessian >= 0.0) || !(self.lambda_l2 >= 0.0) {
            return bad("lambda_l2", "regularisers must be non-negative");
        }
        for (f, v) in [("feature_fraction", self.feature_fraction), ("bagging_fraction", self.bagging_fraction)] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(f, "must lie in (0, 1]");
            }
        }
        if self.max_rounds == 0 {
            return bad("max_rounds", "must be positive");
        }
        if !(2..=256).contains(&self.max_bins) {
            return bad("max_bins", "must lie in 2..=256");
        }
        if self.bin_sample_rows == 0 {
            return bad("bin_sample_rows", "must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Default)]
struct HBin {
    g: f64,
    h: f64,
    n: u32,
}

struct Binned {
    mapper: BinMapper,
    bins: Vec<Vec<u8>>,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    pos: usize,
    bin: u8,
    left: (f64, f64, u32),
}

struct Leaf {
    node: usize,
    depth: usize,
    rows: Vec<u32>,
    hist: Option<Vec<Vec<HBin>>>,
    sum: (f64, f64, u32),
    best: Option<Candidate>,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn weighted_loss(margin: &[f64], y: &[bool], w: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut wsum = 0.0;
    for i in 0..margin.len() {
        let m = margin[i];
        total += w[i] * (softplus(m) - if y[i] { m } else { 0.0 });
        wsum += w[i];
    }
    total / wsum
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn build_hist(binned: &Binned, feats: &[usize], rows: &[u32], g: &[f64], h: &[f64]) -> Vec<Vec<HBin>> {
    feats
        .par_iter()
        .map(|&f| {
            let col = &binned.bins[f];
            let mut hb = vec![HBin::default(); binned.mapper.n_bins(f)];
            for &r in rows {
                let b = &mut hb[col[r as usize] as usize];
                b.g += g[r as usize];
                b.h += h[r as usize];
                b.n += 1;
            }
            hb
        })
        .collect()
}

fn subtract(parent: Vec<Vec<HBin>>, child: &[Vec<HBin>]) -> Vec<Vec<HBin>> {
    parent
        .into_iter()
        .zip(child)
        .map(|(mut p, c)| {
            for (a, b) in p.iter_mut().zip(c) {
                a.g -= b.g;
                a.h -= b.h;
                a.n -= b.n;
            }
            p
        })
        .collect()
}

fn best_split(hist: &[Vec<HBin>], sum: (f64, f64, u32), p: &GbdtParams) -> Option<Candidate> {
    let (gt, ht, nt) = sum;
    let parent = gt * gt / (ht + p.lambda_l2);
    let min_n = p.min_data_in_leaf as u32;
    let per_feature: Vec<Option<Candidate>> = hist
        .par_iter()
        .enumerate()
        .map(|(pos, hb)| {
            let mut best: Option<Candidate> = None;
            let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0u32);
            for (b, bin) in hb.iter().enumerate().take(hb.len().saturating_sub(1)) {
                gl += bin.g;
                hl += bin.h;
                nl += bin.n;
                let nr = nt - nl;
                if nl < min_n {
                    continue;
                }
                if nr < min_n {
                    break;
                }
                let hr = ht - hl;
                if hl < p.min_sum_hessian || hr < p.min_sum_hessian {
                    continue;
                }
                let gr = gt - gl;
                let gain = gl * gl / (hl + p.lambda_l2) + gr * gr / (hr + p.lambda_l2) - parent;
                if gain > 1e-12 * (1.0 + parent.abs()) && best.is_none_or(|c| gain > c.gain) {
                    best = Some(Candidate { gain, pos, bin: b as u8, left: (gl, hl, nl) });
                }
            }
            best
        })
        .collect();
    per_feature.into_iter().flatten().fold(None, |acc: Option<Candidate>, c| match acc {
        Some(a) if a.gain >= c.gain => Some(a),
        _ => Some(c),
    })
}

fn leaf_output(g: f64, h: f64, p: &GbdtParams) -> f64 {
    if h + p.lambda_l2 <= 0.0 {
        0.0
    } else {
        -g / (h + p.lambda_l2)
    }
}

/// Grows one tree on the bagged rows. Returns the tree with unshrunk leaf
/// outputs plus the split bins per node for routing binned rows.
fn grow_tree(binned: &Binned, feats: &[usize], rows: Vec<u32>, g: &[f64], h: &[f64], p: &GbdtParams) -> (Tree, Vec<u8>) {
    let max_depth = p.depth_limit();
    let mut tree = Tree { split_feature: vec![-1], threshold: vec![0.0], left: vec![0], right: vec![0], value: vec![0.0], cover: vec![0.0] };
    let mut split_bins = vec![0u8];
    let hist = build_hist(binned, feats, &rows, g, h);
    let sum = hist.first().map_or((0.0, 0.0, 0), |hb| {
        hb.iter().fold((0.0, 0.0, 0), |a, b| (a.0 + b.g, a.1 + b.h, a.2 + b.n))
    });
    let mut leaves = vec![Leaf { node: 0, depth: 0, rows, hist: Some(hist), sum, best: None }];
    let prepare = |leaf: &mut Leaf| {
        if leaf.depth < max_depth {
            leaf.best = leaf.hist.as_ref().and_then(|hs| best_split(hs, leaf.sum, p));
        }
        if leaf.best.is_none() {
            leaf.hist = None;
        }
    };
    prepare(&mut leaves[0]);
    while leaves.len() < p.num_leaves {
        let pick = leaves
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.best.map(|c| (i, c.gain)))
            .fold(None, |acc: Option<(usize, f64)>, (i, gain)| match acc {
                Some((_, g0)) if g0 >= gain => acc,
                _ => Some((i, gain)),
            });
        let Some((li, _)) = pick else { break };
        let leaf = leaves.swap_remove(li);
        let c = leaf.best.unwrap();
        let f = feats[c.pos];
        let col = &binned.bins[f];
        let (lrows, rrows): (Vec<u32>, Vec<u32>) = leaf.rows.iter().partition(|r| col[**r as usize] <= c.bin);
        let lsum = c.left;
        let rsum = (leaf.sum.0 - lsum.0, leaf.sum.1 - lsum.1, leaf.sum.2 - lsum.2);
        let parent_hist = leaf.hist.unwrap();
        let (lhist, rhist) = if lrows.len() <= rrows.len() {
            let small = build_hist(binned, feats, &lrows, g, h);
            let big = subtract(parent_hist, &small);
            (small, big)
        } else {
            let small = build_hist(binned, feats, &rrows, g, h);
            let big = subtract(parent_hist, &small);
            (big, small)
        };
        let node = leaf.node;
        let (ln, rn) = (tree.n_nodes(), tree.n_nodes() + 1);
        tree.split_feature[node] = f as i32;
        tree.threshold[node] = binned.mapper.edges[f][c.bin as usize];
        tree.left[node] = ln as u32;
        tree.right[node] = rn as u32;
        split_bins[node] = c.bin;
        for _ in 0..2 {
            tree.split_feature.push(-1);
            tree.threshold.push(0.0);
            tree.left.push(0);
            tree.right.push(0);
            tree.value.push(0.0);
            tree.cover.push(0.0);
            split_bins.push(0);
        }
        let d = leaf.depth + 1;
        let mut l = Leaf { node: ln, depth: d, rows: lrows, hist: Some(lhist), sum: lsum, best: None };
        let mut r = Leaf { node: rn, depth: d, rows: rrows, hist: Some(rhist), sum: rsum, best: None };
        prepare(&mut l);
        prepare(&mut r);
        // Keep leaves ordered by node id so tie-breaking is stable.
        leaves.push(l);
        leaves.push(r);
        leaves.sort_by_key(|l| l.node);
    }
    // Covers: counts of bagged rows. Internal covers are sums of children.
    for leaf in &leaves {
        tree.value[leaf.node] = leaf_output(leaf.sum.0, leaf.sum.1, p);
        tree.cover[leaf.node] = leaf.sum.2 as f64;
    }
    for n in (0..tree.n_nodes()).rev() {
        if !tree.is_leaf(n) {
            tree.cover[n] = tree.cover[tree.left[n] as usize] + tree.cover[tree.right[n] as usize];
        }
    }
    (tree, split_bins)
}

fn route_binned(tree: &Tree, split_bins: &[u8], bins: &[Vec<u8>], row: usize) -> usize {
    let mut n = 0;
    while !tree.is_leaf(n) {
        let f = tree.split_feature[n] as usize;
        n = if bins[f][row] <= split_bins[n] { tree.left[n] } else { tree.right[n] } as usize;
    }
    n
}

/// Trains a boosted ensemble. With a validation set, stops after
/// `early_stopping_rounds` rounds without validation AUPRC improvement and
/// rolls back to the best round.
pub fn train_gbdt(train: &Dataset, valid: Option<&Dataset>, p: &GbdtParams, seed: u64) -> Result<TreeEnsemble> {
    p.validate("model.gbdt")?;
    let n = train.n_rows();
    if n == 0 {
        return Err(Error::InsufficientData("no training rows".into()));
    }
    if let Some(v) = valid {
        if v.n_features != train.n_features {
            return Err(Error::validation("dataset", "validation features differ from training"));
        }
    }
    let n_pos = train.y.iter().filter(|y| **y).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        let rate = (n_pos as f64 / n as f64).clamp(1e-12, 1.0 - 1e-12);
        log::warn!("training labels have a single class; emitting a constant model");
        return Ok(TreeEnsemble {
            base_score: logit(rate),
            learning_rate: p.learning_rate,
            trees: Vec::new(),
            meta: TrainMeta { degenerate: true, positive_weight: 1.0, ..Default::default() },
        });
    }
    let pos_w = if p.unbalanced { n_neg as f64 / n_pos as f64 } else { 1.0 };
    let w: Vec<f64> = train.y.iter().map(|y| if *y { pos_w } else { 1.0 }).collect();
    let wsum: f64 = w.iter().sum();
    let base = logit(n_pos as f64 * pos_w / wsum);

    let columns: Vec<Vec<f64>> = (0..train.n_features).map(|f| train.column(f)).collect();
    let mapper = BinMapper::fit(&columns, p.max_bins, p.bin_sample_rows, seed);
    let bins: Vec<Vec<u8>> = columns.par_iter().enumerate().map(|(f, c)| mapper.bin_column(f, c)).collect();
    drop(columns);
    let binned = Binned { mapper, bins };

    let mut margin = vec![base; n];
    let mut vmargin: Vec<f64> = valid.map(|v| vec![base; v.n_rows()]).unwrap_or_default();
    let vlabels: Vec<bool> = valid.map(|v| v.y.clone()).unwrap_or_default();
    let use_valid = vlabels.iter().any(|y| *y) && vlabels.iter().any(|y| !*y);
    if valid.is_some() && !use_valid {
        log::warn!("validation labels have a single class; early stopping disabled");
    }

    let mut rng = crate::rng::stream(seed, "gbdt");
    let mut meta = TrainMeta { positive_weight: pos_w, ..Default::default() };
    meta.train_loss.push(weighted_loss(&margin, &train.y, &w));
    let mut trees = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0usize);
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    let d = train.n_features;
    for round in 1..=p.max_rounds {
        for i in 0..n {
            let pr = sigmoid(margin[i]);
            g[i] = w[i] * (pr - if train.y[i] { 1.0 } else { 0.0 });
            h[i] = w[i] * pr * (1.0 - pr);
        }
        let k = ((d as f64 * p.feature_fraction).round() as usize).clamp(1, d.max(1));
        let mut feats: Vec<usize> = if k >= d { (0..d).collect() } else { sample(&mut rng, d, k).into_vec() };
        feats.sort_unstable();
        let mut rows: Vec<u32> = if p.bagging_fraction < 1.0 {
            (0..n as u32).filter(|_| rng.gen::<f64>() < p.bagging_fraction).collect()
        } else {
            (0..n as u32).collect()
        };
        if rows.is_empty() {
            rows = (0..n as u32).collect();
        }
        let (mut tree, split_bins) = if d == 0 {
            let (gs, hs) = rows.iter().fold((0.0, 0.0), |a, r| (a.0 + g[*r as usize], a.1 + h[*r as usize]));
            (Tree::leaf(leaf_output(gs, hs, p), rows.len() as f64), vec![0])
        } else {
            grow_tree(&binned, &feats, rows, &g, &h, p)
        };
        for v in tree.value.iter_mut() {
            *v *= p.learning_rate;
        }
        let delta: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| tree.value[route_binned(&tree, &split_bins, &binned.bins, i)])
            .collect();
        // Halve the step until the training loss does not increase.
        let prev = *meta.train_loss.last().unwrap();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial: Vec<f64> = margin.iter().zip(&delta).map(|(m, dl)| m + step * dl).collect();
            let loss = weighted_loss(&trial, &train.y, &w);
            if loss <= prev {
                accepted = Some((trial, loss));
                break;
            }
            step *= 0.5;
        }
        let (new_margin, loss) = match accepted {
            Some(a) => a,
            None => {
                step = 0.0;
                (margin.clone(), prev)
            }
        };
        if step < 1.0 {
            log::debug!("round {round}: step shortened to {step}");
        }
        for v in tree.value.iter_mut() {
            *v *= step;
        }
        margin = new_margin;
        meta.train_loss.push(loss);
        if let Some(v) = valid {
            let out: Vec<f64> = (0..v.n_rows()).into_par_iter().map(|i| tree.predict(v.row(i))).collect();
            for (m, o) in vmargin.iter_mut().zip(out) {
                *m += o;
            }
        }
        trees.push(tree);
        meta.rounds_trained = round;
        if use_valid {
            let scores: Vec<f64> = vmargin.iter().map(|m| sigmoid(*m)).collect();
            let ap = auprc(&scores, &vlabels)?;
            meta.valid_auprc.push(ap);
            if ap > best.0 {
                best = (ap, round);
            } else if round - best.1 >= p.early_stopping_rounds {
                break;
            }
        }
    }
    meta.best_rounds = if use_valid { best.1 } else { trees.len() };
    trees.truncate(meta.best_rounds);
    Ok(TreeEnsemble { base_score: base, learning_rate: p.learning_rate, trees, meta })
}
