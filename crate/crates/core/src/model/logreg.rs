//! L2-penalised logistic regression fitted by plain SGD.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::metrics::auprc;
use crate::stats::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogRegParams {
    pub alphas: Vec<f64>,
    pub max_epochs: usize,
    pub tol: f64,
    pub no_change_epochs: usize,
    pub balanced: bool,
}

impl Default for LogRegParams {
    fn default() -> Self {
        LogRegParams { alphas: vec![1e-4, 1e-3, 1e-2, 0.1, 1.0], max_epochs: 1000, tol: 1e-3, no_change_epochs: 5, balanced: true }
    }
}

impl LogRegParams {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::validation(format!("{prefix}.{f}"), m));
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return bad("alphas", "must be a non-empty list of positive numbers");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs", "must be positive");
        }
        if !(self.tol >= 0.0) {
            return bad("tol", "must be non-negative");
        }
        if self.no_change_epochs == 0 {
            return bad("no_change_epochs", "must be positive");
        }
        Ok(())
    }
}

/// Values at or above this are "never observed" sentinels.
const SENTINEL: f64 = 1e300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Replacement for sentinel values: the largest regular training value.
    pub sentinel_fill: Vec<f64>,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub alpha: f64,
    pub epochs: usize,
    /// Validation AUPRC per candidate alpha.
    pub alpha_auprc: Vec<(f64, f64)>,
    pub degenerate: bool,
}

struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
    fill: Vec<f64>,
}

impl Standardizer {
    fn fit(d: &Dataset) -> Self {
        let mut mean = Vec::with_capacity(d.n_features);
        let mut scale = Vec::with_capacity(d.n_features);
        let mut fill = Vec::with_capacity(d.n_features);
        for f in 0..d.n_features {
            let col = d.column(f);
            let regular: Vec<f64> = col.iter().copied().filter(|v| v.is_finite() && *v < SENTINEL).collect();
            let top = regular.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let top = if top.is_finite() { top } else { 0.0 };
            let vals: Vec<f64> = col.iter().map(|v| if v.is_nan() { f64::NAN } else if *v >= SENTINEL { top } else { *v }).filter(|v| !v.is_nan()).collect();
            let m = if vals.is_empty() { 0.0 } else { vals.iter().sum::<f64>() / vals.len() as f64 };
            let binary = vals.iter().all(|v| *v == 0.0 || *v == 1.0);
            let sd = if vals.is_empty() { 1.0 } else { (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64).sqrt() };
            // One-hot and flag columns stay on their 0/1 scale.
            if binary {
                mean.push(0.0);
                scale.push(1.0);
            } else {
                mean.push(m);
                scale.push(if sd > 0.0 { sd } else { 1.0 });
            }
            fill.push(top);
        }
        Standardizer { mean, scale, fill }
    }
}

fn transform(mean: &[f64], scale: &[f64], fill: &[f64], row: &[f64], out: &mut [f64]) {
    for j in 0..row.len() {
        let v = row[j];
        let v = if v.is_nan() { mean[j] } else if v >= SENTINEL { fill[j] } else { v };
        out[j] = (v - mean[j]) / scale[j];
    }
}

impl LogRegModel {
    pub fn margin(&self, row: &[f64]) -> f64 {
        let mut z = vec![0.0; row.len()];
        transform(&self.mean, &self.scale, &self.sentinel_fill, row, &mut z);
        self.intercept + z.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn score(&self, row: &[f64]) -> f64 {
        sigmoid(self.margin(row))
    }
}

fn log_loss(p: f64, y: f64) -> f64 {
    let z = p * y;
    if z > 18.0 {
        (-z).exp()
    } else if z < -18.0 {
        -z
    } else {
        (-z).exp().ln_1p()
    }
}

fn dloss(p: f64, y: f64) -> f64 {
    let z = p * y;
    if z > 18.0 {
        -y * (-z).exp()
    } else if z < -18.0 {
        -y
    } else {
        -y / (z.exp() + 1.0)
    }
}

/// SGD with the `1 / (alpha (t0 + t))` step schedule.
fn fit_alpha(z: &[Vec<f64>], y: &[f64], cw: (f64, f64), alpha: f64, p: &LogRegParams, seed: u64) -> (Vec<f64>, f64, usize) {
    let d = z.first().map_or(0, Vec::len);
    let mut w = vec![0.0; d];
    let mut wscale = 1.0;
    let mut b = 0.0;
    let typw = (1.0 / alpha.sqrt()).sqrt();
    let eta0 = typw / dloss(-typw, 1.0).abs().max(1.0);
    let t0 = 1.0 / (eta0 * alpha);
    let mut t = 1.0;
    let mut order: Vec<usize> = (0..z.len()).collect();
    let mut rng = crate::rng::stream(seed, &format!("logreg/{alpha}"));
    let mut best_loss = f64::INFINITY;
    let mut no_change = 0;
    let mut epochs = 0;
    for _ in 0..p.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        let mut sumloss = 0.0;
        for &i in &order {
            let x = &z[i];
            let eta = 1.0 / (alpha * (t0 + t - 1.0));
            let pred = wscale * x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
            sumloss += log_loss(pred, y[i]);
            let g = dloss(pred, y[i]).clamp(-1e12, 1e12);
            let cwt = if y[i] > 0.0 { cw.1 } else { cw.0 };
            let update = -eta * g * cwt;
            wscale *= (1.0 - eta * alpha).max(0.0);
            if wscale < 1e-9 {
                for v in w.iter_mut() {
                    *v *= wscale;
                }
                wscale = 1.0;
            }
            if update != 0.0 {
                for (v, a) in w.iter_mut().zip(x) {
                    *v += update * a / wscale;
                }
                b += update;
            }
            t += 1.0;
        }
        if sumloss > best_loss - p.tol * z.len() as f64 {
            no_change += 1;
        } else {
            no_change = 0;
        }
        best_loss = best_loss.min(sumloss);
        if no_change >= p.no_change_epochs {
            break;
        }
    }
    for v in w.iter_mut() {
        *v *= wscale;
    }
    (w, b, epochs)
}

/// Fits one model per alpha and keeps the one with the best validation
/// AUPRC (first wins ties). Without usable validation labels the first
/// alpha is used.
pub fn train_logreg(train: &Dataset, valid: Option<&Dataset>, p: &LogRegParams, seed: u64) -> Result<LogRegModel> {
    p.validate("model.logreg")?;
    let n = train.n_rows();
    if n == 0 {
        return Err(Error::InsufficientData("no training rows".into()));
    }
    let st = Standardizer::fit(train);
    let n_pos = train.y.iter().filter(|y| **y).count();
    let d = train.n_features;
    if n_pos == 0 || n_pos == n {
        let rate = (n_pos as f64 / n as f64).clamp(1e-12, 1.0 - 1e-12);
        log::warn!("training labels have a single class; emitting a constant model");
        return Ok(LogRegModel {
            mean: st.mean,
            scale: st.scale,
            sentinel_fill: st.fill,
            weights: vec![0.0; d],
            intercept: (rate / (1.0 - rate)).ln(),
            alpha: p.alphas[0],
            epochs: 0,
            alpha_auprc: Vec::new(),
            degenerate: true,
        });
    }
    let cw = if p.balanced { (n as f64 / (2.0 * (n - n_pos) as f64), n as f64 / (2.0 * n_pos as f64)) } else { (1.0, 1.0) };
    let z: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut out = vec![0.0; d];
            transform(&st.mean, &st.scale, &st.fill, train.row(i), &mut out);
            out
        })
        .collect();
    let y: Vec<f64> = train.y.iter().map(|v| if *v { 1.0 } else { -1.0 }).collect();
    let fits: Vec<(f64, Vec<f64>, f64, usize)> = p
        .alphas
        .par_iter()
        .map(|a| {
            let (w, b, e) = fit_alpha(&z, &y, cw, *a, p, seed);
            (*a, w, b, e)
        })
        .collect();
    let usable = valid.filter(|v| v.y.iter().any(|y| *y) && v.y.iter().any(|y| !*y));
    let mut models: Vec<LogRegModel> = fits
        .into_iter()
        .map(|(alpha, weights, intercept, epochs)| LogRegModel {
            mean: st.mean.clone(),
            scale: st.scale.clone(),
            sentinel_fill: st.fill.clone(),
            weights,
            intercept,
            alpha,
            epochs,
            alpha_auprc: Vec::new(),
            degenerate: false,
        })
        .collect();
    let mut table = Vec::new();
    let mut best = 0;
    if let Some(v) = usable {
        let mut best_ap = f64::NEG_INFINITY;
        for (k, m) in models.iter().enumerate() {
            let scores: Vec<f64> = (0..v.n_rows()).map(|i| m.score(v.row(i))).collect();
            let ap = auprc(&scores, &v.y)?;
            table.push((m.alpha, ap));
            if ap > best_ap {
                best_ap = ap;
                best = k;
            }
        }
    }
    let mut m = models.swap_remove(best);
    m.alpha_auprc = table;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auroc;
    use rand::{Rng, SeedableRng};

    fn data(n: usize, seed: u64) -> Dataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.gen_range(0.0..100.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            let c = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
            let s = if rng.gen_bool(0.2) { f64::MAX } else { rng.gen_range(0.0..10.0) };
            x.extend([a, b, c, s]);
            y.push(rng.gen::<f64>() < sigmoid(0.08 * (a - 70.0) + 1.5 * c));
        }
        Dataset::new(x, 4, y).unwrap()
    }

    #[test]
    fn learns_signal_and_picks_alpha() {
        let tr = data(800, 1);
        let va = data(400, 2);
        let m = train_logreg(&tr, Some(&va), &LogRegParams { max_epochs: 50, ..Default::default() }, 0).unwrap();
        assert_eq!(m.alpha_auprc.len(), 5);
        let best = m.alpha_auprc.iter().cloned().fold(f64::NEG_INFINITY, |a, (_, v)| a.max(v));
        assert_eq!(m.alpha_auprc.iter().find(|(a, _)| *a == m.alpha).unwrap().1, best);
        assert!(m.weights[0] > 0.0 && m.weights[2] > 0.0);
        assert_eq!((m.mean[2], m.scale[2]), (0.0, 1.0));
        let s: Vec<f64> = (0..va.n_rows()).map(|i| m.score(va.row(i))).collect();
        assert!(auroc(&s, &va.y).unwrap() > 0.85);
        assert!(s.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn deterministic_and_degenerate() {
        let tr = data(200, 3);
        let p = LogRegParams { alphas: vec![0.01], max_epochs: 20, ..Default::default() };
        assert_eq!(train_logreg(&tr, None, &p, 1).unwrap(), train_logreg(&tr, None, &p, 1).unwrap());
        let neg = Dataset::new(vec![1.0, 2.0], 1, vec![false, false]).unwrap();
        let m = train_logreg(&neg, None, &p, 0).unwrap();
        assert!(m.degenerate && m.score(&[5.0]) < 1e-9);
    }
}
