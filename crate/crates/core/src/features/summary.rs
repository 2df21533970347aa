//! Trailing-window statistics evaluated at every grid point.

use crate::stats::quantile_sorted;
use crate::time::GRID_STEP_MIN;

/// Statistics of the window ending at one grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub median: f64,
    pub mean: f64,
    pub iqr: f64,
    pub min: f64,
    pub max: f64,
    /// Least-squares slope per minute.
    pub slope: f64,
}

/// Windows up to this many points get an exact direct slope; longer ones use
/// prefix sums.
const DIRECT_SLOPE_MAX: usize = 256;

fn direct_slope(w: &[f64]) -> f64 {
    crate::stats::ols_slope(w, GRID_STEP_MIN as f64)
}

/// Summaries of `values[k+1-width ..= k]` (clipped at 0) for every `k`.
/// `width = None` means the whole series up to `k`.
pub fn trailing_summaries(values: &[f64], width: Option<usize>) -> Vec<Summary> {
    let n = values.len();
    let mut p_v = vec![0.0; n + 1];
    let mut p_iv = vec![0.0; n + 1];
    for (i, v) in values.iter().enumerate() {
        p_v[i + 1] = p_v[i] + v;
        p_iv[i + 1] = p_iv[i] + i as f64 * v;
    }
    let mut sorted: Vec<f64> = Vec::new();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let v = values[k];
        let pos = sorted.partition_point(|x| x.total_cmp(&v).is_lt());
        sorted.insert(pos, v);
        let lo = match width {
            Some(w) if k + 1 > w => {
                let old = values[k - w];
                let pos = sorted.partition_point(|x| x.total_cmp(&old).is_lt());
                sorted.remove(pos);
                k + 1 - w
            }
            _ => 0,
        };
        let len = k + 1 - lo;
        let sum_v = p_v[k + 1] - p_v[lo];
        let slope = if len <= DIRECT_SLOPE_MAX {
            direct_slope(&values[lo..=k])
        } else {
            let nf = len as f64;
            let sum_xv = (p_iv[k + 1] - p_iv[lo]) - lo as f64 * sum_v;
            let sum_x = nf * (nf - 1.0) / 2.0;
            let sum_xx = (nf - 1.0) * nf * (2.0 * nf - 1.0) / 6.0;
            (nf * sum_xv - sum_x * sum_v) / (nf * sum_xx - sum_x * sum_x) / GRID_STEP_MIN as f64
        };
        out.push(Summary {
            median: quantile_sorted(&sorted, 0.5),
            mean: sum_v / len as f64,
            iqr: quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25),
            min: sorted[0],
            max: sorted[len - 1],
            slope,
        });
    }
    out
}

/// Trailing mode over level indices (`None` = value outside the known
/// levels). Ties go to the lowest level; an all-unknown window gives `None`.
pub fn trailing_modes(levels: &[Option<usize>], n_levels: usize, width: Option<usize>) -> Vec<Option<usize>> {
    let mut counts = vec![0usize; n_levels];
    let mut out = Vec::with_capacity(levels.len());
    for k in 0..levels.len() {
        if let Some(l) = levels[k] {
            counts[l] += 1;
        }
        if let Some(w) = width {
            if k + 1 > w {
                if let Some(l) = levels[k - w] {
                    counts[l] -= 1;
                }
            }
        }
        let mut best = None;
        let mut best_n = 0;
        for (l, c) in counts.iter().enumerate() {
            if *c > best_n {
                best_n = *c;
                best = Some(l);
            }
        }
        out.push(best);
    }
    out
}
