//! Quantile histogram bins per feature.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

/// Per-feature ascending bin edges. Bin `b` holds values in
/// `(edges[b-1], edges[b]]`; the last bin holds everything above the last
/// edge and NaN, so "bin ≤ b" is the same test as "value ≤ edges[b]".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinMapper {
    pub edges: Vec<Vec<f64>>,
}

impl BinMapper {
    /// Fits edges on up to `sample_rows` rows drawn with the given seed.
    pub fn fit(columns: &[Vec<f64>], max_bins: usize, sample_rows: usize, seed: u64) -> Self {
        let n = columns.first().map(Vec::len).unwrap_or(0);
        let rows: Vec<usize> = if n > sample_rows {
            let mut r = sample(&mut crate::rng::stream(seed, "binning"), n, sample_rows).into_vec();
            r.sort_unstable();
            r
        } else {
            (0..n).collect()
        };
        let edges = columns
            .iter()
            .map(|col| {
                let mut v: Vec<f64> = rows.iter().map(|i| col[*i]).filter(|x| !x.is_nan()).collect();
                v.sort_by(|a, b| a.total_cmp(b));
                edges_for(&v, max_bins)
            })
            .collect();
        BinMapper { edges }
    }

    pub fn n_bins(&self, f: usize) -> usize {
        self.edges[f].len() + 1
    }

    pub fn bin(&self, f: usize, v: f64) -> u8 {
        let e = &self.edges[f];
        if v.is_nan() {
            return e.len() as u8;
        }
        e.partition_point(|x| *x < v) as u8
    }

    pub fn bin_column(&self, f: usize, col: &[f64]) -> Vec<u8> {
        col.iter().map(|v| self.bin(f, *v)).collect()
    }
}

fn edges_for(sorted: &[f64], max_bins: usize) -> Vec<f64> {
    let mut distinct: Vec<f64> = sorted.to_vec();
    distinct.dedup();
    if distinct.len() <= max_bins {
        distinct.pop();
        return distinct;
    }
    let n = sorted.len();
    let mut edges: Vec<f64> = (1..max_bins)
        .map(|i| sorted[((i as f64 / max_bins as f64) * (n - 1) as f64).floor() as usize])
        .collect();
    edges.dedup();
    if edges.last() == sorted.last() {
        edges.pop();
    }
    edges
}
