//! Order statistics and small numeric helpers shared by the stages.
//!
//! Quantiles interpolate linearly between order statistics (position
//! `q·(n−1)` in the sorted sample).

/// Quantile of an ascending slice. Returns NaN for an empty slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            sorted[lo] + (sorted[hi] - sorted[lo]) * frac
        }
    }
}

pub fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

pub fn median(values: &[f64]) -> f64 {
    quantile_sorted(&sorted_copy(values), 0.5)
}

/// Interquartile range Q3 − Q1.
pub fn iqr_sorted(sorted: &[f64]) -> f64 {
    quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Most frequent value; ties go to the smallest value.
pub fn mode(values: &[f64]) -> f64 {
    let sorted = sorted_copy(values);
    let mut best = f64::NAN;
    let mut best_n = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        if j - i > best_n {
            best_n = j - i;
            best = sorted[i];
        }
        i = j;
    }
    best
}

/// Least-squares slope of `values` against equally spaced times `step` apart.
pub fn ols_slope(values: &[f64], step: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let tbar = (nf - 1.0) / 2.0;
    let vbar = mean(values);
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, v) in values.iter().enumerate() {
        let dt = i as f64 - tbar;
        num += dt * (v - vbar);
        den += dt * dt;
    }
    num / den / step
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_of_four_intervals() {
        let v = [10.0, 20.0, 30.0, 40.0];
        assert_eq!(quantile_sorted(&v, 0.5), 25.0);
        assert_eq!(quantile_sorted(&v, 0.25), 17.5);
        assert_eq!(quantile_sorted(&v, 0.75), 32.5);
        assert_eq!(iqr_sorted(&v), 15.0);
    }

    #[test]
    fn summaries_of_ramp() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(median(&v), 2.5);
        assert_eq!(iqr_sorted(&v), 1.5);
        assert!((ols_slope(&v, 5.0) - 0.2).abs() < 1e-12);
        assert_eq!(ols_slope(&[5.0, 5.0, 5.0], 5.0), 0.0);
    }

    #[test]
    fn mode_ties_low() {
        assert_eq!(mode(&[3.0, 1.0, 3.0, 1.0, 2.0]), 1.0);
        assert_eq!(mode(&[2.0, 2.0, 1.0]), 2.0);
    }
}
