//! Instability history and measurement intensity.

use crate::catalog::VariableRoles;
use crate::endpoint::EndpointConfig;
use crate::grid::GridStay;
use crate::time::GRID_STEP_MIN;

/// Stand-in for "never happened" in time-since features: 30 days in minutes.
pub const NEVER_MIN: f64 = 30.0 * 24.0 * 60.0;

/// Catecholamine dose separating the low and high bands.
pub const DOSE_BAND: f64 = 0.1;

/// A per-point boolean condition with the variable it is attributed to.
#[derive(Debug, Clone, PartialEq)]
pub struct SubCondition {
    pub name: &'static str,
    pub variable: String,
    pub flags: Vec<bool>,
}

/// Names of the instability sub-conditions in emission order.
pub const CONDITION_NAMES: [&str; 14] = [
    "map_low",
    "lactate_high",
    "dobutamine",
    "milrinone",
    "levosimendan",
    "theophylline",
    "event_l1",
    "norepi_low",
    "norepi_high",
    "epi_low",
    "epi_high",
    "event_l2",
    "vasopressin",
    "event_l3",
];

fn values_or_zero<'a>(grid: &'a GridStay, id: &str, zeros: &'a [f64]) -> &'a [f64] {
    grid.series(id).map(|s| s.values.as_slice()).unwrap_or(zeros)
}

/// Evaluates every sub-condition on the imputed grid. Only values at or
/// before each point are used.
pub fn sub_conditions(grid: &GridStay, roles: &VariableRoles, cfg: &EndpointConfig) -> Vec<SubCondition> {
    let n = grid.len;
    let zeros = vec![0.0; n];
    let map = grid.series(&roles.map).map(|s| s.values.as_slice());
    let lac_a = grid.series(&roles.lactate_arterial).map(|s| s.values.as_slice());
    let lac_v = grid.series(&roles.lactate_venous).map(|s| s.values.as_slice());
    let dobu = values_or_zero(grid, &roles.dobutamine, &zeros);
    let milri = values_or_zero(grid, &roles.milrinone, &zeros);
    let levo = values_or_zero(grid, &roles.levosimendan, &zeros);
    let theo = values_or_zero(grid, &roles.theophylline, &zeros);
    let ne = values_or_zero(grid, &roles.norepinephrine, &zeros);
    let epi = values_or_zero(grid, &roles.epinephrine, &zeros);
    let vaso = values_or_zero(grid, &roles.vasopressin, &zeros);

    let lt = cfg.lactate_threshold;
    let map_low: Vec<bool> = (0..n)
        .map(|k| map.is_some_and(|m| m[k] <= cfg.map_threshold))
        .collect();
    let lac_high: Vec<bool> = (0..n)
        .map(|k| lac_a.is_some_and(|l| l[k] >= lt) || lac_v.is_some_and(|l| l[k] >= lt))
        .collect();
    let pos = |v: &[f64]| v.iter().map(|x| *x > 0.0).collect::<Vec<_>>();
    let low_band = |v: &[f64]| v.iter().map(|x| *x > 0.0 && *x < DOSE_BAND).collect::<Vec<_>>();
    let high_band = |v: &[f64]| v.iter().map(|x| *x >= DOSE_BAND).collect::<Vec<_>>();

    let l1: Vec<bool> = (0..n)
        .map(|k| lac_high[k] && (map_low[k] || dobu[k] > 0.0 || milri[k] > 0.0 || theo[k] > 0.0 || levo[k] > 0.0))
        .collect();
    let l2: Vec<bool> = (0..n)
        .map(|k| lac_high[k] && ((ne[k] > 0.0 && ne[k] < DOSE_BAND) || (epi[k] > 0.0 && epi[k] < DOSE_BAND)))
        .collect();
    let l3: Vec<bool> = (0..n)
        .map(|k| lac_high[k] && (ne[k] > DOSE_BAND || epi[k] > DOSE_BAND || vaso[k] > 0.0))
        .collect();

    let flags = [
        map_low,
        lac_high,
        pos(dobu),
        pos(milri),
        pos(levo),
        pos(theo),
        l1,
        low_band(ne),
        high_band(ne),
        low_band(epi),
        high_band(epi),
        l2,
        pos(vaso),
        l3,
    ];
    flags
        .into_iter()
        .zip(CONDITION_NAMES)
        .zip(condition_variables(roles))
        .map(|((flags, name), variable)| SubCondition { name, variable, flags })
        .collect()
}

/// Variable each sub-condition is attributed to, in [`CONDITION_NAMES`] order.
/// The composite event levels get their own pseudo-variable.
pub fn condition_variables(roles: &VariableRoles) -> [String; 14] {
    let ev = || "circulatory_event".to_string();
    [
        roles.map.clone(),
        roles.lactate_arterial.clone(),
        roles.dobutamine.clone(),
        roles.milrinone.clone(),
        roles.levosimendan.clone(),
        roles.theophylline.clone(),
        ev(),
        roles.norepinephrine.clone(),
        roles.norepinephrine.clone(),
        roles.epinephrine.clone(),
        roles.epinephrine.clone(),
        ev(),
        roles.vasopressin.clone(),
        ev(),
    ]
}

/// Minutes since the flag was last true at or before each point.
pub fn time_since_last(flags: &[bool]) -> Vec<f64> {
    let mut last: Option<usize> = None;
    flags
        .iter()
        .enumerate()
        .map(|(k, f)| {
            if *f {
                last = Some(k);
            }
            last.map(|j| (((k - j) as i64 * GRID_STEP_MIN) as f64).min(NEVER_MIN))
                .unwrap_or(NEVER_MIN)
        })
        .collect()
}

/// Fraction of the elapsed buckets `[k - width, k)` (clipped at the stay
/// start) in which the flag held. Zero at the first point.
pub fn fraction_of_time(flags: &[bool], width: Option<usize>) -> Vec<f64> {
    let mut prefix = vec![0usize; flags.len() + 1];
    for (i, f) in flags.iter().enumerate() {
        prefix[i + 1] = prefix[i] + *f as usize;
    }
    (0..flags.len())
        .map(|k| {
            let lo = width.map(|w| k.saturating_sub(w)).unwrap_or(0);
            if k == lo {
                0.0
            } else {
                (prefix[k] - prefix[lo]) as f64 / (k - lo) as f64
            }
        })
        .collect()
}

/// Measured-point ratio over `0..=k`.
pub fn measured_ratio(measured: &[bool]) -> Vec<f64> {
    let mut count = 0usize;
    measured
        .iter()
        .enumerate()
        .map(|(k, m)| {
            count += *m as usize;
            count as f64 / (k + 1) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::test_util::{series, stay};

    #[test]
    fn entire_stay_fraction() {
        // 600-minute stay, condition during the first 120 minutes.
        let flags: Vec<bool> = (0..=120).map(|k| k < 24).collect();
        assert!((fraction_of_time(&flags, None)[120] - 0.2).abs() < 1e-15);
        assert_eq!(fraction_of_time(&flags, None)[0], 0.0);
        // 12-hour window is longer than the stay and truncates.
        assert_eq!(fraction_of_time(&flags, Some(144))[120], fraction_of_time(&flags, None)[120]);
        assert_eq!(fraction_of_time(&flags, Some(12))[120], 0.0);
    }

    #[test]
    fn time_since() {
        assert_eq!(time_since_last(&[false, false]), vec![NEVER_MIN, NEVER_MIN]);
        assert_eq!(time_since_last(&[true, false, false, true]), vec![0.0, 5.0, 10.0, 0.0]);
        assert_eq!(measured_ratio(&[true; 4]), vec![1.0; 4]);
        assert_eq!(time_since_last(&[true; 3]), vec![0.0; 3]);
    }

    #[test]
    fn dose_bands_and_levels() {
        let g = stay(
            1,
            vec![
                series("map", vec![70.0, 60.0, 70.0, 70.0]),
                series("a_lac", vec![3.0, 3.0, 3.0, 1.0]),
                series("norepi", vec![0.05, 0.0, 0.1, 0.2]),
            ],
        );
        let c = sub_conditions(&g, &VariableRoles::default(), &EndpointConfig::default());
        let get = |n: &str| c.iter().find(|s| s.name == n).unwrap().flags.clone();
        assert_eq!(get("map_low"), vec![false, true, false, false]);
        assert_eq!(get("norepi_low"), vec![true, false, false, false]);
        assert_eq!(get("norepi_high"), vec![false, false, true, true]);
        assert_eq!(get("event_l1"), vec![false, true, false, false]);
        assert_eq!(get("event_l2"), vec![true, false, false, false]);
        // Level 3 uses a strict bound.
        assert_eq!(get("event_l3"), vec![false, false, false, false]);
        assert_eq!(c.len(), 14);
    }
}
