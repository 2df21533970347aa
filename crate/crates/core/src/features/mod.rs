//! Feature extraction: statics, time since admission, multi-resolution
//! summaries, measurement intensity, instability history and shapelet
//! distances, assembled into a [`FeatureMatrix`].
//!
//! Every feature at grid point `k` is computed from grid values at indices
//! `≤ k` only.

pub mod instability;
pub mod matrix;
pub mod summary;

use std::cell::OnceCell;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{FreqClass, VarKind, VariableCatalog, VariableRoles};
use crate::endpoint::EndpointConfig;
use crate::error::{Error, Result};
use crate::grid::{CircState, GridStay, Label, StaticValues};
use crate::io::fmt_num;
use crate::shapelets::{shapelet_features, Shapelet};
use crate::time::GRID_STEP_MIN;

pub use matrix::{FeatureCategory, FeatureInfo, FeatureMatrix, RowKey};

use instability::{fraction_of_time, measured_ratio, sub_conditions, time_since_last, SubCondition};
use summary::{trailing_modes, trailing_summaries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonTable {
    pub high: Vec<i64>,
    pub medium: Vec<i64>,
    pub low: Vec<i64>,
}

impl Default for HorizonTable {
    fn default() -> Self {
        HorizonTable {
            high: vec![30, 60, 240, 720],
            medium: vec![720, 1440, 2160, 2880],
            low: vec![960, 1920, 2880, 4320],
        }
    }
}

impl HorizonTable {
    pub fn for_class(&self, c: FreqClass) -> &[i64] {
        match c {
            FreqClass::High => &self.high,
            FreqClass::Medium => &self.medium,
            FreqClass::Low => &self.low,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub horizons: HorizonTable,
    pub instability_horizons_min: Vec<i64>,
    /// Points earlier than this many minutes into the grid get no row.
    pub skip_initial_min: i64,
    pub max_categories: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            horizons: HorizonTable::default(),
            instability_horizons_min: vec![720, 1440, 2160, 2880],
            skip_initial_min: 30,
            max_categories: 100,
        }
    }
}

fn increasing_multiples(v: &[i64]) -> bool {
    !v.is_empty() && v.iter().all(|h| *h > 0 && h % GRID_STEP_MIN == 0) && v.windows(2).all(|w| w[0] < w[1])
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        for (v, f) in [
            (&self.horizons.high, "horizons.high"),
            (&self.horizons.medium, "horizons.medium"),
            (&self.horizons.low, "horizons.low"),
            (&self.instability_horizons_min, "instability_horizons_min"),
        ] {
            if !increasing_multiples(v) {
                return Err(Error::validation(
                    format!("features.{f}"),
                    "must be strictly increasing positive multiples of 5",
                ));
            }
        }
        if self.skip_initial_min < 0 || self.skip_initial_min % GRID_STEP_MIN != 0 {
            return Err(Error::validation("features.skip_initial_min", "must be a non-negative multiple of 5"));
        }
        Ok(())
    }

    pub fn first_row_index(&self) -> usize {
        (self.skip_initial_min / GRID_STEP_MIN) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaVariable {
    pub id: String,
    pub kind: VarKind,
    pub freq_class: FreqClass,
    /// Known levels of a categorical variable, ascending.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<f64>,
}

/// Everything needed to turn an annotated grid into feature rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub variables: Vec<SchemaVariable>,
    pub shapelets: Vec<Shapelet>,
    pub shapelet_lags_min: Vec<i64>,
    pub shapelet_segment_min: i64,
    pub config: FeatureConfig,
    pub endpoint: EndpointConfig,
    pub roles: VariableRoles,
}

/// Fits categorical levels on training grids; at most `max_categories`
/// most frequent levels are kept per variable.
#[allow(clippy::too_many_arguments)]
pub fn fit_schema(
    train: &[GridStay],
    catalog: &VariableCatalog,
    shapelets: Vec<Shapelet>,
    shapelet_lags_min: Vec<i64>,
    shapelet_segment_min: i64,
    config: &FeatureConfig,
    endpoint: &EndpointConfig,
    roles: &VariableRoles,
) -> FeatureSchema {
    let variables = catalog
        .output_variables()
        .map(|e| {
            let mut levels = Vec::new();
            if e.kind == VarKind::Categorical {
                let mut counts: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
                for g in train {
                    if let Some(s) = g.series(&e.id) {
                        for v in &s.values {
                            counts.entry(v.to_bits()).or_insert((*v, 0)).1 += 1;
                        }
                    }
                }
                let mut by_freq: Vec<(f64, usize)> = counts.into_values().collect();
                by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.total_cmp(&b.0)));
                by_freq.truncate(config.max_categories);
                levels = by_freq.into_iter().map(|(v, _)| v).collect();
                levels.sort_by(|a, b| a.total_cmp(b));
            }
            SchemaVariable { id: e.id.clone(), kind: e.kind, freq_class: e.freq_class, levels }
        })
        .collect();
    FeatureSchema {
        variables,
        shapelets,
        shapelet_lags_min,
        shapelet_segment_min,
        config: config.clone(),
        endpoint: endpoint.clone(),
        roles: roles.clone(),
    }
}

/// Collects column metadata and, when a grid is given, column data.
struct Emitter<'a> {
    grid: Option<&'a GridStay>,
    columns: Vec<FeatureInfo>,
    data: Vec<Vec<f64>>,
}

impl Emitter<'_> {
    fn group(&mut self, infos: Vec<FeatureInfo>, compute: impl FnOnce(&GridStay) -> Vec<Vec<f64>>) {
        if let Some(g) = self.grid {
            let cols = compute(g);
            assert_eq!(cols.len(), infos.len(), "feature group size mismatch");
            self.data.extend(cols);
        }
        self.columns.extend(infos);
    }
}

fn info(name: String, variable: &str, category: FeatureCategory) -> FeatureInfo {
    FeatureInfo { name, variable: variable.to_string(), category }
}

fn horizon_label(h: Option<i64>) -> String {
    h.map(|m| format!("h{m}")).unwrap_or_else(|| "stay".into())
}

fn steps(min: i64) -> usize {
    (min / GRID_STEP_MIN) as usize
}

impl FeatureSchema {
    pub fn columns(&self) -> Vec<FeatureInfo> {
        let mut e = Emitter { grid: None, columns: Vec::new(), data: Vec::new() };
        self.emit(&mut e);
        e.columns
    }

    /// All feature columns over every grid point, `[column][point]`.
    pub fn emit_stay(&self, grid: &GridStay) -> (Vec<FeatureInfo>, Vec<Vec<f64>>) {
        let mut e = Emitter { grid: Some(grid), columns: Vec::new(), data: Vec::new() };
        self.emit(&mut e);
        (e.columns, e.data)
    }

    fn emit(&self, e: &mut Emitter) {
        use FeatureCategory as C;
        // Order of the six statics used as features.
        let statics: [(&str, fn(&StaticValues) -> f64); 6] = [
            ("age", |s| s.age),
            ("surgical", |s| s.surgical),
            ("emergency", |s| s.emergency),
            ("apache_group", |s| s.apache_group),
            ("height_cm", |s| s.height_cm),
            ("sex", |s| s.sex),
        ];
        for (name, get) in statics {
            e.group(vec![info(format!("static__{name}"), name, C::Static)], |g| {
                vec![vec![get(&g.statics); g.len]]
            });
        }
        e.group(
            vec![info("time_since_admission".into(), "time_since_admission", C::Time)],
            |g| {
                let off = g.start_offset_min();
                vec![(0..g.len).map(|k| off + (k as i64 * GRID_STEP_MIN) as f64).collect()]
            },
        );

        for var in &self.variables {
            self.emit_variable(e, var);
        }

        let conditions: OnceCell<Vec<SubCondition>> = OnceCell::new();
        let mut horizons: Vec<Option<i64>> = self.config.instability_horizons_min.iter().map(|h| Some(*h)).collect();
        horizons.push(None);
        for (ci, (name, var_name)) in instability::CONDITION_NAMES
            .iter()
            .zip(instability::condition_variables(&self.roles))
            .enumerate()
        {
            let mut infos = vec![
                info(format!("inst__{name}__current"), &var_name, C::Instability),
                info(format!("inst__{name}__time_since"), &var_name, C::Instability),
            ];
            for h in &horizons {
                infos.push(info(format!("inst__{name}__frac_{}", horizon_label(*h)), &var_name, C::Instability));
            }
            e.group(infos, |g| {
                let flags = &conditions.get_or_init(|| sub_conditions(g, &self.roles, &self.endpoint))[ci].flags;
                let mut cols = vec![flags.iter().map(|f| *f as u8 as f64).collect(), time_since_last(flags)];
                for h in &horizons {
                    cols.push(fraction_of_time(flags, h.map(steps)));
                }
                cols
            });
        }

        for s in &self.shapelets {
            let infos = self
                .shapelet_lags_min
                .iter()
                .map(|l| info(format!("shp__{}__{}__lag{l}", s.variable, s.id), &s.variable, C::Shapelet))
                .collect();
            e.group(infos, |g| match g.series(&s.variable) {
                Some(series) => shapelet_features(&series.values, s, &self.shapelet_lags_min, self.shapelet_segment_min),
                None => vec![vec![crate::shapelets::NO_DISTANCE; g.len]; self.shapelet_lags_min.len()],
            });
        }
    }

    fn emit_variable(&self, e: &mut Emitter, var: &SchemaVariable) {
        use FeatureCategory as C;
        let id = var.id.as_str();
        let mut horizons: Vec<Option<i64>> = self
            .config
            .horizons
            .for_class(var.freq_class)
            .iter()
            .map(|h| Some(*h))
            .collect();
        horizons.push(None);
        let values_of = |g: &GridStay| -> Vec<f64> {
            g.series(id).map(|s| s.values.clone()).unwrap_or_else(|| vec![f64::NAN; g.len])
        };

        match var.kind {
            VarKind::Continuous | VarKind::Drug => {
                let centre = if var.kind == VarKind::Drug { "mean" } else { "median" };
                let mut infos = vec![info(format!("{id}__current"), id, C::Current)];
                for h in &horizons {
                    for stat in [centre, "iqr", "min", "max", "slope"] {
                        infos.push(info(format!("{id}__{stat}_{}", horizon_label(*h)), id, C::Multires));
                    }
                }
                let is_drug = var.kind == VarKind::Drug;
                e.group(infos, |g| {
                    let v = values_of(g);
                    let mut cols = vec![v.clone()];
                    for h in &horizons {
                        let s = trailing_summaries(&v, h.map(steps));
                        cols.push(s.iter().map(|x| if is_drug { x.mean } else { x.median }).collect());
                        cols.push(s.iter().map(|x| x.iqr).collect());
                        cols.push(s.iter().map(|x| x.min).collect());
                        cols.push(s.iter().map(|x| x.max).collect());
                        cols.push(s.iter().map(|x| x.slope).collect());
                    }
                    cols
                });
            }
            VarKind::Binary => {
                let mut infos = vec![info(format!("{id}__current"), id, C::Current)];
                for h in &horizons {
                    infos.push(info(format!("{id}__mean_{}", horizon_label(*h)), id, C::Multires));
                }
                e.group(infos, |g| {
                    let v = values_of(g);
                    let mut cols = vec![v.clone()];
                    for h in &horizons {
                        cols.push(trailing_summaries(&v, h.map(steps)).iter().map(|x| x.mean).collect());
                    }
                    cols
                });
            }
            VarKind::Categorical => {
                let lv = &var.levels;
                let mut infos = Vec::new();
                for l in lv {
                    infos.push(info(format!("{id}__current={}", fmt_num(*l)), id, C::Current));
                }
                for h in &horizons {
                    for l in lv {
                        infos.push(info(format!("{id}__mode_{}={}", horizon_label(*h), fmt_num(*l)), id, C::Multires));
                    }
                }
                e.group(infos, |g| {
                    let v = values_of(g);
                    let idx: Vec<Option<usize>> = v
                        .iter()
                        .map(|x| lv.iter().position(|l| l == x))
                        .collect();
                    let one_hot = |sel: &[Option<usize>]| -> Vec<Vec<f64>> {
                        (0..lv.len())
                            .map(|li| sel.iter().map(|s| (*s == Some(li)) as u8 as f64).collect())
                            .collect()
                    };
                    let mut cols = one_hot(&idx);
                    for h in &horizons {
                        cols.extend(one_hot(&trailing_modes(&idx, lv.len(), h.map(steps))));
                    }
                    cols
                });
            }
        }

        e.group(
            vec![
                info(format!("{id}__time_since_meas"), id, C::Intensity),
                info(format!("{id}__meas_ratio"), id, C::Intensity),
            ],
            |g| match g.series(id) {
                Some(s) => vec![time_since_last(&s.measured), measured_ratio(&s.measured)],
                None => vec![vec![instability::NEVER_MIN; g.len], vec![0.0; g.len]],
            },
        );
    }
}

/// Which grid points become matrix rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowSelection {
    /// Points carrying a positive or negative label (training and metrics).
    Labeled,
    /// Every stable point (alarm scoring).
    Stable,
}

fn selected(grid: &GridStay, k: usize, first: usize, sel: RowSelection) -> bool {
    k >= first
        && match sel {
            RowSelection::Labeled => grid.labels[k] != Label::Unlabeled,
            RowSelection::Stable => grid.states[k] == CircState::Stable,
        }
}

/// Feature rows of one annotated stay.
pub fn stay_rows(grid: &GridStay, schema: &FeatureSchema, sel: RowSelection) -> Result<FeatureMatrix> {
    if !grid.is_annotated() {
        return Err(Error::Internal(format!("patient {} is not annotated", grid.patient_id)));
    }
    let first = schema.config.first_row_index();
    let picks: Vec<usize> = (0..grid.len).filter(|k| selected(grid, *k, first, sel)).collect();
    let mut m = FeatureMatrix::default();
    if picks.is_empty() {
        m.columns = schema.columns();
        return Ok(m);
    }
    let (columns, data) = schema.emit_stay(grid);
    m.values.reserve(picks.len() * columns.len());
    for &k in &picks {
        m.rows.push(RowKey {
            patient_id: grid.patient_id,
            grid_index: k as u32,
            label: grid.labels[k].as_f64().map(|l| l > 0.5),
        });
        m.values.extend(data.iter().map(|c| c[k]));
    }
    m.columns = columns;
    Ok(m)
}

/// Concatenates rows of all stays in input order.
pub fn assemble_matrix(grids: &[GridStay], schema: &FeatureSchema, sel: RowSelection) -> Result<FeatureMatrix> {
    let parts: Vec<FeatureMatrix> = grids
        .par_iter()
        .map(|g| stay_rows(g, schema, sel))
        .collect::<Result<_>>()?;
    let mut out = FeatureMatrix { columns: schema.columns(), ..Default::default() };
    for p in parts {
        if p.columns != out.columns {
            return Err(Error::Internal("feature count mismatch across stays".into()));
        }
        out.rows.extend(p.rows);
        out.values.extend(p.values);
    }
    out.check()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::endpoint::annotate_grid;
    use crate::grid::test_util::{series, stay};
    use crate::grid::GridSeries;

    fn catalog() -> VariableCatalog {
        let text = "variable_id,name,kind,range_lo,range_hi,default,freq_class,acting_period_min,merge_group,merge_weight\n\
hr,Heart rate,continuous,0,300,75,high,,,\n\
map,MAP,continuous,0,200,80,high,,,\n\
a_lac,Lactate,continuous,0,30,1,low,,,\n\
norepi,Norepinephrine,drug,0,10,0,high,60,,\n\
vent,Ventilated,binary,0,1,0,medium,,,\n\
gcs,GCS motor,categorical,1,6,6,medium,,,\n";
        VariableCatalog::from_reader(text.as_bytes(), "c").unwrap()
    }

    fn grid(n: usize) -> GridStay {
        let mut g = stay(
            1,
            vec![
                series("hr", (0..n).map(|k| 80.0 + (k % 7) as f64).collect()),
                series("map", vec![75.0; n]),
                series("a_lac", vec![1.0; n]),
                series("norepi", vec![0.0; n]),
                series("vent", (0..n).map(|k| (k % 2) as f64).collect()),
                series("gcs", (0..n).map(|k| if k < 10 { 6.0 } else { 4.0 }).collect()),
            ],
        );
        for s in &mut g.series {
            s.measured = (0..n).map(|k| k % 3 == 0).collect();
        }
        annotate_grid(&mut g, &VariableRoles::default(), &EndpointConfig::default());
        g
    }

    fn schema(train: &[GridStay]) -> FeatureSchema {
        fit_schema(
            train,
            &catalog(),
            Vec::new(),
            vec![0, 60],
            60,
            &FeatureConfig::default(),
            &EndpointConfig::default(),
            &VariableRoles::default(),
        )
    }

    #[test]
    fn column_count_and_rows() {
        let g = grid(200);
        let sc = schema(std::slice::from_ref(&g));
        let cols = sc.columns();
        // hr/map/a_lac: 1 + 5×5 + 2; norepi same; vent 1 + 5 + 2; gcs 2 levels × 6 + 2.
        let per_var = 28 * 4 + 8 + 14;
        let inst = 14 * 7;
        assert_eq!(cols.len(), 6 + 1 + per_var + inst);
        let m = assemble_matrix(std::slice::from_ref(&g), &sc, RowSelection::Labeled).unwrap();
        let expected = (6..g.len).filter(|k| g.labels[*k] != Label::Unlabeled).count();
        assert!(expected > 50);
        assert_eq!(m.n_rows(), expected);
        assert!(m.rows.iter().all(|r| r.grid_index >= 6));
        assert_eq!(m.n_cols(), cols.len());
        let mut names = m.names();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), cols.len());
    }

    #[test]
    fn values_at_a_point() {
        let g = grid(200);
        let sc = schema(std::slice::from_ref(&g));
        let (cols, data) = sc.emit_stay(&g);
        let at = |name: &str, k: usize| data[cols.iter().position(|c| c.name == name).unwrap()][k];
        assert_eq!(at("static__age", 0), 60.0);
        assert_eq!(at("time_since_admission", 3), 15.0);
        assert_eq!(at("hr__current", 9), 82.0);
        assert_eq!(at("map__slope_h30", 50), 0.0);
        assert_eq!(at("gcs__current=4", 9), 0.0);
        assert_eq!(at("gcs__current=4", 10), 1.0);
        assert_eq!(at("gcs__mode_stay=6", 15), 1.0);
        assert_eq!(at("hr__time_since_meas", 4), 5.0);
        assert_eq!(at("inst__map_low__time_since", 100), instability::NEVER_MIN);
        assert_eq!(at("inst__map_low__frac_stay", 100), 0.0);
        assert!(cols.iter().any(|c| c.name == "norepi__mean_h30"));
        assert_eq!(
            cols.iter().find(|c| c.name == "inst__lactate_high__current").unwrap().variable,
            "a_lac"
        );
    }

    #[test]
    fn no_future_leakage() {
        let g = grid(150);
        let sc = schema(std::slice::from_ref(&g));
        let (_, base) = sc.emit_stay(&g);
        let t = 80;
        let mut h = g.clone();
        for s in &mut h.series {
            for k in t + 1..h.len {
                s.values[k] += 17.0;
                s.measured[k] = !s.measured[k];
            }
        }
        let (_, pert) = sc.emit_stay(&h);
        for (a, b) in base.iter().zip(&pert) {
            assert_eq!(a[..=t], b[..=t]);
        }
    }

    #[test]
    fn missing_variable_is_tolerated_and_stable_rows_selected() {
        let mut g = grid(120);
        g.series.retain(|s: &GridSeries| s.variable_id != "vent");
        let sc = schema(&[grid(120)]);
        let m = assemble_matrix(&[g.clone()], &sc, RowSelection::Stable).unwrap();
        let stable = (6..g.len).filter(|k| g.states[*k] == CircState::Stable).count();
        assert_eq!(m.n_rows(), stable);
    }
}
