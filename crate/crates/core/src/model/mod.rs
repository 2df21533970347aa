//! Splits, classifier training, scoring, attribution and selection.

pub mod binning;
pub mod gbdt;
pub mod logreg;
pub mod selection;
pub mod splits;
pub mod tree;
pub mod treeshap;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::matrix::FeatureMatrix;
use crate::metrics::auprc;
pub use gbdt::{train_gbdt, GbdtParams};
pub use logreg::{train_logreg, LogRegModel, LogRegParams};
pub use splits::{make_splits, Split, SplitConfig, SplitKind, SplitPlan};
pub use tree::{TrainMeta, Tree, TreeEnsemble};
pub use treeshap::{attributions, Attribution};

/// Dense labelled rows in feature order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub n_features: usize,
    pub y: Vec<bool>,
}

impl Dataset {
    pub fn new(x: Vec<f64>, n_features: usize, y: Vec<bool>) -> Result<Self> {
        if x.len() != n_features * y.len() {
            return Err(Error::validation("dataset", "value count does not match rows × features"));
        }
        Ok(Dataset { x, n_features, y })
    }

    /// Labelled rows of a matrix; unlabelled rows are dropped.
    pub fn from_matrix(m: &FeatureMatrix) -> Self {
        let n_features = m.n_cols();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (i, key) in m.rows.iter().enumerate() {
            if let Some(label) = key.label {
                x.extend_from_slice(m.row(i));
                y.push(label);
            }
        }
        Dataset { x, n_features, y }
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn column(&self, f: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.x[i * self.n_features + f]).collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(rows.len() * self.n_features);
        for r in rows {
            x.extend_from_slice(self.row(*r));
        }
        Dataset { x, n_features: self.n_features, y: rows.iter().map(|r| self.y[*r]).collect() }
    }

    pub fn select_features(&self, feats: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(self.n_rows() * feats.len());
        for i in 0..self.n_rows() {
            let row = self.row(i);
            x.extend(feats.iter().map(|f| row[*f]));
        }
        Dataset { x, n_features: feats.len(), y: self.y.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gbdt,
    Logreg,
    Tree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtGrid {
    pub num_leaves: Vec<usize>,
    pub feature_fraction: Vec<f64>,
    pub bagging_fraction: Vec<f64>,
}

impl Default for GbdtGrid {
    fn default() -> Self {
        GbdtGrid { num_leaves: vec![8, 16, 32, 64, 128], feature_fraction: vec![0.33, 0.66], bagging_fraction: vec![0.33, 0.66] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub gbdt: GbdtParams,
    pub logreg: LogRegParams,
    /// Search `grid` on validation AUPRC instead of using `gbdt` as given.
    pub grid_search: bool,
    pub grid: GbdtGrid,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { kind: ModelKind::Gbdt, gbdt: GbdtParams::default(), logreg: LogRegParams::default(), grid_search: false, grid: GbdtGrid::default() }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.gbdt.validate("model.gbdt")?;
        self.logreg.validate("model.logreg")?;
        let g = &self.grid;
        if self.grid_search && (g.num_leaves.is_empty() || g.feature_fraction.is_empty() || g.bagging_fraction.is_empty()) {
            return Err(Error::validation("model.grid", "grid search needs at least one value per axis"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Gbdt(TreeEnsemble),
    Tree(TreeEnsemble),
    Logreg(LogRegModel),
}

impl Model {
    pub fn margin(&self, row: &[f64]) -> f64 {
        match self {
            Model::Gbdt(e) | Model::Tree(e) => e.margin(row),
            Model::Logreg(m) => m.margin(row),
        }
    }

    pub fn ensemble(&self) -> Result<&TreeEnsemble> {
        match self {
            Model::Gbdt(e) | Model::Tree(e) => Ok(e),
            Model::Logreg(_) => Err(Error::Unsupported(
                "tree attributions are undefined for logistic regression; inspect its coefficients".into(),
            )),
        }
    }

    pub fn is_degenerate(&self) -> bool {
        match self {
            Model::Gbdt(e) | Model::Tree(e) => e.meta.degenerate,
            Model::Logreg(m) => m.degenerate,
        }
    }
}

/// A trained model bound to the feature columns it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub feature_names: Vec<String>,
    pub manifest_hash: String,
    pub model: Model,
}

impl ModelFile {
    pub fn validate(&self) -> Result<()> {
        let d = self.feature_names.len();
        match &self.model {
            Model::Gbdt(e) | Model::Tree(e) => e.validate(d),
            Model::Logreg(m) => {
                if [m.mean.len(), m.scale.len(), m.sentinel_fill.len(), m.weights.len()].iter().any(|l| *l != d) {
                    return Err(Error::validation("model", "coefficient count does not match features"));
                }
                if m.scale.iter().any(|s| !(*s > 0.0)) || !m.intercept.is_finite() {
                    return Err(Error::validation("model", "invalid standardisation or intercept"));
                }
                Ok(())
            }
        }
    }

    /// Column positions in `m` for this model's features.
    pub fn column_map(&self, m: &FeatureMatrix) -> Result<Vec<usize>> {
        self.feature_names
            .iter()
            .map(|n| m.column_index(n).ok_or_else(|| Error::MissingColumn(n.clone())))
            .collect()
    }
}

pub fn save_model(path: &Path, m: &ModelFile) -> Result<()> {
    crate::io::write_json(path, m)
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let m: ModelFile = crate::io::read_json(path)?;
    m.validate()?;
    Ok(m)
}

pub fn model_from_json(text: &str) -> Result<ModelFile> {
    let m: ModelFile = serde_json::from_str(text)?;
    m.validate()?;
    Ok(m)
}

fn fit_gbdt(train: &Dataset, valid: Option<&Dataset>, cfg: &ModelConfig, seed: u64) -> Result<TreeEnsemble> {
    if !cfg.grid_search {
        return train_gbdt(train, valid, &cfg.gbdt, seed);
    }
    let Some(v) = valid else {
        return Err(Error::validation("model.grid_search", "grid search needs a validation set"));
    };
    let mut best: Option<(f64, TreeEnsemble)> = None;
    for &leaves in &cfg.grid.num_leaves {
        for &ff in &cfg.grid.feature_fraction {
            for &bf in &cfg.grid.bagging_fraction {
                let p = GbdtParams { num_leaves: leaves, feature_fraction: ff, bagging_fraction: bf, ..cfg.gbdt.clone() };
                let e = train_gbdt(train, Some(v), &p, seed)?;
                let scores: Vec<f64> = (0..v.n_rows()).map(|i| e.score(v.row(i))).collect();
                let ap = auprc(&scores, &v.y).unwrap_or(0.0);
                log::info!("grid leaves={leaves} feature_fraction={ff} bagging_fraction={bf}: validation AUPRC {ap:.4}");
                if best.as_ref().is_none_or(|(b, _)| ap > *b) {
                    best = Some((ap, e));
                }
            }
        }
    }
    Ok(best.expect("non-empty grid").1)
}

/// Trains on the labelled rows of `train`, using `valid` for early stopping
/// and model selection.
pub fn train_classifier(train: &FeatureMatrix, valid: Option<&FeatureMatrix>, cfg: &ModelConfig, seed: u64) -> Result<ModelFile> {
    cfg.validate()?;
    if let Some(v) = valid {
        if v.columns != train.columns {
            return Err(Error::validation("model", "validation matrix columns differ from training"));
        }
    }
    let tr = Dataset::from_matrix(train);
    let va = valid.map(Dataset::from_matrix);
    let model = match cfg.kind {
        ModelKind::Gbdt => Model::Gbdt(fit_gbdt(&tr, va.as_ref(), cfg, seed)?),
        ModelKind::Tree => Model::Tree(train_gbdt(&tr, None, &cfg.gbdt.single_tree(), seed)?),
        ModelKind::Logreg => Model::Logreg(train_logreg(&tr, va.as_ref(), &cfg.logreg, seed)?),
    };
    Ok(ModelFile { feature_names: train.names(), manifest_hash: train.manifest_hash(), model })
}

/// Scores every row of `m` (labelled or not).
pub fn predict_scores(model: &ModelFile, m: &FeatureMatrix) -> Result<Vec<f64>> {
    let cols = model.column_map(m)?;
    let identity = cols.iter().enumerate().all(|(i, c)| i == *c) && cols.len() == m.n_cols();
    Ok((0..m.n_rows())
        .into_par_iter()
        .map(|i| {
            let row = m.row(i);
            let margin = if identity {
                model.model.margin(row)
            } else {
                let picked: Vec<f64> = cols.iter().map(|c| row[*c]).collect();
                model.model.margin(&picked)
            };
            crate::stats::sigmoid(margin)
        })
        .collect())
}
