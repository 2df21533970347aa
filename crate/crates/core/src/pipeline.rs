//! File-to-file stages and the configuration that drives them.
//!
//! Every stage reads its inputs from the output directory (or the
//! configured raw files) and writes its artifacts back there, so chaining
//! stages one by one gives the same bytes as [`run_all`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alarm::eval::{event_metrics, pr_sweep, threshold_for_recall, timeslice_metrics, EventEvaluation, SweepPoint, TimesliceMetrics};
use crate::alarm::reports::{write_reports, PatientMeta, ReportSummary};
use crate::alarm::scores::{load_scores, save_scores, ScoreRow};
use crate::alarm::{build_tracks, AlarmConfig, AlarmTrace};
use crate::catalog::{load_catalog, write_catalog, VariableRoles};
use crate::clean::{clean_cohort, AuditLog, CleanConfig, GlobalStats};
use crate::endpoint::{annotate_grid, load_events, save_events, EndpointConfig, EventTable};
use crate::error::{Error, Result};
use crate::features::matrix::{load_matrix, save_matrix};
use crate::features::{assemble_matrix, fit_schema, FeatureConfig, FeatureMatrix, RowSelection};
use crate::grid::{load_grids, save_grids, GridStay};
use crate::impute::{fit_imputation_params, impute_cohort, ImputationParams};
use crate::io::{create_file, csv_writer, fmt_num, read_json, werr, write_json};
use crate::model::selection::{balanced_rows, compact_features, forward_auprc, mean_abs_shap, shap_greedy_ranking, top_features, SelectionMode, SelectionReport};
use crate::model::splits::{make_splits, Split, SplitConfig, SplitPlan};
use crate::model::{load_model, predict_scores, save_model, train_classifier, Dataset, ModelConfig, ModelFile};
use crate::records::{assemble_cohort, load_records, load_statics, save_records, save_statics, Cohort, ExclusionReason, PatientId, StaticsRow};
use crate::shapelets::{load_shapelets, mine_shapelets, save_shapelets, ShapeletConfig};
use crate::synth::{generate_cohort, write_cohort, SynthConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub catalog: Option<PathBuf>,
    pub records: Option<PathBuf>,
    pub statics: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig { catalog: None, records: None, statics: None, out_dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    /// Generate the input cohort instead of reading `paths`.
    pub synth: bool,
    /// Run the cleaning passes; when off, records pass through unchanged.
    pub clean: bool,
    pub shapelets: bool,
    pub selection: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles { synth: false, clean: true, shapelets: true, selection: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub mode: SelectionMode,
    pub max_variables: usize,
    /// Size of the attribution-ranked full feature list in the report.
    pub top_features: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig { mode: SelectionMode::ShapGreedy, max_variables: 20, top_features: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub seed: u64,
    pub paths: PathsConfig,
    pub stages: StageToggles,
    /// Name of the split used for training and evaluation.
    pub split: String,
    pub roles: VariableRoles,
    pub clean: CleanConfig,
    pub endpoint: EndpointConfig,
    pub features: FeatureConfig,
    pub shapelets: ShapeletConfig,
    pub splits: SplitConfig,
    pub model: ModelConfig,
    pub selection: SelectionConfig,
    pub alarm: AlarmConfig,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            version: CONFIG_VERSION,
            seed: 0,
            paths: PathsConfig::default(),
            stages: StageToggles::default(),
            split: "temporal_1".into(),
            roles: VariableRoles::default(),
            clean: CleanConfig::default(),
            endpoint: EndpointConfig::default(),
            features: FeatureConfig::default(),
            shapelets: ShapeletConfig::default(),
            splits: SplitConfig::default(),
            model: ModelConfig::default(),
            selection: SelectionConfig::default(),
            alarm: AlarmConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// Where each default comes from: `published` values follow the reference
/// method, `local` ones were chosen for this implementation.
pub const DEFAULT_SOURCES: &[(&str, &str)] = &[
    ("endpoint.lactate_threshold", "published"),
    ("endpoint.map_threshold", "published"),
    ("endpoint.window_min", "published"),
    ("endpoint.required_min", "published"),
    ("endpoint.label_horizon_min", "published"),
    ("endpoint.crossing_limit_min", "local"),
    ("endpoint.boundary_fill_min", "local"),
    ("features.horizons", "published"),
    ("features.instability_horizons_min", "published"),
    ("shapelets.lags_min", "published"),
    ("shapelets.per_group", "published"),
    ("shapelets.max_cases", "local"),
    ("splits.temporal_count", "published"),
    ("splits.window_years", "published"),
    ("splits.shift_months", "published"),
    ("splits.held_out_fraction", "published"),
    ("splits.random_ratios", "local"),
    ("model.gbdt.learning_rate", "published"),
    ("model.gbdt.num_leaves", "published"),
    ("model.gbdt.feature_fraction", "published"),
    ("model.gbdt.bagging_fraction", "published"),
    ("model.gbdt.max_rounds", "published"),
    ("model.gbdt.early_stopping_rounds", "published"),
    ("model.gbdt.max_bins", "published"),
    ("model.gbdt.bin_sample_rows", "published"),
    ("model.gbdt.min_data_in_leaf", "published"),
    ("model.grid", "published"),
    ("model.logreg.alphas", "published"),
    ("model.logreg.max_epochs", "published"),
    ("model.logreg.tol", "published"),
    ("alarm.silencing_min", "published"),
    ("alarm.reset_min", "published"),
    ("alarm.grey_zone_min", "published"),
    ("alarm.horizon_min", "published"),
    ("alarm.min_lead_min", "published"),
    ("alarm.target_recall", "published"),
    ("synth.event_rate", "published"),
    ("split", "local"),
    ("seed", "local"),
];

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::validation("config", e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::validation("version", format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version)));
        }
        if self.split.is_empty() {
            return Err(Error::validation("split", "must name a split"));
        }
        self.endpoint.validate()?;
        self.features.validate()?;
        self.shapelets.validate()?;
        self.splits.validate()?;
        self.model.validate()?;
        self.alarm.validate()?;
        if self.stages.synth {
            self.synth.validate()?;
        } else {
            for (field, p) in [("paths.catalog", &self.paths.catalog), ("paths.records", &self.paths.records), ("paths.statics", &self.paths.statics)] {
                match p {
                    None => return Err(Error::validation(field, "required unless stages.synth is enabled")),
                    Some(p) if !p.is_file() => return Err(Error::validation(field, format!("{} does not exist", p.display()))),
                    _ => {}
                }
            }
        }
        if self.stages.selection && self.selection.max_variables == 0 {
            return Err(Error::validation("selection.max_variables", "must be positive"));
        }
        Ok(())
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.paths.out_dir.join(name)
    }

    /// Raw catalog, records and statics used by `clean`.
    pub fn input_paths(&self) -> (PathBuf, PathBuf, PathBuf) {
        if self.stages.synth {
            let d = self.out("input");
            (d.join("catalog.csv"), d.join("records.csv"), d.join("statics.csv"))
        } else {
            let get = |p: &Option<PathBuf>| p.clone().unwrap_or_default();
            (get(&self.paths.catalog), get(&self.paths.records), get(&self.paths.statics))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Clean,
    Impute,
    Annotate,
    MineShapelets,
    Featurize,
    Train,
    Alarm,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Synth,
        Stage::Clean,
        Stage::Impute,
        Stage::Annotate,
        Stage::MineShapelets,
        Stage::Featurize,
        Stage::Train,
        Stage::Alarm,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Clean => "clean",
            Stage::Impute => "impute",
            Stage::Annotate => "annotate",
            Stage::MineShapelets => "mine-shapelets",
            Stage::Featurize => "featurize",
            Stage::Train => "train",
            Stage::Alarm => "alarm",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

/// Fails with [`Error::MissingArtifact`] naming `stage` when `path` is absent.
fn need(path: PathBuf, stage: Stage) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact { path, stage: stage.name().into() })
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn run_stage(stage: Stage, cfg: &PipelineConfig) -> Result<()> {
    ensure_dir(&cfg.paths.out_dir)?;
    log::info!("stage {}", stage.name());
    match stage {
        Stage::Synth => synth_stage(cfg),
        Stage::Clean => clean_stage(cfg),
        Stage::Impute => impute_stage(cfg),
        Stage::Annotate => annotate_stage(cfg),
        Stage::MineShapelets => shapelet_stage(cfg),
        Stage::Featurize => featurize_stage(cfg),
        Stage::Train => train_stage(cfg),
        Stage::Alarm => alarm_stage(cfg),
        Stage::Evaluate => evaluate_stage(cfg).map(|_| ()),
        Stage::Report => report_stage(cfg).map(|_| ()),
    }
}

/// Runs every stage in order; `synth` only when enabled.
pub fn run_all(cfg: &PipelineConfig) -> Result<Metrics> {
    cfg.validate()?;
    for stage in Stage::ALL {
        if stage == Stage::Synth && !cfg.stages.synth {
            continue;
        }
        if stage == Stage::Evaluate {
            continue;
        }
        run_stage(stage, cfg)?;
    }
    evaluate_stage(cfg)
}

fn synth_stage(cfg: &PipelineConfig) -> Result<()> {
    let dir = cfg.out("input");
    ensure_dir(&dir)?;
    let cohort = generate_cohort(&cfg.synth)?;
    write_cohort(&dir, &cohort)
}

fn write_exclusions(path: &Path, rows: &[(PatientId, ExclusionReason)]) -> Result<()> {
    let mut w = csv_writer(create_file(path)?);
    w.write_record(["patient_id", "reason"]).map_err(werr)?;
    for (p, r) in rows {
        let reason = serde_json::to_value(r)?;
        w.write_record([p.to_string(), reason.as_str().unwrap_or_default().to_string()]).map_err(werr)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn load_cohort(catalog: &Path, records: &Path, statics: &Path) -> Result<(crate::catalog::VariableCatalog, Cohort)> {
    let cat = load_catalog(catalog)?;
    let stats = load_statics(statics)?;
    let recs = load_records(records, &cat)?;
    if recs.dropped_unknown > 0 {
        log::warn!("{} records reference variables missing from the catalog", recs.dropped_unknown);
    }
    let cohort = assemble_cohort(&stats, recs);
    Ok((cat, cohort))
}

fn selected_split(cfg: &PipelineConfig) -> Result<Split> {
    let plan: SplitPlan = read_json(&need(cfg.out("splits.json"), Stage::Clean)?)?;
    plan.get(&cfg.split).cloned()
}

fn clean_stage(cfg: &PipelineConfig) -> Result<()> {
    let (cat_path, rec_path, stat_path) = cfg.input_paths();
    let stage = if cfg.stages.synth { Stage::Synth } else { Stage::Clean };
    let (catalog, cohort) = load_cohort(&need(cat_path, stage)?, &need(rec_path, stage)?, &need(stat_path, stage)?)?;
    let admissions: Vec<(PatientId, _)> = cohort.stays.iter().map(|s| (s.patient_id, s.admission_time)).collect();
    let plan = make_splits(&admissions, &cfg.splits, cfg.seed)?;
    let split = plan.get(&cfg.split)?;
    let train: BTreeSet<PatientId> = split.train.iter().copied().collect();

    let (stays, audit) = if cfg.stages.clean {
        let train_stays: Vec<_> = cohort.stays.iter().filter(|s| train.contains(&s.patient_id)).cloned().collect();
        let stats = GlobalStats::fit(&train_stays, &catalog, &cfg.roles);
        clean_cohort(&cohort.stays, &catalog, &stats, &cfg.roles, &cfg.clean)?
    } else {
        (cohort.stays, AuditLog::default())
    };
    let dir = cfg.out("clean");
    ensure_dir(&dir)?;
    write_catalog(&cfg.out("catalog.csv"), &catalog)?;
    save_records(&dir.join("records.csv"), stays.iter().flat_map(|s| s.records.iter()))?;
    let rows: Vec<StaticsRow> = stays.iter().map(|s| s.statics_row()).collect();
    save_statics(&dir.join("statics.csv"), rows.iter())?;
    audit.save(&dir.join("audit.csv"))?;
    write_exclusions(&dir.join("exclusions.csv"), &cohort.excluded)?;
    write_json(&cfg.out("splits.json"), &plan)
}

fn impute_stage(cfg: &PipelineConfig) -> Result<()> {
    let dir = cfg.out("clean");
    let (catalog, cohort) = load_cohort(
        &need(cfg.out("catalog.csv"), Stage::Clean)?,
        &need(dir.join("records.csv"), Stage::Clean)?,
        &need(dir.join("statics.csv"), Stage::Clean)?,
    )?;
    let split = selected_split(cfg)?;
    let train: BTreeSet<PatientId> = split.train.iter().copied().collect();
    let train_stays: Vec<_> = cohort.stays.iter().filter(|s| train.contains(&s.patient_id)).cloned().collect();
    let params = fit_imputation_params(&train_stays, &catalog)?;
    let (grids, excluded) = impute_cohort(&cohort.stays, &params, &catalog, &cfg.roles);
    write_json(&cfg.out("impute_params.json"), &params)?;
    write_exclusions(&cfg.out("impute_exclusions.csv"), &excluded)?;
    save_grids(&cfg.out("imputed.bin"), &grids)
}

fn annotate_stage(cfg: &PipelineConfig) -> Result<()> {
    let mut grids = load_grids(&need(cfg.out("imputed.bin"), Stage::Impute)?)?;
    let events: EventTable = grids.iter_mut().map(|g| (g.patient_id, annotate_grid(g, &cfg.roles, &cfg.endpoint))).collect();
    save_events(&cfg.out("events.csv"), &events)?;
    save_grids(&cfg.out("grids.bin"), &grids)
}

fn load_annotated(cfg: &PipelineConfig) -> Result<(Vec<GridStay>, EventTable)> {
    let grids = load_grids(&need(cfg.out("grids.bin"), Stage::Annotate)?)?;
    let events = load_events(&need(cfg.out("events.csv"), Stage::Annotate)?)?;
    Ok((grids, events))
}

fn subset<'a>(grids: &'a [GridStay], ids: &[PatientId]) -> Vec<&'a GridStay> {
    let ids: BTreeSet<PatientId> = ids.iter().copied().collect();
    grids.iter().filter(|g| ids.contains(&g.patient_id)).collect()
}

fn shapelet_stage(cfg: &PipelineConfig) -> Result<()> {
    let shapelets = if cfg.stages.shapelets {
        let (grids, events) = load_annotated(cfg)?;
        let catalog = load_catalog(&need(cfg.out("catalog.csv"), Stage::Clean)?)?;
        let split = selected_split(cfg)?;
        let by_pid: BTreeMap<PatientId, &Vec<_>> = events.iter().map(|(p, e)| (*p, e)).collect();
        let train: Vec<GridStay> = subset(&grids, &split.train).into_iter().cloned().collect();
        let ev: Vec<_> = train.iter().map(|g| by_pid.get(&g.patient_id).map(|e| (*e).clone()).unwrap_or_default()).collect();
        mine_shapelets(&train, &ev, &catalog, &cfg.shapelets, cfg.seed)?
    } else {
        Vec::new()
    };
    save_shapelets(&cfg.out("shapelets.json"), &shapelets)
}

fn featurize_stage(cfg: &PipelineConfig) -> Result<()> {
    let (grids, _) = load_annotated(cfg)?;
    let catalog = load_catalog(&need(cfg.out("catalog.csv"), Stage::Clean)?)?;
    let shapelets = load_shapelets(&need(cfg.out("shapelets.json"), Stage::MineShapelets)?)?;
    let split = selected_split(cfg)?;
    let train: Vec<GridStay> = subset(&grids, &split.train).into_iter().cloned().collect();
    let schema = fit_schema(&train, &catalog, shapelets, cfg.shapelets.lags_min.clone(), cfg.shapelets.segment_min, &cfg.features, &cfg.endpoint, &cfg.roles);
    write_json(&cfg.out("schema.json"), &schema)?;
    let m = assemble_matrix(&train, &schema, RowSelection::Labeled)?;
    save_matrix(&cfg.out("train.mat"), &m)?;
    drop((m, train));
    for (name, ids) in [("valid.mat", &split.validation), ("test.mat", &split.test)] {
        let part: Vec<GridStay> = subset(&grids, ids).into_iter().cloned().collect();
        let m = assemble_matrix(&part, &schema, RowSelection::Stable)?;
        save_matrix(&cfg.out(name), &m)?;
    }
    Ok(())
}

/// Ranks variables on the validation matrix and returns the report; the
/// caller retrains on its compact feature list.
pub fn select_variables(full: &ModelFile, train: &FeatureMatrix, valid: &FeatureMatrix, cfg: &PipelineConfig) -> Result<SelectionReport> {
    let sel = &cfg.selection;
    let columns = &train.columns;
    match sel.mode {
        SelectionMode::ShapGreedy => {
            let ens = full.model.ensemble()?;
            let va = Dataset::from_matrix(valid);
            let rows = balanced_rows(&va.y, cfg.seed)?;
            let phi = mean_abs_shap(ens, &va, &rows);
            let ranked = shap_greedy_ranking(&phi, columns);
            Ok(SelectionReport {
                mode: sel.mode,
                full_features: top_features(&phi, columns, sel.top_features),
                compact_features: compact_features(&ranked, columns, sel.max_variables),
                ranked,
            })
        }
        SelectionMode::ForwardAuprc => {
            let tr = Dataset::from_matrix(train);
            let va = Dataset::from_matrix(valid);
            let model_cfg = &cfg.model;
            let fit = |t: &Dataset, v: &Dataset| -> Result<Vec<f64>> {
                let names: Vec<String> = (0..t.n_features).map(|j| format!("f{j}")).collect();
                let tm = dataset_matrix(t, &names);
                let vm = dataset_matrix(v, &names);
                let m = train_classifier(&tm, Some(&vm), model_cfg, cfg.seed)?;
                predict_scores(&m, &vm)
            };
            let ranked = forward_auprc(&tr, &va, columns, sel.max_variables, fit)?;
            Ok(SelectionReport {
                mode: sel.mode,
                full_features: Vec::new(),
                compact_features: compact_features(&ranked, columns, sel.max_variables),
                ranked,
            })
        }
    }
}

fn dataset_matrix(d: &Dataset, names: &[String]) -> FeatureMatrix {
    use crate::features::{FeatureCategory, FeatureInfo, RowKey};
    FeatureMatrix {
        columns: names.iter().map(|n| FeatureInfo { name: n.clone(), variable: n.clone(), category: FeatureCategory::Multires }).collect(),
        rows: d.y.iter().enumerate().map(|(i, y)| RowKey { patient_id: i as PatientId, grid_index: 0, label: Some(*y) }).collect(),
        values: d.x.clone(),
    }
}

fn train_stage(cfg: &PipelineConfig) -> Result<()> {
    let train = load_matrix(&need(cfg.out("train.mat"), Stage::Featurize)?)?;
    let valid = load_matrix(&need(cfg.out("valid.mat"), Stage::Featurize)?)?;
    let mut model = train_classifier(&train, Some(&valid), &cfg.model, cfg.seed)?;
    if cfg.stages.selection {
        let report = select_variables(&model, &train, &valid, cfg)?;
        let tr = train.select_columns(&report.compact_features)?;
        let va = valid.select_columns(&report.compact_features)?;
        model = train_classifier(&tr, Some(&va), &cfg.model, cfg.seed)?;
        write_json(&cfg.out("selection.json"), &report)?;
    }
    save_model(&cfg.out("model.json"), &model)
}

fn score_rows(model: &ModelFile, m: &FeatureMatrix) -> Result<Vec<ScoreRow>> {
    let scores = predict_scores(model, m)?;
    Ok(m.rows
        .iter()
        .zip(scores)
        .map(|(k, score)| ScoreRow { patient_id: k.patient_id, grid_index: k.grid_index as usize, label: k.label, score })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    /// `config` when fixed in the alarm block, else `validation`.
    pub source: String,
    pub validation_recall: Option<f64>,
    pub validation_precision: Option<f64>,
}

/// Picks τ on validation scores: the highest threshold reaching the target
/// event recall.
pub fn choose_threshold(valid: &[ScoreRow], events: &EventTable, cfg: &AlarmConfig) -> Result<ThresholdChoice> {
    if let Some(t) = cfg.threshold {
        return Ok(ThresholdChoice { threshold: t, source: "config".into(), validation_recall: None, validation_precision: None });
    }
    let tracks = build_tracks(valid, events);
    let sweep = pr_sweep(&tracks, cfg)?;
    let t = threshold_for_recall(&sweep, cfg.target_recall)
        .ok_or_else(|| Error::InsufficientData("no validation scores to choose a threshold from".into()))?;
    let (_, e) = event_metrics(&tracks, cfg, t)?;
    Ok(ThresholdChoice { threshold: t, source: "validation".into(), validation_recall: Some(e.recall), validation_precision: Some(e.precision) })
}

pub fn save_alarms(path: &Path, traces: &[AlarmTrace], scores: &[ScoreRow]) -> Result<()> {
    let by_key: BTreeMap<(PatientId, usize), f64> = scores.iter().map(|r| ((r.patient_id, r.grid_index), r.score)).collect();
    let mut w = csv_writer(create_file(path)?);
    w.write_record(["patient_id", "grid_index", "score"]).map_err(werr)?;
    for t in traces {
        for k in &t.alarms {
            let s = by_key.get(&(t.patient_id, *k)).copied().unwrap_or(f64::NAN);
            w.write_record([t.patient_id.to_string(), k.to_string(), fmt_num(s)]).map_err(werr)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn alarm_stage(cfg: &PipelineConfig) -> Result<()> {
    let model = load_model(&need(cfg.out("model.json"), Stage::Train)?)?;
    let events = load_events(&need(cfg.out("events.csv"), Stage::Annotate)?)?;
    let valid = score_rows(&model, &load_matrix(&need(cfg.out("valid.mat"), Stage::Featurize)?)?)?;
    let test = score_rows(&model, &load_matrix(&need(cfg.out("test.mat"), Stage::Featurize)?)?)?;
    let choice = choose_threshold(&valid, &events, &cfg.alarm)?;
    save_scores(&cfg.out("valid_scores.csv"), &valid)?;
    save_scores(&cfg.out("scores.csv"), &test)?;
    write_json(&cfg.out("threshold.json"), &choice)?;
    let tracks = build_tracks(&test, &events);
    let (traces, _) = event_metrics(&tracks, &cfg.alarm, choice.threshold)?;
    save_alarms(&cfg.out("alarms.csv"), &traces, &test)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub threshold: f64,
    pub patients: u64,
    pub scored_points: u64,
    /// Absent when the labelled points hold a single class.
    pub timeslice: Option<TimesliceMetrics>,
    pub events: EventEvaluation,
}

pub struct Evaluation {
    pub metrics: Metrics,
    pub sweep: Vec<SweepPoint>,
    pub traces: Vec<AlarmTrace>,
}

/// Time-slice and event metrics of precomputed scores at threshold τ.
pub fn evaluate(scores: &[ScoreRow], events: &EventTable, cfg: &AlarmConfig, threshold: f64) -> Result<Evaluation> {
    let (s, l): (Vec<f64>, Vec<bool>) = scores.iter().filter_map(|r| r.label.map(|l| (r.score, l))).unzip();
    let timeslice = if l.iter().any(|x| *x) && l.iter().any(|x| !*x) {
        Some(timeslice_metrics(&s, &l, cfg.timeslice_prevalence.as_ref())?)
    } else {
        log::warn!("labelled points hold a single class; time-slice metrics skipped");
        None
    };
    let tracks = build_tracks(scores, events);
    let (traces, ev) = event_metrics(&tracks, cfg, threshold)?;
    let sweep = pr_sweep(&tracks, cfg)?;
    Ok(Evaluation {
        metrics: Metrics { threshold, patients: tracks.len() as u64, scored_points: scores.len() as u64, timeslice, events: ev },
        sweep,
        traces,
    })
}

/// Writes `metrics.json` and `pr_curve.csv` into `dir`.
pub fn write_evaluation(dir: &Path, e: &Evaluation) -> Result<()> {
    ensure_dir(dir)?;
    write_json(&dir.join("metrics.json"), &e.metrics)?;
    let path = dir.join("pr_curve.csv");
    let mut w = csv_writer(create_file(&path)?);
    w.write_record(["threshold", "precision", "recall", "alarms"]).map_err(werr)?;
    for p in &e.sweep {
        w.write_record([fmt_num(p.threshold), fmt_num(p.precision), fmt_num(p.recall), p.alarms.to_string()]).map_err(werr)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn stage_threshold(cfg: &PipelineConfig) -> Result<f64> {
    let c: ThresholdChoice = read_json(&need(cfg.out("threshold.json"), Stage::Alarm)?)?;
    Ok(c.threshold)
}

fn evaluate_stage(cfg: &PipelineConfig) -> Result<Metrics> {
    let scores = load_scores(&need(cfg.out("scores.csv"), Stage::Alarm)?)?;
    let events = load_events(&need(cfg.out("events.csv"), Stage::Annotate)?)?;
    let e = evaluate(&scores, &events, &cfg.alarm, stage_threshold(cfg)?)?;
    write_evaluation(&cfg.paths.out_dir, &e)?;
    Ok(e.metrics)
}

fn report_stage(cfg: &PipelineConfig) -> Result<ReportSummary> {
    let scores = load_scores(&need(cfg.out("scores.csv"), Stage::Alarm)?)?;
    let (grids, events) = load_annotated(cfg)?;
    let threshold = stage_threshold(cfg)?;
    let meta: BTreeMap<PatientId, PatientMeta> = grids
        .iter()
        .map(|g| (g.patient_id, PatientMeta { statics: g.statics, start_offset_min: g.start_offset_min() }))
        .collect();
    let tracks = build_tracks(&scores, &events);
    let (traces, _) = event_metrics(&tracks, &cfg.alarm, threshold)?;
    let s = match &cfg.alarm.event_prevalence {
        Some(p) => p.factor()?,
        None => 1.0,
    };
    let dir = cfg.out("report");
    ensure_dir(&dir)?;
    let summary = write_reports(&dir, &tracks, &traces, &meta, &cfg.alarm, s)?;
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Imputation parameters written by the `impute` stage.
pub fn load_impute_params(cfg: &PipelineConfig) -> Result<ImputationParams> {
    read_json(&need(cfg.out("impute_params.json"), Stage::Impute)?)
}
