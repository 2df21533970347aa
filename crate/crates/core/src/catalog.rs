//! Variable metadata and the catalog CSV.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_num, open_file, parse_opt_f64, parse_f64, create_file};

pub const CATALOG_HEADER: [&str; 10] = [
    "variable_id",
    "name",
    "kind",
    "range_lo",
    "range_hi",
    "default",
    "freq_class",
    "acting_period_min",
    "merge_group",
    "merge_weight",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Continuous,
    Categorical,
    Binary,
    Drug,
}

impl VarKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VarKind::Continuous => "continuous",
            VarKind::Categorical => "categorical",
            VarKind::Binary => "binary",
            VarKind::Drug => "drug",
        }
    }
}

impl FromStr for VarKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "continuous" => Ok(VarKind::Continuous),
            "categorical" => Ok(VarKind::Categorical),
            "binary" => Ok(VarKind::Binary),
            "drug" => Ok(VarKind::Drug),
            other => Err(format!("unknown kind `{other}`")),
        }
    }
}

impl fmt::Display for VarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sampling-frequency class of a variable; selects its feature horizons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreqClass {
    High,
    Medium,
    Low,
}

impl FreqClass {
    pub fn as_str(self) -> &'static str {
        match self {
            FreqClass::High => "high",
            FreqClass::Medium => "medium",
            FreqClass::Low => "low",
        }
    }
}

impl FromStr for FreqClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "high" => Ok(FreqClass::High),
            "medium" => Ok(FreqClass::Medium),
            "low" => Ok(FreqClass::Low),
            other => Err(format!("unknown frequency class `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableEntry {
    pub id: String,
    pub name: String,
    pub kind: VarKind,
    pub range_lo: f64,
    pub range_hi: f64,
    pub default: f64,
    pub freq_class: FreqClass,
    pub acting_period_min: Option<f64>,
    pub merge_group: Option<String>,
    pub merge_weight: Option<f64>,
}

impl VariableEntry {
    pub fn validate(&self) -> Result<()> {
        let what = || format!("variable `{}`", self.id);
        if self.id.is_empty() {
            return Err(Error::validation("variable", "empty variable_id"));
        }
        if !(self.range_lo.is_finite() && self.range_hi.is_finite() && self.default.is_finite()) {
            return Err(Error::validation(what(), "range and default must be finite"));
        }
        if self.range_lo > self.range_hi {
            return Err(Error::validation(
                what(),
                format!("range_lo {} > range_hi {}", self.range_lo, self.range_hi),
            ));
        }
        if self.default < self.range_lo || self.default > self.range_hi {
            return Err(Error::validation(
                what(),
                format!(
                    "default {} outside [{}, {}]",
                    self.default, self.range_lo, self.range_hi
                ),
            ));
        }
        match (self.kind, self.acting_period_min) {
            (VarKind::Drug, None) => {
                return Err(Error::validation(what(), "drug requires acting_period_min"))
            }
            (VarKind::Drug, Some(p)) if !(p > 0.0) => {
                return Err(Error::validation(what(), "acting_period_min must be > 0"))
            }
            _ => {}
        }
        if let Some(w) = self.merge_weight {
            if !(w > 0.0) {
                return Err(Error::validation(what(), "merge_weight must be > 0"));
            }
            if self.kind != VarKind::Drug {
                return Err(Error::validation(what(), "merge_weight only applies to drugs"));
            }
        }
        if self.merge_group.as_deref() == Some(self.id.as_str()) {
            return Err(Error::validation(what(), "variable cannot merge into itself"));
        }
        Ok(())
    }

    pub fn is_drug(&self) -> bool {
        self.kind == VarKind::Drug
    }
}

/// Ordered set of variable definitions. File order is preserved and
/// defines column order everywhere downstream.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VariableCatalog {
    entries: Vec<VariableEntry>,
    index: HashMap<String, usize>,
}

impl VariableCatalog {
    pub fn new(entries: Vec<VariableEntry>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            e.validate()?;
            if index.insert(e.id.clone(), i).is_some() {
                return Err(Error::validation(
                    format!("variable `{}`", e.id),
                    "duplicate variable_id",
                ));
            }
        }
        let cat = VariableCatalog { entries, index };
        for e in &cat.entries {
            if let Some(g) = &e.merge_group {
                let target = cat.get(g).ok_or_else(|| {
                    Error::validation(
                        format!("variable `{}`", e.id),
                        format!("merge_group `{g}` is not a catalog variable"),
                    )
                })?;
                if target.merge_group.is_some() {
                    return Err(Error::validation(
                        format!("variable `{}`", e.id),
                        format!("merge target `{g}` is itself merged"),
                    ));
                }
            }
        }
        Ok(cat)
    }

    pub fn get(&self, id: &str) -> Option<&VariableEntry> {
        self.index.get(id).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn entries(&self) -> &[VariableEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Variables that survive merging, in catalog order.
    pub fn output_variables(&self) -> impl Iterator<Item = &VariableEntry> {
        self.entries.iter().filter(|e| e.merge_group.is_none())
    }

    /// Members of each merge group, keyed by target id, in catalog order.
    pub fn merge_groups(&self) -> Vec<(String, Vec<&VariableEntry>)> {
        let mut groups: Vec<(String, Vec<&VariableEntry>)> = Vec::new();
        for e in &self.entries {
            if let Some(g) = &e.merge_group {
                match groups.iter_mut().find(|(id, _)| id == g) {
                    Some((_, members)) => members.push(e),
                    None => groups.push((g.clone(), vec![e])),
                }
            }
        }
        groups
    }

    pub fn from_reader<R: Read>(reader: R, file: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let mut entries = Vec::new();
        let mut seen_header = false;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(file, e))?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            if !seen_header {
                if rec.iter().ne(CATALOG_HEADER.iter().copied()) {
                    return Err(Error::parse(file, line, "catalog header does not match schema"));
                }
                seen_header = true;
                continue;
            }
            if rec.len() != CATALOG_HEADER.len() {
                return Err(Error::parse(
                    file,
                    line,
                    format!("expected {} fields, found {}", CATALOG_HEADER.len(), rec.len()),
                ));
            }
            let p = |e: String| Error::parse(file, line, e);
            let entry = VariableEntry {
                id: rec[0].to_string(),
                name: rec[1].to_string(),
                kind: rec[2].parse().map_err(p)?,
                range_lo: parse_f64(&rec[3]).map_err(p)?,
                range_hi: parse_f64(&rec[4]).map_err(p)?,
                default: parse_f64(&rec[5]).map_err(p)?,
                freq_class: rec[6].parse().map_err(p)?,
                acting_period_min: parse_opt_f64(&rec[7]).map_err(p)?,
                merge_group: (!rec[8].is_empty()).then(|| rec[8].to_string()),
                merge_weight: parse_opt_f64(&rec[9]).map_err(p)?,
            };
            entry.validate().map_err(|e| match e {
                Error::Validation { what, msg } => Error::Validation {
                    what,
                    msg: format!("{msg} ({file}:{line})"),
                },
                other => other,
            })?;
            entries.push(entry);
        }
        if !seen_header {
            return Err(Error::parse(file, 1, "missing catalog header"));
        }
        VariableCatalog::new(entries)
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let werr = |e: csv::Error| Error::Internal(format!("csv write: {e}"));
        w.write_record(CATALOG_HEADER).map_err(werr)?;
        for e in &self.entries {
            w.write_record([
                e.id.clone(),
                e.name.clone(),
                e.kind.as_str().to_string(),
                fmt_num(e.range_lo),
                fmt_num(e.range_hi),
                fmt_num(e.default),
                e.freq_class.as_str().to_string(),
                e.acting_period_min.map(fmt_num).unwrap_or_default(),
                e.merge_group.clone().unwrap_or_default(),
                e.merge_weight.map(fmt_num).unwrap_or_default(),
            ])
            .map_err(werr)?;
        }
        w.flush().map_err(|e| Error::Internal(format!("csv flush: {e}")))?;
        Ok(())
    }
}

pub fn load_catalog(path: &Path) -> Result<VariableCatalog> {
    let f = open_file(path)?;
    VariableCatalog::from_reader(f, &path.display().to_string())
}

pub fn write_catalog(path: &Path, catalog: &VariableCatalog) -> Result<()> {
    catalog.to_writer(create_file(path)?)
}

pub(crate) fn csv_error(file: &str, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::parse(file, line, e.to_string())
}

/// Well-known variable ids the pipeline needs by role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariableRoles {
    pub heart_rate: String,
    pub map: String,
    pub lactate_arterial: String,
    pub lactate_venous: String,
    pub weight: String,
    /// Oxygen saturation reported with an arterial blood-gas sample.
    pub blood_gas_sat: String,
    pub central_venous_sat: String,
    /// Arterial blood-gas variable → venous counterpart, used when a
    /// sample is relabelled as venous.
    pub blood_gas_pairs: Vec<(String, String)>,
    pub dobutamine: String,
    pub milrinone: String,
    pub levosimendan: String,
    pub theophylline: String,
    pub norepinephrine: String,
    pub epinephrine: String,
    pub vasopressin: String,
}

impl Default for VariableRoles {
    fn default() -> Self {
        VariableRoles {
            heart_rate: "hr".into(),
            map: "map".into(),
            lactate_arterial: "a_lac".into(),
            lactate_venous: "v_lac".into(),
            weight: "weight".into(),
            blood_gas_sat: "sao2".into(),
            central_venous_sat: "scvo2".into(),
            blood_gas_pairs: vec![
                ("a_lac".into(), "v_lac".into()),
                ("sao2".into(), "svo2".into()),
            ],
            dobutamine: "dobu".into(),
            milrinone: "milri".into(),
            levosimendan: "levo".into(),
            theophylline: "theo".into(),
            norepinephrine: "norepi".into(),
            epinephrine: "epi".into(),
            vasopressin: "vaso".into(),
        }
    }
}

impl VariableRoles {
    /// Drugs whose presence counts as vasoactive/inotropic support.
    pub fn vasoactive_drugs(&self) -> Vec<String> {
        vec![
            self.dobutamine.clone(),
            self.milrinone.clone(),
            self.levosimendan.clone(),
            self.theophylline.clone(),
            self.norepinephrine.clone(),
            self.epinephrine.clone(),
            self.vasopressin.clone(),
        ]
    }
}
