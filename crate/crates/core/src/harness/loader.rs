//! CSV ingestion driven by per-dataset recipes.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const MIN_ROWS: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalPolicy {
    /// One indicator per level except the first in sorted order.
    #[default]
    OneHotDropFirst,
    Reject,
}

fn default_missing() -> Vec<String> {
    vec!["NA".into(), String::new(), "?".into()]
}

/// Preprocessing for one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    #[serde(default)]
    pub name: String,
    pub target: String,
    /// Columns removed before anything else.
    #[serde(default)]
    pub drop: Vec<String>,
    /// Columns treated as categorical even when they parse as numbers.
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default)]
    pub categorical_policy: CategoricalPolicy,
    /// Cell values (after trimming) that mark a missing value.
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
    #[serde(default)]
    pub n_train: Option<usize>,
    #[serde(default)]
    pub max_steps: Option<usize>,
}

impl Recipe {
    pub fn for_target(target: &str, policy: CategoricalPolicy) -> Self {
        Recipe {
            name: String::new(),
            target: target.into(),
            drop: Vec::new(),
            categorical: Vec::new(),
            categorical_policy: policy,
            missing: default_missing(),
            n_train: None,
            max_steps: None,
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Clone, Debug)]
pub struct Loaded {
    pub dataset: Dataset,
    pub dropped_rows: usize,
}

pub fn load_csv(path: &Path, target: &str, policy: CategoricalPolicy) -> Result<Loaded> {
    load_with_recipe(path, &Recipe::for_target(target, policy))
}

enum Column {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

pub fn load_with_recipe(path: &Path, recipe: &Recipe) -> Result<Loaded> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    for name in recipe.drop.iter().chain(&recipe.categorical).chain(std::iter::once(&recipe.target)) {
        if !headers.contains(name) {
            return Err(Error::Data(format!("column `{name}` not found")));
        }
    }
    let mut cells: Vec<Vec<Option<String>>> = vec![Vec::new(); headers.len()];
    for rec in rdr.records() {
        let rec = rec?;
        for (j, col) in cells.iter_mut().enumerate() {
            let v = rec.get(j).unwrap_or("").trim();
            col.push(if recipe.missing.iter().any(|m| m == v) { None } else { Some(v.to_string()) });
        }
    }

    let mut columns: Vec<(String, Column)> = Vec::new();
    for (name, col) in headers.iter().zip(cells) {
        if recipe.drop.contains(name) {
            continue;
        }
        let parsed: Option<Vec<Option<f64>>> =
            col.iter().map(|c| c.as_ref().map_or(Some(None), |s| s.parse::<f64>().ok().map(Some))).collect();
        let forced = recipe.categorical.contains(name);
        match parsed {
            Some(vals) if !forced => columns.push((name.clone(), Column::Numeric(vals))),
            _ if *name == recipe.target => {
                return Err(Error::Data(format!("target column `{name}` is not numeric")));
            }
            _ if recipe.categorical_policy == CategoricalPolicy::Reject => {
                return Err(Error::Data(format!("categorical column `{name}` rejected by policy")));
            }
            _ => columns.push((name.clone(), Column::Categorical(col))),
        }
    }

    let n_all = columns.first().map_or(0, |(_, c)| match c {
        Column::Numeric(v) => v.len(),
        Column::Categorical(v) => v.len(),
    });
    let complete: Vec<usize> = (0..n_all)
        .filter(|&i| {
            columns.iter().all(|(_, c)| match c {
                Column::Numeric(v) => v[i].is_some(),
                Column::Categorical(v) => v[i].is_some(),
            })
        })
        .collect();
    if complete.len() < MIN_ROWS {
        return Err(Error::Data(format!("only {} complete rows, need {MIN_ROWS}", complete.len())));
    }

    let mut names = Vec::new();
    let mut feats: Vec<Vec<f64>> = Vec::new();
    let mut y = Vec::new();
    for (name, c) in &columns {
        match c {
            Column::Numeric(v) if *name == recipe.target => y = complete.iter().map(|&i| v[i].unwrap()).collect(),
            Column::Numeric(v) => {
                names.push(name.clone());
                feats.push(complete.iter().map(|&i| v[i].unwrap()).collect());
            }
            Column::Categorical(v) => {
                let levels: BTreeSet<&str> = complete.iter().map(|&i| v[i].as_deref().unwrap()).collect();
                for level in levels.iter().skip(1) {
                    names.push(format!("{name}={level}"));
                    feats.push(complete.iter().map(|&i| f64::from(v[i].as_deref() == Some(*level))).collect());
                }
            }
        }
    }
    let n = complete.len();
    let x = DMatrix::from_fn(n, feats.len(), |i, j| feats[j][i]);
    let dataset = Dataset::from_raw(x, DVector::from_vec(y), names)?;
    Ok(Loaded { dataset, dropped_rows: n_all - n })
}
