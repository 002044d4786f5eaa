//! Versioned experiment reports: a JSON document plus a flat CSV of MLPD
//! curves for plotting.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::Ml2Fit;
use crate::hmc::SamplerDiagnostics;
use crate::search::{ParamMode, RelevanceRanking, SearchTrace};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub method: String,
    pub mode: ParamMode,
    pub split: usize,
    pub split_seed: u64,
    /// Test MLPD for `k = 0..=max_steps`.
    pub mlpd: Vec<Option<f64>>,
}

impl CurveRecord {
    /// Label used in the CSV `method` column.
    pub fn tag(&self) -> String {
        let mode = match self.mode {
            ParamMode::Projected => "projected",
            ParamMode::Ml2 => "ml2",
        };
        format!("{}:{mode}", self.method)
    }
}

/// Mean and 95% normal interval across splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

impl Interval {
    pub fn from_values(values: &[f64]) -> Option<Interval> {
        let m = values.len();
        if m == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / m as f64;
        let half = if m > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            1.96 * (var / m as f64).sqrt()
        } else {
            0.0
        };
        Some(Interval { mean, lower: mean - half, upper: mean + half, count: m })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub method: String,
    pub mode: ParamMode,
    pub points: Vec<Option<Interval>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullModelRecord {
    pub split: usize,
    pub split_seed: u64,
    pub mlpd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingRecord {
    /// `None` for rankings averaged over splits or replications.
    pub split: Option<usize>,
    pub ranking: RelevanceRanking,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub split: usize,
    pub trace: SearchTrace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerRecord {
    pub split: usize,
    pub diagnostics: SamplerDiagnostics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub split: usize,
    pub fit: Ml2Fit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub label: String,
    pub secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultReport {
    pub schema_version: u32,
    pub software_version: String,
    pub command: String,
    /// Echo of the configuration that produced the report.
    pub config: serde_json::Value,
    #[serde(default)]
    pub feature_names: Vec<String>,
    #[serde(default)]
    pub curves: Vec<CurveRecord>,
    #[serde(default)]
    pub summary: Vec<CurveSummary>,
    #[serde(default)]
    pub full_model: Vec<FullModelRecord>,
    #[serde(default)]
    pub full_model_summary: Option<Interval>,
    #[serde(default)]
    pub rankings: Vec<RankingRecord>,
    #[serde(default)]
    pub traces: Vec<TraceRecord>,
    #[serde(default)]
    pub sampler: Vec<SamplerRecord>,
    #[serde(default)]
    pub fits: Vec<FitRecord>,
    /// Wall-clock timings; only present when requested, since they make
    /// otherwise identical runs differ.
    #[serde(default)]
    pub timings: Option<Vec<Timing>>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ResultReport {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        ResultReport {
            schema_version: SCHEMA_VERSION,
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
            feature_names: Vec::new(),
            curves: Vec::new(),
            summary: Vec::new(),
            full_model: Vec::new(),
            full_model_summary: None,
            rankings: Vec::new(),
            traces: Vec::new(),
            sampler: Vec::new(),
            fits: Vec::new(),
            timings: None,
            warnings: Vec::new(),
        }
    }

    /// Fills `summary` from `curves`, one entry per method and mode in order
    /// of first appearance.
    pub fn summarize(&mut self) {
        let mut keys: Vec<(String, ParamMode)> = Vec::new();
        for c in &self.curves {
            if !keys.iter().any(|(m, p)| *m == c.method && *p == c.mode) {
                keys.push((c.method.clone(), c.mode));
            }
        }
        self.summary = keys
            .into_iter()
            .map(|(method, mode)| {
                let group: Vec<&CurveRecord> =
                    self.curves.iter().filter(|c| c.method == method && c.mode == mode).collect();
                let len = group.iter().map(|c| c.mlpd.len()).max().unwrap_or(0);
                let points = (0..len)
                    .map(|k| {
                        let vals: Vec<f64> = group.iter().filter_map(|c| c.mlpd.get(k).copied().flatten()).collect();
                        Interval::from_values(&vals)
                    })
                    .collect();
                CurveSummary { method, mode, points }
            })
            .collect();
        let full: Vec<f64> = self.full_model.iter().map(|f| f.mlpd).collect();
        self.full_model_summary = Interval::from_values(&full);
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Flat CSV with columns `method, split, k, mlpd`; missing points are empty.
    pub fn curves_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "split", "k", "mlpd"])?;
        for c in &self.curves {
            let tag = c.tag();
            for (k, v) in c.mlpd.iter().enumerate() {
                let val = v.map(|x| x.to_string()).unwrap_or_default();
                w.write_record([tag.as_str(), &c.split.to_string(), &k.to_string(), &val])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
    }
}

/// Path of the CSV written next to a report.
pub fn csv_path(report_path: &Path) -> PathBuf {
    report_path.with_extension("csv")
}

/// Writes the JSON report to `path` and the curve CSV next to it.
pub fn emit_report(r: &ResultReport, path: &Path) -> Result<()> {
    fs::write(path, r.to_json()?)?;
    fs::write(csv_path(path), r.curves_csv()?)?;
    Ok(())
}

pub fn load_report(path: &Path) -> Result<ResultReport> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let found = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != SCHEMA_VERSION {
        return Err(Error::SchemaMismatch { found, expected: SCHEMA_VERSION });
    }
    Ok(serde_json::from_str(&text)?)
}
