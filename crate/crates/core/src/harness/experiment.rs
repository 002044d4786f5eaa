//! Experiment orchestration: splits, the toy relevance experiment and the
//! held-out ordering benchmark.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gp::{self, LatentPosterior, Ml2Fit};
use crate::harness::loader::{load_with_recipe, Recipe};
use crate::harness::report::{
    CurveRecord, FitRecord, FullModelRecord, RankingRecord, ResultReport, SamplerRecord, Timing, TraceRecord,
};
use crate::harness::toy::{gen_toy, ToySpec};
use crate::hmc::{self, HmcRun, SamplerConfig, SamplerDiagnostics};
use crate::par;
use crate::projection::Reference;
use crate::search::{
    self, ard_rank, forward_rank, leave_input_out, EvalOptions, Ordering, ParamMode, RankMethod, RelevanceRanking,
};

/// Largest tolerated fraction of failed splits or replications.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;
pub const DEFAULT_RESTARTS: usize = 3;

#[derive(Clone, Debug)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Uniform random partition into `n_train` training rows and the rest; the
/// test rows are standardized with training statistics.
pub fn split(d: &Dataset, n_train: usize, seed: u64) -> Result<Split> {
    if n_train < 2 || n_train >= d.n() {
        return Err(Error::InvalidArgument(format!("n_train must lie in [2, {})", d.n())));
    }
    let mut idx: Vec<usize> = (0..d.n()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train_idx = idx[..n_train].to_vec();
    let mut test_idx = idx[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let train = d.subset_rows(&train_idx)?;
    let test = d.subset_rows_with(&test_idx, &train.standardization)?;
    Ok(Split { train, test, train_idx, test_idx })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    /// Integrated posterior over HMC hyperparameter draws.
    Hmc,
    Ml2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Csv {
        path: PathBuf,
        recipe: Recipe,
    },
    /// Each split is a fresh realization seeded by the split seed.
    Toy(ToySpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: DataSource,
    /// Ignored for toy data, whose training size comes from the spec.
    pub n_train: usize,
    pub n_splits: usize,
    pub reference: ReferenceKind,
    pub sampler: SamplerConfig,
    pub max_steps: usize,
    pub ml2_restarts: usize,
    pub seed: u64,
    #[serde(default)]
    pub record_timings: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_splits == 0 || self.max_steps == 0 || self.ml2_restarts == 0 {
            return Err(Error::InvalidArgument("n_splits, max_steps and ml2_restarts must be positive".into()));
        }
        Ok(())
    }
}

fn split_seed(seed: u64, s: usize) -> u64 {
    seed.wrapping_add(s as u64)
}

/// Latent posterior of the full model on `train`: the ML-II plug-in, or the
/// moment-matched mixture over HMC draws started at the ML-II optimum.
pub fn reference_posterior(
    train: &Dataset,
    fit: &Ml2Fit,
    kind: ReferenceKind,
    sampler: &SamplerConfig,
) -> Result<(LatentPosterior, Option<HmcRun>)> {
    match kind {
        ReferenceKind::Ml2 => Ok((gp::latent_posterior(train, &fit.hyper, fit.noise_var)?, None)),
        ReferenceKind::Hmc => {
            let run = hmc::hmc_sample(train, sampler, &fit.hyper, fit.noise_var)?;
            let lp = hmc::integrate_latent(train, &run.samples)?;
            Ok((lp, Some(run)))
        }
    }
}

/// Full-model reference on `train`, its test MLPD on the raw target scale,
/// and sampler diagnostics when HMC was used.
pub fn full_reference(
    train: &Dataset,
    test: &Dataset,
    fit: &Ml2Fit,
    kind: ReferenceKind,
    sampler: &SamplerConfig,
) -> Result<(LatentPosterior, f64, Option<SamplerDiagnostics>)> {
    let (lp, run) = reference_posterior(train, fit, kind, sampler)?;
    match run {
        None => Ok((lp, search::test_mlpd(train, test, &fit.hyper, fit.noise_var)?, None)),
        Some(run) => {
            let preds = run
                .samples
                .iter()
                .map(|s| {
                    let (h, nv) = hmc::sample_hyper(train.n_inputs(), s)?;
                    Ok(gp::predict(train, &h, nv, &test.x, true)?.destandardize(&train.standardization))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((lp, gp::mlpd_mixture(&preds, &test.y_raw)?, Some(run.diagnostics)))
        }
    }
}

struct SplitOutcome {
    curves: Vec<CurveRecord>,
    full: FullModelRecord,
    rankings: Vec<RankingRecord>,
    trace: TraceRecord,
    sampler: Option<SamplerRecord>,
    fit: FitRecord,
    secs: f64,
}

fn load_source(cfg: &ExperimentConfig) -> Result<Option<Dataset>> {
    match &cfg.source {
        DataSource::Csv { path, recipe } => {
            let loaded = load_with_recipe(path, recipe)?;
            log::info!("loaded {} rows ({} dropped)", loaded.dataset.n(), loaded.dropped_rows);
            if cfg.n_train >= loaded.dataset.n() {
                return Err(Error::InvalidArgument(format!(
                    "n_train {} must be below the dataset size {}",
                    cfg.n_train,
                    loaded.dataset.n()
                )));
            }
            Ok(Some(loaded.dataset))
        }
        DataSource::Toy(_) => Ok(None),
    }
}

fn train_test(cfg: &ExperimentConfig, data: Option<&Dataset>, seed: u64) -> Result<(Dataset, Dataset)> {
    match (&cfg.source, data) {
        (DataSource::Toy(spec), _) => gen_toy(&ToySpec { seed, ..spec.clone() }),
        (_, Some(d)) => split(d, cfg.n_train, seed).map(|s| (s.train, s.test)),
        _ => unreachable!("CSV source is loaded before splitting"),
    }
}

fn run_split(cfg: &ExperimentConfig, data: Option<&Dataset>, s: usize) -> Result<SplitOutcome> {
    let t = Instant::now();
    let seed = split_seed(cfg.seed, s);
    let (train, test) = train_test(cfg, data, seed)?;
    let max_steps = cfg.max_steps.min(train.n_inputs());
    let fit = gp::fit_ml2(&train, cfg.ml2_restarts, seed)?;
    let sampler = SamplerConfig { seed, ..cfg.sampler.clone() };
    let (lp, full_mlpd, diag) = full_reference(&train, &test, &fit, cfg.reference, &sampler)?;
    let r = Reference::new(&lp, &train)?;
    let trace = search::forward_search(&r, max_steps)?;
    let ard = ard_rank(&fit.hyper, true);
    let orderings = vec![
        Ordering { label: "forward".into(), inputs: trace.order(), submodels: Some(trace.submodels()) },
        Ordering { label: "ard".into(), inputs: ard.order(), submodels: None },
    ];
    let opts = EvalOptions { max_k: max_steps, ml2_restarts: cfg.ml2_restarts, seed };
    let mut curves = Vec::new();
    for mode in [ParamMode::Projected, ParamMode::Ml2] {
        for c in search::evaluate_orderings(&r, &test, &orderings, mode, &opts)? {
            curves.push(CurveRecord { method: c.label, mode, split: s, split_seed: seed, mlpd: c.mlpd });
        }
    }
    let rankings = vec![
        RankingRecord { split: Some(s), ranking: ard },
        RankingRecord { split: Some(s), ranking: forward_rank(&trace, train.n_inputs(), true) },
    ];
    Ok(SplitOutcome {
        curves,
        full: FullModelRecord { split: s, split_seed: seed, mlpd: full_mlpd },
        rankings,
        trace: TraceRecord { split: s, trace },
        sampler: diag.map(|diagnostics| SamplerRecord { split: s, diagnostics }),
        fit: FitRecord { split: s, fit },
        secs: t.elapsed().as_secs_f64(),
    })
}

fn check_failures(failed: usize, total: usize, what: &str) -> Result<()> {
    if failed as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(Error::Experiment(format!("{failed} of {total} {what} failed")));
    }
    Ok(())
}

/// Held-out comparison of forward-search and ARD orderings over random
/// splits, with submodels both projected and refitted by ML-II.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<ResultReport> {
    cfg.validate()?;
    let data = load_source(cfg)?;
    let outcomes = par::map_indexed(cfg.n_splits, |s| run_split(cfg, data.as_ref(), s));
    let mut report = ResultReport::new("bench", serde_json::to_value(cfg)?);
    report.feature_names = match (&data, &cfg.source) {
        (Some(d), _) => d.feature_names.clone(),
        (None, DataSource::Toy(spec)) => crate::data::default_names(spec.n_inputs + spec.n_noise_inputs),
        _ => Vec::new(),
    };
    let mut failed = 0;
    let mut timings = Vec::new();
    for (s, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(o) => {
                report.curves.extend(o.curves);
                report.full_model.push(o.full);
                report.rankings.extend(o.rankings);
                report.traces.push(o.trace);
                report.sampler.extend(o.sampler);
                report.fits.push(o.fit);
                timings.push(Timing { label: format!("split {s}"), secs: o.secs });
            }
            Err(e) => {
                failed += 1;
                log::warn!("split {s} failed: {e}");
                report.warnings.push(format!("split {s}: {e}"));
            }
        }
    }
    check_failures(failed, cfg.n_splits, "splits")?;
    report.summarize();
    finish_timings(&mut report, timings, cfg.record_timings);
    Ok(report)
}

/// Keeps timings only when requested; otherwise clears per-step wall times
/// so repeated runs serialize identically.
pub fn finish_timings(report: &mut ResultReport, timings: Vec<Timing>, record: bool) {
    if record {
        report.timings = Some(timings);
    } else {
        for t in &mut report.traces {
            t.trace.steps.iter_mut().for_each(|s| s.wall_time_secs = 0.0);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyExperimentConfig {
    pub reps: usize,
    pub spec: ToySpec,
    pub ml2_restarts: usize,
    #[serde(default)]
    pub record_timings: bool,
}

/// Mean of per-replication normalized scores, renormalized to a maximum of one.
pub fn average_rankings(method: RankMethod, rankings: &[RelevanceRanking]) -> RelevanceRanking {
    let d = rankings.first().map_or(0, |r| r.scores.len());
    let mut mean = vec![0.0; d];
    for r in rankings {
        mean.iter_mut().zip(&r.scores).for_each(|(m, s)| *m += s / rankings.len() as f64);
    }
    let mx = mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx > 0.0 {
        mean.iter_mut().for_each(|m| *m /= mx);
    }
    RelevanceRanking { method, scores: mean, normalized: true, warnings: Vec::new() }
}

/// ARD and leave-input-out relevance on repeated toy realizations, each from
/// an ML-II reference fit.
pub fn run_toy_ard_experiment(cfg: &ToyExperimentConfig) -> Result<ResultReport> {
    if cfg.reps == 0 || cfg.ml2_restarts == 0 {
        return Err(Error::InvalidArgument("reps and ml2_restarts must be positive".into()));
    }
    let outcomes = par::map_indexed(cfg.reps, |rep| -> Result<_> {
        let t = Instant::now();
        let seed = split_seed(cfg.spec.seed, rep);
        let (train, _) = gen_toy(&ToySpec { seed, ..cfg.spec.clone() })?;
        let fit = gp::fit_ml2(&train, cfg.ml2_restarts, seed)?;
        let lp = gp::latent_posterior(&train, &fit.hyper, fit.noise_var)?;
        let lio = leave_input_out(&Reference::new(&lp, &train)?, true)?;
        Ok((ard_rank(&fit.hyper, true), lio, fit, t.elapsed().as_secs_f64()))
    });
    let mut report = ResultReport::new("toy", serde_json::to_value(cfg)?);
    report.feature_names = crate::data::default_names(cfg.spec.n_inputs + cfg.spec.n_noise_inputs);
    let (mut ards, mut lios, mut timings, mut failed) = (Vec::new(), Vec::new(), Vec::new(), 0);
    for (rep, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok((ard, lio, fit, secs)) => {
                report.rankings.push(RankingRecord { split: Some(rep), ranking: ard.clone() });
                report.rankings.push(RankingRecord { split: Some(rep), ranking: lio.clone() });
                report.fits.push(FitRecord { split: rep, fit });
                timings.push(Timing { label: format!("replication {rep}"), secs });
                ards.push(ard);
                lios.push(lio);
            }
            Err(e) => {
                failed += 1;
                log::warn!("replication {rep} failed: {e}");
                report.warnings.push(format!("replication {rep}: {e}"));
            }
        }
    }
    check_failures(failed, cfg.reps, "replications")?;
    report.rankings.push(RankingRecord { split: None, ranking: average_rankings(RankMethod::Ard, &ards) });
    report.rankings.push(RankingRecord { split: None, ranking: average_rankings(RankMethod::Lio, &lios) });
    finish_timings(&mut report, timings, cfg.record_timings);
    Ok(report)
}

impl ResultReport {
    /// The averaged ranking of `method` (split `None`), if present.
    pub fn averaged_ranking(&self, method: RankMethod) -> Option<&RelevanceRanking> {
        self.rankings.iter().find(|r| r.split.is_none() && r.ranking.method == method).map(|r| &r.ranking)
    }

    /// Curve for `method` and `mode` on `split`.
    pub fn curve(&self, method: &str, mode: ParamMode, split: usize) -> Option<&CurveRecord> {
        self.curves.iter().find(|c| c.method == method && c.mode == mode && c.split == split)
    }
}
