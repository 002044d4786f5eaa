//! Input relevance: greedy forward search and leave-input-out ranking by
//! predictive divergence, the ARD baseline, and held-out evaluation of input
//! orderings.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gp::{self, PosteriorSource};
use crate::kernel::HyperParams;
use crate::par;
use crate::projection::{Reference, Submodel, INERT_LOG_LENGTHSCALE, LOG_SCALE_BOUNDS};

/// Divergences closer than this are treated as tied (lower index wins).
pub const TIE_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchStep {
    /// `None` for the null model at step 0.
    pub added_input: Option<usize>,
    pub subset: Vec<usize>,
    pub predictive_divergence: f64,
    pub submodel: Submodel,
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceInfo {
    pub source: PosteriorSource,
    pub noise_var: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub steps: Vec<SearchStep>,
    pub reference: ReferenceInfo,
    pub warnings: Vec<String>,
}

impl SearchTrace {
    /// Inputs in the order they were added.
    pub fn order(&self) -> Vec<usize> {
        self.steps.iter().filter_map(|s| s.added_input).collect()
    }

    pub fn submodels(&self) -> Vec<Submodel> {
        self.steps.iter().map(|s| s.submodel.clone()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankMethod {
    Ard,
    Lio,
    Forward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelevanceRanking {
    pub method: RankMethod,
    /// Higher is more relevant.
    pub scores: Vec<f64>,
    pub normalized: bool,
    pub warnings: Vec<String>,
}

impl RelevanceRanking {
    fn build(method: RankMethod, mut scores: Vec<f64>, normalize: bool, warnings: Vec<String>) -> Self {
        if normalize {
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if mx > 0.0 {
                scores.iter_mut().for_each(|s| *s /= mx);
            }
        }
        RelevanceRanking { method, scores, normalized: normalize, warnings }
    }

    /// Inputs by decreasing score; ties go to the lower index.
    pub fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        idx
    }
}

fn reference_log_lengthscale(r: &Reference, j: usize) -> f64 {
    r.posterior().hyper.lengthscale(j).map_or(0.0, f64::ln)
}

fn with_input(subset: &[usize], j: usize) -> Vec<usize> {
    let mut s = subset.to_vec();
    let pos = s.partition_point(|&v| v < j);
    s.insert(pos, j);
    s
}

/// Starting points for adding input `j` to `parent`: the parent solution with
/// `j` at the reference length-scale, and the parent with `j` made inert.
fn child_inits(r: &Reference, parent: &HyperParams, j: usize) -> (HyperParams, HyperParams) {
    let subset = with_input(&parent.active_inputs, j);
    let mut warm = parent.restricted(&subset, reference_log_lengthscale(r, j));
    let mut inert = parent.restricted(&subset, INERT_LOG_LENGTHSCALE);
    if !parent.has_se() {
        // a parent without an SE term gives no magnitude to inherit; the
        // inert child must not add the SE constant to the parent's covariance
        warm.log_magnitude = r.posterior().hyper.log_magnitude;
        inert.log_magnitude = LOG_SCALE_BOUNDS.0;
    }
    (warm, inert)
}

/// Greedy forward selection of up to `max_steps` inputs, each step adding the
/// input whose submodel has the smallest predictive divergence. Candidates
/// are projected from the parent's solution; a run that fails to converge is
/// retried from the default start and the lower posterior KL kept.
pub fn forward_search(r: &Reference, max_steps: usize) -> Result<SearchTrace> {
    let d = r.dataset().n_inputs();
    if max_steps == 0 || max_steps > d {
        return Err(Error::InvalidArgument(format!("max_steps must lie in [1, {d}]")));
    }
    let lp = r.posterior();
    let reference = ReferenceInfo { source: lp.source, noise_var: lp.noise_var, n: lp.mu.len() };
    let t0 = Instant::now();
    let null = r.project(&[], None).map_err(|e| Error::Search(format!("null model: {e}")))?;
    let mut steps = vec![SearchStep {
        added_input: None,
        subset: Vec::new(),
        predictive_divergence: null.predictive_divergence,
        submodel: null,
        wall_time_secs: t0.elapsed().as_secs_f64(),
    }];
    let mut warnings = Vec::new();

    for _ in 0..max_steps {
        let t = Instant::now();
        let parent = steps.last().unwrap().submodel.clone();
        let candidates: Vec<usize> = (0..d).filter(|j| !parent.active_inputs.contains(j)).collect();
        let results = par::map_indexed(candidates.len(), |c| {
            let j = candidates[c];
            let (warm, inert) = child_inits(r, &parent.h, j);
            // a warm run that stalls (the parent's constant variance can sit in
            // a flat valley) is retried from the default start; an unconditional
            // retry would also find memorizing short length-scale optima
            let subset = &warm.active_inputs;
            let projected = match r.project(subset, Some(&warm)) {
                Ok(w) if w.converged => w,
                Ok(w) => match r.project(subset, None) {
                    Ok(c) if c.posterior_kl < w.posterior_kl => c,
                    _ => w,
                },
                Err(_) => r.project(subset, None)?,
            };
            // the inert child reproduces the parent, which keeps divergences
            // non-increasing when the warm start lands somewhere worse
            match r.evaluate(&inert) {
                Ok(fallback) if fallback.predictive_divergence < projected.predictive_divergence => Ok(fallback),
                _ => Ok::<_, Error>(projected),
            }
        });
        let mut best: Option<(usize, Submodel)> = None;
        for (&j, res) in candidates.iter().zip(results) {
            match res {
                Ok(sm) => {
                    let better =
                        best.as_ref().is_none_or(|(_, b)| sm.predictive_divergence < b.predictive_divergence - TIE_TOL);
                    if better {
                        best = Some((j, sm));
                    }
                }
                Err(e) => warnings.push(format!("candidate input {j}: {e}")),
            }
        }
        let (j, sm) = best.ok_or_else(|| Error::Search("every candidate projection failed".into()))?;
        steps.push(SearchStep {
            added_input: Some(j),
            subset: sm.active_inputs.clone(),
            predictive_divergence: sm.predictive_divergence,
            submodel: sm,
            wall_time_secs: t.elapsed().as_secs_f64(),
        });
    }
    Ok(SearchTrace { steps, reference, warnings })
}

/// Relevance of each input as the predictive divergence of the submodel
/// without it. Failed projections are scored as the largest successful score
/// and reported in the warnings.
pub fn leave_input_out(r: &Reference, normalize: bool) -> Result<RelevanceRanking> {
    let d = r.dataset().n_inputs();
    if d < 2 {
        return Err(Error::InvalidArgument("leave-input-out needs at least two inputs".into()));
    }
    let results = par::map_indexed(d, |j| {
        let subset: Vec<usize> = (0..d).filter(|&i| i != j).collect();
        r.project(&subset, None).map(|sm| sm.predictive_divergence)
    });
    let mut warnings = Vec::new();
    let ok_max = results.iter().filter_map(|r| r.as_ref().ok()).cloned().fold(f64::NEG_INFINITY, f64::max);
    if !ok_max.is_finite() {
        return Err(Error::Search("every leave-input-out projection failed".into()));
    }
    let scores = results
        .into_iter()
        .enumerate()
        .map(|(j, res)| {
            res.unwrap_or_else(|e| {
                warnings.push(format!("input {j}: {e}"));
                ok_max
            })
        })
        .collect();
    Ok(RelevanceRanking::build(RankMethod::Lio, scores, normalize, warnings))
}

/// Inverse length-scales of a full-model fit; inputs without a length-scale
/// score zero.
pub fn ard_rank(h_full: &HyperParams, normalize: bool) -> RelevanceRanking {
    let d = h_full.active_inputs.last().map_or(0, |&j| j + 1);
    let scores = (0..d).map(|j| h_full.lengthscale(j).map_or(0.0, |l| 1.0 / l)).collect();
    RelevanceRanking::build(RankMethod::Ard, scores, normalize, Vec::new())
}

/// Ranking from a forward-search trace: score `D − position`, unselected
/// inputs zero.
pub fn forward_rank(trace: &SearchTrace, n_inputs: usize, normalize: bool) -> RelevanceRanking {
    let mut scores = vec![0.0; n_inputs];
    for (pos, j) in trace.order().into_iter().enumerate() {
        scores[j] = (n_inputs - pos) as f64;
    }
    RelevanceRanking::build(RankMethod::Forward, scores, normalize, trace.warnings.clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamMode {
    Projected,
    Ml2,
}

/// An input ordering to evaluate; `submodels[k]` (if given) is the projected
/// submodel on the first `k` inputs.
#[derive(Clone, Debug)]
pub struct Ordering {
    pub label: String,
    pub inputs: Vec<usize>,
    pub submodels: Option<Vec<Submodel>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpdCurve {
    pub label: String,
    pub mode: ParamMode,
    /// Test MLPD on the raw target scale for `k = 0..=K`; `None` where the
    /// submodel could not be fitted.
    pub mlpd: Vec<Option<f64>>,
}

/// Options for [`evaluate_orderings`].
#[derive(Clone, Debug)]
pub struct EvalOptions {
    /// Largest prefix length evaluated.
    pub max_k: usize,
    pub ml2_restarts: usize,
    pub seed: u64,
}

/// Test MLPD of `h` (fitted on `train`) on the raw target scale.
pub fn test_mlpd(train: &Dataset, test: &Dataset, h: &HyperParams, noise_var: f64) -> Result<f64> {
    let p = gp::predict(train, h, noise_var, &test.x, true)?.destandardize(&train.standardization);
    gp::mlpd(&p, &test.y_raw)
}

fn sorted_prefix(ordering: &[usize], k: usize) -> Vec<usize> {
    let mut s = ordering[..k].to_vec();
    s.sort_unstable();
    s
}

/// MLPD curves for each ordering, with submodel parameters either projected
/// from the reference `r` or refitted by ML-II on the training data.
pub fn evaluate_orderings(
    r: &Reference,
    test: &Dataset,
    orderings: &[Ordering],
    mode: ParamMode,
    opts: &EvalOptions,
) -> Result<Vec<MlpdCurve>> {
    let train = r.dataset();
    let d = train.n_inputs();
    for o in orderings {
        let mut seen = vec![false; d];
        if o.inputs.len() < opts.max_k.min(d)
            || o.inputs.iter().any(|&j| j >= d || std::mem::replace(&mut seen[j], true))
        {
            return Err(Error::InvalidArgument(format!("ordering `{}` is not a permutation prefix", o.label)));
        }
    }
    let max_k = opts.max_k.min(d);
    let noise = r.posterior().noise_var;
    let curves = orderings
        .iter()
        .map(|o| {
            let mlpd = par::map_indexed(max_k + 1, |k| {
                let subset = sorted_prefix(&o.inputs, k);
                let res = match mode {
                    ParamMode::Projected => {
                        let h = match o.submodels.as_ref().and_then(|s| s.get(k)) {
                            Some(sm) => Ok(sm.h.clone()),
                            None => r.project(&subset, None).map(|sm| sm.h),
                        };
                        h.and_then(|h| test_mlpd(train, test, &h, noise))
                    }
                    ParamMode::Ml2 => gp::fit_ml2_inputs(train, &subset, opts.ml2_restarts, opts.seed)
                        .and_then(|f| test_mlpd(train, test, &f.hyper, f.noise_var)),
                };
                res.map_err(|e| log::warn!("ordering `{}` at k={k}: {e}", o.label)).ok()
            });
            MlpdCurve { label: o.label.clone(), mode, mlpd }
        })
        .collect();
    Ok(curves)
}
