//! Full-model GP regression with a Gaussian likelihood.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Standardization};
use crate::error::{Error, Result};
use crate::kernel::{HyperParams, PairGeometry};
use crate::linalg::{symmetrize, SpdFactor};
use crate::optim::{self, LbfgsOptions};
use crate::par;

/// Box for every log-domain hyperparameter during ML-II and HMC.
pub const LOG_PARAM_BOUND: f64 = 10.0;
const ML2_MAX_ITER: usize = 500;
const ML2_GRAD_TOL: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosteriorSource {
    Ml2,
    Integrated,
}

/// Latent posterior at the training inputs, the reference for projection.
#[derive(Clone, Debug)]
pub struct LatentPosterior {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub noise_var: f64,
    pub source: PosteriorSource,
    /// Hyperparameters the posterior was computed from (posterior mean of the
    /// log parameters for integrated posteriors). Used for warm starts.
    pub hyper: HyperParams,
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub includes_noise: bool,
}

impl Prediction {
    /// Maps mean and covariance back to the raw target scale.
    pub fn destandardize(&self, st: &Standardization) -> Prediction {
        Prediction {
            mean: st.restore_y(&self.mean),
            cov: &self.cov * (st.y_scale * st.y_scale),
            includes_noise: self.includes_noise,
        }
    }

    pub fn marginal_variances(&self) -> DVector<f64> {
        self.cov.diagonal()
    }
}

/// Result of a type-II maximum likelihood fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ml2Fit {
    pub hyper: HyperParams,
    pub noise_var: f64,
    pub log_ml: f64,
    pub converged: bool,
    pub restarts_failed: usize,
}

/// Evaluates the log marginal likelihood over flat parameters
/// `[kernel params..., log σ²]` with the training geometry built once.
pub(crate) struct MarginalLikelihood<'a> {
    geom: PairGeometry,
    y: &'a DVector<f64>,
    template: HyperParams,
}

impl<'a> MarginalLikelihood<'a> {
    pub fn new(d: &'a Dataset, template: &HyperParams) -> Result<Self> {
        template.validate(Some(d.n_inputs()))?;
        let geom = PairGeometry::new(&d.x, &d.x, &template.active_inputs)?;
        Ok(MarginalLikelihood { geom, y: &d.y, template: template.clone() })
    }

    pub fn dim(&self) -> usize {
        self.template.n_params() + 1
    }

    pub fn split(&self, flat: &[f64]) -> (HyperParams, f64) {
        let k = self.template.n_params();
        (self.template.with_flat(&flat[..k]), flat[k].exp())
    }

    /// Value and gradient with respect to every flat parameter.
    pub fn eval(&self, flat: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (h, noise_var) = self.split(flat);
        let n = self.y.len();
        let se = self.geom.se(&h)?;
        let mut ky = self.geom.assemble(&h, se.clone(), h.log_extra_noise.is_some())?;
        for i in 0..n {
            ky[(i, i)] += noise_var;
        }
        let fac = SpdFactor::new(&ky)?;
        let alpha = fac.solve(self.y);
        let value = -0.5 * self.y.dot(&alpha) - 0.5 * fac.log_det() - 0.5 * n as f64 * (2.0 * PI).ln();

        // W = ½(ααᵀ − Ky⁻¹); ∂value/∂θ = Σ W ∘ ∂Ky/∂θ
        let mut w = fac.inverse();
        w.iter_mut().for_each(|v| *v *= -0.5);
        w.ger(0.5, &alpha, &alpha, 1.0);
        let tr_w = w.trace();
        let mut grad = self.geom.grad_contract(&h, &se, &w)?;
        // jitter is proportional to the mean diagonal, so it moves with θ
        let rel = fac.jitter_rel();
        if rel > 0.0 {
            for (g, md) in grad.iter_mut().zip(self.geom.grad_mean_diag(&h)) {
                *g += rel * md * tr_w;
            }
        }
        grad.push(noise_var * (1.0 + rel) * tr_w);
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::IllConditioned("non-finite marginal likelihood".into()));
        }
        Ok((value, grad))
    }
}

/// `log N(y | 0, K + σ²I)` and its gradient with respect to the flat log
/// parameters of `h` followed by `log σ²`.
pub fn log_marginal_likelihood(d: &Dataset, h: &HyperParams, noise_var: f64) -> Result<(f64, Vec<f64>)> {
    if !(noise_var > 0.0) {
        return Err(Error::InvalidArgument("noise variance must be positive".into()));
    }
    let ml = MarginalLikelihood::new(d, h)?;
    let mut flat = h.to_flat();
    flat.push(noise_var.ln());
    ml.eval(&flat)
}

/// ML-II fit over all inputs.
pub fn fit_ml2(d: &Dataset, restarts: usize, seed: u64) -> Result<Ml2Fit> {
    let all: Vec<usize> = (0..d.n_inputs()).collect();
    fit_ml2_inputs(d, &all, restarts, seed)
}

/// ML-II fit of the constant + SE model over `inputs`, from `restarts`
/// randomized initializations. Ties in the optimum go to the lowest restart.
pub fn fit_ml2_inputs(d: &Dataset, inputs: &[usize], restarts: usize, seed: u64) -> Result<Ml2Fit> {
    if restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    let template = HyperParams {
        log_const_var: 0.1f64.ln(),
        log_magnitude: 0.0,
        log_lengthscales: vec![0.0; inputs.len()],
        log_extra_noise: None,
        active_inputs: inputs.to_vec(),
    };
    let ml = MarginalLikelihood::new(d, &template)?;
    let opts = LbfgsOptions {
        max_iter: ML2_MAX_ITER,
        grad_tol: ML2_GRAD_TOL,
        bounds: vec![(-LOG_PARAM_BOUND, LOG_PARAM_BOUND); ml.dim()],
        ..Default::default()
    };

    let runs = par::map_indexed(restarts, |r| {
        let x0 = ml2_init(&template, seed, r as u64);
        optim::minimize(|x| ml.eval(x).ok().map(|(v, g)| (-v, g.into_iter().map(|gi| -gi).collect())), &x0, &opts).ok()
    });

    let failed = runs.iter().filter(|r| r.is_none()).count();
    let best = runs
        .into_iter()
        .flatten()
        .fold(None::<optim::LbfgsResult>, |best, r| match best {
            Some(b) if b.value <= r.value => Some(b),
            _ => Some(r),
        })
        .ok_or_else(|| Error::IllConditioned("every ML-II restart failed".into()))?;
    let (hyper, noise_var) = ml.split(&best.x);
    Ok(Ml2Fit { hyper, noise_var, log_ml: -best.value, converged: best.converged, restarts_failed: failed })
}

fn ml2_init(template: &HyperParams, seed: u64, restart: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart);
    let mut h = template.clone();
    h.log_const_var = 0.1f64.ln();
    h.log_magnitude = rng.gen_range(0.1f64.ln()..2.0f64.ln());
    for l in h.log_lengthscales.iter_mut() {
        *l = rng.gen_range(0.3f64.ln()..3.0f64.ln());
    }
    let mut x = h.to_flat();
    x.push(rng.gen_range(0.01f64.ln()..1.0f64.ln()));
    x
}

/// Latent mean `K(K+σ²I)⁻¹y` and covariance `K − K(K+σ²I)⁻¹K` at the
/// training inputs.
pub fn latent_posterior(d: &Dataset, h: &HyperParams, noise_var: f64) -> Result<LatentPosterior> {
    let (mu, sigma) = latent_moments(d, h, noise_var)?;
    Ok(LatentPosterior { mu, sigma, noise_var, source: PosteriorSource::Ml2, hyper: h.clone() })
}

pub(crate) fn latent_moments(d: &Dataset, h: &HyperParams, noise_var: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !(noise_var > 0.0) {
        return Err(Error::InvalidArgument("noise variance must be positive".into()));
    }
    h.validate(Some(d.n_inputs()))?;
    let geom = PairGeometry::new(&d.x, &d.x, &h.active_inputs)?;
    let k = geom.full(h, h.log_extra_noise.is_some())?;
    let mut ky = k.clone();
    for i in 0..d.n() {
        ky[(i, i)] += noise_var;
    }
    let fac = SpdFactor::new(&ky)?;
    let alpha = fac.solve(&d.y);
    let mu = &k * alpha;
    let v = fac.solve_lower_mat(&k);
    let mut sigma = k - v.transpose() * v;
    symmetrize(&mut sigma);
    Ok((mu, sigma))
}

/// Predictive distribution of the latent function (plus noise if requested)
/// at `x_new`, on the standardized target scale.
pub fn predict(
    d: &Dataset,
    h: &HyperParams,
    noise_var: f64,
    x_new: &DMatrix<f64>,
    with_noise: bool,
) -> Result<Prediction> {
    if !(noise_var > 0.0) {
        return Err(Error::InvalidArgument("noise variance must be positive".into()));
    }
    if x_new.ncols() != d.n_inputs() {
        return Err(Error::InvalidArgument(format!(
            "new points have {} columns, training data {}",
            x_new.ncols(),
            d.n_inputs()
        )));
    }
    h.validate(Some(d.n_inputs()))?;
    let extra = h.log_extra_noise.is_some();
    let train = PairGeometry::new(&d.x, &d.x, &h.active_inputs)?;
    let mut ky = train.full(h, extra)?;
    for i in 0..d.n() {
        ky[(i, i)] += noise_var;
    }
    let fac = SpdFactor::new(&ky)?;
    // cross-covariance never carries the extra diagonal term
    let k_star = PairGeometry::new(x_new, &d.x, &h.active_inputs)?.full(h, false)?;
    let k_ss = PairGeometry::new(x_new, x_new, &h.active_inputs)?.full(h, extra)?;
    let mean = &k_star * fac.solve(&d.y);
    let v = fac.solve_lower_mat(&k_star.transpose());
    let mut cov = k_ss - v.transpose() * v;
    symmetrize(&mut cov);
    if with_noise {
        for i in 0..cov.nrows() {
            cov[(i, i)] += noise_var;
        }
    }
    Ok(Prediction { mean, cov, includes_noise: with_noise })
}

fn log_normal(y: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - 0.5 * (y - mean).powi(2) / var
}

/// Mean log predictive density of `y_true` under the marginal predictive
/// distributions.
pub fn mlpd(p: &Prediction, y_true: &DVector<f64>) -> Result<f64> {
    if !p.includes_noise {
        return Err(Error::InvalidArgument("MLPD needs a prediction that includes noise".into()));
    }
    if p.mean.len() != y_true.len() {
        return Err(Error::InvalidArgument("prediction and target lengths differ".into()));
    }
    if y_true.is_empty() {
        return Err(Error::InvalidArgument("no test points".into()));
    }
    let var = p.marginal_variances();
    if var.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::IllConditioned("non-positive predictive variance".into()));
    }
    let total: f64 = (0..y_true.len()).map(|i| log_normal(y_true[i], p.mean[i], var[i])).sum();
    Ok(total / y_true.len() as f64)
}

/// MLPD under the equal-weight mixture of several predictive distributions.
pub fn mlpd_mixture(preds: &[Prediction], y_true: &DVector<f64>) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("empty mixture".into()));
    }
    let m = y_true.len();
    let logs = preds.len() as f64;
    let mut total = 0.0;
    for i in 0..m {
        let terms: Vec<f64> = preds
            .iter()
            .map(|p| {
                let v = p.cov[(i, i)];
                if !(v > 0.0) || !p.includes_noise {
                    return Err(Error::IllConditioned("invalid predictive variance".into()));
                }
                Ok(log_normal(y_true[i], p.mean[i], v))
            })
            .collect::<Result<_>>()?;
        let mx = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        total += mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln() - logs.ln();
    }
    Ok(total / m as f64)
}
