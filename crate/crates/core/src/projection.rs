//! Projection of a reference latent posterior onto GPs restricted to input
//! subsets.
//!
//! A submodel with covariance `K⊥` (constant + SE over the subset, plus an
//! extra diagonal `σ₀²I`) and the reference noise variance `σ²` has posterior
//! `μ⊥ = K⊥(K⊥+σ²I)⁻¹y`, `Σ⊥ = K⊥ − K⊥(K⊥+σ²I)⁻¹K⊥`. Its hyperparameters
//! minimize `KL(N(μ, Σ) ‖ N(μ⊥, Σ⊥))`. Submodels are scored by the predictive
//! divergence, the same KL with the noise-free cross-covariance
//! `K′⊥ = K⊥ − σ₀²I` in place of `K⊥`.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gp::LatentPosterior;
use crate::kernel::{HyperParams, PairGeometry};
use crate::linalg::{symmetrize, SpdFactor};
use crate::optim::{self, LbfgsOptions};

pub const PROJ_MAX_ITER: usize = 300;
pub const PROJ_GRAD_TOL: f64 = 1e-4;
/// Bounds on log σ₀².
pub const LOG_EXTRA_NOISE_BOUNDS: (f64, f64) = (-20.0, 10.0);
/// Bounds on log length-scales; the upper end admits effectively removed inputs.
pub const LOG_LENGTHSCALE_BOUNDS: (f64, f64) = (-20.0, 40.0);
/// Bounds on log constant variance and log magnitude.
pub const LOG_SCALE_BOUNDS: (f64, f64) = (-20.0, 10.0);
/// Log length-scale that makes an input numerically inert.
pub const INERT_LOG_LENGTHSCALE: f64 = 30.0;
/// Absolute diagonal added to a rank-deficient reference covariance.
pub const REFERENCE_JITTER: f64 = 1e-8;
const INIT_RETRIES: usize = 5;
const K_PIVOT_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Submodel {
    pub active_inputs: Vec<usize>,
    /// Always carries `log_extra_noise`.
    pub h: HyperParams,
    /// Optimized posterior KL, with the ½ factor.
    pub posterior_kl: f64,
    pub predictive_divergence: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearProjection {
    pub w_perp: DVector<f64>,
    pub sigma2_perp: f64,
}

/// `KL(N(μ₀, Σ₀) ‖ N(μ₁, Σ₁))`, clamped at zero. A numerically singular
/// `Σ₀` is taken as `Σ₀ + εI` with `ε = REFERENCE_JITTER`.
pub fn gaussian_kl(
    mu0: &DVector<f64>,
    sigma0: &DMatrix<f64>,
    mu1: &DVector<f64>,
    sigma1: &DMatrix<f64>,
) -> Result<f64> {
    let n = mu0.len();
    if sigma0.shape() != (n, n) || mu1.len() != n || sigma1.shape() != (n, n) {
        return Err(Error::InvalidArgument("Gaussian dimensions do not match".into()));
    }
    let (sigma0, log_det0) = regularized(sigma0)?;
    kl_with_log_det(mu0, &sigma0, log_det0, mu1, sigma1)
}

/// A numerically rank-deficient covariance is replaced by `Σ + εI`
/// throughout, so that trace and log-determinant describe the same Gaussian.
fn regularized(sigma: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let mut sigma = sigma.clone();
    if SpdFactor::new(&sigma)?.jitter() > 0.0 {
        for i in 0..sigma.nrows() {
            sigma[(i, i)] += REFERENCE_JITTER;
        }
    }
    let log_det = SpdFactor::new(&sigma)?.log_det();
    Ok((sigma, log_det))
}

fn kl_with_log_det(
    mu0: &DVector<f64>,
    sigma0: &DMatrix<f64>,
    log_det0: f64,
    mu1: &DVector<f64>,
    sigma1: &DMatrix<f64>,
) -> Result<f64> {
    let f1 = SpdFactor::new(sigma1)?;
    let tr = f1.solve_mat(sigma0).trace();
    let diff = mu1 - mu0;
    let maha = diff.dot(&f1.solve(&diff));
    let kl = 0.5 * (tr + maha + f1.log_det() - log_det0 - mu0.len() as f64);
    if !kl.is_finite() {
        return Err(Error::IllConditioned("non-finite KL divergence".into()));
    }
    Ok(kl.max(0.0))
}

/// Submodel covariance factored for repeated use.
struct Factored {
    se: DMatrix<f64>,
    /// `K⊥` including σ₀² and any jitter.
    k: DMatrix<f64>,
    l: SpdFactor,
    /// Factor of `K⊥ + σ²I`.
    c: SpdFactor,
    /// `(K⊥ + σ²I)⁻¹ y`.
    b: DVector<f64>,
}

/// A reference posterior prepared for projecting onto many subsets.
pub struct Reference<'a> {
    lp: &'a LatentPosterior,
    d: &'a Dataset,
    /// Reference covariance, regularized when degenerate.
    sigma: DMatrix<f64>,
    log_det_sigma: f64,
    trace_sigma: f64,
}

impl<'a> Reference<'a> {
    pub fn new(lp: &'a LatentPosterior, d: &'a Dataset) -> Result<Self> {
        let n = d.n();
        if lp.mu.len() != n || lp.sigma.shape() != (n, n) {
            return Err(Error::InvalidArgument("reference posterior does not match the dataset".into()));
        }
        if !(lp.noise_var > 0.0) {
            return Err(Error::InvalidArgument("reference noise variance must be positive".into()));
        }
        let (sigma, log_det_sigma) = regularized(&lp.sigma)?;
        let trace_sigma = sigma.trace();
        Ok(Reference { lp, d, sigma, log_det_sigma, trace_sigma })
    }

    pub fn posterior(&self) -> &LatentPosterior {
        self.lp
    }

    pub fn dataset(&self) -> &Dataset {
        self.d
    }

    fn check(&self, h: &HyperParams) -> Result<PairGeometry> {
        if h.log_extra_noise.is_none() {
            return Err(Error::InvalidArgument("submodel hyperparameters need log_extra_noise".into()));
        }
        h.validate(Some(self.d.n_inputs()))?;
        PairGeometry::new(&self.d.x, &self.d.x, &h.active_inputs)
    }

    fn factor(&self, geom: &PairGeometry, h: &HyperParams) -> Result<Factored> {
        let se = geom.se(h)?;
        let mut k = geom.assemble(h, se.clone(), true)?;
        // σ₀² already bounds the spectrum away from zero, so only a much
        // weaker pivot guard is needed before jittering
        let l = SpdFactor::with_pivot_floor(&k, K_PIVOT_FLOOR)?;
        let jit = l.jitter();
        let s2 = self.lp.noise_var;
        let mut ky = k.clone();
        for i in 0..k.nrows() {
            k[(i, i)] += jit;
            ky[(i, i)] += jit + s2;
        }
        let c = SpdFactor::new(&ky)?;
        let b = c.solve(&self.d.y);
        Ok(Factored { se, k, l, c, b })
    }

    /// `(μ⊥, Σ⊥)` for submodel `h`.
    pub fn submodel_posterior(&self, h: &HyperParams) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let geom = self.check(h)?;
        let f = self.factor(&geom, h)?;
        let mu = &self.d.y - &f.b * self.lp.noise_var;
        let v = f.c.solve_lower_mat(&f.k);
        let mut sigma = &f.k - v.transpose() * v;
        symmetrize(&mut sigma);
        Ok((mu, sigma))
    }

    /// Twice the posterior KL and its gradient over the flat parameters of `h`.
    pub fn objective(&self, h: &HyperParams) -> Result<(f64, Vec<f64>)> {
        let geom = self.check(h)?;
        self.objective_with(&geom, h)
    }

    fn objective_with(&self, geom: &PairGeometry, h: &HyperParams) -> Result<(f64, Vec<f64>)> {
        let f = self.factor(geom, h)?;
        let n = self.d.n();
        let s2 = self.lp.noise_var;
        let mu = &self.lp.mu;
        // μ⊥ = K⊥(K⊥+σ²I)⁻¹y = y − σ²b
        let r = mu - (&self.d.y - &f.b * s2);
        let a_inv = f.l.inverse();
        let b_inv = f.c.inverse();
        let p = &a_inv * &self.sigma;
        let a_r = &a_inv * &r;
        let value = p.trace()
            + self.trace_sigma / s2
            + r.dot(&a_r)
            + r.norm_squared() / s2
            + n as f64 * s2.ln()
            + f.l.log_det()
            - f.c.log_det()
            - self.log_det_sigma
            - n as f64;

        // dE/dθ = −Σ W ∘ ∂K⊥/∂θ with W = AΣA − A + B + aaᵀ − bbᵀ, A = K⊥⁻¹,
        // B = (K⊥+σ²I)⁻¹, a = Aμ, b = By
        let a_mu = &a_inv * mu;
        let mut w = &p * &a_inv;
        symmetrize(&mut w);
        w -= &a_inv;
        w += &b_inv;
        w.ger(1.0, &a_mu, &a_mu, 1.0);
        w.ger(-1.0, &f.b, &f.b, 1.0);
        let mut grad: Vec<f64> = geom.grad_contract(h, &f.se, &w)?.into_iter().map(|g| -g).collect();
        let rel = f.l.jitter_rel();
        if rel > 0.0 {
            let tr_w = w.trace();
            for (g, md) in grad.iter_mut().zip(geom.grad_mean_diag(h)) {
                *g -= rel * md * tr_w;
            }
        }
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::IllConditioned("non-finite projection objective".into()));
        }
        Ok((value, grad))
    }

    /// Predictive divergence of submodel `h`.
    pub fn predictive_divergence(&self, h: &HyperParams) -> Result<f64> {
        let geom = self.check(h)?;
        let f = self.factor(&geom, h)?;
        // K′⊥ = K⊥ − σ₀²I; any jitter stays with the signal part
        let mut k_nf = f.k.clone();
        let s0 = h.extra_noise().unwrap_or(0.0);
        for i in 0..k_nf.nrows() {
            k_nf[(i, i)] -= s0;
        }
        let mu_p = &k_nf * &f.b;
        let v = f.c.solve_lower_mat(&k_nf);
        let mut sigma_p = &f.k - v.transpose() * v;
        symmetrize(&mut sigma_p);
        kl_with_log_det(&self.lp.mu, &self.sigma, self.log_det_sigma, &mu_p, &sigma_p)
    }

    /// Default starting point for `subset`: reference hyperparameters
    /// restricted to the subset, with σ₀² from [`Reference::warm_extra_noise`].
    pub fn default_init(&self, subset: &[usize]) -> Result<HyperParams> {
        let mut h = self.lp.hyper.restricted(subset, 0.0);
        h.log_extra_noise = None;
        self.warm_extra_noise(h)
    }

    /// Sets σ₀² to `max(0.1σ², ‖μ − μ⊥‖²/n)` with `μ⊥` evaluated at `0.1σ²`.
    pub fn warm_extra_noise(&self, mut h: HyperParams) -> Result<HyperParams> {
        let floor = 0.1 * self.lp.noise_var;
        h.log_extra_noise = Some(floor.ln());
        let h = clamp_to_bounds(&h);
        let (mu_perp, _) = self.submodel_posterior(&h)?;
        let resid = (&self.lp.mu - mu_perp).norm_squared() / self.d.n() as f64;
        let mut h = h;
        h.log_extra_noise = Some(floor.max(resid).ln());
        Ok(clamp_to_bounds(&h))
    }

    /// Minimizes the posterior KL over the hyperparameters of the submodel on
    /// `subset`, starting from `init` (warm-started when `init` has no σ₀²).
    pub fn project(&self, subset: &[usize], init: Option<&HyperParams>) -> Result<Submodel> {
        let fail = |reason: String| Error::ProjectionFailure { subset: subset.to_vec(), reason };
        check_subset(subset, self.d.n_inputs())?;
        let start = match init {
            Some(h0) if h0.active_inputs != subset => {
                return Err(Error::InvalidArgument("initial hyperparameters do not match the subset".into()))
            }
            Some(h0) if h0.log_extra_noise.is_some() => clamp_to_bounds(h0),
            Some(h0) => self.warm_extra_noise(h0.clone()).map_err(|e| fail(e.to_string()))?,
            None => self.default_init(subset).map_err(|e| fail(e.to_string()))?,
        };
        let geom = PairGeometry::new(&self.d.x, &self.d.x, subset)?;
        let bounds = param_bounds(&start);

        // raise σ₀² tenfold per retry until the objective can be evaluated
        let mut x0 = start.to_flat();
        let last = x0.len() - 1;
        let mut attempt = 0;
        while self.objective_with(&geom, &start.with_flat(&x0)).is_err() {
            attempt += 1;
            if attempt > INIT_RETRIES {
                return Err(fail("objective not finite at the initial point".into()));
            }
            x0[last] = (x0[last] + 10f64.ln()).min(LOG_EXTRA_NOISE_BOUNDS.1);
        }

        let opts = LbfgsOptions { max_iter: PROJ_MAX_ITER, grad_tol: PROJ_GRAD_TOL, bounds, ..Default::default() };
        let res = optim::minimize(|x| self.objective_with(&geom, &start.with_flat(x)).ok(), &x0, &opts)
            .map_err(|_| fail("objective not finite at the initial point".into()))?;
        let h = start.with_flat(&res.x);
        let predictive_divergence = self.predictive_divergence(&h).map_err(|e| fail(e.to_string()))?;
        Ok(Submodel {
            active_inputs: subset.to_vec(),
            h,
            posterior_kl: (0.5 * res.value).max(0.0),
            predictive_divergence,
            converged: res.converged,
            iterations: res.iterations,
        })
    }

    /// Scores `h` without optimizing.
    pub fn evaluate(&self, h: &HyperParams) -> Result<Submodel> {
        let (e, _) = self.objective(h)?;
        Ok(Submodel {
            active_inputs: h.active_inputs.clone(),
            h: h.clone(),
            posterior_kl: (0.5 * e).max(0.0),
            predictive_divergence: self.predictive_divergence(h)?,
            converged: false,
            iterations: 0,
        })
    }
}

fn check_subset(subset: &[usize], d: usize) -> Result<()> {
    if subset.windows(2).any(|w| w[0] >= w[1]) || subset.last().is_some_and(|&j| j >= d) {
        return Err(Error::InvalidArgument(format!("subset {subset:?} is not increasing within [0, {d})")));
    }
    Ok(())
}

fn param_bounds(h: &HyperParams) -> Vec<(f64, f64)> {
    let mut b = vec![LOG_SCALE_BOUNDS];
    if h.has_se() {
        b.push(LOG_SCALE_BOUNDS);
        b.extend(std::iter::repeat_n(LOG_LENGTHSCALE_BOUNDS, h.active_inputs.len()));
    }
    b.push(LOG_EXTRA_NOISE_BOUNDS);
    b
}

fn clamp_to_bounds(h: &HyperParams) -> HyperParams {
    let flat: Vec<f64> = h.to_flat().iter().zip(param_bounds(h)).map(|(v, (lo, hi))| v.clamp(lo, hi)).collect();
    h.with_flat(&flat)
}

/// `(μ⊥, Σ⊥)` of submodel `h_sub` against reference `lp`.
pub fn submodel_posterior(
    lp: &LatentPosterior,
    d: &Dataset,
    h_sub: &HyperParams,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    Reference::new(lp, d)?.submodel_posterior(h_sub)
}

/// Twice the posterior KL and its gradient over the flat parameters of `h_sub`.
pub fn kl_objective(lp: &LatentPosterior, d: &Dataset, h_sub: &HyperParams) -> Result<(f64, Vec<f64>)> {
    Reference::new(lp, d)?.objective(h_sub)
}

pub fn predictive_divergence(lp: &LatentPosterior, d: &Dataset, h_sub: &HyperParams) -> Result<f64> {
    Reference::new(lp, d)?.predictive_divergence(h_sub)
}

pub fn project(lp: &LatentPosterior, d: &Dataset, subset: &[usize], init: Option<&HyperParams>) -> Result<Submodel> {
    Reference::new(lp, d)?.project(subset, init)
}

/// Least-squares projection of the linear predictor `f = X w` onto the
/// columns `x_sub`, with the noise variance inflated by the mean squared
/// projection residual.
pub fn project_linear(
    x_full: &DMatrix<f64>,
    x_sub: &DMatrix<f64>,
    w: &DVector<f64>,
    sigma2: f64,
) -> Result<LinearProjection> {
    let n = x_full.nrows();
    if x_full.ncols() != w.len() || x_sub.nrows() != n || n == 0 {
        return Err(Error::InvalidArgument("design and weight dimensions do not match".into()));
    }
    let f = x_full * w;
    if x_sub.ncols() == 0 {
        return Ok(LinearProjection { w_perp: DVector::zeros(0), sigma2_perp: sigma2 + f.norm_squared() / n as f64 });
    }
    let gram = x_sub.transpose() * x_sub;
    let max_diag = gram.diagonal().max();
    let chol = Cholesky::new(gram)
        .ok_or_else(|| Error::SingularDesign("normal equations are not positive definite".into()))?;
    let l = chol.l_dirty();
    if (0..l.nrows()).any(|i| l[(i, i)].powi(2) < 1e-12 * max_diag) {
        return Err(Error::SingularDesign("selected columns are linearly dependent".into()));
    }
    let w_perp = chol.solve(&(x_sub.transpose() * &f));
    let resid = &f - x_sub * &w_perp;
    Ok(LinearProjection { w_perp, sigma2_perp: sigma2 + resid.norm_squared() / n as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{default_names, Standardization};
    use crate::gp::{fit_ml2, latent_posterior, PosteriorSource};
    use crate::kernel::full_cov;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exact_dataset(x: DMatrix<f64>, y: DVector<f64>) -> Dataset {
        let d = x.ncols();
        Dataset {
            x_raw: x.clone(),
            y_raw: y.clone(),
            x,
            y,
            feature_names: default_names(d),
            standardization: Standardization { x_mean: vec![0.0; d], x_scale: vec![1.0; d], y_mean: 0.0, y_scale: 1.0 },
        }
    }

    fn random_problem(n: usize, d: usize, seed: u64) -> (Dataset, LatentPosterior) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::<f64>::from_fn(n, d, |_, _| rng.gen_range(-1.5..1.5));
        let y = DVector::<f64>::from_fn(n, |i, _| {
            (0..d).map(|j| (x[(i, j)] * (j + 1) as f64).sin()).sum::<f64>() + 0.2 * rng.gen_range(-1.0..1.0)
        });
        let ds = exact_dataset(x, y);
        let h = HyperParams::new(-1.5, 0.3, (0..d).map(|j| -0.2 - 0.1 * j as f64).collect(), None, (0..d).collect())
            .unwrap();
        let lp = latent_posterior(&ds, &h, 0.05).unwrap();
        (ds, lp)
    }

    fn sub_h(subset: &[usize], extra: f64) -> HyperParams {
        HyperParams::new(-1.0, 0.1, subset.iter().map(|&j| 0.1 * j as f64).collect(), Some(extra.ln()), subset.to_vec())
            .unwrap()
    }

    #[test]
    fn kl_scalar_case() {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        let kl =
            gaussian_kl(&DVector::from_element(1, 0.0), &one(1.0), &DVector::from_element(1, 1.0), &one(2.0)).unwrap();
        assert!((kl - 0.5 * 2f64.ln()).abs() < 1e-14);
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let m = DVector::from_vec(vec![0.5, -1.0]);
        assert_eq!(gaussian_kl(&m, &s, &m, &s).unwrap(), 0.0);
    }

    #[test]
    fn submodel_identities() {
        let (ds, lp) = random_problem(20, 3, 1);
        let h = sub_h(&[0, 2], 0.05);
        let (mu_p, sigma_p) = submodel_posterior(&lp, &ds, &h).unwrap();
        let k = full_cov(&ds.x, &ds.x, &h, true).unwrap().values;
        let s2 = lp.noise_var;
        let mut ky = k.clone();
        for i in 0..20 {
            ky[(i, i)] += s2;
        }
        let ky_inv = ky.clone().try_inverse().unwrap();
        let direct = &k * &ky_inv * s2;
        assert!((&sigma_p - &direct).norm() / direct.norm() < 1e-8);
        let inv = sigma_p.clone().try_inverse().unwrap();
        let oracle = DMatrix::identity(20, 20) / s2 + k.clone().try_inverse().unwrap();
        assert!((&inv - &oracle).norm() / oracle.norm() < 1e-6);
        let v = &sigma_p * &ds.y / s2;
        assert!((&v - &mu_p).norm() / mu_p.norm() < 1e-8);
        let (e, _) = kl_objective(&lp, &ds, &h).unwrap();
        let kl = gaussian_kl(&lp.mu, &lp.sigma, &mu_p, &sigma_p).unwrap();
        assert!((e - 2.0 * kl).abs() / e < 1e-8);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let (ds, lp) = random_problem(20, 3, 2);
        let h = sub_h(&[0, 1], 0.02);
        let (_, g) = kl_objective(&lp, &ds, &h).unwrap();
        let x = h.to_flat();
        for k in 0..x.len() {
            let step = 1e-5;
            let mut up = x.clone();
            up[k] += step;
            let mut dn = x.clone();
            dn[k] -= step;
            let fd = (kl_objective(&lp, &ds, &h.with_flat(&up)).unwrap().0
                - kl_objective(&lp, &ds, &h.with_flat(&dn)).unwrap().0)
                / (2.0 * step);
            let rel = (g[k] - fd).abs() / fd.abs().max(1e-4);
            assert!(rel < 1e-4, "param {k}: {} vs {fd}", g[k]);
        }
    }

    #[test]
    fn null_model_tracks_targets() {
        let (ds, lp) = random_problem(15, 2, 3);
        // const ≈ 0, σ₀² ≫ σ²
        let h = HyperParams::new(-700.0, 0.0, vec![], Some(5f64.ln()), vec![]).unwrap();
        let (mu_p, _) = submodel_posterior(&lp, &ds, &h).unwrap();
        let ratio = 5.0 / (5.0 + lp.noise_var);
        assert!((&mu_p - &ds.y * ratio).abs().max() < 1e-12);
        assert!((&mu_p - &ds.y).abs().max() < 0.02 * ds.y.abs().max());
    }

    #[test]
    fn predictive_divergence_limits() {
        let (ds, lp) = random_problem(15, 2, 4);
        let r = Reference::new(&lp, &ds).unwrap();
        let mut h = lp.hyper.clone();
        h.log_extra_noise = Some(1e-10f64.ln());
        let (e, _) = r.objective(&h).unwrap();
        assert!((r.predictive_divergence(&h).unwrap() - 0.5 * e).abs() < 1e-6);
        // null model with const ≈ 0 has zero cross-covariance, so μ′⊥ = 0
        let h0 = HyperParams::new(-700.0, 0.0, vec![], Some(0.5), vec![]).unwrap();
        let delta = r.predictive_divergence(&h0).unwrap();
        let sigma_p = DMatrix::identity(15, 15) * h0.extra_noise().unwrap();
        let oracle = gaussian_kl(&lp.mu, &lp.sigma, &DVector::zeros(15), &sigma_p).unwrap();
        assert!((delta - oracle).abs() < 1e-9 * oracle);
    }

    #[test]
    fn self_projection_is_near_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::<f64>::from_fn(40, 2, |_, _| rng.gen_range(-1.0..1.0));
        let y =
            DVector::<f64>::from_fn(40, |i, _| (2.0 * x[(i, 0)]).sin() + x[(i, 1)] + 0.1 * rng.gen_range(-1.0..1.0));
        let ds = Dataset::from_raw(x, y, default_names(2)).unwrap();
        let fit = fit_ml2(&ds, 2, 0).unwrap();
        let lp = latent_posterior(&ds, &fit.hyper, fit.noise_var).unwrap();
        let mut init = fit.hyper.clone();
        init.log_extra_noise = Some(1e-8f64.ln());
        let sm = project(&lp, &ds, &[0, 1], Some(&init)).unwrap();
        assert!(sm.posterior_kl < 1e-4, "{}", sm.posterior_kl);
        assert!(sm.predictive_divergence >= 0.0);
    }

    #[test]
    fn nested_warm_start_does_not_increase_kl() {
        let (ds, lp) = random_problem(25, 3, 6);
        let r = Reference::new(&lp, &ds).unwrap();
        let parent = r.project(&[1], None).unwrap();
        let mut init = parent.h.restricted(&[0, 1], INERT_LOG_LENGTHSCALE);
        init.log_extra_noise = parent.h.log_extra_noise;
        let child = r.project(&[0, 1], Some(&init)).unwrap();
        assert!(child.posterior_kl <= parent.posterior_kl + 1e-6);
    }

    #[test]
    fn empty_subset_projection() {
        let (ds, lp) = random_problem(15, 2, 7);
        let sm = project(&lp, &ds, &[], None).unwrap();
        assert_eq!(sm.h.n_params(), 2);
        assert!(sm.posterior_kl >= 0.0 && sm.predictive_divergence >= 0.0);
        assert!(project(&lp, &ds, &[1, 0], None).is_err());
        assert!(project(&lp, &ds, &[2], None).is_err());
    }

    #[test]
    fn linear_projection_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = DMatrix::<f64>::from_fn(30, 3, |_, _| rng.gen_range(-1.0..1.0));
        let w = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let full = project_linear(&x, &x, &w, 0.1).unwrap();
        assert!((&full.w_perp - &w).abs().max() < 1e-10);
        assert!((full.sigma2_perp - 0.1).abs() < 1e-10);
        let empty = project_linear(&x, &DMatrix::zeros(30, 0), &w, 0.1).unwrap();
        assert!((empty.sigma2_perp - 0.1 - (&x * &w).norm_squared() / 30.0).abs() < 1e-10);

        // orthogonal design: columns of a scaled identity pattern
        let q = DMatrix::from_fn(6, 3, |i, j| if i % 3 == j { 1.0 } else { 0.0 });
        let sub = q.columns(0, 2).into_owned();
        let p = project_linear(&q, &sub, &w, 0.1).unwrap();
        assert!((p.w_perp[0] - 1.0).abs() < 1e-12 && (p.w_perp[1] + 2.0).abs() < 1e-12);
        assert!((p.sigma2_perp - (0.1 + 0.25 * 2.0 / 6.0)).abs() < 1e-12);

        let dup = DMatrix::from_fn(6, 2, |i, _| i as f64);
        assert!(matches!(project_linear(&q, &dup, &w, 0.1), Err(Error::SingularDesign(_))));
    }

    #[test]
    fn reference_must_match_data() {
        let (ds, lp) = random_problem(10, 2, 9);
        let (small, _) = random_problem(8, 2, 9);
        assert!(Reference::new(&lp, &small).is_err());
        let bad = LatentPosterior { noise_var: 0.0, source: PosteriorSource::Ml2, ..lp.clone() };
        assert!(Reference::new(&bad, &ds).is_err());
    }
}
