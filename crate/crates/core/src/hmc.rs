//! Hamiltonian Monte Carlo over the full-model hyperparameters and the
//! moment-matched latent posterior integrated over the draws.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gp::{latent_moments, LatentPosterior, MarginalLikelihood, PosteriorSource, LOG_PARAM_BOUND};
use crate::kernel::HyperParams;
use crate::linalg::symmetrize;
use crate::par;

/// Post-warmup acceptance below this is reported as a sampler failure.
pub const MIN_ACCEPTANCE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_samples: usize,
    pub n_warmup: usize,
    pub leapfrog_steps: usize,
    /// Initial step size; adapted during warmup.
    pub step_size: f64,
    pub target_accept: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { n_samples: 30, n_warmup: 200, leapfrog_steps: 20, step_size: 0.05, target_accept: 0.8, seed: 0 }
    }
}

impl SamplerConfig {
    fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.leapfrog_steps == 0 || !(self.step_size > 0.0) {
            return Err(Error::InvalidArgument(
                "sampler needs n_samples >= 1, leapfrog_steps >= 1 and step_size > 0".into(),
            ));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidArgument("target acceptance must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// One posterior draw: `[log const, log σ_f², log ℓ_1..D, log σ²]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperSample {
    pub params: Vec<f64>,
    pub log_density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerDiagnostics {
    pub acceptance_rate: f64,
    pub warmup_acceptance_rate: f64,
    pub step_size: f64,
    /// Trajectories rejected because the density failed to evaluate.
    pub rejected_trajectories: usize,
    /// Leapfrog position updates that reflected off a wall of the prior box.
    pub boundary_reflections: usize,
}

#[derive(Clone, Debug)]
pub struct HmcRun {
    pub samples: Vec<HyperSample>,
    pub diagnostics: SamplerDiagnostics,
}

/// Differentiable unnormalized log density.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    /// `None` where the density cannot be evaluated.
    fn log_density_grad(&self, q: &[f64]) -> Option<(f64, Vec<f64>)>;
}

struct GpPosterior<'a> {
    ml: MarginalLikelihood<'a>,
}

impl LogDensity for GpPosterior<'_> {
    fn dim(&self) -> usize {
        self.ml.dim()
    }

    fn log_density_grad(&self, q: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.ml.eval(q).ok()
    }
}

// Dual averaging constants (Hoffman & Gelman defaults).
const DA_GAMMA: f64 = 0.05;
const DA_T0: f64 = 10.0;
const DA_KAPPA: f64 = 0.75;

struct DualAveraging {
    mu: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    m: f64,
    target: f64,
}

impl DualAveraging {
    fn new(eps0: f64, target: f64) -> Self {
        DualAveraging { mu: (10.0 * eps0).ln(), h_bar: 0.0, log_eps: eps0.ln(), log_eps_bar: 0.0, m: 0.0, target }
    }

    fn update(&mut self, accept_prob: f64) {
        self.m += 1.0;
        let w = 1.0 / (self.m + DA_T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        self.log_eps = self.mu - self.m.sqrt() / DA_GAMMA * self.h_bar;
        let eta = self.m.powf(-DA_KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
    }
}

fn in_bounds(q: &[f64], bounds: &[(f64, f64)]) -> bool {
    q.iter().zip(bounds).all(|(v, &(lo, hi))| *v >= lo && *v <= hi)
}

/// Runs one adaptive HMC chain on `target`, starting from `init`. The prior
/// is flat on the box `bounds`; trajectories reflect off its walls, which
/// keeps the leapfrog map reversible and volume preserving.
pub fn hmc_run<T: LogDensity>(target: &T, cfg: &SamplerConfig, init: &[f64], bounds: &[(f64, f64)]) -> Result<HmcRun> {
    cfg.validate()?;
    let dim = target.dim();
    if init.len() != dim || bounds.len() != dim {
        return Err(Error::InvalidArgument("initial point or bounds have the wrong dimension".into()));
    }
    if !in_bounds(init, bounds) {
        return Err(Error::InvalidArgument("initial point outside the prior box".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut logp, mut grad) = target
        .log_density_grad(init)
        .filter(|(v, g)| v.is_finite() && g.iter().all(|x| x.is_finite()))
        .ok_or_else(|| Error::IllConditioned("log density not finite at the initial point".into()))?;
    let mut q = init.to_vec();
    let mut adapt = DualAveraging::new(cfg.step_size, cfg.target_accept);
    let mut eps = cfg.step_size;
    let mut samples = Vec::with_capacity(cfg.n_samples);
    let (mut acc_warm, mut acc_main, mut failed, mut reflections) = (0.0, 0.0, 0usize, 0usize);

    for iter in 0..(cfg.n_warmup + cfg.n_samples) {
        let warm = iter < cfg.n_warmup;
        let step = eps * rng.gen_range(0.9..1.1);
        let p0: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let kinetic0 = 0.5 * p0.iter().map(|v| v * v).sum::<f64>();

        let proposal = leapfrog(target, &q, &p0, &grad, step, cfg.leapfrog_steps, bounds, &mut reflections);
        let accept_prob = match &proposal {
            Some((_, p1, lp1, _)) => {
                let kinetic1 = 0.5 * p1.iter().map(|v| v * v).sum::<f64>();
                let log_ratio = (lp1 - kinetic1) - (logp - kinetic0);
                if log_ratio.is_nan() {
                    0.0
                } else {
                    log_ratio.min(0.0).exp()
                }
            }
            None => {
                failed += 1;
                0.0
            }
        };
        let u: f64 = rng.gen();
        if let Some((q1, _, lp1, g1)) = proposal {
            if u < accept_prob {
                q = q1;
                logp = lp1;
                grad = g1;
            }
        }
        if warm {
            acc_warm += accept_prob;
            adapt.update(accept_prob);
            eps = adapt.log_eps.exp();
            if iter + 1 == cfg.n_warmup {
                eps = adapt.log_eps_bar.exp();
            }
        } else {
            acc_main += accept_prob;
            samples.push(HyperSample { params: q.clone(), log_density: logp });
        }
    }

    let diagnostics = SamplerDiagnostics {
        acceptance_rate: acc_main / cfg.n_samples as f64,
        warmup_acceptance_rate: if cfg.n_warmup > 0 { acc_warm / cfg.n_warmup as f64 } else { f64::NAN },
        step_size: eps,
        rejected_trajectories: failed,
        boundary_reflections: reflections,
    };
    if diagnostics.acceptance_rate < MIN_ACCEPTANCE {
        return Err(Error::SamplerDiagnostic { acceptance_rate: diagnostics.acceptance_rate, step_size: eps });
    }
    Ok(HmcRun { samples, diagnostics })
}

type Trajectory = (Vec<f64>, Vec<f64>, f64, Vec<f64>);

#[allow(clippy::too_many_arguments)]
fn leapfrog<T: LogDensity>(
    target: &T,
    q0: &[f64],
    p0: &[f64],
    g0: &[f64],
    step: f64,
    n_steps: usize,
    bounds: &[(f64, f64)],
    reflections: &mut usize,
) -> Option<Trajectory> {
    let mut q = q0.to_vec();
    let mut p: Vec<f64> = p0.iter().zip(g0).map(|(p, g)| p + 0.5 * step * g).collect();
    let mut last = None;
    for s in 0..n_steps {
        for ((qi, pi), &(lo, hi)) in q.iter_mut().zip(p.iter_mut()).zip(bounds) {
            *qi += step * *pi;
            if !qi.is_finite() {
                return None;
            }
            while *qi < lo || *qi > hi {
                *qi = if *qi < lo { 2.0 * lo - *qi } else { 2.0 * hi - *qi };
                *pi = -*pi;
                *reflections += 1;
            }
        }
        let (lp, g) = target.log_density_grad(&q).filter(|(v, g)| v.is_finite() && g.iter().all(|x| x.is_finite()))?;
        let scale = if s + 1 == n_steps { 0.5 } else { 1.0 };
        p.iter_mut().zip(&g).for_each(|(pi, gi)| *pi += scale * step * gi);
        last = Some((lp, g));
    }
    let (lp, g) = last?;
    Some((q, p, lp, g))
}

/// Samples the full-model hyperparameters (all inputs, log-uniform prior on
/// `[−10, 10]` per coordinate) starting from `init` and `noise_var`.
pub fn hmc_sample(d: &Dataset, cfg: &SamplerConfig, init: &HyperParams, noise_var: f64) -> Result<HmcRun> {
    let template = full_template(d.n_inputs());
    if init.active_inputs != template.active_inputs || init.log_extra_noise.is_some() {
        return Err(Error::InvalidArgument("HMC initial point must cover all inputs without extra noise".into()));
    }
    let ml = MarginalLikelihood::new(d, &template)?;
    let mut q0 = init.to_flat();
    q0.push(noise_var.ln());
    let bounds = vec![(-LOG_PARAM_BOUND, LOG_PARAM_BOUND); q0.len()];
    q0.iter_mut().for_each(|v| *v = v.clamp(-LOG_PARAM_BOUND, LOG_PARAM_BOUND));
    hmc_run(&GpPosterior { ml }, cfg, &q0, &bounds)
}

fn full_template(d: usize) -> HyperParams {
    HyperParams {
        log_const_var: 0.0,
        log_magnitude: 0.0,
        log_lengthscales: vec![0.0; d],
        log_extra_noise: None,
        active_inputs: (0..d).collect(),
    }
}

/// Splits flat sample parameters into kernel hyperparameters and noise.
pub fn sample_hyper(d: usize, s: &HyperSample) -> Result<(HyperParams, f64)> {
    let t = full_template(d);
    if s.params.len() != t.n_params() + 1 {
        return Err(Error::InvalidArgument(format!(
            "sample has {} parameters, expected {}",
            s.params.len(),
            t.n_params() + 1
        )));
    }
    let k = t.n_params();
    Ok((t.with_flat(&s.params[..k]), s.params[k].exp()))
}

struct Moments {
    sum_mu: DVector<f64>,
    sum_second: DMatrix<f64>,
    sum_noise: f64,
    sum_params: Vec<f64>,
    count: usize,
    failed: usize,
}

impl Moments {
    fn merge(a: Option<Moments>, b: Option<Moments>) -> Option<Moments> {
        match (a, b) {
            (Some(mut a), Some(b)) => {
                if b.count > 0 {
                    if a.count == 0 {
                        a.sum_mu = b.sum_mu;
                        a.sum_second = b.sum_second;
                        a.sum_params = b.sum_params;
                    } else {
                        a.sum_mu += b.sum_mu;
                        a.sum_second += b.sum_second;
                        a.sum_params.iter_mut().zip(&b.sum_params).for_each(|(x, y)| *x += y);
                    }
                    a.sum_noise += b.sum_noise;
                }
                a.count += b.count;
                a.failed += b.failed;
                Some(a)
            }
            (a, None) => a,
            (None, b) => b,
        }
    }
}

/// Moment-matched Gaussian of the mixture of per-sample latent posteriors:
/// `μ = mean μ_s`, `Σ = mean(Σ_s + μ_s μ_sᵀ) − μμᵀ`, noise variance the mean
/// of the sampled σ². Sums run over a canonical ordering of the samples with
/// pairwise reduction, so the result does not depend on sample order.
pub fn integrate_latent(d: &Dataset, samples: &[HyperSample]) -> Result<LatentPosterior> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to integrate".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| cmp_params(&samples[a].params, &samples[b].params));
    let parsed: Vec<(HyperParams, f64)> =
        order.iter().map(|&i| sample_hyper(d.n_inputs(), &samples[i])).collect::<Result<_>>()?;

    let m = pairwise(&parsed, d).expect("non-empty sample set");
    if m.count == 0 || m.failed * 2 > parsed.len() {
        return Err(Error::Integration(format!(
            "{} of {} samples failed to produce a latent posterior",
            m.failed,
            parsed.len()
        )));
    }
    let c = m.count as f64;
    let mu = m.sum_mu / c;
    let mut sigma = m.sum_second / c;
    sigma.ger(-1.0, &mu, &mu, 1.0);
    symmetrize(&mut sigma);
    let mean_params: Vec<f64> = m.sum_params.iter().map(|v| v / c).collect();
    let k = mean_params.len() - 1;
    let hyper = full_template(d.n_inputs()).with_flat(&mean_params[..k]);
    Ok(LatentPosterior { mu, sigma, noise_var: m.sum_noise / c, source: PosteriorSource::Integrated, hyper })
}

fn cmp_params(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

fn pairwise(items: &[(HyperParams, f64)], d: &Dataset) -> Option<Moments> {
    match items.len() {
        0 => None,
        1 => {
            let (h, noise) = &items[0];
            let n = d.n();
            Some(match latent_moments(d, h, *noise) {
                Ok((mu, sigma)) => {
                    let mut second = sigma;
                    second.ger(1.0, &mu, &mu, 1.0);
                    let mut params = h.to_flat();
                    params.push(noise.ln());
                    Moments {
                        sum_mu: mu,
                        sum_second: second,
                        sum_noise: *noise,
                        sum_params: params,
                        count: 1,
                        failed: 0,
                    }
                }
                Err(_) => Moments {
                    sum_mu: DVector::zeros(n),
                    sum_second: DMatrix::zeros(n, n),
                    sum_noise: 0.0,
                    sum_params: Vec::new(),
                    count: 0,
                    failed: 1,
                },
            })
        }
        len => {
            let (left, right) = items.split_at(len / 2);
            let (a, b) = par::join(|| pairwise(left, d), || pairwise(right, d));
            Moments::merge(a, b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::default_names;
    use crate::gp::latent_posterior;

    struct Gaussian {
        mean: Vec<f64>,
        prec: DMatrix<f64>,
    }

    impl LogDensity for Gaussian {
        fn dim(&self) -> usize {
            self.mean.len()
        }
        fn log_density_grad(&self, q: &[f64]) -> Option<(f64, Vec<f64>)> {
            let r = DVector::from_iterator(q.len(), q.iter().zip(&self.mean).map(|(a, b)| a - b));
            let pr = &self.prec * &r;
            Some((-0.5 * r.dot(&pr), pr.iter().map(|v| -v).collect()))
        }
    }

    fn cfg(n: usize, seed: u64) -> SamplerConfig {
        SamplerConfig { n_samples: n, n_warmup: 300, leapfrog_steps: 10, step_size: 0.2, target_accept: 0.8, seed }
    }

    #[test]
    fn standard_normal_moments() {
        let t = Gaussian { mean: vec![0.0], prec: DMatrix::identity(1, 1) };
        let run = hmc_run(&t, &cfg(2000, 1), &[0.5], &[(-50.0, 50.0)]).unwrap();
        let xs: Vec<f64> = run.samples.iter().map(|s| s.params[0]).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(m.abs() < 0.1, "mean {m}");
        assert!((v - 1.0).abs() < 0.15, "var {v}");
        assert!(run.diagnostics.acceptance_rate > 0.5);
    }

    #[test]
    fn correlated_gaussian_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 0.8]);
        let t = Gaussian { mean: vec![1.0, -1.0], prec: cov.clone().try_inverse().unwrap() };
        let run = hmc_run(&t, &cfg(5000, 2), &[0.0, 0.0], &[(-50.0, 50.0); 2]).unwrap();
        let n = run.samples.len() as f64;
        let mut mean = [0.0; 2];
        for s in &run.samples {
            mean[0] += s.params[0] / n;
            mean[1] += s.params[1] / n;
        }
        let mut emp = DMatrix::<f64>::zeros(2, 2);
        for s in &run.samples {
            for i in 0..2 {
                for j in 0..2 {
                    emp[(i, j)] += (s.params[i] - mean[i]) * (s.params[j] - mean[j]) / n;
                }
            }
        }
        assert!((emp - cov).norm() < 0.1);
    }

    #[test]
    fn same_seed_same_chain() {
        let t = Gaussian { mean: vec![0.0, 2.0], prec: DMatrix::identity(2, 2) };
        let a = hmc_run(&t, &cfg(50, 7), &[0.0, 0.0], &[(-9.0, 9.0); 2]).unwrap();
        let b = hmc_run(&t, &cfg(50, 7), &[0.0, 0.0], &[(-9.0, 9.0); 2]).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.diagnostics, b.diagnostics);
    }

    #[test]
    fn box_is_respected() {
        // mass sits far outside the box, so draws crowd the upper wall
        let t = Gaussian { mean: vec![5.0], prec: DMatrix::identity(1, 1) };
        let run = hmc_run(&t, &cfg(200, 3), &[0.0], &[(-1.0, 1.0)]).unwrap();
        assert!(run.samples.iter().all(|s| s.params[0].abs() <= 1.0));
        assert!(run.diagnostics.boundary_reflections > 0);
        let m = run.samples.iter().map(|s| s.params[0]).sum::<f64>() / 200.0;
        assert!(m > 0.3, "mean {m}");
    }

    struct Flat;

    impl LogDensity for Flat {
        fn dim(&self) -> usize {
            1
        }
        fn log_density_grad(&self, _: &[f64]) -> Option<(f64, Vec<f64>)> {
            Some((0.0, vec![0.0]))
        }
    }

    #[test]
    fn reflection_samples_uniform_box() {
        let c = SamplerConfig { n_warmup: 0, step_size: 0.37, ..cfg(20_000, 5) };
        let run = hmc_run(&Flat, &c, &[0.0], &[(-1.0, 2.0)]).unwrap();
        let xs: Vec<f64> = run.samples.iter().map(|s| s.params[0]).collect();
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        assert!((m - 0.5).abs() < 0.05, "mean {m}");
        assert!((v - 0.75).abs() < 0.05, "var {v}");
        assert!(run.diagnostics.acceptance_rate > 0.999);
    }

    #[test]
    fn low_acceptance_is_reported() {
        let t = Gaussian { mean: vec![0.0], prec: DMatrix::identity(1, 1) };
        let c = SamplerConfig { n_warmup: 0, step_size: 50.0, ..cfg(50, 4) };
        assert!(matches!(hmc_run(&t, &c, &[0.0], &[(-1e4, 1e4)]), Err(Error::SamplerDiagnostic { .. })));
    }

    fn small_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::<f64>::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
        let y = DVector::<f64>::from_fn(n, |i, _| x[(i, 0)].sin() * 2.0 + 0.2 * rng.gen_range(-1.0..1.0));
        Dataset::from_raw(x, y, default_names(2)).unwrap()
    }

    fn sample_of(h: &HyperParams, noise: f64) -> HyperSample {
        let mut params = h.to_flat();
        params.push(noise.ln());
        HyperSample { params, log_density: 0.0 }
    }

    #[test]
    fn single_sample_integration_is_latent_posterior() {
        let d = small_dataset(15, 1);
        let h = HyperParams::new(-1.0, 0.2, vec![0.1, 0.5], None, vec![0, 1]).unwrap();
        let lp = latent_posterior(&d, &h, 0.1).unwrap();
        let ip = integrate_latent(&d, &[sample_of(&h, 0.1)]).unwrap();
        assert!((&ip.mu - &lp.mu).abs().max() < 1e-12);
        assert!((&ip.sigma - &lp.sigma).abs().max() < 1e-12);
        assert!((ip.noise_var - 0.1).abs() < 1e-15);
        assert_eq!(ip.source, PosteriorSource::Integrated);
    }

    #[test]
    fn two_sample_mixture_gains_rank_one_term() {
        let d = small_dataset(12, 2);
        // identical kernels, different noise → different means but not identical Σ;
        // build the oracle from the per-sample moments directly
        let h = HyperParams::new(-1.0, 0.2, vec![0.1, 0.5], None, vec![0, 1]).unwrap();
        let (s1, s2) = (sample_of(&h, 0.05), sample_of(&h, 0.5));
        let a = latent_posterior(&d, &h, 0.05).unwrap();
        let b = latent_posterior(&d, &h, 0.5).unwrap();
        let ip = integrate_latent(&d, &[s1, s2]).unwrap();
        let diff = &a.mu - &b.mu;
        let oracle = (&a.sigma + &b.sigma) * 0.5 + &diff * diff.transpose() * 0.25;
        assert!((&ip.sigma - &oracle).abs().max() < 1e-10);
        assert!((ip.noise_var - 0.275).abs() < 1e-15);
        // Σ − mean Σ_s is PSD
        let excess = &ip.sigma - (&a.sigma + &b.sigma) * 0.5;
        assert!(excess.symmetric_eigenvalues().min() > -1e-10);
    }

    #[test]
    fn integration_is_order_invariant() {
        let d = small_dataset(10, 3);
        let samples: Vec<HyperSample> = (0..5)
            .map(|k| {
                let h =
                    HyperParams::new(-1.0, 0.1 * k as f64, vec![0.1, -0.2 + 0.1 * k as f64], None, vec![0, 1]).unwrap();
                sample_of(&h, 0.05 + 0.02 * k as f64)
            })
            .collect();
        let a = integrate_latent(&d, &samples).unwrap();
        let mut rev = samples.clone();
        rev.reverse();
        rev.swap(0, 2);
        let b = integrate_latent(&d, &rev).unwrap();
        assert_eq!(a.mu, b.mu);
        assert_eq!(a.sigma, b.sigma);
        assert_eq!(a.noise_var, b.noise_var);
    }

    #[test]
    fn integration_rejects_bad_input() {
        let d = small_dataset(10, 4);
        assert!(integrate_latent(&d, &[]).is_err());
        let bad = HyperSample { params: vec![0.0; 3], log_density: 0.0 };
        assert!(integrate_latent(&d, &[bad]).is_err());
    }

    #[test]
    fn gp_sampler_produces_finite_draws() {
        let d = small_dataset(30, 5);
        let init = HyperParams::new(-2.0, 0.0, vec![0.0, 0.0], None, vec![0, 1]).unwrap();
        let c = SamplerConfig { n_samples: 20, n_warmup: 60, leapfrog_steps: 10, ..Default::default() };
        let a = hmc_sample(&d, &c, &init, 0.1).unwrap();
        let b = hmc_sample(&d, &c, &init, 0.1).unwrap();
        assert_eq!(a.samples, b.samples);
        assert!(a.samples.iter().all(|s| s.log_density.is_finite()));
        assert!(a.samples.iter().all(|s| s.params.iter().all(|v| v.abs() <= LOG_PARAM_BOUND)));
        let lp = integrate_latent(&d, &a.samples).unwrap();
        assert!(lp.noise_var > 0.0);
    }
}
