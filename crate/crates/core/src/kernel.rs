//! Constant + squared-exponential ARD covariance with an optional extra
//! diagonal variance, parameterized in the log domain.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_dot, symmetrize};

/// Log-domain kernel hyperparameters for one active input set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub log_const_var: f64,
    pub log_magnitude: f64,
    pub log_lengthscales: Vec<f64>,
    pub log_extra_noise: Option<f64>,
    pub active_inputs: Vec<usize>,
}

/// Identifies one free hyperparameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamId {
    ConstVar,
    Magnitude,
    /// Length-scale of the given input (column index in the full input space).
    LengthScale(usize),
    ExtraNoise,
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamId::ConstVar => write!(f, "log_const_var"),
            ParamId::Magnitude => write!(f, "log_magnitude"),
            ParamId::LengthScale(j) => write!(f, "log_lengthscale[{j}]"),
            ParamId::ExtraNoise => write!(f, "log_extra_noise"),
        }
    }
}

impl FromStr for ParamId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log_const_var" => Ok(ParamId::ConstVar),
            "log_magnitude" => Ok(ParamId::Magnitude),
            "log_extra_noise" => Ok(ParamId::ExtraNoise),
            _ => s
                .strip_prefix("log_lengthscale[")
                .and_then(|r| r.strip_suffix(']'))
                .and_then(|r| r.parse().ok())
                .map(ParamId::LengthScale)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{s}`"))),
        }
    }
}

impl HyperParams {
    pub fn new(
        log_const_var: f64,
        log_magnitude: f64,
        log_lengthscales: Vec<f64>,
        log_extra_noise: Option<f64>,
        active_inputs: Vec<usize>,
    ) -> Result<Self> {
        let h = HyperParams { log_const_var, log_magnitude, log_lengthscales, log_extra_noise, active_inputs };
        h.validate(None)?;
        Ok(h)
    }

    /// Checks the structural invariants; `n_inputs` additionally bounds the
    /// active indices.
    pub fn validate(&self, n_inputs: Option<usize>) -> Result<()> {
        if self.log_lengthscales.len() != self.active_inputs.len() {
            return Err(Error::InvalidArgument(format!(
                "{} length-scales for {} active inputs",
                self.log_lengthscales.len(),
                self.active_inputs.len()
            )));
        }
        if self.active_inputs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("active inputs must be strictly increasing".into()));
        }
        if let (Some(d), Some(&last)) = (n_inputs, self.active_inputs.last()) {
            if last >= d {
                return Err(Error::InvalidArgument(format!("active input {last} outside [0, {d})")));
            }
        }
        let finite = self.to_flat().iter().all(|v| v.is_finite() && v.exp().is_finite());
        if !finite {
            return Err(Error::InvalidArgument("non-finite hyperparameter".into()));
        }
        Ok(())
    }

    pub fn const_var(&self) -> f64 {
        self.log_const_var.exp()
    }

    pub fn magnitude(&self) -> f64 {
        self.log_magnitude.exp()
    }

    pub fn extra_noise(&self) -> Option<f64> {
        self.log_extra_noise.map(f64::exp)
    }

    pub fn lengthscale(&self, input: usize) -> Option<f64> {
        self.position(input).map(|p| self.log_lengthscales[p].exp())
    }

    fn position(&self, input: usize) -> Option<usize> {
        self.active_inputs.binary_search(&input).ok()
    }

    /// The SE term is present only when at least one input is active; with no
    /// inputs the model is constant plus diagonal variance.
    pub fn has_se(&self) -> bool {
        !self.active_inputs.is_empty()
    }

    /// Free parameters in flat order: const, magnitude (if any input is
    /// active), one length-scale per active input, extra noise (if present).
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![ParamId::ConstVar];
        if self.has_se() {
            ids.push(ParamId::Magnitude);
            ids.extend(self.active_inputs.iter().map(|&j| ParamId::LengthScale(j)));
        }
        if self.log_extra_noise.is_some() {
            ids.push(ParamId::ExtraNoise);
        }
        ids
    }

    pub fn n_params(&self) -> usize {
        1 + if self.has_se() { 1 + self.active_inputs.len() } else { 0 } + usize::from(self.log_extra_noise.is_some())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        v.push(self.log_const_var);
        if self.has_se() {
            v.push(self.log_magnitude);
            v.extend_from_slice(&self.log_lengthscales);
        }
        if let Some(e) = self.log_extra_noise {
            v.push(e);
        }
        v
    }

    /// Inverse of [`HyperParams::to_flat`] using `self` as the layout template.
    pub fn with_flat(&self, flat: &[f64]) -> HyperParams {
        debug_assert_eq!(flat.len(), self.n_params());
        let mut h = self.clone();
        let mut it = flat.iter().copied();
        h.log_const_var = it.next().unwrap();
        if h.has_se() {
            h.log_magnitude = it.next().unwrap();
            for l in h.log_lengthscales.iter_mut() {
                *l = it.next().unwrap();
            }
        }
        if h.log_extra_noise.is_some() {
            h.log_extra_noise = it.next();
        }
        h
    }

    /// Restricts to `subset` (a subset of the active inputs); inputs not
    /// currently active get `default_log_lengthscale`.
    pub fn restricted(&self, subset: &[usize], default_log_lengthscale: f64) -> HyperParams {
        let log_lengthscales = subset
            .iter()
            .map(|&j| self.position(j).map_or(default_log_lengthscale, |p| self.log_lengthscales[p]))
            .collect();
        HyperParams {
            log_const_var: self.log_const_var,
            log_magnitude: self.log_magnitude,
            log_lengthscales,
            log_extra_noise: self.log_extra_noise,
            active_inputs: subset.to_vec(),
        }
    }
}

/// A covariance matrix between two point sets.
#[derive(Clone, Debug)]
pub struct CovMatrix {
    pub values: DMatrix<f64>,
    pub symmetric: bool,
}

/// Per-input squared-difference matrices between two point sets, computed once
/// and reused across kernel and gradient evaluations.
#[derive(Clone, Debug)]
pub struct PairGeometry {
    inputs: Vec<usize>,
    sq: Vec<DMatrix<f64>>,
    symmetric: bool,
    n1: usize,
    n2: usize,
}

impl PairGeometry {
    /// Geometry between the rows of `x1` and `x2` over the listed input columns.
    pub fn new(x1: &DMatrix<f64>, x2: &DMatrix<f64>, inputs: &[usize]) -> Result<Self> {
        if x1.ncols() != x2.ncols() {
            return Err(Error::InvalidArgument(format!("point sets have {} and {} columns", x1.ncols(), x2.ncols())));
        }
        if let Some(&bad) = inputs.iter().find(|&&j| j >= x1.ncols()) {
            return Err(Error::InvalidArgument(format!("input {bad} outside point set with {} columns", x1.ncols())));
        }
        if x1.iter().chain(x2.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite point coordinates".into()));
        }
        let symmetric = x1.shape() == x2.shape() && x1 == x2;
        let (n1, n2) = (x1.nrows(), x2.nrows());
        let sq = inputs
            .iter()
            .map(|&j| {
                let c1 = x1.column(j);
                let c2 = x2.column(j);
                DMatrix::from_fn(n1, n2, |a, b| {
                    let d = c1[a] - c2[b];
                    d * d
                })
            })
            .collect();
        Ok(PairGeometry { inputs: inputs.to_vec(), sq, symmetric, n1, n2 })
    }

    pub fn symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    fn sq_for(&self, input: usize) -> Result<&DMatrix<f64>> {
        self.inputs
            .iter()
            .position(|&j| j == input)
            .map(|p| &self.sq[p])
            .ok_or_else(|| Error::InvalidArgument(format!("input {input} not covered by the point-set geometry")))
    }

    /// SE-ARD part `σ_f² exp(−½ Σ_d Δ²_d / ℓ_d²)`. Zero when no input is active.
    pub fn se(&self, h: &HyperParams) -> Result<DMatrix<f64>> {
        if !h.has_se() {
            return Ok(DMatrix::zeros(self.n1, self.n2));
        }
        let mut expo = DMatrix::<f64>::zeros(self.n1, self.n2);
        for (&j, &log_l) in h.active_inputs.iter().zip(&h.log_lengthscales) {
            let inv_l2 = (-2.0 * log_l).exp();
            let sq = self.sq_for(j)?;
            for (e, s) in expo.as_mut_slice().iter_mut().zip(sq.as_slice()) {
                *e += s * inv_l2;
            }
        }
        let mag = h.magnitude();
        expo.apply(|e| *e = mag * (-0.5 * *e).exp());
        if self.symmetric {
            symmetrize(&mut expo);
        }
        Ok(expo)
    }

    /// Constant + SE (+ extra diagonal variance on symmetric geometry).
    pub fn full(&self, h: &HyperParams, include_extra_noise: bool) -> Result<DMatrix<f64>> {
        let se = self.se(h)?;
        self.assemble(h, se, include_extra_noise)
    }

    /// Adds the constant and optional diagonal terms to a precomputed SE part.
    pub fn assemble(&self, h: &HyperParams, mut se: DMatrix<f64>, include_extra_noise: bool) -> Result<DMatrix<f64>> {
        let c = h.const_var();
        se.apply(|v| *v += c);
        if include_extra_noise {
            let s0 = h
                .extra_noise()
                .ok_or_else(|| Error::InvalidArgument("extra noise requested but log_extra_noise is absent".into()))?;
            if self.symmetric {
                for i in 0..self.n1 {
                    se[(i, i)] += s0;
                }
            }
        }
        Ok(se)
    }

    /// `∂K/∂(log θ)` for one parameter of the full covariance, given its SE part.
    pub fn grad(&self, h: &HyperParams, se: &DMatrix<f64>, which: ParamId) -> Result<DMatrix<f64>> {
        check_param(h, which)?;
        Ok(match which {
            ParamId::ConstVar => DMatrix::from_element(self.n1, self.n2, h.const_var()),
            ParamId::Magnitude => se.clone(),
            ParamId::LengthScale(j) => {
                let inv_l2 = 1.0 / h.lengthscale(j).unwrap().powi(2);
                se.component_mul(self.sq_for(j)?) * inv_l2
            }
            ParamId::ExtraNoise => {
                let s0 = h.extra_noise().unwrap();
                let mut m = DMatrix::zeros(self.n1, self.n2);
                if self.symmetric {
                    for i in 0..self.n1 {
                        m[(i, i)] = s0;
                    }
                }
                m
            }
        })
    }

    /// `Σ_ij W_ij ∂K_ij/∂(log θ)` for every free parameter, in flat order,
    /// without forming the gradient matrices.
    pub fn grad_contract(&self, h: &HyperParams, se: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(h.n_params());
        out.push(h.const_var() * w.sum());
        if h.has_se() {
            let ws = w.component_mul(se);
            out.push(ws.sum());
            for &j in &h.active_inputs {
                let inv_l2 = 1.0 / h.lengthscale(j).unwrap().powi(2);
                out.push(frobenius_dot(&ws, self.sq_for(j)?) * inv_l2);
            }
        }
        if let Some(s0) = h.extra_noise() {
            out.push(if self.symmetric { s0 * w.trace() } else { 0.0 });
        }
        Ok(out)
    }

    /// Mean of `diag(∂K/∂(log θ))` for each free parameter, in flat order.
    /// Used to differentiate the mean-diagonal-proportional jitter.
    pub fn grad_mean_diag(&self, h: &HyperParams) -> Vec<f64> {
        let mut out = vec![h.const_var()];
        if h.has_se() {
            out.push(h.magnitude());
            out.extend(std::iter::repeat_n(0.0, h.active_inputs.len()));
        }
        if let Some(s0) = h.extra_noise() {
            out.push(if self.symmetric { s0 } else { 0.0 });
        }
        out
    }
}

fn check_param(h: &HyperParams, which: ParamId) -> Result<()> {
    if h.param_ids().contains(&which) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{which} is not a free parameter of this model")))
    }
}

/// SE-ARD covariance between two point sets (columns restricted to the
/// active inputs of `h`).
pub fn se_ard(x1: &DMatrix<f64>, x2: &DMatrix<f64>, h: &HyperParams) -> Result<CovMatrix> {
    h.validate(Some(x1.ncols()))?;
    let geom = PairGeometry::new(x1, x2, &h.active_inputs)?;
    Ok(CovMatrix { values: geom.se(h)?, symmetric: geom.symmetric() })
}

/// Constant + SE-ARD covariance, optionally with the extra diagonal variance
/// when the two point sets coincide.
pub fn full_cov(x1: &DMatrix<f64>, x2: &DMatrix<f64>, h: &HyperParams, include_extra_noise: bool) -> Result<CovMatrix> {
    h.validate(Some(x1.ncols()))?;
    let geom = PairGeometry::new(x1, x2, &h.active_inputs)?;
    Ok(CovMatrix { values: geom.full(h, include_extra_noise)?, symmetric: geom.symmetric() })
}

/// `∂K/∂(log θ)` of the training covariance `full_cov(x, x, h, true)`.
pub fn cov_grad(x: &DMatrix<f64>, h: &HyperParams, which: ParamId) -> Result<DMatrix<f64>> {
    h.validate(Some(x.ncols()))?;
    let geom = PairGeometry::new(x, x, &h.active_inputs)?;
    let se = geom.se(h)?;
    geom.grad(h, &se, which)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hp(c: f64, m: f64, ls: &[f64], e: Option<f64>, act: &[usize]) -> HyperParams {
        HyperParams::new(c, m, ls.to_vec(), e, act.to_vec()).unwrap()
    }

    fn random_points(n: usize, d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |_, _| rng.gen_range(-2.0..2.0))
    }

    // Direct scalar evaluation of the SE formula.
    fn se_scalar(a: &[f64], b: &[f64], mag: f64, ls: &[f64]) -> f64 {
        let s: f64 = a.iter().zip(b).zip(ls).map(|((x, y), l)| (x - y).powi(2) / (l * l)).sum();
        mag * (-0.5 * s).exp()
    }

    #[test]
    fn se_zero_distance_gives_magnitude() {
        let x = DMatrix::from_row_slice(1, 2, &[0.3, -1.2]);
        let h = hp(0.0, 2.5f64.ln(), &[0.0, 0.4], None, &[0, 1]);
        let k = se_ard(&x, &x, &h).unwrap();
        assert!((k.values[(0, 0)] - 2.5).abs() < 1e-14);
        assert!(k.symmetric);
    }

    #[test]
    fn se_long_lengthscale_is_flat() {
        let x1 = DMatrix::from_row_slice(1, 1, &[0.0]);
        let x2 = DMatrix::from_row_slice(1, 1, &[1.0]);
        let h = hp(0.0, 0.0, &[1e6f64.ln()], None, &[0]);
        let k = se_ard(&x1, &x2, &h).unwrap();
        assert!((k.values[(0, 0)] - 1.0).abs() < 1e-10);
        assert!(!k.symmetric);
    }

    #[test]
    fn se_unit_distance() {
        let x1 = DMatrix::from_row_slice(1, 1, &[0.0]);
        let x2 = DMatrix::from_row_slice(1, 1, &[1.0]);
        let h = hp(0.0, 0.0, &[0.0], None, &[0]);
        let k = se_ard(&x1, &x2, &h).unwrap();
        let oracle = se_scalar(&[0.0], &[1.0], 1.0, &[1.0]);
        assert!((k.values[(0, 0)] - oracle).abs() < 1e-15);
        assert!((oracle - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn se_matches_scalar_oracle_on_subset() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x1 = random_points(5, 4, &mut rng);
        let x2 = random_points(3, 4, &mut rng);
        let h = hp(0.0, 0.7, &[0.1, -0.3], None, &[1, 3]);
        let k = se_ard(&x1, &x2, &h).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let a = [x1[(i, 1)], x1[(i, 3)]];
                let b = [x2[(j, 1)], x2[(j, 3)]];
                let o = se_scalar(&a, &b, 0.7f64.exp(), &[0.1f64.exp(), (-0.3f64).exp()]);
                assert!((k.values[(i, j)] - o).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let x1 = DMatrix::<f64>::zeros(3, 2);
        let x2 = DMatrix::<f64>::zeros(3, 3);
        let h = hp(0.0, 0.0, &[0.0], None, &[0]);
        assert!(matches!(se_ard(&x1, &x2, &h), Err(Error::InvalidArgument(_))));
        let h = hp(0.0, 0.0, &[0.0], None, &[5]);
        assert!(matches!(se_ard(&x1, &x1, &h), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn hyperparams_invariants() {
        assert!(HyperParams::new(0.0, 0.0, vec![0.0], None, vec![0, 1]).is_err());
        assert!(HyperParams::new(0.0, 0.0, vec![0.0, 0.0], None, vec![1, 0]).is_err());
        assert!(HyperParams::new(f64::NAN, 0.0, vec![], None, vec![]).is_err());
        assert!(HyperParams::new(800.0, 0.0, vec![], None, vec![]).is_err());
    }

    #[test]
    fn extra_noise_difference_is_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_points(6, 3, &mut rng);
        let h = hp(-1.0, 0.2, &[0.0, 0.5, -0.5], Some(-2.0), &[0, 1, 2]);
        let with = full_cov(&x, &x, &h, true).unwrap().values;
        let without = full_cov(&x, &x, &h, false).unwrap().values;
        let diff = with - without;
        let expected = DMatrix::<f64>::identity(6, 6) * (-2.0f64).exp();
        assert!((diff - expected).abs().max() < 1e-14);
    }

    #[test]
    fn null_model_covariance_is_scaled_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_points(4, 3, &mut rng);
        // const_var effectively zero
        let h = hp(-60.0, 0.0, &[], Some(0.3f64.ln()), &[]);
        let k = full_cov(&x, &x, &h, true).unwrap().values;
        let expected = DMatrix::<f64>::identity(4, 4) * 0.3;
        assert!((k - expected).abs().max() < 1e-15);
    }

    #[test]
    fn zero_magnitude_leaves_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_points(4, 2, &mut rng);
        let h = hp(0.8f64.ln(), -700.0, &[0.0, 0.0], None, &[0, 1]);
        let k = full_cov(&x, &x, &h, false).unwrap().values;
        assert!((k - DMatrix::from_element(4, 4, 0.8)).abs().max() < 1e-12);
    }

    #[test]
    fn extra_noise_required_when_requested() {
        let x = DMatrix::<f64>::zeros(2, 1);
        let h = hp(0.0, 0.0, &[0.0], None, &[0]);
        assert!(matches!(full_cov(&x, &x, &h, true), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn magnitude_gradient_is_se_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_points(5, 2, &mut rng);
        let h = hp(-1.0, 0.4, &[0.1, 0.2], Some(-3.0), &[0, 1]);
        let g = cov_grad(&x, &h, ParamId::Magnitude).unwrap();
        let se = se_ard(&x, &x, &h).unwrap().values;
        assert!((g - se).abs().max() < 1e-15);
    }

    #[test]
    fn lengthscale_gradient_zero_for_shared_coordinate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = random_points(6, 2, &mut rng);
        x.column_mut(1).fill(0.7);
        let h = hp(0.0, 0.0, &[0.0, 0.0], None, &[0, 1]);
        let g = cov_grad(&x, &h, ParamId::LengthScale(1)).unwrap();
        assert_eq!(g.abs().max(), 0.0);
    }

    #[test]
    fn unknown_parameter_is_rejected() {
        let x = DMatrix::<f64>::zeros(2, 3);
        let h = hp(0.0, 0.0, &[0.0], None, &[1]);
        assert!(cov_grad(&x, &h, ParamId::LengthScale(0)).is_err());
        assert!(cov_grad(&x, &h, ParamId::ExtraNoise).is_err());
        assert!("log_foo".parse::<ParamId>().is_err());
        assert_eq!("log_lengthscale[3]".parse::<ParamId>().unwrap(), ParamId::LengthScale(3));
        let empty = hp(0.0, 0.0, &[], Some(0.0), &[]);
        assert!(cov_grad(&x, &empty, ParamId::Magnitude).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let h = hp(-1.0, 0.4, &[0.1, 0.2], Some(-3.0), &[2, 5]);
        assert_eq!(h.with_flat(&h.to_flat()), h);
        assert_eq!(h.param_ids().len(), h.n_params());
        let r = h.restricted(&[2, 4], 30.0);
        assert_eq!(r.log_lengthscales, vec![0.1, 30.0]);
    }

    /// Central finite differences of the full covariance in each log parameter.
    fn fd_grad(x: &DMatrix<f64>, h: &HyperParams, k: usize, step: f64) -> DMatrix<f64> {
        let mut p = h.to_flat();
        let base = p[k];
        p[k] = base + step;
        let up = full_cov(x, x, &h.with_flat(&p), h.log_extra_noise.is_some()).unwrap().values;
        p[k] = base - step;
        let dn = full_cov(x, x, &h.with_flat(&p), h.log_extra_noise.is_some()).unwrap().values;
        (up - dn) / (2.0 * step)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..10 {
            let n = 5 + trial * 2;
            let x = random_points(n, 3, &mut rng);
            let ls: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.5..0.8)).collect();
            let h = hp(rng.gen_range(-2.0..0.5), rng.gen_range(-1.0..1.0), &ls, Some(-1.5), &[0, 1, 2]);
            for (k, id) in h.param_ids().into_iter().enumerate() {
                let g = cov_grad(&x, &h, id).unwrap();
                let fd = fd_grad(&x, &h, k, 1e-6);
                let scale = fd.abs().max().max(1e-12);
                let rel = (&g - &fd).abs().max() / scale;
                assert!(rel < 1e-5, "{id}: rel err {rel}");
            }
        }
    }

    #[test]
    fn contraction_matches_explicit_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random_points(7, 3, &mut rng);
        let w = DMatrix::from_fn(7, 7, |_, _| rng.gen_range(-1.0..1.0));
        let h = hp(-0.5, 0.3, &[0.2, -0.1, 0.4], Some(-2.0), &[0, 1, 2]);
        let geom = PairGeometry::new(&x, &x, &h.active_inputs).unwrap();
        let se = geom.se(&h).unwrap();
        let c = geom.grad_contract(&h, &se, &w).unwrap();
        for (k, id) in h.param_ids().into_iter().enumerate() {
            let g = geom.grad(&h, &se, id).unwrap();
            assert!((frobenius_dot(&g, &w) - c[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn nesting_with_infinite_lengthscale() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_points(10, 3, &mut rng);
        let h = hp(-1.0, 0.1, &[0.2, 0.3], Some(-2.0), &[0, 2]);
        let ext = hp(-1.0, 0.1, &[0.2, 30.0, 0.3], Some(-2.0), &[0, 1, 2]);
        let a = full_cov(&x, &x, &h, true).unwrap().values;
        let b = full_cov(&x, &x, &ext, true).unwrap().values;
        assert!((a - b).abs().max() < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn full_cov_is_symmetric_psd(seed in 0u64..10_000, n in 2usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_points(n, 3, &mut rng);
            let ls: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let h = hp(rng.gen_range(-3.0..1.0), rng.gen_range(-2.0..2.0), &ls, None, &[0, 1, 2]);
            let k = full_cov(&x, &x, &h, false).unwrap().values;
            prop_assert_eq!(&k, &k.transpose());
            let mut kj = k.clone();
            let jit = crate::linalg::JITTER_REL * crate::linalg::mean_diag(&k);
            for i in 0..n { kj[(i, i)] += jit; }
            let eig = kj.symmetric_eigenvalues();
            let floor = -1e-10 * crate::linalg::mean_diag(&k) * n as f64;
            prop_assert!(eig.iter().all(|&e| e >= floor), "min eig {}", eig.min());
        }

        #[test]
        fn gradients_match_fd_random(seed in 0u64..10_000, n in 2usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_points(n, 2, &mut rng);
            let ls: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.7..1.0)).collect();
            let h = hp(rng.gen_range(-2.0..0.5), rng.gen_range(-1.0..1.0), &ls, Some(rng.gen_range(-4.0..0.0)), &[0, 1]);
            let k_max = full_cov(&x, &x, &h, true).unwrap().values.abs().max();
            for (k, id) in h.param_ids().into_iter().enumerate() {
                let g = cov_grad(&x, &h, id).unwrap();
                let fd = fd_grad(&x, &h, k, 1e-6);
                // central differences carry ~ε·|K|/step of rounding error
                let tol = 1e-5 * fd.abs().max() + 1e-8 * k_max;
                prop_assert!((&g - &fd).abs().max() < tol, "{:?} g={} fd={}", id, g, fd);
            }
        }
    }
}
