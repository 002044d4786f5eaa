//! Additive sinusoidal toy problem: every input contributes a unit-variance
//! term, but low-frequency inputs look almost linear.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{default_names, Dataset};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    /// Training points; the test set has the same size.
    pub n: usize,
    /// Inputs that enter the target.
    pub n_inputs: usize,
    pub noise_sd: f64,
    pub seed: u64,
    /// Extra uniform inputs appended after the relevant ones, unrelated to y.
    #[serde(default)]
    pub n_noise_inputs: usize,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec { n: 300, n_inputs: 8, noise_sd: 0.3, seed: 0, n_noise_inputs: 0 }
    }
}

impl ToySpec {
    fn validate(&self) -> Result<()> {
        if self.n_inputs < 2 {
            return Err(Error::InvalidArgument("toy problem needs at least two inputs".into()));
        }
        if self.n < 10 || !(self.noise_sd > 0.0) {
            return Err(Error::InvalidArgument("toy problem needs n >= 10 and noise_sd > 0".into()));
        }
        Ok(())
    }
}

/// Frequencies evenly spaced from π/10 to π.
pub fn frequencies(d: usize) -> Vec<f64> {
    let lo = PI / 10.0;
    (0..d).map(|j| lo + j as f64 * (PI - lo) / (d - 1) as f64).collect()
}

/// Amplitude giving `A sin(φx)` unit variance for `x ~ U(−1, 1)`.
pub fn amplitude(phi: f64) -> f64 {
    (0.5 - (2.0 * phi).sin() / (4.0 * phi)).powf(-0.5)
}

/// Training and test sets drawn from the toy model; the test set is
/// standardized with the training statistics.
pub fn gen_toy(spec: &ToySpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let d = spec.n_inputs + spec.n_noise_inputs;
    let total = 2 * spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let x = DMatrix::<f64>::from_fn(total, d, |_, _| rng.gen_range(-1.0..1.0));
    let terms: Vec<(f64, f64)> = frequencies(spec.n_inputs).into_iter().map(|p| (p, amplitude(p))).collect();
    let y = DVector::<f64>::from_fn(total, |i, _| {
        let e: f64 = rng.sample(StandardNormal);
        terms.iter().enumerate().map(|(j, (p, a))| a * (p * x[(i, j)]).sin()).sum::<f64>() + spec.noise_sd * e
    });
    let all = Dataset::from_raw(x, y, default_names(d))?;
    let idx: Vec<usize> = (0..total).collect();
    let train = all.subset_rows(&idx[..spec.n])?;
    let test = all.subset_rows_with(&idx[spec.n..], &train.standardization)?;
    Ok((train, test))
}
