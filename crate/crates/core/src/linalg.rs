//! Dense symmetric positive-definite helpers built on nalgebra's Cholesky.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative jitter for near-singular matrices (fraction of the mean diagonal).
pub const JITTER_REL: f64 = 1e-8;
/// Largest relative jitter tried before giving up.
pub const JITTER_MAX_REL: f64 = 1e-2;

/// Mean of the diagonal.
pub fn mean_diag(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows().min(m.ncols());
    if n == 0 {
        return 0.0;
    }
    m.diagonal().iter().sum::<f64>() / n as f64
}

/// Replaces `m` by `(m + mᵀ)/2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Cholesky factor of `m + jitter·I`.
///
/// The matrix is factored as is when that succeeds with every squared pivot at
/// least `JITTER_REL · mean_diag(m)`. Otherwise a jitter of
/// `JITTER_REL · mean_diag(m)` is added and escalated tenfold up to
/// `JITTER_MAX_REL` before reporting an ill-conditioned matrix.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
    jitter_rel: f64,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        Self::with_pivot_floor(m, JITTER_REL)
    }

    /// As [`SpdFactor::new`], but the unjittered factor is accepted whenever
    /// every squared pivot is at least `pivot_rel · mean_diag(m)`.
    pub fn with_pivot_floor(m: &DMatrix<f64>, pivot_rel: f64) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidArgument(format!("cannot factor a {}x{} matrix", m.nrows(), m.ncols())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::IllConditioned("matrix has non-finite entries".into()));
        }
        let scale = mean_diag(m).abs();
        let scale = if scale > 0.0 { scale } else { 1.0 };
        if let Some(chol) = Cholesky::new(m.clone()) {
            let l = chol.l_dirty();
            let min_pivot = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
            if min_pivot >= pivot_rel * scale {
                return Ok(SpdFactor { chol, jitter: 0.0, jitter_rel: 0.0 });
            }
        }
        let mut rel = JITTER_REL;
        loop {
            let jitter = rel * scale;
            let mut a = m.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(a) {
                return Ok(SpdFactor { chol, jitter, jitter_rel: rel });
            }
            if rel >= JITTER_MAX_REL * 0.999 {
                return Err(Error::IllConditioned(format!(
                    "Cholesky failed with jitter up to {:.1e} x mean diagonal",
                    JITTER_MAX_REL
                )));
            }
            rel *= 10.0;
        }
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Absolute diagonal jitter that was added.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Jitter relative to the mean diagonal of the input matrix.
    pub fn jitter_rel(&self) -> f64 {
        self.jitter_rel
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `L⁻¹ b`.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        forward_substitute(self.chol.l_dirty(), x.as_mut_slice());
        x
    }

    /// `L⁻¹ B`.
    pub fn solve_lower_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        let l = self.chol.l_dirty();
        for mut col in x.column_iter_mut() {
            forward_substitute(l, col.as_mut_slice());
        }
        x
    }

    /// `L⁻ᵀ B`.
    pub fn solve_upper_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        let l = self.chol.l_dirty();
        for mut col in x.column_iter_mut() {
            back_substitute_transposed(l, col.as_mut_slice());
        }
        x
    }

    /// Explicit inverse of the jittered matrix, via `L⁻ᵀ L⁻¹`.
    pub fn inverse(&self) -> DMatrix<f64> {
        let linv = lower_triangular_inverse(self.chol.l_dirty());
        let mut inv = linv.transpose() * &linv;
        symmetrize(&mut inv);
        inv
    }
}

// Column-oriented forward substitution: only the lower triangle of `l` is read.
fn forward_substitute(l: &DMatrix<f64>, x: &mut [f64]) {
    let n = l.nrows();
    for k in 0..n {
        if x[k] == 0.0 {
            continue;
        }
        x[k] /= l[(k, k)];
        let xk = x[k];
        let col = &l.as_slice()[k * n..(k + 1) * n];
        for i in (k + 1)..n {
            x[i] -= xk * col[i];
        }
    }
}

// Solves Lᵀ x = b using dot products against columns of L.
fn back_substitute_transposed(l: &DMatrix<f64>, x: &mut [f64]) {
    let n = l.nrows();
    for k in (0..n).rev() {
        let col = &l.as_slice()[k * n..(k + 1) * n];
        let mut s = x[k];
        for i in (k + 1)..n {
            s -= col[i] * x[i];
        }
        x[k] = s / col[k];
    }
}

fn lower_triangular_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut col = inv.column_mut(j);
        let x = col.as_mut_slice();
        x[j] = 1.0;
        // entries above j stay zero
        for k in j..n {
            if x[k] == 0.0 {
                continue;
            }
            x[k] /= l[(k, k)];
            let xk = x[k];
            let lcol = &l.as_slice()[k * n..(k + 1) * n];
            for i in (k + 1)..n {
                x[i] -= xk * lcol[i];
            }
        }
    }
    inv
}

/// Sum of elementwise products, `Σ_ij a_ij b_ij`.
pub fn frobenius_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn solves_match_explicit_inverse() {
        for seed in 0..5 {
            let n = 3 + 4 * seed as usize;
            let m = random_spd(n, seed);
            let f = SpdFactor::new(&m).unwrap();
            let mut mj = m.clone();
            for i in 0..n {
                mj[(i, i)] += f.jitter();
            }
            let direct = mj.clone().try_inverse().unwrap();
            let inv = f.inverse();
            let err = (&inv - &direct).abs().max() / direct.abs().max();
            assert!(err < 1e-8, "inverse rel err {err}");
            let b = DVector::from_fn(n, |i, _| (i as f64).sin());
            let x = f.solve(&b);
            let err = (&direct * &b - &x).abs().max() / x.abs().max();
            assert!(err < 1e-8);
            let l = f.l();
            let y = f.solve_lower(&b);
            assert!((&l * &y - &b).abs().max() < 1e-10);
            let bm = DMatrix::from_fn(n, 2, |i, j| (i + j) as f64);
            let z = f.solve_upper_mat(&bm);
            assert!((l.transpose() * &z - &bm).abs().max() < 1e-9);
        }
    }

    #[test]
    fn log_det_matches_determinant() {
        let m = random_spd(6, 11);
        let f = SpdFactor::new(&m).unwrap();
        let det = m.determinant();
        assert!((f.log_det() - det.ln()).abs() < 1e-6);
    }

    #[test]
    fn jitter_escalates_on_singular_input() {
        let ones = DMatrix::<f64>::from_element(4, 4, 1.0);
        let f = SpdFactor::new(&ones).unwrap();
        assert!(f.jitter() >= JITTER_REL);
        let neg = -DMatrix::<f64>::identity(3, 3);
        assert!(matches!(SpdFactor::new(&neg), Err(Error::IllConditioned(_))));
    }

    #[test]
    fn symmetrize_averages() {
        let mut m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 5.0]);
        symmetrize(&mut m);
        assert_eq!(m[(0, 1)], 3.0);
        assert_eq!(m[(1, 0)], 3.0);
    }
}
