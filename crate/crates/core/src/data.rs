//! Standardized regression datasets.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Columns whose standard deviation falls below this are treated as constant.
const MIN_SCALE: f64 = 1e-12;

/// Affine maps taking raw columns and targets to the standardized scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: f64,
    pub y_scale: f64,
}

impl Standardization {
    /// Column means and population standard deviations of `x` and `y`.
    pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<Self> {
        let n = x.nrows() as f64;
        let mut x_mean = Vec::with_capacity(x.ncols());
        let mut x_scale = Vec::with_capacity(x.ncols());
        for (j, col) in x.column_iter().enumerate() {
            let m = col.sum() / n;
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            if !(sd > MIN_SCALE) {
                let name = names.get(j).cloned().unwrap_or_else(|| format!("x{j}"));
                return Err(Error::Data(format!("column `{name}` has zero variance")));
            }
            x_mean.push(m);
            x_scale.push(sd);
        }
        let y_mean = y.sum() / n;
        let y_sd = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n).sqrt();
        if !(y_sd > MIN_SCALE) {
            return Err(Error::Data("target has zero variance".into()));
        }
        Ok(Standardization { x_mean, x_scale, y_mean, y_scale: y_sd })
    }

    pub fn apply_x(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.x_mean[j]) / self.x_scale[j])
    }

    pub fn apply_y(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| (v - self.y_mean) / self.y_scale)
    }

    pub fn restore_y(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| v * self.y_scale + self.y_mean)
    }
}

/// A regression dataset. `x` and `y` are standardized; the raw values are
/// kept so the data can be re-split with fresh statistics.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub x_raw: DMatrix<f64>,
    pub y_raw: DVector<f64>,
    pub feature_names: Vec<String>,
    pub standardization: Standardization,
}

impl Dataset {
    /// Standardizes with statistics from the data itself.
    pub fn from_raw(x_raw: DMatrix<f64>, y_raw: DVector<f64>, feature_names: Vec<String>) -> Result<Self> {
        check_raw(&x_raw, &y_raw, &feature_names)?;
        let standardization = Standardization::fit(&x_raw, &y_raw, &feature_names)?;
        Ok(Self::assemble(x_raw, y_raw, feature_names, standardization))
    }

    /// Standardizes with externally supplied statistics (e.g. a test set
    /// standardized with training statistics).
    pub fn with_standardization(
        x_raw: DMatrix<f64>,
        y_raw: DVector<f64>,
        feature_names: Vec<String>,
        standardization: Standardization,
    ) -> Result<Self> {
        if x_raw.nrows() != y_raw.len() || x_raw.ncols() != standardization.x_mean.len() {
            return Err(Error::Data("shape does not match standardization".into()));
        }
        if x_raw.iter().chain(y_raw.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite values".into()));
        }
        Ok(Self::assemble(x_raw, y_raw, feature_names, standardization))
    }

    fn assemble(
        x_raw: DMatrix<f64>,
        y_raw: DVector<f64>,
        feature_names: Vec<String>,
        standardization: Standardization,
    ) -> Self {
        let x = standardization.apply_x(&x_raw);
        let y = standardization.apply_y(&y_raw);
        Dataset { x, y, x_raw, y_raw, feature_names, standardization }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.x.ncols()
    }

    /// Rows `idx` of the raw data, standardized with their own statistics.
    pub fn subset_rows(&self, idx: &[usize]) -> Result<Dataset> {
        let (x, y) = self.raw_rows(idx);
        Dataset::from_raw(x, y, self.feature_names.clone())
    }

    /// Rows `idx` of the raw data, standardized with `stats`.
    pub fn subset_rows_with(&self, idx: &[usize], stats: &Standardization) -> Result<Dataset> {
        let (x, y) = self.raw_rows(idx);
        Dataset::with_standardization(x, y, self.feature_names.clone(), stats.clone())
    }

    fn raw_rows(&self, idx: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let x = DMatrix::from_fn(idx.len(), self.n_inputs(), |i, j| self.x_raw[(idx[i], j)]);
        let y = DVector::from_fn(idx.len(), |i, _| self.y_raw[idx[i]]);
        (x, y)
    }

    /// Same rows with the input columns reordered by `perm` (new column `k` is
    /// old column `perm[k]`).
    pub fn permute_inputs(&self, perm: &[usize]) -> Result<Dataset> {
        let d = self.n_inputs();
        let mut seen = vec![false; d];
        if perm.len() != d || perm.iter().any(|&p| p >= d || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument("not a permutation of the inputs".into()));
        }
        let x_raw = DMatrix::from_fn(self.n(), d, |i, k| self.x_raw[(i, perm[k])]);
        let names = perm.iter().map(|&p| self.feature_names[p].clone()).collect();
        let st = &self.standardization;
        let stats = Standardization {
            x_mean: perm.iter().map(|&p| st.x_mean[p]).collect(),
            x_scale: perm.iter().map(|&p| st.x_scale[p]).collect(),
            y_mean: st.y_mean,
            y_scale: st.y_scale,
        };
        Dataset::with_standardization(x_raw, self.y_raw.clone(), names, stats)
    }
}

fn check_raw(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Data(format!("{} rows but {} targets", x.nrows(), y.len())));
    }
    if x.nrows() < 2 {
        return Err(Error::Data("at least two rows are required".into()));
    }
    if x.ncols() < 1 {
        return Err(Error::Data("at least one input column is required".into()));
    }
    if names.len() != x.ncols() {
        return Err(Error::Data(format!("{} names for {} columns", names.len(), x.ncols())));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite values".into()));
    }
    Ok(())
}

/// Default feature names `x0, x1, ...`.
pub fn default_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{j}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardized_columns_have_unit_variance() {
        let x = DMatrix::from_fn(50, 3, |i, j| ((i * (j + 3)) % 17) as f64 * (j as f64 + 0.5) + 4.0);
        let y = DVector::from_fn(50, |i, _| i as f64 * 0.3);
        let d = Dataset::from_raw(x, y, default_names(3)).unwrap();
        for col in d.x.column_iter() {
            let m = col.sum() / 50.0;
            let v = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 50.0;
            assert!(m.abs() < 1e-8 && (v - 1.0).abs() < 1e-8);
        }
        assert!(d.y.sum().abs() < 1e-10);
        let back = d.standardization.restore_y(&d.y);
        assert!((back - &d.y_raw).abs().max() < 1e-12);
    }

    #[test]
    fn constant_column_is_named_in_error() {
        let x = DMatrix::from_fn(10, 2, |i, j| if j == 1 { 3.0 } else { i as f64 });
        let y = DVector::from_fn(10, |i, _| i as f64);
        let err = Dataset::from_raw(x, y, vec!["a".into(), "flat".into()]).unwrap_err();
        assert!(err.to_string().contains("flat"));
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = DMatrix::<f64>::zeros(1, 2);
        let y = DVector::<f64>::zeros(1);
        assert!(Dataset::from_raw(x, y, default_names(2)).is_err());
        let x = DMatrix::from_fn(4, 1, |i, _| i as f64);
        let mut y = DVector::from_fn(4, |i, _| i as f64);
        y[2] = f64::NAN;
        assert!(Dataset::from_raw(x, y, default_names(1)).is_err());
    }

    #[test]
    fn permute_inputs_moves_columns() {
        let x = DMatrix::from_fn(6, 3, |i, j| (i * i + j) as f64 * (j + 1) as f64);
        let y = DVector::from_fn(6, |i, _| i as f64);
        let d = Dataset::from_raw(x, y, default_names(3)).unwrap();
        let p = d.permute_inputs(&[2, 0, 1]).unwrap();
        assert_eq!(p.feature_names, vec!["x2", "x0", "x1"]);
        assert!((p.x.column(0) - d.x.column(2)).abs().max() < 1e-12);
        assert!(d.permute_inputs(&[0, 0, 1]).is_err());
    }
}
