//! Ordinary least squares with an intercept.

use nalgebra::{DMatrix, DVector};

use super::Standardizer;
use crate::error::{GdidError, Result};
use crate::linalg::FeatureMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub intercept: f64,
    /// Coefficients on the original feature scale; zero for constant columns.
    pub coef: Vec<f64>,
    pub ridge: bool,
}

impl LinearModel {
    pub fn fit(x: &FeatureMatrix, y: &[f64]) -> Result<Self> {
        let n = x.n_rows();
        if n < 2 {
            return Err(GdidError::TooFewRows { needed: 2, got: n });
        }
        let st = Standardizer::fit(x);
        let active = st.active();
        let q = active.len();
        let ybar = y.iter().sum::<f64>() / n as f64;
        let mut coef = vec![0.0; x.n_cols()];
        if q == 0 {
            return Ok(LinearModel {
                intercept: ybar,
                coef,
                ridge: false,
            });
        }

        let mut gram = DMatrix::<f64>::zeros(q, q);
        let mut rhs = DVector::<f64>::zeros(q);
        let mut z = vec![0.0; q];
        for i in 0..n {
            let row = x.row(i);
            for (a, &j) in active.iter().enumerate() {
                z[a] = (row[j] - st.mean[j]) / st.scale[j];
            }
            let r = y[i] - ybar;
            for a in 0..q {
                rhs[a] += z[a] * r;
                for b in 0..=a {
                    gram[(a, b)] += z[a] * z[b];
                }
            }
        }
        for a in 0..q {
            for b in 0..a {
                gram[(b, a)] = gram[(a, b)];
            }
        }

        let mut ridge = false;
        let b = match well_conditioned_solve(&gram, &rhs, n as f64) {
            Some(b) => b,
            None => {
                ridge = true;
                let lam = 1e-6 * n as f64;
                let reg = &gram + DMatrix::identity(q, q) * lam;
                reg.cholesky()
                    .map(|c| c.solve(&rhs))
                    .filter(|b| b.iter().all(|v| v.is_finite()))
                    .ok_or(GdidError::SingularDesign)?
            }
        };

        let mut intercept = ybar;
        for (a, &j) in active.iter().enumerate() {
            coef[j] = b[a] / st.scale[j];
            intercept -= coef[j] * st.mean[j];
        }
        Ok(LinearModel { intercept, coef, ridge })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

/// Cholesky solve that refuses near-singular systems. Standardised columns
/// have diagonal `n`, so a pivot below `1e-10·n` signals collinearity.
fn well_conditioned_solve(gram: &DMatrix<f64>, rhs: &DVector<f64>, n: f64) -> Option<DVector<f64>> {
    let chol = gram.clone().cholesky()?;
    let l = chol.l_dirty();
    let min_pivot = (0..gram.nrows())
        .map(|k| l[(k, k)] * l[(k, k)])
        .fold(f64::INFINITY, f64::min);
    if min_pivot < 1e-10 * n {
        return None;
    }
    let b = chol.solve(rhs);
    b.iter().all(|v| v.is_finite()).then_some(b)
}
