//! Small dense helpers shared by the learners and the variance code.

use nalgebra::{DMatrix, DVector};

/// Row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f64>, n_rows: usize, n_cols: usize) -> Self {
        assert_eq!(data.len(), n_rows * n_cols, "feature matrix shape mismatch");
        FeatureMatrix { data, n_rows, n_cols }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            assert_eq!(r.len(), n_cols, "ragged rows");
            data.extend_from_slice(r);
        }
        FeatureMatrix::new(data, rows.len(), n_cols)
    }

    /// A single column.
    pub fn from_column(col: &[f64]) -> Self {
        FeatureMatrix::new(col.to_vec(), col.len(), 1)
    }

    /// `n_rows` rows with no columns.
    pub fn empty(n_rows: usize) -> Self {
        FeatureMatrix::new(Vec::new(), n_rows, 0)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.n_cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix::new(data, idx.len(), self.n_cols)
    }

    /// Horizontal concatenation.
    pub fn hstack(&self, other: &FeatureMatrix) -> FeatureMatrix {
        assert_eq!(self.n_rows, other.n_rows);
        let n_cols = self.n_cols + other.n_cols;
        let mut data = Vec::with_capacity(self.n_rows * n_cols);
        for i in 0..self.n_rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        FeatureMatrix::new(data, self.n_rows, n_cols)
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_cols];
        if self.n_rows == 0 {
            return m;
        }
        for i in 0..self.n_rows {
            for (acc, v) in m.iter_mut().zip(self.row(i)) {
                *acc += v;
            }
        }
        let n = self.n_rows as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Population standard deviations.
    pub fn column_sds(&self, means: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.n_cols];
        if self.n_rows == 0 {
            return s;
        }
        for i in 0..self.n_rows {
            for ((acc, v), m) in s.iter_mut().zip(self.row(i)).zip(means) {
                *acc += (v - m) * (v - m);
            }
        }
        let n = self.n_rows as f64;
        s.iter_mut().for_each(|v| *v = (*v / n).sqrt());
        s
    }
}

/// Cholesky solve; `None` when `a` is not numerically positive definite.
pub fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = a.cholesky()?;
    let x = chol.solve(b);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Lawson–Hanson non-negative least squares in Gram form:
/// minimise `½ wᵀ Q w − cᵀ w` subject to `w ≥ 0`, where `Q = AᵀA`, `c = Aᵀb`.
pub fn nnls_gram(q: &DMatrix<f64>, c: &DVector<f64>) -> DVector<f64> {
    let m = c.len();
    let mut w = DVector::zeros(m);
    let mut passive = vec![false; m];
    let scale = q.diagonal().iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-300);
    let tol = 1e-12 * scale * m as f64;
    let max_outer = 3 * m + 10;

    for _ in 0..max_outer {
        let grad = c - q * &w;
        let candidate = (0..m)
            .filter(|&j| !passive[j])
            .max_by(|&a, &b| grad[a].total_cmp(&grad[b]));
        let Some(j) = candidate else { break };
        if grad[j] <= tol {
            break;
        }
        passive[j] = true;

        loop {
            let p_idx: Vec<usize> = (0..m).filter(|&k| passive[k]).collect();
            let z_p = solve_subsystem(q, c, &p_idx);
            if p_idx.iter().zip(z_p.iter()).all(|(_, &z)| z > 0.0) {
                w.fill(0.0);
                for (&k, &z) in p_idx.iter().zip(z_p.iter()) {
                    w[k] = z;
                }
                break;
            }
            // step back toward the feasible region
            let mut alpha = f64::INFINITY;
            for (&k, &z) in p_idx.iter().zip(z_p.iter()) {
                if z <= 0.0 {
                    let denom = w[k] - z;
                    if denom > 0.0 {
                        alpha = alpha.min(w[k] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            for (&k, &z) in p_idx.iter().zip(z_p.iter()) {
                w[k] += alpha * (z - w[k]);
            }
            for &k in &p_idx {
                if w[k] <= 1e-15 {
                    w[k] = 0.0;
                    passive[k] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    w
}

fn solve_subsystem(q: &DMatrix<f64>, c: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    let k = idx.len();
    let sub_q = DMatrix::from_fn(k, k, |a, b| q[(idx[a], idx[b])]);
    let sub_c = DVector::from_fn(k, |a, _| c[idx[a]]);
    if let Some(x) = solve_spd(sub_q.clone(), &sub_c) {
        return x;
    }
    let ridge = 1e-12 * sub_q.diagonal().iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    let reg = sub_q + DMatrix::identity(k, k) * ridge;
    reg.lu().solve(&sub_c).unwrap_or_else(|| DVector::zeros(k))
}

/// Mean squared error of `Σ_m w_m · columns[m]` against `y`.
pub fn combination_mse(columns: &[Vec<f64>], weights: &[f64], y: &[f64]) -> f64 {
    let n = y.len();
    if n == 0 {
        return 0.0;
    }
    let mut sse = 0.0;
    for i in 0..n {
        let pred: f64 = columns.iter().zip(weights).map(|(c, w)| c[i] * w).sum();
        sse += (pred - y[i]).powi(2);
    }
    sse / n as f64
}

/// Minimise `‖Σ w_m columns[m] − y‖²` over the probability simplex.
///
/// The sum-to-one constraint is imposed through a heavily weighted extra row
/// appended to the residual system and solved with NNLS, then the weights are
/// renormalised. The support found by NNLS is polished with the exact
/// equality-constrained solve, and the result is never worse than the best
/// single column.
pub fn simplex_least_squares(columns: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let m = columns.len();
    assert!(m > 0, "need at least one column");
    if m == 1 {
        return vec![1.0];
    }
    let n = y.len();
    // residual columns: Σ w_m (c_m − y) = Σ w_m c_m − y on the simplex
    let mut gram = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let mut s = 0.0;
            for i in 0..n {
                s += (columns[a][i] - y[i]) * (columns[b][i] - y[i]);
            }
            gram[(a, b)] = s;
            gram[(b, a)] = s;
        }
    }
    let big = gram.diagonal().iter().fold(1.0_f64, |acc, v| acc.max(v.abs())) * 1e6;
    let aug = &gram + DMatrix::from_element(m, m, big);
    let rhs = DVector::from_element(m, big);
    let w = nnls_gram(&aug, &rhs);
    let total: f64 = w.iter().sum();
    let mut weights: Vec<f64> = if total > 0.0 {
        w.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / m as f64; m]
    };

    // exact KKT solve on the support
    let support: Vec<usize> = (0..m).filter(|&k| weights[k] > 0.0).collect();
    if let Some(exact) = equality_constrained(&gram, &support) {
        if exact.iter().all(|&v| v >= 0.0) {
            weights.iter_mut().for_each(|v| *v = 0.0);
            for (&k, &v) in support.iter().zip(&exact) {
                weights[k] = v;
            }
        }
    }

    let mut best = combination_mse(columns, &weights, y);
    for k in 0..m {
        let mut vertex = vec![0.0; m];
        vertex[k] = 1.0;
        let risk = combination_mse(columns, &vertex, y);
        if risk < best {
            best = risk;
            weights = vertex;
        }
    }
    weights
}

/// Minimise `wᵀ G w` on the given support subject to `Σ w = 1`.
fn equality_constrained(gram: &DMatrix<f64>, support: &[usize]) -> Option<Vec<f64>> {
    let k = support.len();
    if k == 0 {
        return None;
    }
    let mut kkt = DMatrix::zeros(k + 1, k + 1);
    for a in 0..k {
        for b in 0..k {
            kkt[(a, b)] = gram[(support[a], support[b])];
        }
        kkt[(a, k)] = 1.0;
        kkt[(k, a)] = 1.0;
    }
    let mut rhs = DVector::zeros(k + 1);
    rhs[k] = 1.0;
    let sol = kkt.lu().solve(&rhs)?;
    let w: Vec<f64> = sol.iter().take(k).copied().collect();
    w.iter().all(|v| v.is_finite()).then_some(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nnls_recovers_nonnegative_solution() {
        // A = I, b = (1, -2, 3) → w = (1, 0, 3)
        let q = DMatrix::identity(3, 3);
        let c = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let w = nnls_gram(&q, &c);
        assert!((w[0] - 1.0).abs() < 1e-12);
        assert_eq!(w[1], 0.0);
        assert!((w[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn nnls_with_correlated_columns() {
        // columns (1,0),(1,1) and b = (0,1): unconstrained solution (-1, 1)
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![0.0, 1.0]);
        let q = a.transpose() * &a;
        let c = a.transpose() * &b;
        let w = nnls_gram(&q, &c);
        assert_eq!(w[0], 0.0);
        assert!((w[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn simplex_prefers_exact_column() {
        let y = vec![1.0, 2.0, 3.0, 4.0];
        let good = y.clone();
        let bad = vec![4.0, 1.0, 0.0, 2.0];
        let w = simplex_least_squares(&[bad, good], &y);
        assert!((w[1] - 1.0).abs() < 1e-9, "{w:?}");
    }

    #[test]
    fn simplex_mixes_when_mixture_is_better() {
        let y = vec![0.0, 0.0, 0.0, 0.0];
        let a = vec![1.0, -1.0, 1.0, -1.0];
        let b = vec![-1.0, 1.0, -1.0, 1.0];
        let w = simplex_least_squares(&[a, b], &y);
        assert!((w[0] - 0.5).abs() < 1e-9);
        assert!((w[1] - 0.5).abs() < 1e-9);
    }
}
