//! Stacked ensemble over a candidate library.
//!
//! Candidates are scored by V-fold cross-validated predictions and combined
//! with simplex weights that minimise cross-validated squared error. For
//! propensities the same squared-error (Brier) criterion is used on the
//! predicted probabilities.

use serde::Serialize;

use super::crossfit::assign_folds;
use super::{fit_learner, FittedModel, LearnerSpec, Task};
use crate::error::{GdidError, Result};
use crate::linalg::{combination_mse, simplex_least_squares, FeatureMatrix};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleWeights {
    pub labels: Vec<String>,
    pub weights: Vec<f64>,
    /// Cross-validated mean squared error of each candidate (NaN when it failed).
    pub cv_risk: Vec<f64>,
    pub ensemble_cv_risk: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub weights: EnsembleWeights,
    // refit on all rows; None for zero-weight or failed candidates
    members: Vec<Option<FittedModel>>,
    pub warnings: Vec<String>,
}

impl EnsembleModel {
    pub fn fit(
        candidates: &[LearnerSpec],
        task: Task,
        x: &FeatureMatrix,
        y: &[f64],
        folds: usize,
        seed: u64,
    ) -> Result<Self> {
        let n = x.n_rows();
        let folds = folds.min(n);
        if folds < 2 {
            return Err(GdidError::TooFewRows { needed: 2, got: n });
        }
        let strata: Option<Vec<u8>> = (task == Task::Propensity).then(|| y.iter().map(|&v| (v > 0.5) as u8).collect());
        let fold_of = assign_folds(n, strata.as_deref(), folds, seed);
        let members_idx: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
            .map(|k| {
                let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| fold_of[i] == k);
                (train, test)
            })
            .collect();

        let mut warnings = Vec::new();
        let mut cv_cols: Vec<Option<Vec<f64>>> = Vec::with_capacity(candidates.len());
        for (m, spec) in candidates.iter().enumerate() {
            let mut col = vec![0.0; n];
            let mut failed = None;
            for (k, (train, test)) in members_idx.iter().enumerate() {
                let xt = x.select_rows(train);
                let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
                let inner_seed = seed ^ ((m as u64 + 1) << 32) ^ (k as u64 + 1);
                match fit_learner(spec, task, &xt, &yt, inner_seed) {
                    Ok(f) => {
                        for &i in test {
                            col[i] = f.model.predict(x.row(i));
                        }
                    }
                    Err(e) => {
                        failed = Some(e);
                        break;
                    }
                }
            }
            match failed {
                None => cv_cols.push(Some(col)),
                Some(e) => {
                    warnings.push(format!("candidate {} failed and gets weight 0: {e}", spec.label()));
                    cv_cols.push(None);
                }
            }
        }

        let alive: Vec<usize> = (0..candidates.len()).filter(|&m| cv_cols[m].is_some()).collect();
        if alive.is_empty() {
            return Err(GdidError::EnsembleFailed(warnings.join("; ")));
        }
        let cols: Vec<Vec<f64>> = alive.iter().map(|&m| cv_cols[m].clone().unwrap()).collect();
        let w_alive = simplex_least_squares(&cols, y);
        let ensemble_cv_risk = combination_mse(&cols, &w_alive, y);

        let mut weights = vec![0.0; candidates.len()];
        let mut cv_risk = vec![f64::NAN; candidates.len()];
        for (a, &m) in alive.iter().enumerate() {
            weights[m] = w_alive[a];
            let mut unit = vec![0.0; cols.len()];
            unit[a] = 1.0;
            cv_risk[m] = combination_mse(&cols, &unit, y);
        }

        let mut members = Vec::with_capacity(candidates.len());
        for (m, spec) in candidates.iter().enumerate() {
            if weights[m] > 0.0 {
                let f = fit_learner(spec, task, x, y, seed ^ ((m as u64 + 1) << 32))?;
                members.push(Some(f.model));
            } else {
                members.push(None);
            }
        }

        Ok(EnsembleModel {
            weights: EnsembleWeights {
                labels: candidates.iter().map(LearnerSpec::label).collect(),
                weights,
                cv_risk,
                ensemble_cv_risk,
            },
            members,
            warnings,
        })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.members
            .iter()
            .zip(&self.weights.weights)
            .filter_map(|(m, &w)| m.as_ref().map(|m| w * m.predict(x)))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn linear_data(n: usize, seed: u64) -> (FeatureMatrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            y.push(1.0 + 2.0 * a - b + 0.5 * e);
            rows.push(vec![a, b]);
        }
        (FeatureMatrix::from_rows(&rows), y)
    }

    #[test]
    fn linear_truth_dominates_noise_candidate() {
        let (x, y) = linear_data(400, 3);
        let cands = vec![LearnerSpec::Linear, LearnerSpec::Knn { k: 1 }];
        let m = EnsembleModel::fit(&cands, Task::Regression, &x, &y, 5, 9).unwrap();
        let w = &m.weights;
        assert!(w.weights[0] >= 0.9, "{:?}", w.weights);
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let best = w.cv_risk.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(w.ensemble_cv_risk <= best + 1e-8);
    }

    #[test]
    fn failing_candidate_gets_zero_weight() {
        let (x, y) = linear_data(30, 4);
        // knn(1000) cannot fit 24 training rows
        let cands = vec![LearnerSpec::Knn { k: 1000 }, LearnerSpec::Linear];
        let m = EnsembleModel::fit(&cands, Task::Regression, &x, &y, 5, 1).unwrap();
        assert_eq!(m.weights.weights, vec![0.0, 1.0]);
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn identical_candidates_give_identical_predictions() {
        let (x, y) = linear_data(100, 5);
        let cands = vec![LearnerSpec::Linear, LearnerSpec::Linear];
        let m = EnsembleModel::fit(&cands, Task::Regression, &x, &y, 4, 2).unwrap();
        let single = super::super::linear::LinearModel::fit(&x, &y).unwrap();
        for i in 0..x.n_rows() {
            assert!((m.predict(x.row(i)) - single.predict(x.row(i))).abs() < 1e-9);
        }
    }
}
