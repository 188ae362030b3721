//! Nuisance learners, stacking, and cross-fitting.

pub mod crossfit;
pub mod ensemble;
pub mod knn;
pub mod linear;
pub mod logistic;
pub mod stumps;

use serde::{Deserialize, Serialize};

use crate::error::{GdidError, Result};
use crate::linalg::FeatureMatrix;

pub use crossfit::{
    assign_folds, cross_fit_column, cross_fit_nuisances, fit_for_lags, CrossFitOptions, CrossFitPlan, FitPlan,
    NuisanceFits, NuisanceSpec, ParametricFits, Periods, Provenance,
};
pub use ensemble::{EnsembleModel, EnsembleWeights};
pub use knn::KnnModel;
pub use linear::LinearModel;
pub use logistic::LogisticModel;
pub use stumps::StumpModel;

fn default_inner_folds() -> usize {
    5
}

/// Which learner to fit. Serialised with a `kind` tag, e.g.
/// `{ kind = "knn", k = 20 }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    /// OLS for outcomes; for propensities this means logistic regression.
    Linear,
    Logistic,
    Knn {
        k: usize,
    },
    BoostedStumps {
        rounds: usize,
        shrinkage: f64,
    },
    Ensemble {
        candidates: Vec<LearnerSpec>,
        #[serde(default = "default_inner_folds")]
        folds: usize,
    },
}

impl LearnerSpec {
    /// linear + knn(20) + boosted stumps(100, 0.1), stacked over 5 folds.
    pub fn default_ensemble() -> Self {
        LearnerSpec::Ensemble {
            candidates: vec![
                LearnerSpec::Linear,
                LearnerSpec::Knn { k: 20 },
                LearnerSpec::BoostedStumps {
                    rounds: 100,
                    shrinkage: 0.1,
                },
            ],
            folds: default_inner_folds(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerSpec::Linear | LearnerSpec::Logistic => Ok(()),
            LearnerSpec::Knn { k } if *k == 0 => Err(GdidError::InvalidConfig("knn needs k >= 1".into())),
            LearnerSpec::Knn { .. } => Ok(()),
            LearnerSpec::BoostedStumps { rounds, shrinkage } => {
                if *rounds == 0 {
                    return Err(GdidError::InvalidConfig("boosting needs rounds >= 1".into()));
                }
                if !(*shrinkage > 0.0 && *shrinkage <= 1.0) {
                    return Err(GdidError::InvalidConfig(format!(
                        "shrinkage {shrinkage} outside (0, 1]"
                    )));
                }
                Ok(())
            }
            LearnerSpec::Ensemble { candidates, folds } => {
                if candidates.is_empty() {
                    return Err(GdidError::InvalidConfig("ensemble has no candidates".into()));
                }
                if *folds < 2 {
                    return Err(GdidError::InvalidConfig("ensemble needs folds >= 2".into()));
                }
                for c in candidates {
                    if matches!(c, LearnerSpec::Ensemble { .. }) {
                        return Err(GdidError::InvalidConfig("nested ensembles are not allowed".into()));
                    }
                    c.validate()?;
                }
                Ok(())
            }
        }
    }

    /// True for the linear/logistic family, the only specs with closed-form
    /// score equations.
    pub fn is_parametric(&self) -> bool {
        matches!(self, LearnerSpec::Linear | LearnerSpec::Logistic)
    }

    pub fn label(&self) -> String {
        match self {
            LearnerSpec::Linear => "linear".into(),
            LearnerSpec::Logistic => "logistic".into(),
            LearnerSpec::Knn { k } => format!("knn({k})"),
            LearnerSpec::BoostedStumps { rounds, shrinkage } => {
                format!("boosted_stumps({rounds},{shrinkage})")
            }
            LearnerSpec::Ensemble { candidates, .. } => format!(
                "ensemble[{}]",
                candidates.iter().map(|c| c.label()).collect::<Vec<_>>().join(",")
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    /// Binary targets; predictions are probabilities.
    Propensity,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Constant(f64),
    Linear(LinearModel),
    Logistic(LogisticModel),
    Knn(KnnModel),
    Stumps(StumpModel),
    Ensemble(EnsembleModel),
}

impl FittedModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            FittedModel::Constant(c) => *c,
            FittedModel::Linear(m) => m.predict(x),
            FittedModel::Logistic(m) => m.predict(x),
            FittedModel::Knn(m) => m.predict(x),
            FittedModel::Stumps(m) => m.predict(x),
            FittedModel::Ensemble(m) => m.predict(x),
        }
    }

    pub fn predict_many(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.n_rows()).map(|i| self.predict(x.row(i))).collect()
    }
}

/// A fitted model plus anything worth reporting about the fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Fitted {
    pub model: FittedModel,
    pub warnings: Vec<String>,
}

/// Fit `spec` to `(x, y)`. For [`Task::Propensity`] `y` holds 0/1 values.
pub fn fit_learner(spec: &LearnerSpec, task: Task, x: &FeatureMatrix, y: &[f64], seed: u64) -> Result<Fitted> {
    if x.n_rows() != y.len() {
        return Err(GdidError::LengthMismatch("features vs targets".into()));
    }
    if y.is_empty() {
        return Err(GdidError::TooFewRows { needed: 1, got: 0 });
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    // nothing to learn from
    if x.n_cols() == 0 || y.iter().all(|&v| v == y[0]) {
        return Ok(Fitted {
            model: FittedModel::Constant(mean),
            warnings: Vec::new(),
        });
    }
    let mut warnings = Vec::new();
    let model = match (spec, task) {
        (LearnerSpec::Linear, Task::Regression) => FittedModel::Linear(LinearModel::fit(x, y)?),
        (LearnerSpec::Logistic, Task::Regression) => {
            return Err(GdidError::InvalidConfig(
                "logistic learner cannot fit a continuous outcome".into(),
            ))
        }
        (LearnerSpec::Linear | LearnerSpec::Logistic, Task::Propensity) => {
            let m = LogisticModel::fit(x, y)?;
            if m.separation {
                warnings.push("separation detected; ridge-penalised refit used".to_string());
            }
            FittedModel::Logistic(m)
        }
        (LearnerSpec::Knn { k }, _) => FittedModel::Knn(KnnModel::fit(x, y, *k)?),
        (LearnerSpec::BoostedStumps { rounds, shrinkage }, _) => {
            FittedModel::Stumps(StumpModel::fit(x, y, *rounds, *shrinkage, task)?)
        }
        (LearnerSpec::Ensemble { candidates, folds }, _) => {
            let m = EnsembleModel::fit(candidates, task, x, y, *folds, seed)?;
            warnings.extend(m.warnings.iter().cloned());
            FittedModel::Ensemble(m)
        }
    };
    Ok(Fitted { model, warnings })
}

/// Outcome-regression wrapper.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionModel {
    pub fitted: Fitted,
}

impl RegressionModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.fitted.model.predict(x)
    }

    pub fn predict_many(&self, x: &FeatureMatrix) -> Vec<f64> {
        self.fitted.model.predict_many(x)
    }
}

/// Propensity wrapper; predictions are clipped to `[trim_eps, 1 - trim_eps]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    pub fitted: Fitted,
    pub trim_eps: f64,
}

impl PropensityModel {
    pub fn predict_raw(&self, x: &[f64]) -> f64 {
        self.fitted.model.predict(x).clamp(0.0, 1.0)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        clip_propensity(self.fitted.model.predict(x), self.trim_eps)
    }

    pub fn predict_many(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.n_rows()).map(|i| self.predict(x.row(i))).collect()
    }

    pub fn separation(&self) -> bool {
        matches!(&self.fitted.model, FittedModel::Logistic(m) if m.separation)
    }
}

pub fn clip_propensity(p: f64, trim_eps: f64) -> f64 {
    p.clamp(trim_eps, 1.0 - trim_eps)
}

pub fn fit_regression(
    features: &FeatureMatrix,
    targets: &[f64],
    spec: &LearnerSpec,
    seed: u64,
) -> Result<RegressionModel> {
    spec.validate()?;
    if targets.len() < 2 {
        return Err(GdidError::TooFewRows {
            needed: 2,
            got: targets.len(),
        });
    }
    Ok(RegressionModel {
        fitted: fit_learner(spec, Task::Regression, features, targets, seed)?,
    })
}

pub fn fit_propensity(
    features: &FeatureMatrix,
    treatment: &[u8],
    spec: &LearnerSpec,
    trim_eps: f64,
    seed: u64,
) -> Result<PropensityModel> {
    spec.validate()?;
    if !(trim_eps >= 0.0 && trim_eps < 0.5) {
        return Err(GdidError::InvalidConfig(format!(
            "trim_eps {trim_eps} outside [0, 0.5)"
        )));
    }
    let n1 = treatment.iter().filter(|&&a| a == 1).count();
    if n1 == 0 || n1 == treatment.len() {
        return Err(GdidError::FoldWithoutTreated { fold: 0 });
    }
    let y: Vec<f64> = treatment.iter().map(|&a| a as f64).collect();
    Ok(PropensityModel {
        fitted: fit_learner(spec, Task::Propensity, features, &y, seed)?,
        trim_eps,
    })
}

/// Column means and scales used to standardise features; zero-variance
/// columns get scale 0 and are ignored by the learners.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &FeatureMatrix) -> Self {
        let mean = x.column_means();
        let sd = x.column_sds(&mean);
        let scale = sd
            .iter()
            .zip(&mean)
            .map(|(&s, &m)| if s > 1e-12 * m.abs().max(1.0) { s } else { 0.0 })
            .collect();
        Standardizer { mean, scale }
    }

    /// Indices of columns with positive scale.
    pub fn active(&self) -> Vec<usize> {
        (0..self.scale.len()).filter(|&j| self.scale[j] > 0.0).collect()
    }
}
