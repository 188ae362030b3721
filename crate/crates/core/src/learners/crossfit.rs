//! Fold assignment and out-of-fold nuisance predictions.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::logistic::logit;
use super::{clip_propensity, fit_learner, FittedModel, LearnerSpec, LinearModel, LogisticModel, Task};
use crate::error::{GdidError, Result};
use crate::linalg::FeatureMatrix;
use crate::panel::{ConditioningSet, PanelDataset};

/// Shuffled round-robin fold labels. With `strata`, each stratum is shuffled
/// separately and the round-robin counter carries over between strata, so
/// fold sizes still differ by at most one.
pub fn assign_folds(n: usize, strata: Option<&[u8]>, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    match strata {
        Some(s) => {
            for level in [1u8, 0u8] {
                let mut idx: Vec<usize> = (0..n).filter(|&i| s[i] == level).collect();
                idx.shuffle(&mut rng);
                order.extend(idx);
            }
            let mut rest: Vec<usize> = (0..n).filter(|&i| s[i] > 1).collect();
            rest.shuffle(&mut rng);
            order.extend(rest);
        }
        None => {
            order.extend(0..n);
            order.shuffle(&mut rng);
        }
    }
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    fold_of
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossFitPlan {
    pub k: usize,
    pub fold_of: Vec<usize>,
    pub seed: u64,
}

impl CrossFitPlan {
    /// Folds stratified by treatment arm.
    pub fn new(treatment: &[u8], k: usize, seed: u64) -> Result<Self> {
        let n = treatment.len();
        if k < 2 || k > n {
            return Err(GdidError::InvalidConfig(format!("fold count {k} must lie in 2..={n}")));
        }
        Ok(CrossFitPlan {
            k,
            fold_of: assign_folds(n, Some(treatment), k, seed),
            seed,
        })
    }

    /// Explicit assignment, mainly for tests.
    pub fn from_assignment(fold_of: Vec<usize>) -> Result<Self> {
        let k = fold_of.iter().copied().max().map_or(0, |m| m + 1);
        if k < 2 {
            return Err(GdidError::InvalidConfig("need at least two folds".into()));
        }
        Ok(CrossFitPlan { k, fold_of, seed: 0 })
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.fold_of {
            s[f] += 1;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitPlan {
    CrossFit(CrossFitPlan),
    /// Every model is trained on, and evaluated at, the full sample.
    NoSplit,
}

/// Which training rows produced each unit's predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub fold_of: Vec<usize>,
    /// Units used to train the models applied to fold k (all nuisances).
    pub training_sets: Vec<Vec<usize>>,
}

impl Provenance {
    /// Number of units whose predictions came from a model trained on them.
    pub fn violations(&self) -> usize {
        let n = self.fold_of.len();
        let mut count = 0;
        for (k, train) in self.training_sets.iter().enumerate() {
            let mut in_train = vec![false; n];
            for &i in train {
                in_train[i] = true;
            }
            count += (0..n).filter(|&i| self.fold_of[i] == k && in_train[i]).count();
        }
        count
    }
}

/// Outcome and propensity learners. A single [`LearnerSpec`] converts into
/// one with the same spec for both roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSpec {
    pub outcome: LearnerSpec,
    pub propensity: LearnerSpec,
}

impl From<LearnerSpec> for NuisanceSpec {
    fn from(spec: LearnerSpec) -> Self {
        NuisanceSpec {
            outcome: spec.clone(),
            propensity: spec,
        }
    }
}

impl NuisanceSpec {
    pub fn parametric() -> Self {
        NuisanceSpec {
            outcome: LearnerSpec::Linear,
            propensity: LearnerSpec::Logistic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.outcome.validate()?;
        self.propensity.validate()?;
        if self.outcome == LearnerSpec::Logistic {
            return Err(GdidError::InvalidConfig(
                "logistic learner cannot model outcomes".into(),
            ));
        }
        Ok(())
    }

    fn is_parametric(&self) -> bool {
        self.outcome == LearnerSpec::Linear && self.propensity.is_parametric()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Periods {
    /// μ₁ and π only (ignorability in the post-period).
    Post,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossFitOptions {
    pub trim_eps: f64,
    pub periods: Periods,
    /// Also fit outcome regressions on treated units (needed for the ATE).
    pub treated_arm: bool,
    pub seed: u64,
}

impl Default for CrossFitOptions {
    fn default() -> Self {
        CrossFitOptions {
            trim_eps: 0.01,
            periods: Periods::Both,
            treated_arm: false,
            seed: 0,
        }
    }
}

/// Full-sample linear/logistic fits kept for the sandwich variance.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricFits {
    pub mu1: LinearModel,
    pub mu0: LinearModel,
    pub pi: LogisticModel,
    pub pi0: LogisticModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFits {
    /// E(Y₁ | W₀, A=0) at each unit's W₀.
    pub mu1: Option<Vec<f64>>,
    /// E(Y₀ | W₋₁, A=0) at each unit's W₋₁.
    pub mu0: Option<Vec<f64>>,
    pub pi: Option<Vec<f64>>,
    pub pi0: Option<Vec<f64>>,
    /// Treated-arm analogues of `mu1` and `mu0`.
    pub mu1_treated: Option<Vec<f64>>,
    pub mu0_treated: Option<Vec<f64>>,
    pub plan: FitPlan,
    pub provenance: Option<Provenance>,
    pub parametric: Option<ParametricFits>,
    pub trim_eps: f64,
    pub lag_depth: Option<usize>,
    pub warnings: Vec<String>,
}

impl NuisanceFits {
    /// Fits supplied directly, e.g. known oracle values.
    pub fn from_predictions(mu1: Vec<f64>, mu0: Vec<f64>, pi: Vec<f64>, pi0: Vec<f64>) -> Self {
        NuisanceFits {
            mu1: Some(mu1),
            mu0: Some(mu0),
            pi: Some(pi),
            pi0: Some(pi0),
            mu1_treated: None,
            mu0_treated: None,
            plan: FitPlan::NoSplit,
            provenance: None,
            parametric: None,
            trim_eps: 0.0,
            lag_depth: None,
            warnings: Vec::new(),
        }
    }

    pub fn with_treated_arm(mut self, mu1_treated: Vec<f64>, mu0_treated: Vec<f64>) -> Self {
        self.mu1_treated = Some(mu1_treated);
        self.mu0_treated = Some(mu0_treated);
        self
    }
}

#[derive(Clone, Copy)]
enum Role {
    Mu1,
    Mu0,
    Pi,
    Pi0,
    Mu1Treated,
    Mu0Treated,
}

fn role_seed(seed: u64, fold: usize, role: Role) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fold as u64 * 8 + role as u64);
    rng.next_u64()
}

struct FoldFit {
    test: Vec<usize>,
    preds: [Option<Vec<f64>>; 6],
    models: [Option<FittedModel>; 4],
    warnings: Vec<String>,
}

/// Out-of-fold (or full-sample) predictions of μ₁, μ₀, π, π₀.
pub fn cross_fit_nuisances(
    dataset: &PanelDataset,
    cond0: &ConditioningSet,
    cond_m1: &ConditioningSet,
    spec: &NuisanceSpec,
    plan: &FitPlan,
    opts: &CrossFitOptions,
) -> Result<NuisanceFits> {
    spec.validate()?;
    let n = dataset.n_units();
    if cond0.features.n_rows() != n || cond_m1.features.n_rows() != n {
        return Err(GdidError::LengthMismatch("conditioning sets vs panel".into()));
    }
    let y1 = dataset.outcomes_at(1);
    let y0 = dataset.outcomes_at(0);
    let a = dataset.treatment();

    let folds: Vec<(Vec<usize>, Vec<usize>)> = match plan {
        FitPlan::NoSplit => vec![((0..n).collect(), (0..n).collect())],
        FitPlan::CrossFit(p) => {
            if p.fold_of.len() != n {
                return Err(GdidError::LengthMismatch("fold assignment vs panel".into()));
            }
            (0..p.k)
                .map(|k| {
                    let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| p.fold_of[i] == k);
                    (train, test)
                })
                .collect()
        }
    };

    let fit_fold = |k: usize, train: &[usize], test: &[usize]| -> Result<FoldFit> {
        let controls: Vec<usize> = train.iter().copied().filter(|&i| a[i] == 0).collect();
        let treated: Vec<usize> = train.iter().copied().filter(|&i| a[i] == 1).collect();
        if controls.is_empty() {
            return Err(GdidError::FoldWithoutControls { fold: k });
        }
        if treated.is_empty() {
            return Err(GdidError::FoldWithoutTreated { fold: k });
        }
        let mut warnings = Vec::new();
        let mut preds: [Option<Vec<f64>>; 6] = Default::default();
        let mut models: [Option<FittedModel>; 4] = Default::default();

        let mut run = |role: Role,
                       cond: &ConditioningSet,
                       rows: &[usize],
                       target: &[f64],
                       learner: &LearnerSpec,
                       task: Task|
         -> Result<()> {
            let x = cond.features.select_rows(rows);
            let y: Vec<f64> = rows.iter().map(|&i| target[i]).collect();
            let fitted = fit_learner(learner, task, &x, &y, role_seed(opts.seed, k, role))?;
            warnings.extend(fitted.warnings.iter().map(|w| format!("fold {k}: {w}")));
            let p: Vec<f64> = test
                .iter()
                .map(|&i| {
                    let v = fitted.model.predict(cond.features.row(i));
                    match task {
                        Task::Regression => v,
                        Task::Propensity => clip_propensity(v, opts.trim_eps),
                    }
                })
                .collect();
            preds[role as usize] = Some(p);
            if (role as usize) < 4 {
                models[role as usize] = Some(fitted.model);
            }
            Ok(())
        };

        let af: Vec<f64> = a.iter().map(|&v| v as f64).collect();
        run(Role::Mu1, cond0, &controls, &y1, &spec.outcome, Task::Regression)?;
        run(Role::Pi, cond0, train, &af, &spec.propensity, Task::Propensity)?;
        if opts.periods == Periods::Both {
            run(Role::Mu0, cond_m1, &controls, &y0, &spec.outcome, Task::Regression)?;
            run(Role::Pi0, cond_m1, train, &af, &spec.propensity, Task::Propensity)?;
        }
        if opts.treated_arm {
            run(Role::Mu1Treated, cond0, &treated, &y1, &spec.outcome, Task::Regression)?;
            if opts.periods == Periods::Both {
                run(
                    Role::Mu0Treated,
                    cond_m1,
                    &treated,
                    &y0,
                    &spec.outcome,
                    Task::Regression,
                )?;
            }
        }
        Ok(FoldFit {
            test: test.to_vec(),
            preds,
            models,
            warnings,
        })
    };

    let fold_fits: Vec<FoldFit> = folds
        .par_iter()
        .enumerate()
        .map(|(k, (train, test))| fit_fold(k, train, test))
        .collect::<Result<Vec<_>>>()?;

    let mut out: [Option<Vec<f64>>; 6] = Default::default();
    for (slot, col) in out.iter_mut().enumerate() {
        if fold_fits[0].preds[slot].is_none() {
            continue;
        }
        let mut v = vec![0.0; n];
        for ff in &fold_fits {
            for (&i, &p) in ff.test.iter().zip(ff.preds[slot].as_ref().unwrap()) {
                v[i] = p;
            }
        }
        *col = Some(v);
    }
    let warnings: Vec<String> = fold_fits.iter().flat_map(|f| f.warnings.iter().cloned()).collect();

    let provenance = match plan {
        FitPlan::CrossFit(p) => Some(Provenance {
            fold_of: p.fold_of.clone(),
            training_sets: folds.iter().map(|(train, _)| train.clone()).collect(),
        }),
        FitPlan::NoSplit => None,
    };

    let parametric = if matches!(plan, FitPlan::NoSplit) && spec.is_parametric() && opts.periods == Periods::Both {
        let [m1, m0, p1, p0] = fold_fits.into_iter().next().unwrap().models;
        Some(ParametricFits {
            mu1: as_linear(m1.unwrap(), cond0.width()),
            mu0: as_linear(m0.unwrap(), cond_m1.width()),
            pi: as_logistic(p1.unwrap(), cond0.width()),
            pi0: as_logistic(p0.unwrap(), cond_m1.width()),
        })
    } else {
        None
    };

    let [mu1, mu0, pi, pi0, mu1_treated, mu0_treated] = out;
    Ok(NuisanceFits {
        mu1,
        mu0,
        pi,
        pi0,
        mu1_treated,
        mu0_treated,
        plan: plan.clone(),
        provenance,
        parametric,
        trim_eps: opts.trim_eps,
        lag_depth: (cond0.lag_depth == cond_m1.lag_depth).then_some(cond0.lag_depth),
        warnings,
    })
}

fn as_linear(m: FittedModel, width: usize) -> LinearModel {
    match m {
        FittedModel::Linear(l) => l,
        FittedModel::Constant(c) => LinearModel {
            intercept: c,
            coef: vec![0.0; width],
            ridge: false,
        },
        other => unreachable!("parametric path produced {other:?}"),
    }
}

fn as_logistic(m: FittedModel, width: usize) -> LogisticModel {
    match m {
        FittedModel::Logistic(l) => l,
        FittedModel::Constant(c) => LogisticModel {
            intercept: logit(c.clamp(1e-12, 1.0 - 1e-12)),
            coef: vec![0.0; width],
            separation: false,
            iterations: 0,
            converged: true,
        },
        other => unreachable!("parametric path produced {other:?}"),
    }
}

/// Convenience: conditioning sets, plan, and fits for a given lag depth.
pub fn fit_for_lags(
    dataset: &PanelDataset,
    lag_depth: usize,
    spec: &NuisanceSpec,
    plan: &FitPlan,
    opts: &CrossFitOptions,
) -> Result<NuisanceFits> {
    let cond0 = crate::panel::build_conditioning(dataset, 0, lag_depth)?;
    let cond_m1 = if opts.periods == Periods::Both {
        crate::panel::build_conditioning(dataset, -1, lag_depth)?
    } else {
        cond0.clone()
    };
    cross_fit_nuisances(dataset, &cond0, &cond_m1, spec, plan, opts)
}

/// Out-of-fold predictions for an arbitrary regression target; used where
/// the four standard nuisances do not apply.
pub fn cross_fit_column(
    features: &FeatureMatrix,
    target: &[f64],
    train_mask: &[bool],
    fold_of: Option<&[usize]>,
    learner: &LearnerSpec,
    task: Task,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = features.n_rows();
    let k = fold_of.map_or(1, |f| f.iter().copied().max().map_or(0, |m| m + 1));
    let per_fold: Vec<Vec<(usize, f64)>> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let in_fold = |i: usize| fold_of.map_or(true, |f| f[i] == fold);
            let train: Vec<usize> = (0..n)
                .filter(|&i| train_mask[i] && (fold_of.is_none() || !in_fold(i)))
                .collect();
            if train.is_empty() {
                return Err(GdidError::FoldWithoutControls { fold });
            }
            let x = features.select_rows(&train);
            let y: Vec<f64> = train.iter().map(|&i| target[i]).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(fold as u64);
            let fitted = fit_learner(learner, task, &x, &y, rng.next_u64())?;
            Ok((0..n)
                .filter(|&i| in_fold(i))
                .map(|i| (i, fitted.model.predict(features.row(i))))
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![0.0; n];
    for fold in per_fold {
        for (i, v) in fold {
            out[i] = v;
        }
    }
    Ok(out)
}
