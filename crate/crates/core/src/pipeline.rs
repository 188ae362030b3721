//! One-dataset estimation: nuisance fitting, point estimate, variance, CI.
//!
//! A [`Pipeline`] owns a single fold assignment and caches nuisance fits per
//! (lag depth, nuisance mode), so estimators that share nuisances (gDiD-k and
//! the ignorability estimator with k lags) are fitted once.

use std::collections::HashMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GdidError, Result};
use crate::estimators::{
    estimate_aipw_att, estimate_ate_gdid, estimate_cdid, estimate_did, estimate_gdid, AttEstimate, Period,
};
use crate::inference::{
    confidence_interval, multiplier_bootstrap, plugin_variance, sandwich_variance, BootstrapConfig, ConfidenceInterval,
    VarianceEstimate, WeightDist,
};
use crate::learners::{fit_for_lags, CrossFitOptions, CrossFitPlan, FitPlan, NuisanceFits, NuisanceSpec, Periods};
use crate::panel::{build_conditioning, PanelDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "snake_case")]
pub enum EstimatorKind {
    Did,
    /// gDiD without outcome lags.
    Cdid,
    Gdid {
        lags: usize,
    },
    IgnorabilityPost {
        lags: usize,
    },
    IgnorabilityPre {
        lags: usize,
    },
    AteGdid {
        lags: usize,
    },
}

impl EstimatorKind {
    pub fn lags(&self) -> Option<usize> {
        match *self {
            EstimatorKind::Did => None,
            EstimatorKind::Cdid => Some(0),
            EstimatorKind::Gdid { lags }
            | EstimatorKind::IgnorabilityPost { lags }
            | EstimatorKind::IgnorabilityPre { lags }
            | EstimatorKind::AteGdid { lags } => Some(lags),
        }
    }

    fn needs(&self) -> (Periods, bool) {
        match self {
            EstimatorKind::IgnorabilityPost { .. } => (Periods::Post, false),
            EstimatorKind::AteGdid { .. } => (Periods::Both, true),
            _ => (Periods::Both, false),
        }
    }
}

/// How the nuisance functions are fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceMode {
    /// K-fold cross-fitting with the configured learners.
    #[default]
    CrossFit,
    /// Linear outcome / logistic propensity fitted on the full sample.
    Parametric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMethod {
    #[default]
    Plugin,
    Bootstrap,
    Sandwich,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineOptions {
    pub nuisance: NuisanceSpec,
    pub folds: usize,
    pub trim_eps: f64,
    pub seed: u64,
    pub level: f64,
    pub bootstrap_b: usize,
    pub weight_dist: WeightDist,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            nuisance: crate::learners::LearnerSpec::default_ensemble().into(),
            folds: 2,
            trim_eps: 0.01,
            seed: 0,
            level: 0.95,
            bootstrap_b: 999,
            weight_dist: WeightDist::Exponential,
        }
    }
}

impl PipelineOptions {
    pub fn validate(&self) -> Result<()> {
        self.nuisance.validate()?;
        if self.folds < 2 {
            return Err(GdidError::InvalidConfig(format!(
                "need at least 2 folds, got {}",
                self.folds
            )));
        }
        if !(self.trim_eps > 0.0 && self.trim_eps < 0.5) {
            return Err(GdidError::InvalidConfig(format!(
                "trim_eps {} outside (0, 0.5)",
                self.trim_eps
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(GdidError::InvalidConfig(format!("level {} outside (0, 1)", self.level)));
        }
        Ok(())
    }

    pub(crate) fn sub_seed(&self, stream: u64) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng.next_u64()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub estimate: AttEstimate,
    pub variance: VarianceEstimate,
    pub ci: ConfidenceInterval,
    pub warnings: Vec<String>,
}

pub struct Pipeline<'a> {
    dataset: &'a PanelDataset,
    opts: PipelineOptions,
    plan: Option<CrossFitPlan>,
    cache: HashMap<(usize, NuisanceMode), NuisanceFits>,
}

impl<'a> Pipeline<'a> {
    pub fn new(dataset: &'a PanelDataset, opts: PipelineOptions) -> Result<Self> {
        opts.validate()?;
        Ok(Pipeline {
            dataset,
            opts,
            plan: None,
            cache: HashMap::new(),
        })
    }

    pub fn options(&self) -> &PipelineOptions {
        &self.opts
    }

    fn plan(&mut self, mode: NuisanceMode) -> Result<FitPlan> {
        if mode == NuisanceMode::Parametric {
            return Ok(FitPlan::NoSplit);
        }
        if self.plan.is_none() {
            self.plan = Some(CrossFitPlan::new(
                self.dataset.treatment(),
                self.opts.folds,
                self.opts.sub_seed(1),
            )?);
        }
        Ok(FitPlan::CrossFit(self.plan.clone().unwrap()))
    }

    /// Fit everything the listed estimators need in one pass per key.
    pub fn prefetch(&mut self, wanted: &[(EstimatorKind, NuisanceMode)]) -> Result<()> {
        let mut need: Vec<((usize, NuisanceMode), (Periods, bool))> = Vec::new();
        for (kind, mode) in wanted {
            let Some(lags) = kind.lags() else { continue };
            let (p, t) = kind.needs();
            match need.iter_mut().find(|(k, _)| *k == (lags, *mode)) {
                Some((_, cur)) => *cur = union(*cur, (p, t)),
                None => need.push(((lags, *mode), (p, t))),
            }
        }
        for ((lags, mode), req) in need {
            self.fits(lags, mode, req)?;
        }
        Ok(())
    }

    fn fits(&mut self, lags: usize, mode: NuisanceMode, req: (Periods, bool)) -> Result<&NuisanceFits> {
        let key = (lags, mode);
        let covered = self.cache.get(&key).is_some_and(|f| covers(f, req));
        if !covered {
            let req = match self.cache.get(&key) {
                Some(f) => union(have(f), req),
                None => req,
            };
            let plan = self.plan(mode)?;
            let spec = match mode {
                NuisanceMode::CrossFit => self.opts.nuisance.clone(),
                NuisanceMode::Parametric => NuisanceSpec::parametric(),
            };
            let opts = CrossFitOptions {
                trim_eps: self.opts.trim_eps,
                periods: req.0,
                treated_arm: req.1,
                seed: self.opts.sub_seed(2),
            };
            let fits = fit_for_lags(self.dataset, lags, &spec, &plan, &opts)?;
            self.cache.insert(key, fits);
        }
        Ok(&self.cache[&key])
    }

    pub fn estimate(&mut self, kind: EstimatorKind, mode: NuisanceMode) -> Result<(AttEstimate, Vec<String>)> {
        let ds = self.dataset;
        let eps = self.opts.trim_eps;
        let Some(lags) = kind.lags() else {
            return Ok((estimate_did(ds)?, Vec::new()));
        };
        let fits = self.fits(lags, mode, kind.needs())?;
        let est = match kind {
            EstimatorKind::Did => unreachable!(),
            EstimatorKind::Cdid => estimate_cdid(ds, fits, eps)?,
            EstimatorKind::Gdid { .. } => estimate_gdid(ds, fits, eps)?,
            EstimatorKind::IgnorabilityPost { .. } => estimate_aipw_att(ds, Period::Post, fits, eps)?,
            EstimatorKind::IgnorabilityPre { .. } => estimate_aipw_att(ds, Period::Pre, fits, eps)?,
            EstimatorKind::AteGdid { .. } => estimate_ate_gdid(ds, fits, eps)?,
        };
        Ok((est, fits.warnings.clone()))
    }

    pub fn run(
        &mut self,
        kind: EstimatorKind,
        mode: NuisanceMode,
        inference: InferenceMethod,
    ) -> Result<EstimateReport> {
        let (estimate, warnings) = self.estimate(kind, mode)?;
        let level = self.opts.level;
        let (variance, ci) = match inference {
            InferenceMethod::Plugin => {
                let v = plugin_variance(&estimate)?;
                let ci = confidence_interval(estimate.tau_hat, &v, level)?;
                (v, ci)
            }
            InferenceMethod::Bootstrap => {
                let cfg = BootstrapConfig {
                    b: self.opts.bootstrap_b,
                    weight_dist: self.opts.weight_dist,
                    seed: self.opts.sub_seed(3),
                    level,
                };
                multiplier_bootstrap(&estimate, &cfg)?
            }
            InferenceMethod::Sandwich => {
                if !matches!(kind, EstimatorKind::Gdid { .. } | EstimatorKind::Cdid) {
                    return Err(GdidError::InvalidConfig(
                        "sandwich variance is available for gdid and cdid only".into(),
                    ));
                }
                if mode != NuisanceMode::Parametric {
                    return Err(GdidError::NotParametricPath);
                }
                let lags = kind.lags().unwrap_or(0);
                let cond0 = build_conditioning(self.dataset, 0, lags)?;
                let cond_m1 = build_conditioning(self.dataset, -1, lags)?;
                let ds = self.dataset;
                let fits = self.fits(lags, mode, kind.needs())?;
                let v = sandwich_variance(ds, &cond0, &cond_m1, fits, &estimate)?;
                let ci = confidence_interval(estimate.tau_hat, &v, level)?;
                (v, ci)
            }
        };
        Ok(EstimateReport {
            estimate,
            variance,
            ci,
            warnings,
        })
    }
}

fn have(f: &NuisanceFits) -> (Periods, bool) {
    let p = if f.mu0.is_some() && f.pi0.is_some() {
        Periods::Both
    } else {
        Periods::Post
    };
    (p, f.mu1_treated.is_some())
}

fn covers(f: &NuisanceFits, req: (Periods, bool)) -> bool {
    let h = have(f);
    (h.0 == Periods::Both || req.0 == Periods::Post) && (h.1 || !req.1)
}

fn union(a: (Periods, bool), b: (Periods, bool)) -> (Periods, bool) {
    let p = if a.0 == Periods::Both || b.0 == Periods::Both {
        Periods::Both
    } else {
        Periods::Post
    };
    (p, a.1 || b.1)
}

/// Convenience wrapper for a single estimator on one dataset.
pub fn run_estimator(
    dataset: &PanelDataset,
    kind: EstimatorKind,
    mode: NuisanceMode,
    inference: InferenceMethod,
    opts: &PipelineOptions,
) -> Result<EstimateReport> {
    Pipeline::new(dataset, opts.clone())?.run(kind, mode, inference)
}
