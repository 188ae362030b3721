//! Standard errors and confidence intervals from influence contributions.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{GdidError, Result};
use crate::estimators::{AttEstimate, Estimand};
use crate::learners::logistic::expit;
use crate::learners::FitPlan;
use crate::learners::NuisanceFits;
use crate::panel::{ConditioningSet, PanelDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    Plugin,
    MultiplierBootstrap,
    Sandwich,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceEstimate {
    /// Variance of a single contribution, on the scale of the denominator.
    pub sigma2_hat: f64,
    /// Standard error of the point estimate.
    pub se: f64,
    pub method: VarianceMethod,
    pub scale_note: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub method: VarianceMethod,
}

const PLUGIN_NOTE: &str =
    "sigma2 = sum((phi_i - c_i)^2) / d with c_i = A_i*tau for the ATT; se = sqrt(sigma2 / d), d = denominator";

/// `Σ (ψᵢ − cᵢ)² / d`, with `cᵢ = τ̂` unless centering values are given.
pub fn plugin_sigma2(influence: &[f64], centering: Option<&[f64]>, tau_hat: f64, denominator: f64) -> f64 {
    let ss: f64 = match centering {
        None => influence.iter().map(|&p| (p - tau_hat).powi(2)).sum(),
        Some(c) => influence.iter().zip(c).map(|(&p, &c)| (p - c).powi(2)).sum(),
    };
    ss / denominator
}

pub fn plugin_variance(estimate: &AttEstimate) -> Result<VarianceEstimate> {
    if estimate.influence.is_empty() {
        return Err(GdidError::EmptyInfluence);
    }
    let d = estimate.denominator;
    let sigma2 = plugin_sigma2(&estimate.influence, estimate.centering.as_deref(), estimate.tau_hat, d);
    Ok(VarianceEstimate {
        sigma2_hat: sigma2,
        se: (sigma2 / d).sqrt(),
        method: VarianceMethod::Plugin,
        scale_note: PLUGIN_NOTE.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightDist {
    /// Exp(1): mean 1, variance 1.
    #[default]
    Exponential,
    /// 1 + Mammen's two-point variable.
    Mammen,
    /// N(1, 1)
    Normal,
}

impl WeightDist {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            WeightDist::Exponential => Exp1.sample(rng),
            WeightDist::Mammen => {
                let s5 = 5.0_f64.sqrt();
                let p_low = (s5 + 1.0) / (2.0 * s5);
                let v = if rng.gen::<f64>() < p_low {
                    (1.0 - s5) / 2.0
                } else {
                    (1.0 + s5) / 2.0
                };
                1.0 + v
            }
            WeightDist::Normal => {
                let z: f64 = StandardNormal.sample(rng);
                1.0 + z
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub b: usize,
    pub weight_dist: WeightDist,
    pub seed: u64,
    pub level: f64,
}

impl BootstrapConfig {
    pub fn new(b: usize, weight_dist: WeightDist, seed: u64) -> Result<Self> {
        let cfg = BootstrapConfig {
            b,
            weight_dist,
            seed,
            level: 0.95,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.b < 100 {
            return Err(GdidError::InvalidConfig(format!(
                "bootstrap needs at least 100 replicates, got {}",
                self.b
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(GdidError::InvalidConfig(format!("level {} outside (0, 1)", self.level)));
        }
        Ok(())
    }
}

/// `τ*_b = Σ Gᵢ ψᵢ / d` for b = 0..B, drawing weights with `draw`. Replicate
/// b uses its own ChaCha stream, so the output does not depend on threading.
pub fn bootstrap_replicates<F>(influence: &[f64], denominator: f64, b: usize, seed: u64, draw: F) -> Vec<f64>
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            influence.iter().map(|&p| draw(&mut rng) * p).sum::<f64>() / denominator
        })
        .collect()
}

/// Type-7 empirical quantile of sorted data.
pub fn type7_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0);
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Summaries of a set of bootstrap replicates.
pub fn summarize_replicates(
    replicates: &[f64],
    denominator: f64,
    level: f64,
) -> (VarianceEstimate, ConfidenceInterval) {
    let var = sample_variance(replicates);
    let mut sorted = replicates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    let ci = ConfidenceInterval {
        lower: type7_quantile(&sorted, alpha / 2.0),
        upper: type7_quantile(&sorted, 1.0 - alpha / 2.0),
        level,
        method: VarianceMethod::MultiplierBootstrap,
    };
    let v = VarianceEstimate {
        sigma2_hat: var * denominator,
        se: var.sqrt(),
        method: VarianceMethod::MultiplierBootstrap,
        scale_note: "se = sd of multiplier replicates; sigma2 = se^2 * denominator".into(),
    };
    (v, ci)
}

pub fn multiplier_bootstrap(
    estimate: &AttEstimate,
    config: &BootstrapConfig,
) -> Result<(VarianceEstimate, ConfidenceInterval)> {
    config.validate()?;
    if estimate.influence.is_empty() {
        return Err(GdidError::EmptyInfluence);
    }
    let dist = config.weight_dist;
    let reps = bootstrap_replicates(
        &estimate.influence,
        estimate.denominator,
        config.b,
        config.seed,
        |rng| dist.sample(rng),
    );
    Ok(summarize_replicates(&reps, estimate.denominator, config.level))
}

pub fn z_quantile(level: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(1.0 - (1.0 - level) / 2.0)
}

/// `τ̂ ± z·se`.
pub fn confidence_interval(tau_hat: f64, variance: &VarianceEstimate, level: f64) -> Result<ConfidenceInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(GdidError::InvalidConfig(format!("level {level} outside (0, 1)")));
    }
    let half = z_quantile(level) * variance.se;
    Ok(ConfidenceInterval {
        lower: tau_hat - half,
        upper: tau_hat + half,
        level,
        method: variance.method,
    })
}

/// Stacked estimating-equation (sandwich) variance for gDiD with full-sample
/// linear outcome and logistic propensity models.
///
/// Parameters are ordered (β₁, β₀, α, α₀, τ); the returned `se²` is the
/// (τ, τ) entry of `J⁻¹ B J⁻ᵀ / n`. Propensities are recomputed from the
/// coefficients without trimming.
pub fn sandwich_variance(
    dataset: &PanelDataset,
    cond0: &ConditioningSet,
    cond_m1: &ConditioningSet,
    fits: &NuisanceFits,
    estimate: &AttEstimate,
) -> Result<VarianceEstimate> {
    if !matches!(fits.plan, FitPlan::NoSplit) {
        return Err(GdidError::NotParametricPath);
    }
    let par = fits.parametric.as_ref().ok_or(GdidError::NotParametricPath)?;
    if !matches!(estimate.estimand, Estimand::Gdid | Estimand::Cdid) {
        return Err(GdidError::InvalidConfig(format!(
            "sandwich variance is implemented for gdid/cdid, not {}",
            estimate.estimand.name()
        )));
    }
    let n = dataset.n_units();
    let q0 = cond0.width() + 1;
    let q1 = cond_m1.width() + 1;
    let dim = 2 * q0 + 2 * q1 + 1;
    let (ob1, ob0, oa, oa0, ot) = (0, q0, q0 + q1, 2 * q0 + q1, 2 * q0 + 2 * q1);

    let y1 = dataset.outcomes_at(1);
    let y0 = dataset.outcomes_at(0);
    let a = dataset.treatment();
    let design = |c: &ConditioningSet, i: usize| -> Vec<f64> {
        let mut v = Vec::with_capacity(c.width() + 1);
        v.push(1.0);
        v.extend_from_slice(c.features.row(i));
        v
    };

    // brackets and tau from the unclipped parametric nuisances
    let mut rows = Vec::with_capacity(n);
    let mut sum_bracket = 0.0;
    for i in 0..n {
        let x0 = design(cond0, i);
        let x1 = design(cond_m1, i);
        let mu1 = par.mu1.predict(cond0.features.row(i));
        let mu0 = par.mu0.predict(cond_m1.features.row(i));
        let p = expit(par.pi.linear_predictor(cond0.features.row(i)));
        let p0 = expit(par.pi0.linear_predictor(cond_m1.features.row(i)));
        if p >= 1.0 || p0 >= 1.0 {
            return Err(GdidError::SingularJacobian);
        }
        let ai = a[i] as f64;
        let post = y1[i] * ai - ((1.0 - ai) * p * y1[i] + (ai - p) * mu1) / (1.0 - p);
        let pre = y0[i] * ai - ((1.0 - ai) * p0 * y0[i] + (ai - p0) * mu0) / (1.0 - p0);
        sum_bracket += post - pre;
        rows.push((x0, x1, mu1, mu0, p, p0, ai, post - pre));
    }
    let n1: f64 = a.iter().map(|&v| v as f64).sum();
    let tau = sum_bracket / n1;

    let mut jac = DMatrix::<f64>::zeros(dim, dim);
    let mut meat = DMatrix::<f64>::zeros(dim, dim);
    let mut m = DVector::<f64>::zeros(dim);
    for (i, (x0, x1, mu1, mu0, p, p0, ai, bracket)) in rows.iter().enumerate() {
        let (ai, p, p0) = (*ai, *p, *p0);
        let r1 = y1[i] - mu1;
        let r0 = y0[i] - mu0;
        m.fill(0.0);
        for k in 0..q0 {
            m[ob1 + k] = (1.0 - ai) * r1 * x0[k];
            m[oa + k] = (ai - p) * x0[k];
        }
        for k in 0..q1 {
            m[ob0 + k] = (1.0 - ai) * r0 * x1[k];
            m[oa0 + k] = (ai - p0) * x1[k];
        }
        m[ot] = bracket - ai * tau;
        meat.ger(1.0, &m, &m, 1.0);

        let w = p * (1.0 - p);
        let w0 = p0 * (1.0 - p0);
        for r in 0..q0 {
            for c in 0..q0 {
                jac[(ob1 + r, ob1 + c)] -= (1.0 - ai) * x0[r] * x0[c];
                jac[(oa + r, oa + c)] -= w * x0[r] * x0[c];
            }
        }
        for r in 0..q1 {
            for c in 0..q1 {
                jac[(ob0 + r, ob0 + c)] -= (1.0 - ai) * x1[r] * x1[c];
                jac[(oa0 + r, oa0 + c)] -= w0 * x1[r] * x1[c];
            }
        }
        for k in 0..q0 {
            jac[(ot, ob1 + k)] -= (ai - p) / (1.0 - p) * x0[k];
            jac[(ot, oa + k)] -= (1.0 - ai) * r1 * p / (1.0 - p) * x0[k];
        }
        for k in 0..q1 {
            jac[(ot, ob0 + k)] += (ai - p0) / (1.0 - p0) * x1[k];
            jac[(ot, oa0 + k)] += (1.0 - ai) * r0 * p0 / (1.0 - p0) * x1[k];
        }
        jac[(ot, ot)] -= ai;
    }
    let nf = n as f64;
    jac /= nf;
    meat /= nf;
    let jinv = jac.try_inverse().ok_or(GdidError::SingularJacobian)?;
    let row = jinv.row(ot).transpose();
    let var_tau = (row.transpose() * &meat * &row)[(0, 0)] / nf;
    if !var_tau.is_finite() {
        return Err(GdidError::SingularJacobian);
    }
    let var_tau = var_tau.max(0.0);
    Ok(VarianceEstimate {
        sigma2_hat: var_tau * estimate.denominator,
        se: var_tau.sqrt(),
        method: VarianceMethod::Sandwich,
        scale_note: "se^2 = (J^-1 B J^-T / n)[tau,tau]; sigma2 = se^2 * denominator".into(),
    })
}
