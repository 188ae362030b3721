//! Point estimators: AIPW ignorability, gDiD, DiD, conditional DiD, ATE.
//!
//! Every estimator returns uncentered per-unit contributions whose sum over
//! the denominator (treated count for ATT estimands) is the point estimate.

use serde::{Deserialize, Serialize};

use crate::error::{GdidError, Result};
use crate::learners::{FitPlan, NuisanceFits};
use crate::panel::PanelDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    Gdid,
    IgnorabilityPost,
    IgnorabilityPre,
    Did,
    Cdid,
    AteGdid,
    GroupTime,
    Aggregated,
    ClusteredGdid,
}

impl Estimand {
    pub fn name(&self) -> &'static str {
        match self {
            Estimand::Gdid => "gdid",
            Estimand::IgnorabilityPost => "ignorability_post",
            Estimand::IgnorabilityPre => "ignorability_pre",
            Estimand::Did => "did",
            Estimand::Cdid => "cdid",
            Estimand::AteGdid => "ate_gdid",
            Estimand::GroupTime => "group_time",
            Estimand::Aggregated => "aggregated",
            Estimand::ClusteredGdid => "clustered_gdid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttEstimate {
    pub estimand: Estimand,
    pub tau_hat: f64,
    /// Uncentered contributions: `tau_hat == influence.sum() / denominator`.
    pub influence: Vec<f64>,
    /// Treated count for ATT estimands, sample size for the ATE, treated
    /// unit count for clustered estimates.
    pub denominator: f64,
    /// Value subtracted from each entry in the plug-in variance: `Aᵢ·τ̂` for
    /// ATT estimands, per-group effects for aggregates. `None` means `τ̂`
    /// for every entry, as for the ATE.
    pub centering: Option<Vec<f64>>,
    pub n: usize,
    pub n_treated: usize,
    pub trim_eps: f64,
    pub lag_depth: Option<usize>,
    /// Short description of how the nuisances were fitted.
    pub nuisance: Option<String>,
}

impl AttEstimate {
    pub(crate) fn from_influence(
        estimand: Estimand,
        influence: Vec<f64>,
        denominator: f64,
        n_treated: usize,
        trim_eps: f64,
    ) -> Self {
        let tau_hat = influence.iter().sum::<f64>() / denominator;
        AttEstimate {
            estimand,
            tau_hat,
            n: influence.len(),
            influence,
            denominator,
            centering: None,
            n_treated,
            trim_eps,
            lag_depth: None,
            nuisance: None,
        }
    }

    /// Center entry i at `mass_i·τ̂`.
    pub(crate) fn with_mass(mut self, mass: &[f64]) -> Self {
        self.centering = Some(mass.iter().map(|m| m * self.tau_hat).collect());
        self
    }

    fn with_fits(mut self, fits: &NuisanceFits) -> Self {
        self.lag_depth = fits.lag_depth;
        self.nuisance = Some(match &fits.plan {
            FitPlan::NoSplit => "no-split".to_string(),
            FitPlan::CrossFit(p) => format!("cross-fit K={}", p.k),
        });
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Period {
    /// t = 0
    Pre,
    /// t = 1
    Post,
}

impl Period {
    pub fn time(&self) -> i64 {
        match self {
            Period::Pre => 0,
            Period::Post => 1,
        }
    }
}

/// `Y·A − [(1−A)·π·Y + (A−π)·μ] / (1−π)` with π clipped to at most `1 − eps`.
pub fn aipw_summands(y: &[f64], a: &[u8], pi: &[f64], mu: &[f64], trim_eps: f64) -> Vec<f64> {
    let hi = 1.0 - trim_eps;
    y.iter()
        .zip(a)
        .zip(pi.iter().zip(mu))
        .map(|((&y, &a), (&p, &m))| {
            let a = a as f64;
            let p = p.min(hi);
            debug_assert!(p < 1.0, "propensity of one survives clipping");
            y * a - ((1.0 - a) * p * y + (a - p) * m) / (1.0 - p)
        })
        .collect()
}

fn check_len(v: &[f64], n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(GdidError::LengthMismatch(format!(
            "{what} has {} entries for {n} units",
            v.len()
        )));
    }
    Ok(())
}

fn treated_count(dataset: &PanelDataset) -> Result<usize> {
    match dataset.n_treated() {
        0 => Err(GdidError::NoTreated),
        n1 => Ok(n1),
    }
}

fn period_parts<'a>(fits: &'a NuisanceFits, period: Period) -> Result<(&'a [f64], &'a [f64])> {
    match period {
        Period::Post => Ok((
            fits.pi.as_deref().ok_or(GdidError::MissingFits("pi"))?,
            fits.mu1.as_deref().ok_or(GdidError::MissingFits("mu1"))?,
        )),
        Period::Pre => Ok((
            fits.pi0.as_deref().ok_or(GdidError::MissingFits("pi0"))?,
            fits.mu0.as_deref().ok_or(GdidError::MissingFits("mu0"))?,
        )),
    }
}

/// AIPW estimate of the ignorability ATT at t = 1 or its pre-period analogue at t = 0.
pub fn estimate_aipw_att(
    dataset: &PanelDataset,
    period: Period,
    fits: &NuisanceFits,
    trim_eps: f64,
) -> Result<AttEstimate> {
    let n1 = treated_count(dataset)?;
    let n = dataset.n_units();
    let (pi, mu) = period_parts(fits, period)?;
    check_len(pi, n, "propensity")?;
    check_len(mu, n, "outcome regression")?;
    let y = dataset.outcomes_at(period.time());
    let infl = aipw_summands(&y, dataset.treatment(), pi, mu, trim_eps);
    let estimand = match period {
        Period::Post => Estimand::IgnorabilityPost,
        Period::Pre => Estimand::IgnorabilityPre,
    };
    Ok(AttEstimate::from_influence(estimand, infl, n1 as f64, n1, trim_eps)
        .with_mass(&treated_mass(dataset))
        .with_fits(fits))
}

pub(crate) fn treated_mass(dataset: &PanelDataset) -> Vec<f64> {
    dataset.treatment().iter().map(|&a| a as f64).collect()
}

/// Post-period AIPW minus its pre-period analogue, summand by summand.
pub fn estimate_gdid(dataset: &PanelDataset, fits: &NuisanceFits, trim_eps: f64) -> Result<AttEstimate> {
    let post = estimate_aipw_att(dataset, Period::Post, fits, trim_eps)?;
    let pre = estimate_aipw_att(dataset, Period::Pre, fits, trim_eps)?;
    let infl: Vec<f64> = post.influence.iter().zip(&pre.influence).map(|(a, b)| a - b).collect();
    Ok(
        AttEstimate::from_influence(Estimand::Gdid, infl, post.denominator, post.n_treated, trim_eps)
            .with_mass(&treated_mass(dataset))
            .with_fits(fits),
    )
}

/// Conditional DiD: the gDiD pipeline on covariates only (no outcome lags).
pub fn estimate_cdid(dataset: &PanelDataset, fits: &NuisanceFits, trim_eps: f64) -> Result<AttEstimate> {
    if let Some(l) = fits.lag_depth {
        if l != 0 {
            return Err(GdidError::InvalidConfig(format!(
                "conditional DiD needs fits without outcome lags, got lag depth {l}"
            )));
        }
    }
    let mut est = estimate_gdid(dataset, fits, trim_eps)?;
    est.estimand = Estimand::Cdid;
    Ok(est)
}

/// Unadjusted two-group, two-period DiD, written as the AIPW summand with
/// μ = mean control change: `A(D − D̄₀) − (1−A)(n₁/n₀)(D − D̄₀)`.
pub fn estimate_did(dataset: &PanelDataset) -> Result<AttEstimate> {
    let n1 = treated_count(dataset)?;
    let n0 = dataset.n_units() - n1;
    if n0 == 0 {
        return Err(GdidError::InvalidPanel("no control units".into()));
    }
    let ratio = n1 as f64 / n0 as f64;
    let a = dataset.treatment();
    let d: Vec<f64> = dataset
        .outcomes_at(1)
        .iter()
        .zip(dataset.outcomes_at(0))
        .map(|(post, pre)| post - pre)
        .collect();
    let d0 = (0..d.len()).filter(|&i| a[i] == 0).map(|i| d[i]).sum::<f64>() / n0 as f64;
    let infl = d
        .iter()
        .zip(a)
        .map(|(&di, &ai)| if ai == 1 { di - d0 } else { -ratio * (di - d0) })
        .collect();
    Ok(AttEstimate::from_influence(Estimand::Did, infl, n1 as f64, n1, 0.0).with_mass(&treated_mass(dataset)))
}

/// `m1 − m0 + A(Y − m1)/π − (1−A)(Y − m0)/(1−π)` with π clipped to `[ε, 1−ε]`.
fn aipw_ate_summands(y: &[f64], a: &[u8], pi: &[f64], m1: &[f64], m0: &[f64], trim_eps: f64) -> Vec<f64> {
    (0..y.len())
        .map(|i| {
            let p = pi[i].clamp(trim_eps, 1.0 - trim_eps);
            let ai = a[i] as f64;
            m1[i] - m0[i] + ai * (y[i] - m1[i]) / p - (1.0 - ai) * (y[i] - m0[i]) / (1.0 - p)
        })
        .collect()
}

/// ATE version of gDiD: post-period AIPW ATE minus the pre-period one.
pub fn estimate_ate_gdid(dataset: &PanelDataset, fits: &NuisanceFits, trim_eps: f64) -> Result<AttEstimate> {
    let n1 = treated_count(dataset)?;
    let n = dataset.n_units();
    let (m1_post, m1_pre) = match (&fits.mu1_treated, &fits.mu0_treated) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(GdidError::MissingTreatedArmFits),
    };
    let (pi, mu1) = period_parts(fits, Period::Post)?;
    let (pi0, mu0) = period_parts(fits, Period::Pre)?;
    for (v, what) in [(pi, "pi"), (mu1, "mu1"), (pi0, "pi0"), (mu0, "mu0")] {
        check_len(v, n, what)?;
    }
    check_len(m1_post, n, "treated-arm mu1")?;
    check_len(m1_pre, n, "treated-arm mu0")?;
    let a = dataset.treatment();
    let post = aipw_ate_summands(&dataset.outcomes_at(1), a, pi, m1_post, mu1, trim_eps);
    let pre = aipw_ate_summands(&dataset.outcomes_at(0), a, pi0, m1_pre, mu0, trim_eps);
    let infl = post.iter().zip(&pre).map(|(a, b)| a - b).collect();
    Ok(AttEstimate::from_influence(Estimand::AteGdid, infl, n as f64, n1, trim_eps).with_fits(fits))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputationKind {
    EtaIgn,
    EtaCdid,
    EtaGdid,
}

/// Per-unit pieces an imputation may need.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ImputationInputs {
    /// Y₀ for the unit.
    pub y0: Option<f64>,
    /// μ̂₁(W₀)
    pub mu1_w0: Option<f64>,
    /// μ̂₀(W₋₁)
    pub mu0_wm1: Option<f64>,
    /// Δ̂(X) = E(Y₁ − Y₀ | X, A=0)
    pub delta: Option<f64>,
}

/// Imputed untreated post-period outcome for one unit.
pub fn impute_counterfactual(kind: ImputationKind, inputs: &ImputationInputs) -> Result<f64> {
    let get = |v: Option<f64>, what: &'static str| v.ok_or(GdidError::MissingComponent(what));
    match kind {
        ImputationKind::EtaIgn => get(inputs.mu1_w0, "mu1(W0)"),
        ImputationKind::EtaCdid => Ok(get(inputs.y0, "Y0")? + get(inputs.delta, "delta(X)")?),
        ImputationKind::EtaGdid => {
            Ok(get(inputs.y0, "Y0")? + get(inputs.mu1_w0, "mu1(W0)")? - get(inputs.mu0_wm1, "mu0(W-1)")?)
        }
    }
}
