//! Monte Carlo experiments on the built-in data-generating processes.

pub mod dgp1;
pub mod dgp2;
pub mod extensions;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GdidError, Result};
use crate::panel::PanelDataset;
use crate::pipeline::{EstimatorKind, InferenceMethod, NuisanceMode, Pipeline, PipelineOptions};

pub use dgp1::{simulate_dgp1, Dgp1Config, Observed};
pub use dgp2::{simulate_dgp2, simulate_dgp2_with, Dgp2Config, Dgp2Form, Schedule};
pub use extensions::{simulate_clustered, simulate_staggered, ClusterDgpConfig, StaggeredDgpConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dgp", rename_all = "snake_case")]
pub enum DgpConfig {
    Dgp1(Dgp1Config),
    Dgp2(Dgp2Config),
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            DgpConfig::Dgp1(c) => c.validate(),
            DgpConfig::Dgp2(c) => c.validate(),
        }
    }

    /// Draw one dataset, overriding the configured seed.
    pub fn generate(&self, seed: u64) -> Result<PanelDataset> {
        match self {
            DgpConfig::Dgp1(c) => simulate_dgp1(&Dgp1Config { seed, ..*c }),
            DgpConfig::Dgp2(c) => simulate_dgp2(&Dgp2Config { seed, ..c.clone() }),
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            DgpConfig::Dgp1(c) => c.seed,
            DgpConfig::Dgp2(c) => c.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub name: String,
    #[serde(flatten)]
    pub kind: EstimatorKind,
    #[serde(default)]
    pub nuisance: NuisanceMode,
    #[serde(default)]
    pub inference: InferenceMethod,
}

impl EstimatorConfig {
    pub fn new(name: &str, kind: EstimatorKind, nuisance: NuisanceMode, inference: InferenceMethod) -> Self {
        EstimatorConfig {
            name: name.to_string(),
            kind,
            nuisance,
            inference,
        }
    }
}

/// The eight standard rows: DiD, cDiD, gDiD-0..2, Ign-1, Ign-2 and gDiD-1
/// with parametric nuisances and sandwich inference.
pub fn standard_estimators() -> Vec<EstimatorConfig> {
    use EstimatorKind as K;
    use InferenceMethod::{Plugin, Sandwich};
    use NuisanceMode::{CrossFit, Parametric};
    vec![
        EstimatorConfig::new("DiD", K::Did, CrossFit, Plugin),
        EstimatorConfig::new("cDiD", K::Cdid, Parametric, Plugin),
        EstimatorConfig::new("gDiD-0", K::Gdid { lags: 0 }, CrossFit, Plugin),
        EstimatorConfig::new("gDiD-1", K::Gdid { lags: 1 }, CrossFit, Plugin),
        EstimatorConfig::new("gDiD-2", K::Gdid { lags: 2 }, CrossFit, Plugin),
        EstimatorConfig::new("Ign-1", K::IgnorabilityPost { lags: 1 }, CrossFit, Plugin),
        EstimatorConfig::new("Ign-2", K::IgnorabilityPost { lags: 2 }, CrossFit, Plugin),
        EstimatorConfig::new("gDiD-1-glm", K::Gdid { lags: 1 }, Parametric, Sandwich),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonteCarloSettings {
    pub reps: usize,
    pub seed: u64,
    /// True effect used for bias and coverage.
    pub truth: f64,
    pub pipeline: PipelineOptions,
}

impl Default for MonteCarloSettings {
    fn default() -> Self {
        MonteCarloSettings {
            reps: 500,
            seed: 0,
            truth: 0.0,
            pipeline: PipelineOptions::default(),
        }
    }
}

/// Outcome of one estimator on one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Draw {
    pub tau_hat: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub estimator: String,
    pub bias: f64,
    pub rmse: f64,
    /// Mean confidence-interval length.
    pub cil: f64,
    /// Percentage of intervals containing the truth.
    pub coverage: f64,
    pub mean_se: f64,
    pub sd_tau: f64,
    pub reps: usize,
    pub failures: usize,
    pub first_failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub dgp: DgpConfig,
    pub settings: MonteCarloSettings,
    pub estimators: Vec<EstimatorConfig>,
    /// Coefficient paths for DGP2 (t = −1, 0, 1), as actually used.
    pub gamma_path: Option<[f64; 3]>,
    pub beta_path: Option<[f64; 3]>,
    pub rows: Vec<ReportRow>,
}

fn replicate_seed(seed: u64, r: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    rng.next_u64()
}

/// One replicate: generate data and run every estimator on shared fits.
pub fn run_replicate(
    dgp: &DgpConfig,
    estimators: &[EstimatorConfig],
    settings: &MonteCarloSettings,
    r: usize,
) -> Result<Vec<std::result::Result<Draw, String>>> {
    let seed = replicate_seed(settings.seed, r);
    let ds = dgp.generate(seed)?;
    let opts = PipelineOptions {
        seed: seed ^ 0x9E37_79B9_7F4A_7C15,
        ..settings.pipeline.clone()
    };
    let mut pipe = Pipeline::new(&ds, opts)?;
    let wanted: Vec<_> = estimators.iter().map(|e| (e.kind, e.nuisance)).collect();
    // a failure here resurfaces per estimator below
    let _ = pipe.prefetch(&wanted);
    Ok(estimators
        .iter()
        .map(|e| {
            pipe.run(e.kind, e.nuisance, e.inference)
                .map(|rep| Draw {
                    tau_hat: rep.estimate.tau_hat,
                    se: rep.variance.se,
                    lower: rep.ci.lower,
                    upper: rep.ci.upper,
                })
                .map_err(|err| err.to_string())
        })
        .collect())
}

fn summarize(name: &str, draws: &[std::result::Result<Draw, String>], truth: f64) -> ReportRow {
    let ok: Vec<&Draw> = draws.iter().filter_map(|d| d.as_ref().ok()).collect();
    let first_failure = draws.iter().find_map(|d| d.as_ref().err().cloned());
    let m = ok.len() as f64;
    let mean = |f: &dyn Fn(&Draw) -> f64| ok.iter().map(|d| f(d)).sum::<f64>() / m;
    let mean_tau = mean(&|d| d.tau_hat);
    let sd_tau = if ok.len() > 1 {
        (ok.iter().map(|d| (d.tau_hat - mean_tau).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
    } else {
        0.0
    };
    ReportRow {
        estimator: name.to_string(),
        bias: mean_tau - truth,
        rmse: mean(&|d| (d.tau_hat - truth).powi(2)).sqrt(),
        cil: mean(&|d| d.upper - d.lower),
        coverage: 100.0 * mean(&|d| (d.lower <= truth && truth <= d.upper) as u8 as f64),
        mean_se: mean(&|d| d.se),
        sd_tau,
        reps: ok.len(),
        failures: draws.len() - ok.len(),
        first_failure,
    }
}

/// Run `settings.reps` replicates in parallel. Each replicate has its own
/// seed stream and results are aggregated in replicate order, so the report
/// does not depend on the thread count.
pub fn run_monte_carlo(
    dgp: &DgpConfig,
    estimators: &[EstimatorConfig],
    settings: &MonteCarloSettings,
) -> Result<MonteCarloReport> {
    dgp.validate()?;
    settings.pipeline.validate()?;
    if settings.reps == 0 {
        return Err(GdidError::InvalidConfig("reps must be positive".into()));
    }
    if estimators.is_empty() {
        return Err(GdidError::InvalidConfig("no estimators requested".into()));
    }
    let per_rep: Vec<Vec<std::result::Result<Draw, String>>> = (0..settings.reps)
        .into_par_iter()
        .map(|r| run_replicate(dgp, estimators, settings, r))
        .collect::<Result<_>>()?;
    if per_rep.iter().all(|rep| rep.iter().all(|d| d.is_err())) {
        return Err(GdidError::AllReplicatesFailed(settings.reps));
    }
    let rows = estimators
        .iter()
        .enumerate()
        .map(|(j, e)| {
            let draws: Vec<_> = per_rep.iter().map(|rep| rep[j].clone()).collect();
            summarize(&e.name, &draws, settings.truth)
        })
        .collect();
    let (gamma_path, beta_path) = match dgp {
        DgpConfig::Dgp2(c) => (Some(c.gamma.resolve()?), Some(c.beta.resolve()?)),
        DgpConfig::Dgp1(_) => (None, None),
    };
    Ok(MonteCarloReport {
        dgp: dgp.clone(),
        settings: settings.clone(),
        estimators: estimators.to_vec(),
        gamma_path,
        beta_path,
        rows,
    })
}

impl MonteCarloReport {
    pub fn row(&self, name: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.estimator == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "estimator",
            "bias",
            "rmse",
            "cil",
            "coverage",
            "mean_se",
            "sd_tau",
            "reps",
            "failures",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.estimator.clone(),
                format!("{:.6}", r.bias),
                format!("{:.6}", r.rmse),
                format!("{:.6}", r.cil),
                format!("{:.2}", r.coverage),
                format!("{:.6}", r.mean_se),
                format!("{:.6}", r.sd_tau),
                r.reps.to_string(),
                r.failures.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| GdidError::InvalidConfig(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
