//! Run configurations shared by the CLI and the C interface, and the
//! serialisable outputs they produce.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustered::{run_clustered, ClusterCaps, ClusterSummary, ClusteredPanelDataset};
use crate::error::{GdidError, Result};
use crate::estimators::AttEstimate;
use crate::inference::{
    confidence_interval, multiplier_bootstrap, plugin_variance, BootstrapConfig, ConfidenceInterval, VarianceEstimate,
};
use crate::learners::{LearnerSpec, NuisanceSpec};
use crate::panel::{build_conditioning, parse_panel_csv, validate, PanelSchema, ValidationReport};
use crate::pipeline::{EstimateReport, EstimatorKind, InferenceMethod, NuisanceMode, Pipeline, PipelineOptions};
use crate::simulation::{
    run_monte_carlo, standard_estimators, DgpConfig, EstimatorConfig, MonteCarloReport, MonteCarloSettings,
};
use crate::staggered::{
    aggregate_effects, enumerate_histories, estimate_group_time_with, parse_staggered_csv, preset_weights,
    ExcludedHistory, WeightKind, DEFAULT_MIN_GROUP_SIZE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EstimandChoice {
    Did,
    Cdid,
    #[default]
    Gdid,
    /// Post-period AIPW under ignorability.
    Ignorability,
    IgnorabilityPre,
    AteGdid,
}

impl EstimandChoice {
    pub fn kind(self, lags: usize) -> EstimatorKind {
        match self {
            EstimandChoice::Did => EstimatorKind::Did,
            EstimandChoice::Cdid => EstimatorKind::Cdid,
            EstimandChoice::Gdid => EstimatorKind::Gdid { lags },
            EstimandChoice::Ignorability => EstimatorKind::IgnorabilityPost { lags },
            EstimandChoice::IgnorabilityPre => EstimatorKind::IgnorabilityPre { lags },
            EstimandChoice::AteGdid => EstimatorKind::AteGdid { lags },
        }
    }
}

/// Named learner presets. `Parametric` means linear/logistic fits on the
/// full sample (no cross-fitting), the path that supports sandwich variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerChoice {
    Ensemble,
    Linear,
    Knn,
    Stumps,
    Parametric,
}

impl LearnerChoice {
    fn resolve(self) -> (NuisanceSpec, NuisanceMode) {
        let cf = |s: LearnerSpec| (s.into(), NuisanceMode::CrossFit);
        match self {
            LearnerChoice::Ensemble => cf(LearnerSpec::default_ensemble()),
            LearnerChoice::Linear => cf(LearnerSpec::Linear),
            LearnerChoice::Knn => cf(LearnerSpec::Knn { k: 20 }),
            LearnerChoice::Stumps => cf(LearnerSpec::BoostedStumps {
                rounds: 100,
                shrinkage: 0.1,
            }),
            LearnerChoice::Parametric => (
                NuisanceSpec {
                    outcome: LearnerSpec::Linear,
                    propensity: LearnerSpec::Logistic,
                },
                NuisanceMode::Parametric,
            ),
        }
    }
}

macro_rules! serde_str_enum {
    ($t:ty, $what:literal) => {
        impl FromStr for $t {
            type Err = GdidError;
            fn from_str(s: &str) -> Result<Self> {
                serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
                    .map_err(|_| GdidError::InvalidConfig(format!("unknown {} {s:?}", $what)))
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                match serde_json::to_value(self) {
                    Ok(serde_json::Value::String(s)) => f.write_str(&s),
                    _ => Err(fmt::Error),
                }
            }
        }
    };
}

serde_str_enum!(EstimandChoice, "estimand");
serde_str_enum!(LearnerChoice, "learner");
serde_str_enum!(InferenceMethod, "inference method");
serde_str_enum!(ClusterSummary, "cluster summary");
serde_str_enum!(WeightKind, "aggregation");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ClusterOptions {
    pub summary: ClusterSummary,
    pub cap: Option<ClusterCaps>,
    pub cap_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StaggeredOptions {
    /// Defaults to the last period.
    pub target_time: Option<i64>,
    pub min_group_size: usize,
    pub aggregate: WeightKind,
    /// Adoption time for the `adopted_at_s*` aggregations.
    pub adopted_at: Option<i64>,
}

impl Default for StaggeredOptions {
    fn default() -> Self {
        StaggeredOptions {
            target_time: None,
            min_group_size: DEFAULT_MIN_GROUP_SIZE,
            aggregate: WeightKind::TreatedAtT,
            adopted_at: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateConfig {
    pub schema: PanelSchema,
    pub estimand: EstimandChoice,
    pub lags: usize,
    pub inference: InferenceMethod,
    /// Overrides `pipeline.nuisance` when set.
    pub learner: Option<LearnerChoice>,
    pub pipeline: PipelineOptions,
    pub cluster: Option<ClusterOptions>,
    pub staggered: Option<StaggeredOptions>,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            schema: PanelSchema::default(),
            estimand: EstimandChoice::Gdid,
            lags: 1,
            inference: InferenceMethod::Plugin,
            learner: None,
            pipeline: PipelineOptions::default(),
            cluster: None,
            staggered: None,
        }
    }
}

/// Hex SHA-256 of the JSON form of a config.
pub fn config_digest<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

impl EstimateConfig {
    fn resolved(&self) -> (PipelineOptions, NuisanceMode) {
        let mut opts = self.pipeline.clone();
        let mode = match self.learner {
            Some(choice) => {
                let (spec, mode) = choice.resolve();
                opts.nuisance = spec;
                mode
            }
            None => NuisanceMode::CrossFit,
        };
        (opts, mode)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        if self.cluster.is_some() && self.staggered.is_some() {
            return Err(GdidError::InvalidConfig(
                "clustered and staggered runs cannot be combined".into(),
            ));
        }
        if (self.cluster.is_some() || self.staggered.is_some()) && self.estimand != EstimandChoice::Gdid {
            return Err(GdidError::InvalidConfig(
                "clustered and staggered runs estimate gdid only".into(),
            ));
        }
        if self.staggered.is_some() && self.inference == InferenceMethod::Sandwich {
            return Err(GdidError::InvalidConfig(
                "sandwich variance is not available for staggered runs".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupTimeRow {
    pub history: String,
    pub target_time: i64,
    pub n_in_group: usize,
    pub weight: f64,
    pub tau_hat: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StaggeredOutput {
    pub target_time: i64,
    pub aggregate: WeightKind,
    pub n_never_treated: usize,
    pub group_time: Vec<GroupTimeRow>,
    pub excluded: Vec<ExcludedHistory>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateOutput {
    pub estimand: String,
    pub tau_hat: f64,
    pub se: f64,
    pub variance: VarianceEstimate,
    pub ci: ConfidenceInterval,
    pub n: usize,
    pub n_treated: usize,
    pub n_clusters: Option<usize>,
    pub lag_depth: Option<usize>,
    pub nuisance: Option<String>,
    pub warnings: Vec<String>,
    pub staggered: Option<StaggeredOutput>,
    pub seed: u64,
    pub config_digest: String,
    /// Per-unit (per-cluster for clustered runs) influence contributions.
    #[serde(skip)]
    pub influence: Vec<f64>,
}

impl EstimateOutput {
    fn from_report(report: EstimateReport, seed: u64, digest: String) -> Self {
        let e = report.estimate;
        EstimateOutput {
            estimand: e.estimand.name().to_string(),
            tau_hat: e.tau_hat,
            se: report.variance.se,
            variance: report.variance,
            ci: report.ci,
            n: e.n,
            n_treated: e.n_treated,
            n_clusters: None,
            lag_depth: e.lag_depth,
            nuisance: e.nuisance,
            warnings: report.warnings,
            staggered: None,
            seed,
            config_digest: digest,
            influence: e.influence,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One summary row, then one row per group-time effect.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["estimand", "tau_hat", "se", "lower", "upper", "level", "n", "n_treated"])?;
        w.write_record([
            self.estimand.clone(),
            self.tau_hat.to_string(),
            self.se.to_string(),
            self.ci.lower.to_string(),
            self.ci.upper.to_string(),
            self.ci.level.to_string(),
            self.n.to_string(),
            self.n_treated.to_string(),
        ])?;
        if let Some(s) = &self.staggered {
            for g in &s.group_time {
                w.write_record([
                    format!("group_time:{}@{}", g.history, g.target_time),
                    g.tau_hat.to_string(),
                    g.se.to_string(),
                    g.lower.to_string(),
                    g.upper.to_string(),
                    self.ci.level.to_string(),
                    String::new(),
                    g.n_in_group.to_string(),
                ])?;
            }
        }
        csv_string(w)
    }

    pub fn influence_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["index", "influence"])?;
        for (i, v) in self.influence.iter().enumerate() {
            w.write_record([i.to_string(), v.to_string()])?;
        }
        csv_string(w)
    }
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| GdidError::InvalidConfig(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| GdidError::InvalidConfig(format!("csv output: {e}")))
}

fn infer(
    estimate: &AttEstimate,
    method: InferenceMethod,
    opts: &PipelineOptions,
) -> Result<(VarianceEstimate, ConfidenceInterval)> {
    match method {
        InferenceMethod::Plugin => {
            let v = plugin_variance(estimate)?;
            let ci = confidence_interval(estimate.tau_hat, &v, opts.level)?;
            Ok((v, ci))
        }
        InferenceMethod::Bootstrap => multiplier_bootstrap(
            estimate,
            &BootstrapConfig {
                b: opts.bootstrap_b,
                weight_dist: opts.weight_dist,
                seed: opts.sub_seed(3),
                level: opts.level,
            },
        ),
        InferenceMethod::Sandwich => Err(GdidError::InvalidConfig(
            "sandwich variance is not available here".into(),
        )),
    }
}

/// Runs `config` on CSV text.
pub fn run_estimate(config: &EstimateConfig, csv_text: &str) -> Result<EstimateOutput> {
    config.validate()?;
    let digest = config_digest(config)?;
    let (opts, mode) = config.resolved();
    let seed = opts.seed;
    if let Some(st) = &config.staggered {
        return run_staggered(config, st, &opts, mode, csv_text, digest);
    }
    let ds = parse_panel_csv(csv_text, &config.schema)?;
    if let Some(cl) = &config.cluster {
        if config.schema.cluster.is_none() {
            return Err(GdidError::InvalidConfig("clustered run needs a cluster column".into()));
        }
        let mut data = ClusteredPanelDataset::new(ds)?;
        if let Some(cap) = cl.cap {
            data = data.subsample(cap, cl.cap_seed)?;
        }
        let report = run_clustered(&data, config.lags, cl.summary, mode, config.inference, &opts)?;
        let mut out = EstimateOutput::from_report(report, seed, digest);
        out.n = data.dataset().n_units();
        out.n_clusters = Some(data.n_clusters());
        return Ok(out);
    }
    let mut pipe = Pipeline::new(&ds, opts)?;
    let report = pipe.run(config.estimand.kind(config.lags), mode, config.inference)?;
    Ok(EstimateOutput::from_report(report, seed, digest))
}

fn run_staggered(
    config: &EstimateConfig,
    st: &StaggeredOptions,
    opts: &PipelineOptions,
    mode: NuisanceMode,
    csv_text: &str,
    digest: String,
) -> Result<EstimateOutput> {
    let panel = parse_staggered_csv(csv_text, &config.schema)?;
    let t = st.target_time.unwrap_or(panel.t_max());
    let xi = enumerate_histories(&panel, t, st.min_group_size)?;
    let histories = xi.histories();
    if histories.is_empty() {
        return Err(GdidError::EmptySelection);
    }
    let weights = preset_weights(st.aggregate, &histories, st.adopted_at)?;
    let mut effects = Vec::with_capacity(histories.len());
    let mut rows = Vec::with_capacity(histories.len());
    for h in &histories {
        let e = estimate_group_time_with(&panel, &xi, h, config.lags, mode, opts)?;
        let (v, ci) = infer(&e.estimate, config.inference, opts)?;
        rows.push(GroupTimeRow {
            history: h.to_string(),
            target_time: t,
            n_in_group: e.n_in_group,
            weight: weights.weight_of(h).unwrap_or(0.0),
            tau_hat: e.estimate.tau_hat,
            se: v.se,
            lower: ci.lower,
            upper: ci.upper,
        });
        effects.push(e);
    }
    let agg = aggregate_effects(panel.n_units(), &effects, &weights)?;
    let (variance, ci) = infer(&agg, config.inference, opts)?;
    Ok(EstimateOutput {
        estimand: agg.estimand.name().to_string(),
        tau_hat: agg.tau_hat,
        se: variance.se,
        variance,
        ci,
        n: panel.n_units(),
        n_treated: agg.n_treated,
        n_clusters: None,
        lag_depth: agg.lag_depth,
        nuisance: agg.nuisance.clone(),
        warnings: Vec::new(),
        staggered: Some(StaggeredOutput {
            target_time: t,
            aggregate: st.aggregate,
            n_never_treated: xi.n_never_treated,
            group_time: rows,
            excluded: xi.excluded.clone(),
        }),
        seed: opts.seed,
        config_digest: digest,
        influence: agg.influence,
    })
}

/// Overlap and structure checks on CSV text at the given lag depth.
pub fn run_validate(schema: &PanelSchema, lags: usize, trim_eps: f64, csv_text: &str) -> Result<ValidationReport> {
    let ds = parse_panel_csv(csv_text, schema)?;
    let cond = build_conditioning(&ds, 0, lags)?;
    Ok(validate(&ds, &cond, trim_eps))
}

/// A Monte Carlo experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub dgp: DgpConfig,
    #[serde(default)]
    pub settings: MonteCarloSettings,
    /// Defaults to the standard eight estimators.
    #[serde(default = "standard_estimators")]
    pub estimators: Vec<EstimatorConfig>,
}

impl SimulateConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimulateConfig = toml::from_str(text)?;
        cfg.dgp.validate()?;
        cfg.settings.pipeline.validate()?;
        if cfg.settings.reps == 0 {
            return Err(GdidError::InvalidConfig("reps must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn run(&self) -> Result<MonteCarloReport> {
        run_monte_carlo(&self.dgp, &self.estimators, &self.settings)
    }
}
