//! Cluster-level treatment assignment.
//!
//! Treatment is constant within a cluster. Propensities are modelled from
//! cluster summaries W̃, outcome regressions from the unit-level
//! V = (W, W̃), and the influence vector carries one entry per cluster so
//! plug-in variance and the multiplier bootstrap operate over clusters.

use rand::seq::index::sample;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GdidError, Result};
use crate::estimators::{aipw_summands, AttEstimate, Estimand};
use crate::inference::{
    confidence_interval, multiplier_bootstrap, plugin_variance, BootstrapConfig, ConfidenceInterval, VarianceEstimate,
};
use crate::learners::{cross_fit_column, CrossFitPlan, LearnerSpec, NuisanceSpec, Task};
use crate::linalg::FeatureMatrix;
use crate::panel::{build_conditioning, ConditioningSet, PanelDataset};
use crate::pipeline::{EstimateReport, InferenceMethod, NuisanceMode, PipelineOptions};

/// Panel whose units are grouped into treatment clusters.
#[derive(Debug, Clone)]
pub struct ClusteredPanelDataset {
    dataset: PanelDataset,
    cluster_ids: Vec<String>,
    cluster_of: Vec<usize>,
    members: Vec<Vec<usize>>,
    treatment: Vec<u8>,
}

impl ClusteredPanelDataset {
    /// Uses the cluster labels attached to `dataset`. Clusters are ordered by
    /// first appearance.
    pub fn new(dataset: PanelDataset) -> Result<Self> {
        let labels = dataset
            .clusters()
            .ok_or_else(|| GdidError::InvalidPanel("dataset has no cluster labels".into()))?
            .to_vec();
        let mut cluster_ids: Vec<String> = Vec::new();
        let mut index = std::collections::HashMap::new();
        let mut cluster_of = Vec::with_capacity(labels.len());
        let mut members: Vec<Vec<usize>> = Vec::new();
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() {
                return Err(GdidError::InvalidPanel(format!(
                    "unit {} has an empty cluster label",
                    dataset.unit_ids()[i]
                )));
            }
            let j = *index.entry(l.clone()).or_insert_with(|| {
                cluster_ids.push(l.clone());
                members.push(Vec::new());
                cluster_ids.len() - 1
            });
            cluster_of.push(j);
            members[j].push(i);
        }
        let mut treatment = Vec::with_capacity(members.len());
        for (j, m) in members.iter().enumerate() {
            let a = dataset.treatment()[m[0]];
            if m.iter().any(|&i| dataset.treatment()[i] != a) {
                return Err(GdidError::InvalidPanel(format!(
                    "treatment varies within cluster {}",
                    cluster_ids[j]
                )));
            }
            treatment.push(a);
        }
        if !treatment.contains(&1) {
            return Err(GdidError::NoTreated);
        }
        if !treatment.contains(&0) {
            return Err(GdidError::InvalidPanel("no control clusters".into()));
        }
        Ok(ClusteredPanelDataset {
            dataset,
            cluster_ids,
            cluster_of,
            members,
            treatment,
        })
    }

    pub fn from_parts(dataset: PanelDataset, clusters: Vec<String>) -> Result<Self> {
        Self::new(dataset.with_clusters(clusters)?)
    }

    pub fn dataset(&self) -> &PanelDataset {
        &self.dataset
    }

    pub fn n_clusters(&self) -> usize {
        self.members.len()
    }

    pub fn cluster_ids(&self) -> &[String] {
        &self.cluster_ids
    }

    /// Cluster index of each unit.
    pub fn cluster_of(&self) -> &[usize] {
        &self.cluster_of
    }

    pub fn members(&self, j: usize) -> &[usize] {
        &self.members[j]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    /// Cluster-level treatment A_j.
    pub fn cluster_treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn n_treated_units(&self) -> usize {
        self.dataset.n_treated()
    }

    /// Keeps at most `caps.treated` (`caps.control`) randomly chosen units in
    /// each treated (control) cluster. Unit order is preserved.
    pub fn subsample(&self, caps: ClusterCaps, seed: u64) -> Result<Self> {
        if caps.treated == 0 || caps.control == 0 {
            return Err(GdidError::InvalidConfig("cluster caps must be positive".into()));
        }
        let mut keep = Vec::new();
        for (j, m) in self.members.iter().enumerate() {
            let cap = if self.treatment[j] == 1 {
                caps.treated
            } else {
                caps.control
            };
            if m.len() <= cap {
                keep.extend_from_slice(m);
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let mut picked: Vec<usize> = sample(&mut rng, m.len(), cap).into_iter().map(|k| m[k]).collect();
            picked.sort_unstable();
            keep.extend(picked);
        }
        keep.sort_unstable();
        Self::new(self.dataset.subset(&keep))
    }
}

/// Per-cluster unit caps for treated and control clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterCaps {
    pub treated: usize,
    pub control: usize,
}

impl std::str::FromStr for ClusterCaps {
    type Err = GdidError;

    /// `"<treated>,<control>"`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || GdidError::InvalidConfig(format!("cluster cap {s:?} is not <treated>,<control>"));
        let (a, b) = s.split_once(',').ok_or_else(bad)?;
        Ok(ClusterCaps {
            treated: a.trim().parse().map_err(|_| bad())?,
            control: b.trim().parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClusterSummary {
    #[default]
    Mean,
    /// Mean plus the cluster size.
    MeanAndSize,
}

/// Unit-level V = (W, W̃) plus the cluster-level W̃ used by the propensity.
#[derive(Debug, Clone)]
pub struct ClusterConditioningSet {
    pub summary: ClusterSummary,
    pub unit: ConditioningSet,
    /// One row per cluster.
    pub cluster_features: FeatureMatrix,
}

impl ClusterConditioningSet {
    pub fn anchor_time(&self) -> i64 {
        self.unit.anchor_time
    }

    pub fn width(&self) -> usize {
        self.unit.width()
    }
}

pub fn summarize_clusters(
    data: &ClusteredPanelDataset,
    anchor_time: i64,
    lag_depth: usize,
    summary: ClusterSummary,
) -> Result<ClusterConditioningSet> {
    let base = build_conditioning(&data.dataset, anchor_time, lag_depth)?;
    let w = base.width();
    let c = data.n_clusters();
    let extra = usize::from(summary == ClusterSummary::MeanAndSize);
    let mut cl = Vec::with_capacity(c * (w + extra));
    for (j, m) in data.members.iter().enumerate() {
        if m.is_empty() {
            return Err(GdidError::EmptyCluster(data.cluster_ids[j].clone()));
        }
        let mut mean = vec![0.0; w];
        for &i in m {
            for (acc, v) in mean.iter_mut().zip(base.features.row(i)) {
                *acc += v;
            }
        }
        cl.extend(mean.iter().map(|s| s / m.len() as f64));
        if extra == 1 {
            cl.push(m.len() as f64);
        }
    }
    let cluster_features = FeatureMatrix::new(cl, c, w + extra);
    let n = data.dataset.n_units();
    let mut v = Vec::with_capacity(n * (2 * w + extra));
    for i in 0..n {
        v.extend_from_slice(base.features.row(i));
        v.extend_from_slice(cluster_features.row(data.cluster_of[i]));
    }
    let mut names = base.feature_names.clone();
    names.extend(base.feature_names.iter().map(|s| format!("cluster_mean({s})")));
    if extra == 1 {
        names.push("cluster_size".into());
    }
    Ok(ClusterConditioningSet {
        summary,
        unit: ConditioningSet {
            anchor_time,
            lag_depth,
            features: FeatureMatrix::new(v, n, 2 * w + extra),
            feature_names: names,
        },
        cluster_features,
    })
}

/// Nuisance predictions: outcome regressions per unit, propensities per cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterFits {
    /// E(Y₁ | V₀, A=0) per unit.
    pub m1: Vec<f64>,
    /// E(Y₀ | V₋₁, A=0) per unit.
    pub m0: Vec<f64>,
    /// P(A=1 | W̃₀) per cluster.
    pub p: Vec<f64>,
    /// P(A=1 | W̃₋₁) per cluster.
    pub p0: Vec<f64>,
    pub nuisance: String,
    pub lag_depth: Option<usize>,
}

impl ClusterFits {
    /// From per-unit predictions; the propensities must be constant within
    /// each cluster.
    pub fn from_unit_predictions(
        data: &ClusteredPanelDataset,
        m1: Vec<f64>,
        m0: Vec<f64>,
        p_units: &[f64],
        p0_units: &[f64],
    ) -> Result<Self> {
        let n = data.dataset.n_units();
        for (v, what) in [(&m1[..], "m1"), (&m0[..], "m0"), (p_units, "p"), (p0_units, "p0")] {
            if v.len() != n {
                return Err(GdidError::LengthMismatch(format!(
                    "{what} has {} entries for {n} units",
                    v.len()
                )));
            }
        }
        let collapse = |pu: &[f64]| -> Result<Vec<f64>> {
            data.members
                .iter()
                .enumerate()
                .map(|(j, m)| {
                    let v = pu[m[0]];
                    if m.iter().any(|&i| (pu[i] - v).abs() > 1e-12) {
                        return Err(GdidError::ClusterPropensityMismatch(data.cluster_ids[j].clone()));
                    }
                    Ok(v)
                })
                .collect()
        };
        Ok(ClusterFits {
            p: collapse(p_units)?,
            p0: collapse(p0_units)?,
            m1,
            m0,
            nuisance: "supplied".into(),
            lag_depth: None,
        })
    }
}

/// Fits m₁, m₀ on V and p, p₀ on W̃. With `folds = Some(k)` the folds are
/// assigned to whole clusters, stratified by A_j.
pub fn fit_cluster_nuisances(
    data: &ClusteredPanelDataset,
    cond0: &ClusterConditioningSet,
    cond_m1: &ClusterConditioningSet,
    spec: &NuisanceSpec,
    folds: Option<usize>,
    seed: u64,
) -> Result<ClusterFits> {
    let stream = |s: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s);
        rng.next_u64()
    };
    let plan = folds
        .map(|k| CrossFitPlan::new(&data.treatment, k, stream(1)))
        .transpose()?;
    let cluster_folds = plan.as_ref().map(|p| p.fold_of.clone());
    let unit_folds: Option<Vec<usize>> = cluster_folds
        .as_ref()
        .map(|f| data.cluster_of.iter().map(|&j| f[j]).collect());
    let ds = &data.dataset;
    let controls: Vec<bool> = ds.treatment().iter().map(|&a| a == 0).collect();
    let all = vec![true; data.n_clusters()];
    let a: Vec<f64> = data.treatment.iter().map(|&a| a as f64).collect();
    let m1 = cross_fit_column(
        &cond0.unit.features,
        &ds.outcomes_at(1),
        &controls,
        unit_folds.as_deref(),
        &spec.outcome,
        Task::Regression,
        stream(2),
    )?;
    let m0 = cross_fit_column(
        &cond_m1.unit.features,
        &ds.outcomes_at(0),
        &controls,
        unit_folds.as_deref(),
        &spec.outcome,
        Task::Regression,
        stream(3),
    )?;
    let p = cross_fit_column(
        &cond0.cluster_features,
        &a,
        &all,
        cluster_folds.as_deref(),
        &spec.propensity,
        Task::Propensity,
        stream(4),
    )?;
    let p0 = cross_fit_column(
        &cond_m1.cluster_features,
        &a,
        &all,
        cluster_folds.as_deref(),
        &spec.propensity,
        Task::Propensity,
        stream(5),
    )?;
    Ok(ClusterFits {
        m1,
        m0,
        p,
        p0,
        nuisance: match &plan {
            Some(p) => format!("cluster cross-fit K={}", p.k),
            None => "no-split".into(),
        },
        lag_depth: Some(cond0.unit.lag_depth),
    })
}

/// `N₁⁻¹ Σ_j Σ_i` of the gDiD bracket with cluster-level propensities. The
/// influence vector holds one within-cluster sum per cluster.
pub fn estimate_clustered_gdid(data: &ClusteredPanelDataset, fits: &ClusterFits, trim_eps: f64) -> Result<AttEstimate> {
    let ds = &data.dataset;
    let n = ds.n_units();
    let c = data.n_clusters();
    if fits.m1.len() != n || fits.m0.len() != n {
        return Err(GdidError::LengthMismatch("outcome regressions vs units".into()));
    }
    if fits.p.len() != c || fits.p0.len() != c {
        return Err(GdidError::LengthMismatch("propensities vs clusters".into()));
    }
    let p_units: Vec<f64> = data.cluster_of.iter().map(|&j| fits.p[j]).collect();
    let p0_units: Vec<f64> = data.cluster_of.iter().map(|&j| fits.p0[j]).collect();
    let post = aipw_summands(&ds.outcomes_at(1), ds.treatment(), &p_units, &fits.m1, trim_eps);
    let pre = aipw_summands(&ds.outcomes_at(0), ds.treatment(), &p0_units, &fits.m0, trim_eps);
    let mut infl = vec![0.0; c];
    for i in 0..n {
        infl[data.cluster_of[i]] += post[i] - pre[i];
    }
    let n1 = data.n_treated_units();
    let mass: Vec<f64> = data
        .members
        .iter()
        .zip(&data.treatment)
        .map(|(m, &a)| a as f64 * m.len() as f64)
        .collect();
    let mut est = AttEstimate::from_influence(Estimand::ClusteredGdid, infl, n1 as f64, n1, trim_eps).with_mass(&mass);
    est.lag_depth = fits.lag_depth;
    est.nuisance = Some(fits.nuisance.clone());
    Ok(est)
}

/// One multiplier weight per cluster.
pub fn cluster_multiplier_bootstrap(
    estimate: &AttEstimate,
    config: &BootstrapConfig,
) -> Result<(VarianceEstimate, ConfidenceInterval)> {
    if estimate.estimand != Estimand::ClusteredGdid {
        return Err(GdidError::InvalidConfig(
            "cluster bootstrap needs a clustered estimate".into(),
        ));
    }
    multiplier_bootstrap(estimate, config)
}

/// Clustered gDiD with `lags` outcome lags, end to end.
pub fn run_clustered(
    data: &ClusteredPanelDataset,
    lags: usize,
    summary: ClusterSummary,
    mode: NuisanceMode,
    inference: InferenceMethod,
    opts: &PipelineOptions,
) -> Result<EstimateReport> {
    opts.validate()?;
    let cond0 = summarize_clusters(data, 0, lags, summary)?;
    let cond_m1 = summarize_clusters(data, -1, lags, summary)?;
    let (spec, folds) = match mode {
        NuisanceMode::CrossFit => (opts.nuisance.clone(), Some(opts.folds)),
        NuisanceMode::Parametric => (
            NuisanceSpec {
                outcome: LearnerSpec::Linear,
                propensity: LearnerSpec::Logistic,
            },
            None,
        ),
    };
    let fits = fit_cluster_nuisances(data, &cond0, &cond_m1, &spec, folds, opts.sub_seed(2))?;
    let estimate = estimate_clustered_gdid(data, &fits, opts.trim_eps)?;
    let (variance, ci) = match inference {
        InferenceMethod::Plugin => {
            let v = plugin_variance(&estimate)?;
            let ci = confidence_interval(estimate.tau_hat, &v, opts.level)?;
            (v, ci)
        }
        InferenceMethod::Bootstrap => cluster_multiplier_bootstrap(
            &estimate,
            &BootstrapConfig {
                b: opts.bootstrap_b,
                weight_dist: opts.weight_dist,
                seed: opts.sub_seed(3),
                level: opts.level,
            },
        )?,
        InferenceMethod::Sandwich => {
            return Err(GdidError::InvalidConfig(
                "sandwich variance is not available for clustered estimates".into(),
            ))
        }
    };
    let mut warnings = Vec::new();
    let hi = 1.0 - opts.trim_eps;
    let clipped = fits.p.iter().chain(&fits.p0).filter(|&&p| p > hi).count();
    if clipped > 0 {
        warnings.push(format!("{clipped} cluster propensities clipped at {hi}"));
    }
    Ok(EstimateReport {
        estimate,
        variance,
        ci,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::estimate_gdid;
    use crate::inference::WeightDist;
    use crate::learners::NuisanceFits;

    fn toy(clusters: &[&str]) -> ClusteredPanelDataset {
        // 3 clusters: c1 treated (2 units), c2 control (2), c3 control (1)
        let rows = vec![
            vec![0.0, 1.0, 3.0],
            vec![1.0, 2.0, 5.0],
            vec![0.5, 1.0, 1.5],
            vec![1.0, 2.0, 2.5],
            vec![2.0, 2.0, 3.0],
        ];
        let x = FeatureMatrix::from_column(&[1.0, 3.0, 0.0, 2.0, 4.0]);
        let ds = PanelDataset::new(
            (1..=5).map(|i| i.to_string()).collect(),
            rows,
            x,
            vec!["x".into()],
            vec![1, 1, 0, 0, 0],
        )
        .unwrap();
        ClusteredPanelDataset::from_parts(ds, clusters.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn summaries() {
        let d = toy(&["c1", "c1", "c2", "c2", "c3"]);
        let s = summarize_clusters(&d, 0, 0, ClusterSummary::Mean).unwrap();
        assert_eq!(s.cluster_features.row(0), &[2.0]);
        assert_eq!(s.unit.features.row(1), &[3.0, 2.0]);
        assert_eq!(s.unit.features.row(4), &[4.0, 4.0]);
        let s = summarize_clusters(&d, 0, 1, ClusterSummary::MeanAndSize).unwrap();
        assert_eq!(s.width(), 2 * 2 + 1);
        assert_eq!(s.unit.features.row(0), &[1.0, 1.0, 2.0, 1.5, 2.0]);
    }

    #[test]
    fn treatment_must_be_constant_within_cluster() {
        let ds = toy(&["a", "b", "c", "d", "e"]).dataset().clone();
        let err = ClusteredPanelDataset::from_parts(ds, ["a", "a", "a", "b", "c"].map(String::from).to_vec());
        assert!(matches!(err, Err(GdidError::InvalidPanel(_))));
    }

    #[test]
    fn hand_example() {
        let d = toy(&["c1", "c1", "c2", "c2", "c3"]);
        let fits = ClusterFits {
            m1: vec![2.0, 3.0, 1.0, 2.0, 3.0],
            m0: vec![1.0, 2.0, 1.0, 2.0, 2.0],
            p: vec![0.5, 0.25, 0.2],
            p0: vec![0.4, 0.5, 0.5],
            nuisance: "oracle".into(),
            lag_depth: None,
        };
        let est = estimate_clustered_gdid(&d, &fits, 0.01).unwrap();
        // treated units: (Y1 − m1) − (Y0 − m0)
        let c1 = (3.0 - 2.0) - (1.0 - 1.0) + (5.0 - 3.0) - (2.0 - 2.0);
        // controls: −p/(1−p)(Y1 − m1) + p0/(1−p0)(Y0 − m0)
        let ctrl = |p: f64, p0: f64, y1: f64, m1: f64, y0: f64, m0: f64| {
            -p / (1.0 - p) * (y1 - m1) + p0 / (1.0 - p0) * (y0 - m0)
        };
        let c2 = ctrl(0.25, 0.5, 1.5, 1.0, 1.0, 1.0) + ctrl(0.25, 0.5, 2.5, 2.0, 2.0, 2.0);
        let c3 = ctrl(0.2, 0.5, 3.0, 3.0, 2.0, 2.0);
        let tau = (c1 + c2 + c3) / 2.0;
        assert!((est.tau_hat - tau).abs() < 1e-12);
        assert_eq!(est.influence.len(), 3);
        let v = plugin_variance(&est).unwrap();
        let s2 = ((c1 - 2.0 * tau).powi(2) + c2.powi(2) + c3.powi(2)) / 2.0;
        assert!((v.sigma2_hat - s2).abs() < 1e-12);
    }

    #[test]
    fn propensity_mismatch() {
        let d = toy(&["c1", "c1", "c2", "c2", "c3"]);
        let r =
            ClusterFits::from_unit_predictions(&d, vec![0.0; 5], vec![0.0; 5], &[0.5, 0.6, 0.2, 0.2, 0.1], &[0.5; 5]);
        assert!(matches!(r, Err(GdidError::ClusterPropensityMismatch(c)) if c == "c1"));
    }

    #[test]
    fn singletons_reduce_to_iid() {
        let d = toy(&["a", "b", "c", "d", "e"]);
        let (m1, m0) = (vec![2.0, 3.0, 1.0, 2.0, 3.0], vec![1.0, 2.0, 1.0, 2.0, 2.0]);
        let (p, p0) = (vec![0.6, 0.5, 0.3, 0.4, 0.2], vec![0.5, 0.4, 0.3, 0.2, 0.1]);
        let iid = estimate_gdid(
            d.dataset(),
            &NuisanceFits::from_predictions(m1.clone(), m0.clone(), p.clone(), p0.clone()),
            0.01,
        )
        .unwrap();
        let fits = ClusterFits::from_unit_predictions(&d, m1, m0, &p, &p0).unwrap();
        let cl = estimate_clustered_gdid(&d, &fits, 0.01).unwrap();
        assert!((cl.tau_hat - iid.tau_hat).abs() < 1e-12);
        let (a, b) = (plugin_variance(&cl).unwrap(), plugin_variance(&iid).unwrap());
        assert!((a.sigma2_hat - b.sigma2_hat).abs() < 1e-12);
        let cfg = BootstrapConfig {
            b: 200,
            weight_dist: WeightDist::Mammen,
            seed: 9,
            level: 0.95,
        };
        let (va, ca) = cluster_multiplier_bootstrap(&cl, &cfg).unwrap();
        let (vb, cb) = multiplier_bootstrap(&iid, &cfg).unwrap();
        assert!((va.sigma2_hat - vb.sigma2_hat).abs() < 1e-12);
        assert!((ca.lower - cb.lower).abs() < 1e-12 && (ca.upper - cb.upper).abs() < 1e-12);
    }

    #[test]
    fn caps() {
        let d = toy(&["c1", "c1", "c2", "c2", "c3"]);
        let s = d.subsample(ClusterCaps { treated: 1, control: 5 }, 3).unwrap();
        assert_eq!(s.sizes(), vec![1, 2, 1]);
        let again = d.subsample(ClusterCaps { treated: 1, control: 5 }, 3).unwrap();
        assert_eq!(s.dataset().unit_ids(), again.dataset().unit_ids());
        assert_eq!(
            "3, 4".parse::<ClusterCaps>().unwrap(),
            ClusterCaps { treated: 3, control: 4 }
        );
        assert!("3".parse::<ClusterCaps>().is_err());
    }
}
