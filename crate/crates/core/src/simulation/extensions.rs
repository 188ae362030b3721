//! Generators for the clustered and staggered settings. Both have no
//! treatment effect, so any estimate is pure error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::clustered::ClusteredPanelDataset;
use crate::error::{GdidError, Result};
use crate::learners::logistic::expit;
use crate::linalg::FeatureMatrix;
use crate::panel::PanelDataset;
use crate::staggered::StaggeredPanel;

/// Cluster-randomized panel over t = −1, 0, 1:
/// `Y_jit = α_j + z_j(1 + 0.5(t+1)) + x_ji + t + s_jt + e_jit`,
/// with cluster intercept α_j ~ N(0,1), cluster shocks s_jt ~ N(0, icc),
/// unit noise e ~ N(0, 1 − icc) and `A_j = 1{expit(z_j) > U_j}`.
/// The confounder z_j is released as a covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDgpConfig {
    pub clusters: usize,
    pub size: usize,
    /// Share of the period noise variance that is common to a cluster.
    pub icc: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ClusterDgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clusters < 4 || self.size == 0 {
            return Err(GdidError::InvalidConfig(
                "need at least 4 clusters of positive size".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.icc) {
            return Err(GdidError::InvalidConfig(format!("icc {} outside [0, 1]", self.icc)));
        }
        Ok(())
    }
}

pub fn simulate_clustered(config: &ClusterDgpConfig) -> Result<ClusteredPanelDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.clusters * config.size;
    let (sd_s, sd_e) = (config.icc.sqrt(), (1.0 - config.icc).sqrt());
    let mut ids = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    let mut cov = Vec::with_capacity(2 * n);
    let mut treatment = Vec::with_capacity(n);
    loop {
        ids.clear();
        labels.clear();
        rows.clear();
        cov.clear();
        treatment.clear();
        for j in 0..config.clusters {
            let z: f64 = rng.sample(StandardNormal);
            let alpha: f64 = rng.sample(StandardNormal);
            let a = (expit(z) > rng.gen::<f64>()) as u8;
            let shocks: [f64; 3] = std::array::from_fn(|_| sd_s * rng.sample::<f64, _>(StandardNormal));
            for i in 0..config.size {
                let x: f64 = rng.sample(StandardNormal);
                let path: Vec<f64> = (-1i64..=1)
                    .zip(shocks)
                    .map(|(t, s)| {
                        let e: f64 = rng.sample(StandardNormal);
                        alpha + z * (1.0 + 0.5 * (t + 1) as f64) + x + t as f64 + s + sd_e * e
                    })
                    .collect();
                ids.push(format!("{j}-{i}"));
                labels.push(format!("c{j}"));
                rows.push(path);
                cov.extend([z, x]);
                treatment.push(a);
            }
        }
        // redraw the rare all-one-arm sample
        if treatment.contains(&0) && treatment.contains(&1) {
            break;
        }
    }
    let ds = PanelDataset::new(
        ids,
        rows,
        FeatureMatrix::new(cov, n, 2),
        vec!["z".into(), "x".into()],
        treatment,
    )?;
    ClusteredPanelDataset::from_parts(ds, labels)
}

/// DGP2 recursion run over `pre_periods` pre-periods and `post_periods`
/// periods of staggered adoption with no effect:
/// `Y_t = β θ + γ Y_{t−1} + (t − 1) + ε_t`. A unit ever adopts with
/// probability expit(θ), at a time uniform over the post periods, and stays
/// treated. With γ ≠ 0 the bias of a contrast anchored at the last
/// pre-period grows with the distance to the target time, so only adjacent
/// group-time cells satisfy stable bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaggeredDgpConfig {
    pub n: usize,
    pub pre_periods: usize,
    pub post_periods: usize,
    pub gamma: f64,
    pub beta: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for StaggeredDgpConfig {
    fn default() -> Self {
        StaggeredDgpConfig {
            n: 1000,
            pre_periods: 3,
            post_periods: 3,
            gamma: 0.0,
            beta: 1.0,
            seed: 0,
        }
    }
}

pub fn simulate_staggered(config: &StaggeredDgpConfig) -> Result<StaggeredPanel> {
    if config.n < 10 || config.pre_periods < 1 || config.post_periods < 1 {
        return Err(GdidError::InvalidConfig(
            "staggered DGP needs n >= 10 and at least one pre and one post period".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let t_min = 1 - config.pre_periods as i64;
    let t_max = config.post_periods as i64;
    let times: Vec<i64> = (t_min..=t_max).collect();
    let mut rows = Vec::with_capacity(config.n);
    let mut treat = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let theta: f64 = rng.sample(StandardNormal);
        let adopt = (expit(theta) > rng.gen::<f64>()).then(|| rng.gen_range(1..=t_max));
        let mut prev: f64 = rng.sample(StandardNormal);
        let mut path = Vec::with_capacity(times.len());
        for &t in &times {
            let eps: f64 = rng.sample(StandardNormal);
            prev = config.beta * theta + config.gamma * prev + (t - 1) as f64 + eps;
            path.push(prev);
        }
        rows.push(path);
        treat.push(times.iter().map(|&t| adopt.is_some_and(|s| t >= s) as u8).collect());
    }
    StaggeredPanel::new(
        (1..=config.n).map(|i| i.to_string()).collect(),
        times,
        rows,
        treat,
        FeatureMatrix::empty(config.n),
        vec![],
    )
}
