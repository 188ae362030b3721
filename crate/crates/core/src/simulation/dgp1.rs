//! Covariate-driven DGP with a tunable overlap parameter ζ.
//!
//! `Y_t = 0.1·t·f_reg(X) + v + ε_t` for t = 1..4 (panel periods −2..1), with
//! `v ~ N(f_reg(X)(1 + ζA), 1)` drawn once per unit and
//! `A = 1{expit(f_ps(X)) ≥ U}`. The true effect is zero.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GdidError, Result};
use crate::learners::logistic::expit;
use crate::linalg::FeatureMatrix;
use crate::panel::PanelDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Observed {
    /// X₂, X₃, X₄ are released.
    #[default]
    Linear,
    /// Standardised Z₂, Z₃, Z₄ are released.
    Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dgp1Config {
    pub n: usize,
    pub zeta: f64,
    #[serde(default)]
    pub observed: Observed,
    #[serde(default)]
    pub seed: u64,
}

impl Dgp1Config {
    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(GdidError::InvalidConfig(format!("DGP1 needs n >= 10, got {}", self.n)));
        }
        if !(self.zeta >= 0.0) {
            return Err(GdidError::InvalidConfig(format!("zeta {} must be >= 0", self.zeta)));
        }
        Ok(())
    }
}

pub fn f_reg(x: &[f64; 4]) -> f64 {
    205.0 + 27.4 * x[0] + 13.7 * (x[1] + x[2] + x[3])
}

pub fn f_ps(x: &[f64; 4]) -> f64 {
    0.75 * (-x[0] + 0.5 * x[1] - 0.5 * x[2] - 0.25 * x[3])
}

/// Untransformed Z̃₁..Z̃₄.
pub fn z_tilde(x: &[f64; 4]) -> [f64; 4] {
    [
        (0.5 * x[0]).exp(),
        10.0 + x[1] / (1.0 + x[0].exp()),
        (0.6 + x[0] * x[2] / 25.0).powi(3),
        (20.0 + x[1] + x[3]).powi(2),
    ]
}

const MOMENT_DRAWS: usize = 1_000_000;
const MOMENT_SEED: u64 = 0x5EED_2020;

/// Means and standard deviations of Z̃ from a fixed auxiliary sample.
pub fn z_moments() -> &'static ([f64; 4], [f64; 4]) {
    static MOMENTS: OnceLock<([f64; 4], [f64; 4])> = OnceLock::new();
    MOMENTS.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(MOMENT_SEED);
        let mut sum = [0.0; 4];
        let mut sum_sq = [0.0; 4];
        for _ in 0..MOMENT_DRAWS {
            let x = draw_x(&mut rng);
            let z = z_tilde(&x);
            for j in 0..4 {
                sum[j] += z[j];
                sum_sq[j] += z[j] * z[j];
            }
        }
        let n = MOMENT_DRAWS as f64;
        let mut mean = [0.0; 4];
        let mut sd = [0.0; 4];
        for j in 0..4 {
            mean[j] = sum[j] / n;
            sd[j] = (sum_sq[j] / n - mean[j] * mean[j]).max(0.0).sqrt();
        }
        (mean, sd)
    })
}

fn draw_x<R: Rng>(rng: &mut R) -> [f64; 4] {
    let mut x = [0.0; 4];
    for v in &mut x {
        *v = rng.sample(StandardNormal);
    }
    x
}

pub fn simulate_dgp1(config: &Dgp1Config) -> Result<PanelDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n;
    let moments = match config.observed {
        Observed::Nonlinear => Some(z_moments()),
        Observed::Linear => None,
    };
    let mut ids = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    let mut covs = Vec::with_capacity(3 * n);
    let mut treatment = Vec::with_capacity(n);
    for i in 0..n {
        let x = draw_x(&mut rng);
        let u: f64 = rng.gen();
        let a = (expit(f_ps(&x)) >= u) as u8;
        let fr = f_reg(&x);
        let v = fr * (1.0 + config.zeta * a as f64) + rng.sample::<f64, _>(StandardNormal);
        let path: Vec<f64> = (1..=4)
            .map(|t| 0.1 * t as f64 * fr + v + rng.sample::<f64, _>(StandardNormal))
            .collect();
        match moments {
            None => covs.extend_from_slice(&x[1..]),
            Some((mean, sd)) => {
                let z = z_tilde(&x);
                covs.extend((1..4).map(|j| (z[j] - mean[j]) / sd[j]));
            }
        }
        ids.push(format!("{}", i + 1));
        rows.push(path);
        treatment.push(a);
    }
    let names = match config.observed {
        Observed::Linear => vec!["x2", "x3", "x4"],
        Observed::Nonlinear => vec!["z2", "z3", "z4"],
    };
    PanelDataset::new(
        ids,
        rows,
        FeatureMatrix::new(covs, n, 3),
        names.into_iter().map(String::from).collect(),
        treatment,
    )
}
