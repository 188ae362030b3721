//! Single-confounder DGP with a lagged-outcome channel:
//! `Y_t = β_t f(θ) + γ_t g(Y_{t−1}) + (t − 1) + ε_t` for t = −1, 0, 1,
//! started from `Y_{−2} ~ N(0, 1)`, with `A = 1{expit(f(θ)) > U}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GdidError, Result};
use crate::learners::logistic::expit;
use crate::linalg::FeatureMatrix;
use crate::panel::PanelDataset;

/// Time path of a coefficient over the generated periods t = −1, 0, 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Zero,
    Constant {
        value: f64,
    },
    /// `value_t − value_{t−1} = step`, starting from `start` at t = −1.
    LinearGrowth {
        start: f64,
        step: f64,
    },
    /// Increments drawn from U(0.25, 0.75) with random signs (or given).
    RandomChanges {
        start: f64,
        #[serde(default)]
        increments: Option<Vec<f64>>,
        #[serde(default)]
        seed: u64,
    },
}

/// Default constants for the named schedules.
pub const GAMMA: f64 = 1.0;
pub const GAMMA_STEP: f64 = 0.5;
pub const BETA: f64 = 1.0;
pub const BETA_STEP: f64 = 0.5;

impl Schedule {
    /// Named γ schedule: `zero`, `constant`, `linear_growth`, `random_changes`.
    pub fn gamma_preset(name: &str) -> Result<Schedule> {
        Ok(match name {
            "zero" => Schedule::Zero,
            "constant" => Schedule::Constant { value: GAMMA },
            "linear_growth" => Schedule::LinearGrowth {
                start: GAMMA_STEP,
                step: GAMMA_STEP,
            },
            "random_changes" => Schedule::RandomChanges {
                start: GAMMA_STEP,
                increments: None,
                seed: 0,
            },
            other => return Err(GdidError::InvalidConfig(format!("unknown gamma preset {other:?}"))),
        })
    }

    /// Named β schedule: `constant`, `linear_growth`, `random_changes`.
    pub fn beta_preset(name: &str) -> Result<Schedule> {
        Ok(match name {
            "constant" => Schedule::Constant { value: BETA },
            "linear_growth" => Schedule::LinearGrowth {
                start: BETA,
                step: BETA_STEP,
            },
            "random_changes" => Schedule::RandomChanges {
                start: BETA,
                increments: None,
                seed: 1,
            },
            other => return Err(GdidError::InvalidConfig(format!("unknown beta preset {other:?}"))),
        })
    }

    /// Coefficient values for t = −1, 0, 1.
    pub fn resolve(&self) -> Result<[f64; 3]> {
        match self {
            Schedule::Zero => Ok([0.0; 3]),
            Schedule::Constant { value } => Ok([*value; 3]),
            Schedule::LinearGrowth { start, step } => {
                let mut v = [*start; 3];
                v[1] = v[0] + step;
                v[2] = v[1] + step;
                Ok(v)
            }
            Schedule::RandomChanges {
                start,
                increments,
                seed,
            } => {
                let inc = match increments {
                    Some(inc) if inc.len() == 2 => [inc[0], inc[1]],
                    Some(inc) => {
                        return Err(GdidError::InvalidConfig(format!(
                            "random_changes needs 2 increments, got {}",
                            inc.len()
                        )))
                    }
                    None => random_increments(*seed),
                };
                Ok([*start, start + inc[0], start + inc[0] + inc[1]])
            }
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self.resolve(), Ok(v) if v.iter().all(|&c| c == 0.0))
    }
}

fn random_increments(seed: u64) -> [f64; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = [0.0; 2];
    for v in &mut out {
        let mag = rng.gen_range(0.25..0.75);
        *v = if rng.gen::<bool>() { mag } else { -mag };
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dgp2Form {
    /// f and g are the identity.
    #[default]
    Linear,
    Additive,
    /// Requires user-supplied f and g; see [`simulate_dgp2_with`].
    Nonlinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dgp2Config {
    pub n: usize,
    pub gamma: Schedule,
    pub beta: Schedule,
    #[serde(default)]
    pub form: Dgp2Form,
    #[serde(default)]
    pub seed: u64,
}

impl Dgp2Config {
    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(GdidError::InvalidConfig(format!("DGP2 needs n >= 10, got {}", self.n)));
        }
        if self.beta.is_zero() {
            return Err(GdidError::InvalidConfig("beta schedule must not be zero".into()));
        }
        self.gamma.resolve()?;
        self.beta.resolve()?;
        Ok(())
    }
}

pub fn f_additive(x: f64) -> f64 {
    if x.abs() > 1.0 {
        x.signum() * x.sin().abs().exp()
    } else {
        0.9 * x + x.powi(3)
    }
}

pub fn g_additive(x: f64) -> f64 {
    if x.abs() <= 1.5 {
        x - x * x
    } else {
        2.0 * x.signum() * x.abs().ln()
    }
}

pub fn simulate_dgp2(config: &Dgp2Config) -> Result<PanelDataset> {
    match config.form {
        Dgp2Form::Linear => simulate_dgp2_with(config, |x| x, |y| y),
        Dgp2Form::Additive => simulate_dgp2_with(config, f_additive, g_additive),
        Dgp2Form::Nonlinear => Err(GdidError::NotSpecified("the nonlinear f and g of DGP2".into())),
    }
}

/// DGP2 with caller-supplied f and g.
pub fn simulate_dgp2_with<F, G>(config: &Dgp2Config, f: F, g: G) -> Result<PanelDataset>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    config.validate()?;
    let beta = config.beta.resolve()?;
    let gamma = config.gamma.resolve()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n;
    let mut rows = Vec::with_capacity(n);
    let mut treatment = Vec::with_capacity(n);
    for _ in 0..n {
        let theta: f64 = rng.sample(StandardNormal);
        let u: f64 = rng.gen();
        let ft = f(theta);
        let a = (expit(ft) > u) as u8;
        let mut path = Vec::with_capacity(4);
        path.push(rng.sample::<f64, _>(StandardNormal));
        for (k, t) in (-1i64..=1).enumerate() {
            let prev = path[k];
            let eps: f64 = rng.sample(StandardNormal);
            path.push(beta[k] * ft + gamma[k] * g(prev) + (t - 1) as f64 + eps);
        }
        rows.push(path);
        treatment.push(a);
    }
    PanelDataset::new(
        (1..=n).map(|i| i.to_string()).collect(),
        rows,
        FeatureMatrix::empty(n),
        vec![],
        treatment,
    )
}
