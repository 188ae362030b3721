//! Logistic regression by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};

use super::Standardizer;
use crate::error::{GdidError, Result};
use crate::linalg::FeatureMatrix;

const MAX_ITER: usize = 50;
const DEVIANCE_TOL: f64 = 1e-8;
const RIDGE: f64 = 1e-6;
// |η| beyond this means fitted probabilities within ~1e-13 of 0 or 1
const SEPARATION_ETA: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub intercept: f64,
    /// Coefficients on the original feature scale.
    pub coef: Vec<f64>,
    pub separation: bool,
    pub iterations: usize,
    pub converged: bool,
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

struct IrlsFit {
    beta: DVector<f64>,
    iterations: usize,
    converged: bool,
    max_abs_eta: f64,
}

impl LogisticModel {
    /// `y` must contain 0/1 values. On separation the fit is redone with a
    /// ridge penalty of `1e-6·n` on the standardised coefficients.
    pub fn fit(x: &FeatureMatrix, y: &[f64]) -> Result<Self> {
        let n = x.n_rows();
        if n < 2 {
            return Err(GdidError::TooFewRows { needed: 2, got: n });
        }
        let st = Standardizer::fit(x);
        let active = st.active();
        let q = active.len() + 1;
        let mut design = Vec::with_capacity(n * q);
        for i in 0..n {
            let row = x.row(i);
            design.push(1.0);
            for &j in &active {
                design.push((row[j] - st.mean[j]) / st.scale[j]);
            }
        }
        let design = FeatureMatrix::new(design, n, q);

        let first = irls(&design, y, 0.0);
        let (fit, separation) = match first {
            Some(f) if f.converged && f.max_abs_eta <= SEPARATION_ETA => (f, false),
            _ => {
                let f = irls(&design, y, RIDGE * n as f64).ok_or(GdidError::SingularDesign)?;
                (f, true)
            }
        };

        let mut coef = vec![0.0; x.n_cols()];
        let mut intercept = fit.beta[0];
        for (a, &j) in active.iter().enumerate() {
            coef[j] = fit.beta[a + 1] / st.scale[j];
            intercept -= coef[j] * st.mean[j];
        }
        Ok(LogisticModel {
            intercept,
            coef,
            separation,
            iterations: fit.iterations,
            converged: fit.converged,
        })
    }

    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        expit(self.linear_predictor(x))
    }

    pub fn predict_many(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.n_rows()).map(|i| self.predict(x.row(i))).collect()
    }
}

fn deviance(design: &FeatureMatrix, y: &[f64], beta: &DVector<f64>, lambda: f64) -> (f64, f64) {
    let mut dev = 0.0;
    let mut max_eta = 0.0_f64;
    for (i, &yi) in y.iter().enumerate() {
        let eta: f64 = design.row(i).iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
        max_eta = max_eta.max(eta.abs());
        // log(1 + e^η) − y·η, computed stably
        let softplus = if eta > 0.0 {
            eta + (-eta).exp().ln_1p()
        } else {
            eta.exp().ln_1p()
        };
        dev += 2.0 * (softplus - yi * eta);
    }
    let pen: f64 = beta.iter().skip(1).map(|b| b * b).sum::<f64>() * lambda;
    (dev + pen, max_eta)
}

fn irls(design: &FeatureMatrix, y: &[f64], lambda: f64) -> Option<IrlsFit> {
    let n = design.n_rows();
    let q = design.n_cols();
    let ybar = (y.iter().sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let mut beta = DVector::zeros(q);
    beta[0] = logit(ybar);
    let (mut dev, mut max_eta) = deviance(design, y, &beta, lambda);
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=MAX_ITER {
        iterations = it;
        let mut h = DMatrix::<f64>::zeros(q, q);
        let mut g = DVector::<f64>::zeros(q);
        for (i, &yi) in y.iter().enumerate() {
            let row = design.row(i);
            let eta: f64 = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
            let p = expit(eta);
            let w = (p * (1.0 - p)).max(1e-12);
            let r = yi - p;
            for a in 0..q {
                g[a] += row[a] * r;
                for b in 0..=a {
                    h[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..q {
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
        }
        for a in 1..q {
            h[(a, a)] += lambda;
            g[a] -= lambda * beta[a];
        }
        // Newton step on the penalised log-likelihood
        let step = match h.clone().cholesky() {
            Some(c) => c.solve(&g),
            None => h.lu().solve(&g)?,
        };
        if step.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..20 {
            let cand = &beta + &step * t;
            let (d, m) = deviance(design, y, &cand, lambda);
            if d.is_finite() && d <= dev + 1e-12 * dev.abs() {
                accepted = Some((cand, d, m));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, d, m)) = accepted else {
            converged = true;
            break;
        };
        let change = (dev - d).abs();
        beta = cand;
        dev = d;
        max_eta = m;
        if change < DEVIANCE_TOL {
            converged = true;
            break;
        }
    }
    Some(IrlsFit {
        beta,
        iterations,
        converged,
        max_abs_eta: max_eta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    #[test]
    fn expit_is_stable() {
        assert_eq!(expit(0.0), 0.5);
        assert!(expit(-800.0) >= 0.0);
        assert!(expit(800.0) <= 1.0);
        assert!((logit(expit(1.3)) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn recovers_known_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let truth = [-0.75, 0.375, -0.375, -0.1875];
        let n = 10_000;
        let mut rows = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let u = Uniform::new(0.0, 1.0);
        for _ in 0..n {
            let w: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
            let eta: f64 = w.iter().zip(&truth).map(|(a, b)| a * b).sum();
            y.push(if u.sample(&mut rng) < expit(eta) { 1.0 } else { 0.0 });
            rows.push(w);
        }
        let m = LogisticModel::fit(&FeatureMatrix::from_rows(&rows), &y).unwrap();
        assert!(!m.separation);
        assert!(m.intercept.abs() < 0.1);
        for (b, t) in m.coef.iter().zip(&truth) {
            assert!((b - t).abs() < 0.1, "{b} vs {t}");
        }
    }

    #[test]
    fn separation_triggers_ridge() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let y: Vec<f64> = xs.iter().map(|&v| if v >= 20.0 { 1.0 } else { 0.0 }).collect();
        let m = LogisticModel::fit(&FeatureMatrix::from_column(&xs), &y).unwrap();
        assert!(m.separation);
        for &x in &xs {
            let p = m.predict(&[x]);
            assert!(p.is_finite() && (0.0..=1.0).contains(&p));
        }
        assert!(m.predict(&[0.0]) < 0.01 && m.predict(&[39.0]) > 0.99);
    }
}
