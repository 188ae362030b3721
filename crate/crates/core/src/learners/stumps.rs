//! Gradient boosting with depth-one trees.
//!
//! Each round fits a single split by a second-order (Newton) gain, so the
//! same code handles squared error and logistic loss.

use super::logistic::{expit, logit};
use super::Task;
use crate::error::{GdidError, Result};
use crate::linalg::FeatureMatrix;

/// L2 penalty on leaf values under logistic loss; keeps Newton leaves finite
/// when a side is nearly pure.
const LEAF_L2_LOGISTIC: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Stump {
    feature: usize,
    threshold: f64,
    left: f64,
    right: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StumpModel {
    base: f64,
    shrinkage: f64,
    stumps: Vec<Stump>,
    task: Task,
}

impl StumpModel {
    pub fn fit(x: &FeatureMatrix, y: &[f64], rounds: usize, shrinkage: f64, task: Task) -> Result<Self> {
        let n = x.n_rows();
        if n < 2 {
            return Err(GdidError::TooFewRows { needed: 2, got: n });
        }
        let p = x.n_cols();
        let ybar = y.iter().sum::<f64>() / n as f64;
        let (base, lambda) = match task {
            Task::Regression => (ybar, 0.0),
            Task::Propensity => (logit(ybar.clamp(1e-6, 1.0 - 1e-6)), LEAF_L2_LOGISTIC),
        };

        // presorted row order and values per feature
        let sorted: Vec<Vec<usize>> = (0..p)
            .map(|j| {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by(|&a, &b| x.get(a, j).total_cmp(&x.get(b, j)).then(a.cmp(&b)));
                idx
            })
            .collect();

        let mut f = vec![base; n];
        let mut g = vec![0.0; n];
        let mut h = vec![1.0; n];
        let mut stumps = Vec::with_capacity(rounds);
        for _ in 0..rounds {
            match task {
                Task::Regression => {
                    for i in 0..n {
                        g[i] = f[i] - y[i];
                    }
                }
                Task::Propensity => {
                    for i in 0..n {
                        let pr = expit(f[i]);
                        g[i] = pr - y[i];
                        h[i] = (pr * (1.0 - pr)).max(1e-12);
                    }
                }
            }
            let g_tot: f64 = g.iter().sum();
            let h_tot: f64 = h.iter().sum();
            let parent = g_tot * g_tot / (h_tot + lambda);

            let mut best: Option<(f64, Stump)> = None;
            for (j, order) in sorted.iter().enumerate() {
                let (mut gl, mut hl) = (0.0, 0.0);
                for w in 0..n - 1 {
                    let i = order[w];
                    gl += g[i];
                    hl += h[i];
                    let xv = x.get(i, j);
                    let xn = x.get(order[w + 1], j);
                    if xn <= xv {
                        continue;
                    }
                    let gr = g_tot - gl;
                    let hr = h_tot - hl;
                    let gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent;
                    if best.as_ref().map_or(true, |(b, _)| gain > *b) {
                        best = Some((
                            gain,
                            Stump {
                                feature: j,
                                threshold: 0.5 * (xv + xn),
                                left: -gl / (hl + lambda),
                                right: -gr / (hr + lambda),
                            },
                        ));
                    }
                }
            }
            let Some((gain, stump)) = best else { break };
            if gain <= 1e-12 * (1.0 + parent.abs()) {
                break;
            }
            for i in 0..n {
                let leaf = if x.get(i, stump.feature) <= stump.threshold {
                    stump.left
                } else {
                    stump.right
                };
                f[i] += shrinkage * leaf;
            }
            stumps.push(stump);
        }
        Ok(StumpModel {
            base,
            shrinkage,
            stumps,
            task,
        })
    }

    pub fn n_stumps(&self) -> usize {
        self.stumps.len()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut f = self.base;
        for s in &self.stumps {
            f += self.shrinkage * if x[s.feature] <= s.threshold { s.left } else { s.right };
        }
        match self.task {
            Task::Regression => f,
            Task::Propensity => expit(f),
        }
    }
}
