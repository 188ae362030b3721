//! k-nearest-neighbour averaging on standardised features.

use super::Standardizer;
use crate::error::{GdidError, Result};
use crate::linalg::FeatureMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    k: usize,
    st: Standardizer,
    active: Vec<usize>,
    // standardised training rows over the active columns
    train: Vec<f64>,
    targets: Vec<f64>,
}

impl KnnModel {
    pub fn fit(x: &FeatureMatrix, y: &[f64], k: usize) -> Result<Self> {
        let n = x.n_rows();
        if k > n {
            return Err(GdidError::NotEnoughNeighbors { k, available: n });
        }
        let st = Standardizer::fit(x);
        let active = st.active();
        let mut train = Vec::with_capacity(n * active.len());
        for i in 0..n {
            let row = x.row(i);
            train.extend(active.iter().map(|&j| (row[j] - st.mean[j]) / st.scale[j]));
        }
        Ok(KnnModel {
            k,
            st,
            active,
            train,
            targets: y.to_vec(),
        })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let q = self.active.len();
        let n = self.targets.len();
        if q == 0 || self.k == n {
            return self.targets.iter().sum::<f64>() / n as f64;
        }
        let z: Vec<f64> = self
            .active
            .iter()
            .map(|&j| (x[j] - self.st.mean[j]) / self.st.scale[j])
            .collect();
        let mut dist: Vec<(f64, usize)> = (0..n)
            .map(|i| {
                let row = &self.train[i * q..(i + 1) * q];
                let d: f64 = row.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
                (d, i)
            })
            .collect();
        // ties broken by training order so results never depend on the sort
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        dist.select_nth_unstable_by(self.k - 1, cmp);
        dist[..self.k].iter().map(|&(_, i)| self.targets[i]).sum::<f64>() / self.k as f64
    }
}
