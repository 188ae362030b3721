//! Checks shared by the property tests and the acceptance run. Each one
//! panics with a message on failure.

use gdid::clustered::{cluster_multiplier_bootstrap, estimate_clustered_gdid, ClusterFits, ClusteredPanelDataset};
use gdid::estimators::{estimate_aipw_att, estimate_gdid, Period};
use gdid::inference::{bootstrap_replicates, multiplier_bootstrap, plugin_variance, BootstrapConfig, WeightDist};
use gdid::learners::logistic::expit;
use gdid::learners::{
    fit_for_lags, CrossFitOptions, CrossFitPlan, EnsembleModel, FitPlan, LearnerSpec, NuisanceFits, NuisanceSpec, Task,
};
use gdid::linalg::FeatureMatrix;
use gdid::panel::PanelDataset;
use gdid::pipeline::{EstimatorKind, InferenceMethod, NuisanceMode, Pipeline, PipelineOptions};
use gdid::simulation::{simulate_dgp1, Dgp1Config, Observed};
use gdid::staggered::{
    enumerate_histories, estimate_group_time, estimate_group_time_with, group_time_view, StaggeredPanel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Two-period panel with one covariate x. Treated units carry a level shift
/// of 1 (so ignorability fails at each period but the bias is stable) and
/// there is no effect. Trends depend on x.
pub struct TwoPeriod {
    pub data: PanelDataset,
    pub mu1: Vec<f64>,
    pub mu0: Vec<f64>,
    pub pi: Vec<f64>,
}

pub fn true_pi(x: f64) -> f64 {
    expit(0.5 * x - 0.5)
}

pub fn two_period(n: usize, seed: u64) -> TwoPeriod {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.sample(StandardNormal);
        let treated = rng.gen::<f64>() < true_pi(x);
        let nu: f64 = rng.sample(StandardNormal);
        let alpha = if treated { 1.0 } else { 0.0 } + nu;
        let e0: f64 = rng.sample(StandardNormal);
        let e1: f64 = rng.sample(StandardNormal);
        rows.push(vec![alpha + x + e0, alpha + 1.0 + 1.5 * x + e1]);
        xs.push(x);
        a.push(treated as u8);
    }
    let data = PanelDataset::new(
        (0..n).map(|i| format!("u{i}")).collect(),
        rows,
        FeatureMatrix::from_column(&xs),
        vec!["x".into()],
        a,
    )
    .unwrap();
    TwoPeriod {
        mu1: xs.iter().map(|x| 1.0 + 1.5 * x).collect(),
        mu0: xs.clone(),
        pi: xs.iter().map(|&x| true_pi(x)).collect(),
        data,
    }
}

impl TwoPeriod {
    pub fn true_fits(&self) -> NuisanceFits {
        NuisanceFits::from_predictions(self.mu1.clone(), self.mu0.clone(), self.pi.clone(), self.pi.clone())
    }

    fn x(&self) -> Vec<f64> {
        let c = self.data.covariates();
        (0..c.n_rows()).map(|i| c.get(i, 0)).collect()
    }
}

fn dgp1(n: usize, seed: u64) -> PanelDataset {
    simulate_dgp1(&Dgp1Config {
        n,
        zeta: 0.0,
        observed: Observed::Linear,
        seed,
    })
    .unwrap()
}

/// gDiD equals post-period AIPW minus pre-period AIPW on the same fits.
pub fn decomposition_identity() {
    let check = |ds: &PanelDataset, fits: &NuisanceFits| {
        let g = estimate_gdid(ds, fits, 0.01).unwrap().tau_hat;
        let post = estimate_aipw_att(ds, Period::Post, fits, 0.01).unwrap().tau_hat;
        let pre = estimate_aipw_att(ds, Period::Pre, fits, 0.01).unwrap().tau_hat;
        assert!((g - (post - pre)).abs() < 1e-12, "{g} vs {post} - {pre}");
    };
    for seed in 0..20 {
        let tp = two_period(300, seed);
        check(&tp.data, &tp.true_fits());
    }
    let ds = dgp1(400, 1);
    let plan = FitPlan::CrossFit(CrossFitPlan::new(ds.treatment(), 2, 7).unwrap());
    let fits = fit_for_lags(&ds, 1, &NuisanceSpec::parametric(), &plan, &CrossFitOptions::default()).unwrap();
    check(&ds, &fits);
}

/// Mean gDiD estimate over `reps` draws of size `n` with the given fits.
fn mean_estimate(n: usize, reps: usize, fits: impl Fn(&TwoPeriod) -> NuisanceFits + Sync) -> f64 {
    use rayon::prelude::*;
    let taus: Vec<f64> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let tp = two_period(n, 10_000 + r);
            estimate_gdid(&tp.data, &fits(&tp), 0.01).unwrap().tau_hat
        })
        .collect();
    taus.iter().sum::<f64>() / reps as f64
}

/// Consistent with correct outcome models and a wrong propensity, and with
/// the correct propensity and wrong outcome models. Returns both biases.
pub fn double_robustness() -> (f64, f64) {
    let wrong_pi = mean_estimate(5000, 200, |tp| {
        let pi: Vec<f64> = tp.x().iter().map(|&x| expit(-0.5 * x)).collect();
        NuisanceFits::from_predictions(tp.mu1.clone(), tp.mu0.clone(), pi.clone(), pi)
    });
    let wrong_mu = mean_estimate(5000, 200, |tp| {
        let m: Vec<f64> = tp.x().iter().map(|&x| 0.5 + 0.2 * x).collect();
        NuisanceFits::from_predictions(m.clone(), m, tp.pi.clone(), tp.pi.clone())
    });
    assert!(wrong_pi.abs() < 0.05, "bias with wrong propensity: {wrong_pi}");
    assert!(wrong_mu.abs() < 0.05, "bias with wrong outcome model: {wrong_mu}");
    (wrong_pi, wrong_mu)
}

/// Linear and quadratic coefficients of τ̂(r) when every nuisance moves by
/// r along a fixed direction, at n = 10⁵.
pub fn orthogonality_coefficients() -> (f64, f64) {
    let tp = two_period(100_000, 99);
    let rs = [-0.1, -0.05, 0.0, 0.05, 0.1];
    let taus: Vec<f64> = rs
        .iter()
        .map(|&r| {
            let shift = |v: &[f64], s: f64| v.iter().map(|m| m + s).collect::<Vec<f64>>();
            let tilt = |p: &[f64]| -> Vec<f64> {
                p.iter()
                    .map(|&p| {
                        let l = (p / (1.0 - p)).ln();
                        expit(l + r)
                    })
                    .collect()
            };
            let fits =
                NuisanceFits::from_predictions(shift(&tp.mu1, r), shift(&tp.mu0, -r), tilt(&tp.pi), tilt(&tp.pi));
            estimate_gdid(&tp.data, &fits, 1e-6).unwrap().tau_hat
        })
        .collect();
    // symmetric grid: the r and centred r² columns are orthogonal
    let s2: f64 = rs.iter().map(|r| r * r).sum();
    let b1 = rs.iter().zip(&taus).map(|(r, t)| r * t).sum::<f64>() / s2;
    let m = s2 / rs.len() as f64;
    let q: Vec<f64> = rs.iter().map(|r| r * r - m).collect();
    let b2 = q.iter().zip(&taus).map(|(q, t)| q * t).sum::<f64>() / q.iter().map(|q| q * q).sum::<f64>();
    (b1, b2)
}

pub fn neyman_orthogonality() {
    let (b1, b2) = orthogonality_coefficients();
    assert!(b1.abs() < 10.0 * b2.abs() * 0.1, "linear {b1} vs quadratic {b2}");
}

/// With one unit per cluster, the clustered estimator and its inference
/// coincide with the unit-level ones.
pub fn singleton_cluster_reduction() {
    let tp = two_period(400, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p: Vec<f64> = (0..400).map(|_| rng.gen_range(0.05..0.9)).collect();
    let p0: Vec<f64> = (0..400).map(|_| rng.gen_range(0.05..0.9)).collect();
    let iid = estimate_gdid(
        &tp.data,
        &NuisanceFits::from_predictions(tp.mu1.clone(), tp.mu0.clone(), p.clone(), p0.clone()),
        0.01,
    )
    .unwrap();
    let cd = ClusteredPanelDataset::from_parts(tp.data.clone(), tp.data.unit_ids().to_vec()).unwrap();
    let fits = ClusterFits::from_unit_predictions(&cd, tp.mu1.clone(), tp.mu0.clone(), &p, &p0).unwrap();
    let cl = estimate_clustered_gdid(&cd, &fits, 0.01).unwrap();
    assert!((cl.tau_hat - iid.tau_hat).abs() < 1e-12);
    let (a, b) = (plugin_variance(&cl).unwrap(), plugin_variance(&iid).unwrap());
    assert!((a.sigma2_hat - b.sigma2_hat).abs() < 1e-12);
    let cfg = BootstrapConfig::new(500, WeightDist::Exponential, 3).unwrap();
    let (va, ca) = cluster_multiplier_bootstrap(&cl, &cfg).unwrap();
    let (vb, cb) = multiplier_bootstrap(&iid, &cfg).unwrap();
    assert!((va.se - vb.se).abs() < 1e-12);
    assert!((ca.lower - cb.lower).abs() < 1e-12 && (ca.upper - cb.upper).abs() < 1e-12);
}

/// A staggered panel with one post period and a single treated history is
/// the two-group panel; group-time estimation reproduces gDiD exactly.
pub fn staggered_single_period_reduction() {
    let tp = two_period(300, 8);
    let ds = &tp.data;
    let n = ds.n_units();
    let sp = StaggeredPanel::new(
        ds.unit_ids().to_vec(),
        vec![0, 1],
        (0..n).map(|i| ds.outcome_path(i).to_vec()).collect(),
        ds.treatment().iter().map(|&a| vec![0, a]).collect(),
        ds.covariates().clone(),
        ds.covariate_names().to_vec(),
    )
    .unwrap();
    let xi = enumerate_histories(&sp, 1, 5).unwrap();
    let h = xi.histories();
    assert_eq!(h.len(), 1);
    let view = group_time_view(&sp, &h[0]).unwrap();
    assert_eq!(&view.dataset, ds);

    let fits = tp.true_fits();
    let g = estimate_group_time(&xi, &h[0], &view, &fits, 0.01).unwrap();
    let direct = estimate_gdid(ds, &fits, 0.01).unwrap();
    assert_eq!(g.estimate.tau_hat, direct.tau_hat);
    assert_eq!(g.estimate.influence, direct.influence);

    let opts = PipelineOptions {
        seed: 4,
        ..Default::default()
    };
    let g = estimate_group_time_with(&sp, &xi, &h[0], 0, NuisanceMode::CrossFit, &opts).unwrap();
    let mut pipe = Pipeline::new(ds, opts).unwrap();
    let r = pipe
        .run(
            EstimatorKind::Gdid { lags: 0 },
            NuisanceMode::CrossFit,
            InferenceMethod::Plugin,
        )
        .unwrap();
    assert_eq!(g.estimate.tau_hat, r.estimate.tau_hat);
}

/// Multiplier replicates average to τ̂: returns (|mean − τ̂|, 3·MC SE).
pub fn bootstrap_mean_gap() -> (f64, f64) {
    let tp = two_period(2000, 21);
    let est = estimate_gdid(&tp.data, &tp.true_fits(), 0.01).unwrap();
    let b = 10_000;
    let reps = bootstrap_replicates(&est.influence, est.denominator, b, 17, |rng| {
        WeightDist::Exponential.sample(rng)
    });
    let mean = reps.iter().sum::<f64>() / b as f64;
    let sd = (reps.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (b - 1) as f64).sqrt();
    ((mean - est.tau_hat).abs(), 3.0 * sd / (b as f64).sqrt())
}

pub fn bootstrap_conditional_mean() {
    let (gap, bound) = bootstrap_mean_gap();
    assert!(gap < bound, "gap {gap} exceeds {bound}");
}

/// No unit's prediction comes from a model that saw it.
pub fn cross_fit_honesty() {
    let ds = dgp1(300, 3);
    for (k, spec) in [
        (2, NuisanceSpec::parametric()),
        (5, LearnerSpec::default_ensemble().into()),
    ] {
        let plan = FitPlan::CrossFit(CrossFitPlan::new(ds.treatment(), k, 11).unwrap());
        let opts = CrossFitOptions {
            treated_arm: true,
            ..Default::default()
        };
        let fits = fit_for_lags(&ds, 1, &spec, &plan, &opts).unwrap();
        let prov = fits.provenance.as_ref().expect("cross-fit records provenance");
        assert_eq!(prov.training_sets.len(), k);
        assert!(prov.training_sets.iter().all(|t| !t.is_empty()));
        assert_eq!(prov.violations(), 0);
        for p in fits.pi.iter().chain(&fits.pi0).flatten() {
            assert!((0.0..=1.0).contains(p));
        }
    }
}

/// Stacking weights lie on the simplex and the stacked CV risk is no worse
/// than the best candidate's.
pub fn ensemble_simplex(seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 200;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let x = FeatureMatrix::from_rows(&rows);
    let y: Vec<f64> = rows
        .iter()
        .map(|r| r[0] + (2.0 * r[1]).sin() + 0.5 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let a: Vec<f64> = rows
        .iter()
        .map(|r| (rng.gen::<f64>() < expit(r[0] - r[2] * r[2])) as u8 as f64)
        .collect();
    let LearnerSpec::Ensemble { candidates, .. } = LearnerSpec::default_ensemble() else {
        unreachable!()
    };
    for (task, target) in [(Task::Regression, &y), (Task::Propensity, &a)] {
        let m = EnsembleModel::fit(&candidates, task, &x, target, 5, seed).unwrap();
        let w = &m.weights;
        assert!(w.weights.iter().all(|&v| v >= -1e-12), "{:?}", w.weights);
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        let best = w
            .cv_risk
            .iter()
            .copied()
            .filter(|r| r.is_finite())
            .fold(f64::INFINITY, f64::min);
        assert!(w.ensemble_cv_risk <= best + 1e-8, "{} vs {best}", w.ensemble_cv_risk);
    }
}

pub const CHECKS: &[(&str, fn())] = &[
    ("decomposition identity", decomposition_identity),
    ("double robustness", || {
        double_robustness();
    }),
    ("neyman orthogonality", neyman_orthogonality),
    ("singleton-cluster reduction", singleton_cluster_reduction),
    ("T=1 staggered reduction", staggered_single_period_reduction),
    ("bootstrap conditional mean", bootstrap_conditional_mean),
    ("cross-fit honesty", cross_fit_honesty),
    ("ensemble simplex", || {
        for s in 0..5 {
            ensemble_simplex(s)
        }
    }),
];
