//! Small datasets whose estimates were worked out by hand with exact
//! fractions before the library code existed.

use gdid::estimators::{estimate_aipw_att, estimate_ate_gdid, estimate_cdid, estimate_did, estimate_gdid, Period};
use gdid::inference::plugin_variance;
use gdid::learners::NuisanceFits;
use gdid::linalg::FeatureMatrix;
use gdid::panel::{parse_panel_csv, PanelDataset, PanelSchema};
use gdid::staggered::{
    aggregate_effects, enumerate_histories, estimate_group_time, group_time_view, preset_weights, StaggeredPanel,
    TreatmentHistory, WeightKind,
};

const TOL: f64 = 1e-10;

pub fn close(a: f64, b: f64) {
    assert!((a - b).abs() < TOL, "{a} vs {b}");
}

/// Units 1, 2 treated; 3, 4 control; times −1, 0, 1; x = (1, 0, 1, 0).
pub fn four_units() -> PanelDataset {
    let csv = "id,t,y,a,x1\n\
               1,-1,1,1,1\n1,0,2,1,1\n1,1,5,1,1\n\
               2,-1,0,1,0\n2,0,1,1,0\n2,1,3,1,0\n\
               3,-1,1,0,1\n3,0,2,0,1\n3,1,3,0,1\n\
               4,-1,2,0,0\n4,0,2,0,0\n4,1,4,0,0\n";
    let schema = PanelSchema {
        unit: "id".into(),
        time: "t".into(),
        outcome: "y".into(),
        treatment: "a".into(),
        covariates: vec!["x1".into()],
        ..Default::default()
    };
    parse_panel_csv(csv, &schema).unwrap()
}

pub fn four_unit_fits() -> NuisanceFits {
    NuisanceFits::from_predictions(
        vec![3.0, 2.5, 3.5, 3.0],
        vec![2.0, 1.5, 2.5, 1.0],
        vec![0.6, 0.5, 0.4, 0.2],
        vec![0.5, 0.5, 0.25, 0.5],
    )
}

pub fn long_csv_reshapes() {
    let ds = four_units();
    assert_eq!(ds.times(), &[-1, 0, 1]);
    assert_eq!(ds.n_units(), 4);
    assert_eq!(ds.outcomes_at(1), vec![5.0, 3.0, 3.0, 4.0]);
    assert_eq!(ds.treatment(), &[1, 1, 0, 0]);
}

pub fn aipw_both_periods() {
    let ds = four_units();
    let fits = four_unit_fits();
    let post = estimate_aipw_att(&ds, Period::Post, &fits, 0.01).unwrap();
    let pre = estimate_aipw_att(&ds, Period::Pre, &fits, 0.01).unwrap();
    // summands post: 2, 1/2, 1/3, −1/4; pre: 0, −1/2, 1/6, −1
    close(post.tau_hat, 31.0 / 24.0);
    close(pre.tau_hat, -2.0 / 3.0);
    for (got, want) in post.influence.iter().zip([2.0, 0.5, 1.0 / 3.0, -0.25]) {
        close(*got, want);
    }
}

pub fn gdid_and_plugin_variance() {
    let ds = four_units();
    let est = estimate_gdid(&ds, &four_unit_fits(), 0.01).unwrap();
    close(est.tau_hat, 47.0 / 24.0);
    close(plugin_variance(&est).unwrap().sigma2_hat, 145.0 / 192.0);
}

pub fn did_difference_of_trend_means() {
    // treated trends 3, 2; control trends 1, 2
    close(estimate_did(&four_units()).unwrap().tau_hat, 1.0);
}

pub fn cdid_with_stratum_means_is_stratified_did() {
    // stratum x=1: 3 − 1 = 2; stratum x=0: 2 − 2 = 0; one treated unit each
    let fits = NuisanceFits::from_predictions(
        vec![3.0, 4.0, 3.0, 4.0],
        vec![2.0, 2.0, 2.0, 2.0],
        vec![0.5; 4],
        vec![0.5; 4],
    );
    close(estimate_cdid(&four_units(), &fits, 0.01).unwrap().tau_hat, 1.0);
}

pub fn ate_gdid() {
    let mut fits = four_unit_fits();
    fits.mu1_treated = Some(vec![4.5, 3.5, 4.0, 4.0]);
    fits.mu0_treated = Some(vec![1.5, 1.0, 2.0, 1.5]);
    close(
        estimate_ate_gdid(&four_units(), &fits, 0.01).unwrap().tau_hat,
        19.0 / 16.0,
    );
}

/// Times 0, 1, 2. Two units adopt at 2 (history 01), two at 1 (history 11),
/// two never.
pub fn six_units() -> StaggeredPanel {
    StaggeredPanel::new(
        ["a1", "a2", "b1", "b2", "n1", "n2"].map(String::from).to_vec(),
        vec![0, 1, 2],
        vec![
            vec![1.0, 2.0, 4.0],
            vec![0.0, 1.0, 2.0],
            vec![2.0, 3.0, 5.0],
            vec![1.0, 1.0, 3.0],
            vec![1.0, 2.0, 3.0],
            vec![0.0, 0.0, 1.0],
        ],
        vec![
            vec![0, 0, 1],
            vec![0, 0, 1],
            vec![0, 1, 1],
            vec![0, 1, 1],
            vec![0, 0, 0],
            vec![0, 0, 0],
        ],
        FeatureMatrix::from_column(&[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]),
        vec!["x".into()],
    )
    .unwrap()
}

pub fn group_time_and_aggregate() {
    let panel = six_units();
    let xi = enumerate_histories(&panel, 2, 1).unwrap();
    let h01: TreatmentHistory = "01".parse().unwrap();
    let h11: TreatmentHistory = "11".parse().unwrap();
    assert_eq!(xi.histories(), vec![h01.clone(), h11.clone()]);

    // view rows: a1, a2, n1, n2; post Y₂, pre Y₁
    let v01 = group_time_view(&panel, &h01).unwrap();
    let f01 = NuisanceFits::from_predictions(
        vec![3.0, 1.0, 3.0, 1.0],
        vec![2.0, 0.5, 2.0, 0.5],
        vec![0.5, 0.4, 0.5, 0.4],
        vec![0.5, 0.5, 0.25, 0.25],
    );
    let e01 = estimate_group_time(&xi, &h01, &v01, &f01, 0.01).unwrap();
    close(e01.estimate.tau_hat, 2.0 / 3.0);

    // view rows: b1, b2, n1, n2; post Y₂, pre Y₀
    let v11 = group_time_view(&panel, &h11).unwrap();
    let f11 = NuisanceFits::from_predictions(
        vec![3.5, 1.5, 3.5, 1.5],
        vec![1.0, 0.5, 1.0, 0.5],
        vec![0.6, 0.3, 0.6, 0.3],
        vec![0.5, 0.2, 0.5, 0.2],
    );
    let e11 = estimate_group_time(&xi, &h11, &v11, &f11, 0.01).unwrap();
    close(e11.estimate.tau_hat, 131.0 / 112.0);

    let w = preset_weights(WeightKind::TreatedAtT, &xi.histories(), None).unwrap();
    let agg = aggregate_effects(panel.n_units(), &[e01, e11], &w).unwrap();
    close(agg.tau_hat, 617.0 / 672.0);
    close(agg.influence.iter().sum::<f64>() / agg.denominator, 617.0 / 672.0);
}

pub const CHECKS: &[(&str, fn())] = &[
    ("long_csv_reshapes", long_csv_reshapes),
    ("aipw_both_periods", aipw_both_periods),
    ("gdid_and_plugin_variance", gdid_and_plugin_variance),
    ("did_difference_of_trend_means", did_difference_of_trend_means),
    ("cdid_with_stratum_means", cdid_with_stratum_means_is_stratified_did),
    ("ate_gdid", ate_gdid),
    ("group_time_and_aggregate", group_time_and_aggregate),
];
