//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion to
//! stderr (uncaptured) and fails if any criterion fails.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use gdid::config::{run_estimate, EstimateConfig};
use gdid::pipeline::{EstimatorKind, InferenceMethod, NuisanceMode};
use gdid::simulation::{
    run_monte_carlo, standard_estimators, Dgp1Config, Dgp2Config, Dgp2Form, DgpConfig, EstimatorConfig,
    MonteCarloReport, MonteCarloSettings, Observed, Schedule,
};

const SEED: u64 = 2024;

fn say(line: &str) {
    let mut e = std::io::stderr().lock();
    let _ = writeln!(e, "{line}");
}

struct Verdict {
    pass: bool,
    lines: Vec<String>,
}

impl Verdict {
    fn new() -> Self {
        Verdict {
            pass: true,
            lines: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: String) {
        self.pass &= ok;
        self.lines
            .push(format!("    [{}] {what}", if ok { "ok" } else { "FAILED" }));
    }
}

fn report(id: u32, title: &str, v: Verdict, started: Instant) -> bool {
    say(&format!(
        "criterion {id}: {} - {title} ({:.0}s)",
        if v.pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    ));
    for l in &v.lines {
        say(l);
    }
    v.pass
}

fn dgp1(zeta: f64) -> DgpConfig {
    DgpConfig::Dgp1(Dgp1Config {
        n: 1000,
        zeta,
        observed: Observed::Linear,
        seed: 0,
    })
}

fn dgp2(gamma: &str) -> DgpConfig {
    DgpConfig::Dgp2(Dgp2Config {
        n: 1000,
        gamma: Schedule::gamma_preset(gamma).unwrap(),
        beta: Schedule::beta_preset("constant").unwrap(),
        form: Dgp2Form::Linear,
        seed: 0,
    })
}

fn settings(reps: usize) -> MonteCarloSettings {
    MonteCarloSettings {
        reps,
        seed: SEED,
        ..Default::default()
    }
}

fn pick(names: &[&str]) -> Vec<EstimatorConfig> {
    standard_estimators()
        .into_iter()
        .filter(|e| names.contains(&e.name.as_str()))
        .collect()
}

fn mc(dgp: &DgpConfig, est: &[EstimatorConfig], reps: usize) -> MonteCarloReport {
    let r = run_monte_carlo(dgp, est, &settings(reps)).unwrap();
    for row in &r.rows {
        assert_eq!(row.failures, 0, "{}: {:?}", row.estimator, row.first_failure);
    }
    r
}

fn bias(r: &MonteCarloReport, name: &str) -> f64 {
    r.row(name).unwrap().bias
}

fn rmse(r: &MonteCarloReport, name: &str) -> f64 {
    r.row(name).unwrap().rmse
}

fn criterion_1(r: &MonteCarloReport) -> Verdict {
    let mut v = Verdict::new();
    let b = bias(r, "DiD");
    v.check((b + 0.21).abs() <= 0.08, format!("DiD bias {b:.3} in -0.21 +/- 0.08"));
    let b = bias(r, "Ign-1");
    v.check(
        (b + 0.003).abs() <= 0.05,
        format!("Ign-1 bias {b:.3} in -0.003 +/- 0.05"),
    );
    let b = bias(r, "gDiD-1");
    v.check(
        (b + 0.004).abs() <= 0.05,
        format!("gDiD-1 bias {b:.3} in -0.004 +/- 0.05"),
    );
    let e = rmse(r, "gDiD-1");
    v.check(e <= 0.25, format!("gDiD-1 RMSE {e:.3} <= 0.25"));
    let c = r.row("gDiD-1").unwrap().coverage;
    v.check(c >= 88.0, format!("gDiD-1 coverage {c:.1}% >= 88%"));
    let order = ["Ign-2", "Ign-1", "gDiD-1", "DiD"];
    let vals: Vec<f64> = order.iter().map(|n| rmse(r, n)).collect();
    let ok = vals.windows(2).all(|w| w[0] < w[1] + 0.02);
    v.check(
        ok,
        format!(
            "RMSE order Ign-2 {:.3} < Ign-1 {:.3} < gDiD-1 {:.3} < DiD {:.3} (ties within 0.02)",
            vals[0], vals[1], vals[2], vals[3]
        ),
    );
    v
}

fn criterion_2(r: &MonteCarloReport) -> Verdict {
    let mut v = Verdict::new();
    let b = bias(r, "Ign-1");
    v.check(b.abs() > 1.0, format!("|Ign-1 bias| {:.3} > 1.0", b.abs()));
    let b = bias(r, "gDiD-1");
    v.check(b.abs() < 0.3, format!("|gDiD-1 bias| {:.3} < 0.3", b.abs()));
    let (g, d) = (rmse(r, "gDiD-1"), rmse(r, "DiD"));
    v.check(g < d, format!("RMSE gDiD-1 {g:.3} < DiD {d:.3}"));
    v
}

fn criterion_3(base: &MonteCarloReport, hi: &MonteCarloReport) -> Verdict {
    let mut v = Verdict::new();
    for name in ["gDiD-1", "gDiD-2", "Ign-1", "Ign-2"] {
        let (a, b) = (rmse(base, name), rmse(hi, name));
        v.check(
            b >= 2.0 * a,
            format!("{name} RMSE {a:.3} -> {b:.3} (x{:.2} >= 2)", b / a),
        );
    }
    let (a, b) = (rmse(base, "DiD"), rmse(hi, "DiD"));
    let change = (b - a).abs() / a;
    v.check(
        change < 0.3,
        format!("DiD RMSE {a:.3} -> {b:.3} (change {:.0}% < 30%)", 100.0 * change),
    );
    v
}

fn criterion_4(a: &MonteCarloReport, b: &MonteCarloReport, c: &MonteCarloReport) -> Verdict {
    let mut v = Verdict::new();
    let did = rmse(a, "DiD");
    let (best_name, best) = a
        .rows
        .iter()
        .filter(|r| r.estimator != "gDiD-1-boot")
        .map(|r| (r.estimator.as_str(), r.rmse))
        .fold(("", f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    v.check(
        best_name == "DiD",
        format!("(a) smallest RMSE: {best_name} {best:.3} (DiD {did:.3})"),
    );
    let g = rmse(a, "gDiD-1");
    v.check(g <= 2.0 * did, format!("(a) RMSE gDiD-1 {g:.3} <= 2 x DiD {did:.3}"));
    for (tag, r) in [("(b) gamma constant", b), ("(c) gamma growing", c)] {
        let (g, d) = (rmse(r, "gDiD-1"), rmse(r, "DiD"));
        v.check(g < 0.5 * d, format!("{tag}: RMSE gDiD-1 {g:.3} < 0.5 x DiD {d:.3}"));
    }
    v
}

fn run_checks(checks: &[(&str, fn())], budget_s: f64) -> Verdict {
    let mut v = Verdict::new();
    for (name, f) in checks {
        let t = Instant::now();
        let ok = catch_unwind(AssertUnwindSafe(f)).is_ok();
        let secs = t.elapsed().as_secs_f64();
        v.check(ok && secs < budget_s, format!("{name} ({secs:.1}s)"));
    }
    v
}

fn criterion_7(a: &MonteCarloReport) -> Verdict {
    let mut v = Verdict::new();
    for name in ["gDiD-1", "gDiD-1-boot"] {
        let c = a.row(name).unwrap().coverage;
        v.check(c >= 90.0, format!("{name} coverage {c:.1}% >= 90%"));
    }
    v
}

fn criterion_8() -> Verdict {
    let mut v = Verdict::new();
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let small = |n: usize| {
        pool(n).install(|| {
            let r = run_monte_carlo(&dgp1(0.0), &standard_estimators(), &settings(6)).unwrap();
            (r.to_json().unwrap(), r.to_csv().unwrap())
        })
    };
    let base = small(1);
    v.check(base == small(1), "Monte Carlo report identical across runs".into());
    v.check(
        base == small(4),
        "Monte Carlo report identical at 1 and 4 threads".into(),
    );

    let toy = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/data/toy_panel.csv")).unwrap();
    let mut cfg = EstimateConfig {
        inference: InferenceMethod::Bootstrap,
        ..Default::default()
    };
    cfg.pipeline.seed = 5;
    let est = |n: usize| pool(n).install(|| run_estimate(&cfg, &toy).unwrap().to_json().unwrap());
    v.check(est(1) == est(3), "estimate JSON identical at 1 and 3 threads".into());

    let exp = concat!(env!("CARGO_MANIFEST_DIR"), "/data/dgp1_zeta0.toml");
    let cli = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_gdid"))
            .args(["--threads", threads, "--seed", "9", "simulate", exp, "--reps", "3"])
            .output()
            .unwrap()
            .stdout
    };
    let first = cli("1");
    v.check(
        !first.is_empty() && first == cli("1") && first == cli("2"),
        "CLI simulate output byte-identical across runs and --threads".into(),
    );
    v
}

#[test]
fn acceptance() {
    let mut results = Vec::new();
    say("acceptance run (Monte Carlo criteria take several minutes)");

    let t = Instant::now();
    let c1_names = ["DiD", "gDiD-1", "gDiD-2", "Ign-1", "Ign-2"];
    let base = mc(&dgp1(0.0), &pick(&c1_names), 500);
    results.push(report(1, "DGP1 zeta=0, 500 reps", criterion_1(&base), t));

    let t = Instant::now();
    let r = mc(&dgp1(0.1), &pick(&["DiD", "gDiD-1", "Ign-1"]), 500);
    results.push(report(2, "DGP1 zeta=0.1, 500 reps", criterion_2(&r), t));

    let t = Instant::now();
    let hi = mc(&dgp1(0.3), &pick(&c1_names), 200);
    results.push(report(
        3,
        "DGP1 zeta=0.3 vs zeta=0, 200 reps",
        criterion_3(&base, &hi),
        t,
    ));

    let t = Instant::now();
    let mut with_boot = standard_estimators();
    with_boot.push(EstimatorConfig::new(
        "gDiD-1-boot",
        EstimatorKind::Gdid { lags: 1 },
        NuisanceMode::CrossFit,
        InferenceMethod::Bootstrap,
    ));
    let a = mc(&dgp2("zero"), &with_boot, 500);
    let b = mc(&dgp2("constant"), &standard_estimators(), 500);
    let c = mc(&dgp2("linear_growth"), &standard_estimators(), 500);
    results.push(report(4, "DGP2 linear orderings, 500 reps", criterion_4(&a, &b, &c), t));

    let t = Instant::now();
    results.push(report(5, "property suite", run_checks(common::props::CHECKS, 300.0), t));

    let t = Instant::now();
    results.push(report(
        6,
        "hand oracles (1e-10)",
        run_checks(common::hand::CHECKS, 300.0),
        t,
    ));

    let t = Instant::now();
    results.push(report(7, "coverage, DGP2 gamma=0, 500 reps", criterion_7(&a), t));

    let t = Instant::now();
    results.push(report(8, "determinism", criterion_8(), t));

    let failed: Vec<usize> = (1..=results.len()).filter(|&i| !results[i - 1]).collect();
    say(&format!(
        "acceptance: {} of {} criteria pass",
        results.len() - failed.len(),
        results.len()
    ));
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
