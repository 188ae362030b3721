//! Balanced two-or-more-period panels, their conditioning sets, and CSV ingestion.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GdidError, Result};
use crate::learners::logistic::LogisticModel;
use crate::linalg::FeatureMatrix;

/// Balanced panel with a single post-period at time 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    unit_ids: Vec<String>,
    times: Vec<i64>,
    // row-major, units × times
    outcomes: Vec<f64>,
    covariates: FeatureMatrix,
    covariate_names: Vec<String>,
    treatment: Vec<u8>,
    clusters: Option<Vec<String>>,
}

impl PanelDataset {
    /// Builds a panel from per-unit outcome paths.
    ///
    /// `outcomes[i]` holds unit i's outcomes ordered by time, ending at the
    /// post-period, so the grid is `1 - T + 1 ..= 1`.
    pub fn new(
        unit_ids: Vec<String>,
        outcomes: Vec<Vec<f64>>,
        covariates: FeatureMatrix,
        covariate_names: Vec<String>,
        treatment: Vec<u8>,
    ) -> Result<Self> {
        let n = unit_ids.len();
        if outcomes.len() != n || treatment.len() != n || covariates.n_rows() != n {
            return Err(GdidError::LengthMismatch(format!(
                "{} unit ids, {} outcome rows, {} treatments, {} covariate rows",
                n,
                outcomes.len(),
                treatment.len(),
                covariates.n_rows()
            )));
        }
        if covariate_names.len() != covariates.n_cols() {
            return Err(GdidError::LengthMismatch(
                "covariate names do not match covariate columns".into(),
            ));
        }
        let n_times = outcomes.first().map_or(0, Vec::len);
        if n_times < 2 {
            return Err(GdidError::InvalidPanel(
                "need at least one pre-period and the post-period".into(),
            ));
        }
        let mut flat = Vec::with_capacity(n * n_times);
        for (i, row) in outcomes.iter().enumerate() {
            if row.len() != n_times {
                return Err(GdidError::MissingCell {
                    unit: unit_ids[i].clone(),
                    time: 1 - row.len() as i64,
                });
            }
            flat.extend_from_slice(row);
        }
        for (i, &a) in treatment.iter().enumerate() {
            if a > 1 {
                return Err(GdidError::NonBinaryTreatment {
                    unit: unit_ids[i].clone(),
                    value: a.to_string(),
                });
            }
        }
        let t_min = 2 - n_times as i64;
        Ok(PanelDataset {
            unit_ids,
            times: (t_min..=1).collect(),
            outcomes: flat,
            covariates,
            covariate_names,
            treatment,
            clusters: None,
        })
    }

    /// Attaches a cluster label per unit.
    pub fn with_clusters(mut self, clusters: Vec<String>) -> Result<Self> {
        if clusters.len() != self.n_units() {
            return Err(GdidError::LengthMismatch("cluster labels".into()));
        }
        self.clusters = Some(clusters);
        Ok(self)
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn times(&self) -> &[i64] {
        &self.times
    }

    pub fn t_min(&self) -> i64 {
        self.times[0]
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn covariates(&self) -> &FeatureMatrix {
        &self.covariates
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn clusters(&self) -> Option<&[String]> {
        self.clusters.as_deref()
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&a| a == 1).count()
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.treatment[i] == 1
    }

    fn time_index(&self, t: i64) -> usize {
        assert!(
            t >= self.t_min() && t <= 1,
            "time {t} outside panel range {}..=1",
            self.t_min()
        );
        (t - self.t_min()) as usize
    }

    pub fn outcome(&self, i: usize, t: i64) -> f64 {
        self.outcomes[i * self.n_times() + self.time_index(t)]
    }

    /// All units' outcomes at time `t`.
    pub fn outcomes_at(&self, t: i64) -> Vec<f64> {
        let k = self.time_index(t);
        let w = self.n_times();
        (0..self.n_units()).map(|i| self.outcomes[i * w + k]).collect()
    }

    /// Unit i's outcome path ordered by time.
    pub fn outcome_path(&self, i: usize) -> &[f64] {
        let w = self.n_times();
        &self.outcomes[i * w..(i + 1) * w]
    }

    /// Panel restricted to (and reordered by) `idx`.
    pub fn subset(&self, idx: &[usize]) -> PanelDataset {
        let w = self.n_times();
        let mut outcomes = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            outcomes.extend_from_slice(self.outcome_path(i));
        }
        PanelDataset {
            unit_ids: idx.iter().map(|&i| self.unit_ids[i].clone()).collect(),
            times: self.times.clone(),
            outcomes,
            covariates: self.covariates.select_rows(idx),
            covariate_names: self.covariate_names.clone(),
            treatment: idx.iter().map(|&i| self.treatment[i]).collect(),
            clusters: self
                .clusters
                .as_ref()
                .map(|c| idx.iter().map(|&i| c[i].clone()).collect()),
        }
    }

    /// Copy with every outcome shifted by `c`.
    pub fn shifted(&self, c: f64) -> PanelDataset {
        let mut out = self.clone();
        out.outcomes.iter_mut().for_each(|y| *y += c);
        out
    }

    /// Keeps only the last `n_periods` periods.
    pub fn truncate_history(&self, n_periods: usize) -> Result<PanelDataset> {
        if n_periods < 2 || n_periods > self.n_times() {
            return Err(GdidError::InvalidConfig(format!(
                "cannot keep {n_periods} of {} periods",
                self.n_times()
            )));
        }
        let skip = self.n_times() - n_periods;
        let rows: Vec<Vec<f64>> = (0..self.n_units())
            .map(|i| self.outcome_path(i)[skip..].to_vec())
            .collect();
        let mut out = PanelDataset::new(
            self.unit_ids.clone(),
            rows,
            self.covariates.clone(),
            self.covariate_names.clone(),
            self.treatment.clone(),
        )?;
        out.clusters = self.clusters.clone();
        Ok(out)
    }

    /// Violations of the panel invariants that construction does not enforce.
    pub fn structural_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let n1 = self.n_treated();
        if n1 == 0 {
            errs.push("no treated units".to_string());
        }
        if n1 == self.n_units() {
            errs.push("no control units".to_string());
        }
        if self.outcomes.iter().any(|y| !y.is_finite()) {
            errs.push("non-finite outcome values".to_string());
        }
        if self.covariates.as_slice().iter().any(|x| !x.is_finite()) {
            errs.push("non-finite covariate values".to_string());
        }
        let distinct: BTreeSet<&String> = self.unit_ids.iter().collect();
        if distinct.len() != self.unit_ids.len() {
            errs.push("duplicate unit identifiers".to_string());
        }
        errs
    }
}

/// Covariates plus lagged outcomes anchored at a pre-period.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningSet {
    pub anchor_time: i64,
    pub lag_depth: usize,
    pub features: FeatureMatrix,
    pub feature_names: Vec<String>,
}

impl ConditioningSet {
    pub fn width(&self) -> usize {
        self.features.n_cols()
    }
}

/// Row i is `(X_i, Y_{i,anchor}, Y_{i,anchor-1}, ...)` with `lag_depth` lags.
pub fn build_conditioning(dataset: &PanelDataset, anchor_time: i64, lag_depth: usize) -> Result<ConditioningSet> {
    if anchor_time > 0 {
        return Err(GdidError::InvalidConfig(format!(
            "anchor time {anchor_time} is not a pre-period"
        )));
    }
    let earliest = anchor_time - lag_depth as i64 + 1;
    if lag_depth > 0 && earliest < dataset.t_min() {
        return Err(GdidError::InsufficientHistory {
            needed: earliest,
            t_min: dataset.t_min(),
        });
    }
    let p = dataset.covariates.n_cols();
    let width = p + lag_depth;
    let n = dataset.n_units();
    let mut data = Vec::with_capacity(n * width);
    for i in 0..n {
        data.extend_from_slice(dataset.covariates.row(i));
        for l in 0..lag_depth as i64 {
            data.push(dataset.outcome(i, anchor_time - l));
        }
    }
    let mut names = dataset.covariate_names.clone();
    names.extend((0..lag_depth as i64).map(|l| format!("y[{}]", anchor_time - l)));
    Ok(ConditioningSet {
        anchor_time,
        lag_depth,
        features: FeatureMatrix::new(data, n, width),
        feature_names: names,
    })
}

/// Crude propensity summary for one treatment arm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapStratum {
    pub arm: u8,
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Share of the arm with propensity above `1 - trim_eps`.
    pub frac_above_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct ValidationReport {
    pub overlap_diagnostics: Vec<OverlapStratum>,
    pub structural_errors: Vec<String>,
    pub warnings: Vec<String>,
    pub separation: bool,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.structural_errors.is_empty()
    }
}

/// Share of treated units above `1 - trim_eps` that triggers a warning.
const NEAR_VIOLATION_SHARE: f64 = 0.05;

/// Overlap diagnostics from an unpenalised logistic fit on the conditioning set.
pub fn validate(dataset: &PanelDataset, conditioning: &ConditioningSet, trim_eps: f64) -> ValidationReport {
    let mut report = ValidationReport {
        structural_errors: dataset.structural_errors(),
        ..Default::default()
    };
    if !(trim_eps > 0.0 && trim_eps < 0.5) {
        report
            .structural_errors
            .push(format!("trim_eps {trim_eps} outside (0, 0.5)"));
    }
    if conditioning.features.n_rows() != dataset.n_units() {
        report
            .structural_errors
            .push("conditioning set does not match the panel".to_string());
    }
    if !report.structural_errors.is_empty() {
        return report;
    }

    let a: Vec<f64> = dataset.treatment.iter().map(|&v| v as f64).collect();
    let model = match LogisticModel::fit(&conditioning.features, &a) {
        Ok(m) => m,
        Err(e) => {
            report.warnings.push(format!("crude propensity fit failed: {e}"));
            return report;
        }
    };
    if model.separation {
        report.separation = true;
        report
            .warnings
            .push("complete or quasi-complete separation in the propensity model".into());
    }
    let ps = model.predict_many(&conditioning.features);
    for arm in [1u8, 0u8] {
        let vals: Vec<f64> = ps
            .iter()
            .zip(&dataset.treatment)
            .filter(|(_, &t)| t == arm)
            .map(|(&p, _)| p)
            .collect();
        let n = vals.len();
        let above = vals.iter().filter(|&&p| p > 1.0 - trim_eps).count();
        report.overlap_diagnostics.push(OverlapStratum {
            arm,
            n,
            mean: vals.iter().sum::<f64>() / n as f64,
            min: vals.iter().copied().fold(f64::INFINITY, f64::min),
            max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            frac_above_bound: above as f64 / n as f64,
        });
    }
    let treated = &report.overlap_diagnostics[0];
    if treated.frac_above_bound > NEAR_VIOLATION_SHARE {
        report.warnings.push(format!(
            "near positivity violation: {:.1}% of treated units have propensity above {}",
            100.0 * treated.frac_above_bound,
            1.0 - trim_eps
        ));
    }
    report
}

// ---------------------------------------------------------------------------
// CSV ingestion

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    #[default]
    Long,
    Wide,
}

/// Column mapping for the CSV loaders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelSchema {
    pub layout: Layout,
    pub unit: String,
    pub time: String,
    pub outcome: String,
    pub treatment: String,
    /// Explicit covariate columns; when empty, every column starting with
    /// `covariate_prefix` is used in header order.
    pub covariates: Vec<String>,
    pub covariate_prefix: String,
    /// Wide layout outcome columns are `<prefix><label>`, with labels such as
    /// `m1`, `0`, `1` (`m` marks a negative number).
    pub outcome_prefix: String,
    pub cluster: Option<String>,
}

impl Default for PanelSchema {
    fn default() -> Self {
        PanelSchema {
            layout: Layout::Long,
            unit: "unit".into(),
            time: "time".into(),
            outcome: "outcome".into(),
            treatment: "treatment".into(),
            covariates: Vec::new(),
            covariate_prefix: "cov_".into(),
            outcome_prefix: "y_".into(),
            cluster: None,
        }
    }
}

pub fn load_panel_csv(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<PanelDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| GdidError::io(path, e))?;
    parse_panel_csv(&text, schema)
}

/// Same as [`load_panel_csv`] on in-memory text.
pub fn parse_panel_csv(text: &str, schema: &PanelSchema) -> Result<PanelDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| GdidError::MissingColumn(name.to_string()))
    };
    let cov_names: Vec<String> = if schema.covariates.is_empty() {
        headers
            .iter()
            .filter(|h| h.starts_with(&schema.covariate_prefix))
            .cloned()
            .collect()
    } else {
        schema.covariates.clone()
    };
    let cov_cols = cov_names.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    let unit_col = col(&schema.unit)?;
    let treat_col = col(&schema.treatment)?;
    let cluster_col = schema.cluster.as_deref().map(col).transpose()?;
    let records = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;

    match schema.layout {
        Layout::Long => {
            let time_col = col(&schema.time)?;
            let outcome_col = col(&schema.outcome)?;
            load_long(
                &records,
                LongColumns {
                    unit: unit_col,
                    time: time_col,
                    outcome: outcome_col,
                    treatment: treat_col,
                    cluster: cluster_col,
                    covs: &cov_cols,
                },
                &cov_names,
            )
        }
        Layout::Wide => {
            let mut y_cols: Vec<(i64, usize)> = Vec::new();
            for (j, h) in headers.iter().enumerate() {
                if let Some(label) = h.strip_prefix(&schema.outcome_prefix) {
                    if cov_cols.contains(&j) {
                        continue;
                    }
                    y_cols.push((parse_time_label(label)?, j));
                }
            }
            if y_cols.len() < 2 {
                return Err(GdidError::MissingColumn(format!(
                    "{}<t> (need at least two periods)",
                    schema.outcome_prefix
                )));
            }
            y_cols.sort_by_key(|&(t, _)| t);
            load_wide(
                &records,
                unit_col,
                treat_col,
                cluster_col,
                &cov_cols,
                &y_cols,
                &cov_names,
            )
        }
    }
}

/// `m1` → −1, `0` → 0, `2015` → 2015, `-3` → −3.
fn parse_time_label(label: &str) -> Result<i64> {
    let parsed = if let Some(rest) = label.strip_prefix('m') {
        rest.parse::<i64>().map(|v| -v)
    } else {
        label.parse::<i64>()
    };
    parsed.map_err(|_| GdidError::Parse {
        what: "time label".into(),
        value: label.into(),
    })
}

pub(crate) fn parse_f64(what: &str, value: &str) -> Result<f64> {
    value.parse::<f64>().map_err(|_| GdidError::Parse {
        what: what.into(),
        value: value.into(),
    })
}

pub(crate) fn parse_treatment(unit: &str, value: &str) -> Result<u8> {
    match value {
        "0" | "0.0" | "false" | "FALSE" => Ok(0),
        "1" | "1.0" | "true" | "TRUE" => Ok(1),
        _ => Err(GdidError::NonBinaryTreatment {
            unit: unit.into(),
            value: value.into(),
        }),
    }
}

pub(crate) fn parse_covariates(
    rec: &csv::StringRecord,
    unit: &str,
    cov_cols: &[usize],
    cov_names: &[String],
) -> Result<Vec<f64>> {
    cov_cols
        .iter()
        .zip(cov_names)
        .map(|(&j, name)| {
            let raw = rec.get(j).unwrap_or("");
            if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
                return Err(GdidError::MissingCovariate {
                    unit: unit.into(),
                    column: name.clone(),
                });
            }
            parse_f64(name, raw)
        })
        .collect()
}

struct LongColumns<'a> {
    unit: usize,
    time: usize,
    outcome: usize,
    treatment: usize,
    cluster: Option<usize>,
    covs: &'a [usize],
}

struct UnitAccum {
    cells: HashMap<i64, f64>,
    covs: Vec<f64>,
    treat_by_time: Vec<(i64, u8)>,
    cluster: Option<String>,
}

fn load_long(records: &[csv::StringRecord], cols: LongColumns<'_>, cov_names: &[String]) -> Result<PanelDataset> {
    let mut order: Vec<String> = Vec::new();
    let mut units: HashMap<String, UnitAccum> = HashMap::new();
    let mut all_times = BTreeSet::new();

    for rec in records {
        let unit = rec.get(cols.unit).unwrap_or("").to_string();
        let time_raw = rec.get(cols.time).unwrap_or("");
        let time = time_raw.parse::<i64>().map_err(|_| GdidError::Parse {
            what: "time".into(),
            value: time_raw.into(),
        })?;
        let y = parse_f64("outcome", rec.get(cols.outcome).unwrap_or(""))?;
        let a = parse_treatment(&unit, rec.get(cols.treatment).unwrap_or(""))?;
        let covs = parse_covariates(rec, &unit, cols.covs, cov_names)?;
        let cluster = cols.cluster.map(|j| rec.get(j).unwrap_or("").to_string());
        all_times.insert(time);

        let entry = units.entry(unit.clone()).or_insert_with(|| {
            order.push(unit.clone());
            UnitAccum {
                cells: HashMap::new(),
                covs: covs.clone(),
                treat_by_time: Vec::new(),
                cluster: cluster.clone(),
            }
        });
        if entry.cells.insert(time, y).is_some() {
            return Err(GdidError::DuplicateRow { unit, time });
        }
        if entry.covs != covs {
            return Err(GdidError::InvalidPanel(format!(
                "covariates of unit {unit} vary over time"
            )));
        }
        if entry.cluster != cluster {
            return Err(GdidError::InvalidPanel(format!("unit {unit} changes cluster")));
        }
        entry.treat_by_time.push((time, a));
    }

    let times: Vec<i64> = all_times.into_iter().collect();
    if times.len() < 2 {
        return Err(GdidError::InvalidPanel("need at least two time periods".into()));
    }
    let post = *times.last().unwrap();
    let mut ids = Vec::with_capacity(order.len());
    let mut rows = Vec::with_capacity(order.len());
    let mut covs = Vec::new();
    let mut treatment = Vec::with_capacity(order.len());
    let mut clusters = Vec::new();
    for unit in order {
        let acc = units.remove(&unit).expect("unit recorded");
        let mut path = Vec::with_capacity(times.len());
        for (k, &t) in times.iter().enumerate() {
            match acc.cells.get(&t) {
                Some(&y) => path.push(y),
                None => {
                    return Err(GdidError::MissingCell {
                        unit,
                        time: k as i64 + 2 - times.len() as i64,
                    })
                }
            }
        }
        // treatment is read at the post row; earlier rows must agree or be 0
        let a_post = acc
            .treat_by_time
            .iter()
            .find(|&&(t, _)| t == post)
            .map(|&(_, a)| a)
            .expect("balanced unit has a post row");
        let pre: Vec<u8> = acc
            .treat_by_time
            .iter()
            .filter(|&&(t, _)| t != post)
            .map(|&(_, a)| a)
            .collect();
        if !(pre.iter().all(|&a| a == 0) || pre.iter().all(|&a| a == a_post)) {
            return Err(GdidError::InconsistentTreatment { unit });
        }
        covs.extend_from_slice(&acc.covs);
        if let Some(c) = acc.cluster {
            clusters.push(c);
        }
        rows.push(path);
        treatment.push(a_post);
        ids.push(unit);
    }
    let n = ids.len();
    let ds = PanelDataset::new(
        ids,
        rows,
        FeatureMatrix::new(covs, n, cov_names.len()),
        cov_names.to_vec(),
        treatment,
    )?;
    if cols.cluster.is_some() {
        ds.with_clusters(clusters)
    } else {
        Ok(ds)
    }
}

fn load_wide(
    records: &[csv::StringRecord],
    unit_col: usize,
    treat_col: usize,
    cluster_col: Option<usize>,
    cov_cols: &[usize],
    y_cols: &[(i64, usize)],
    cov_names: &[String],
) -> Result<PanelDataset> {
    let mut seen = BTreeSet::new();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut covs = Vec::new();
    let mut treatment = Vec::new();
    let mut clusters = Vec::new();
    for rec in records {
        let unit = rec.get(unit_col).unwrap_or("").to_string();
        if !seen.insert(unit.clone()) {
            return Err(GdidError::DuplicateRow { unit, time: 1 });
        }
        let mut path = Vec::with_capacity(y_cols.len());
        for (k, &(_, j)) in y_cols.iter().enumerate() {
            let raw = rec.get(j).unwrap_or("");
            if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
                return Err(GdidError::MissingCell {
                    unit,
                    time: k as i64 + 2 - y_cols.len() as i64,
                });
            }
            path.push(parse_f64("outcome", raw)?);
        }
        treatment.push(parse_treatment(&unit, rec.get(treat_col).unwrap_or(""))?);
        covs.extend(parse_covariates(rec, &unit, cov_cols, cov_names)?);
        if let Some(j) = cluster_col {
            clusters.push(rec.get(j).unwrap_or("").to_string());
        }
        rows.push(path);
        ids.push(unit);
    }
    let n = ids.len();
    let ds = PanelDataset::new(
        ids,
        rows,
        FeatureMatrix::new(covs, n, cov_names.len()),
        cov_names.to_vec(),
        treatment,
    )?;
    if cluster_col.is_some() {
        ds.with_clusters(clusters)
    } else {
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LONG: &str = "id,t,y,a,x1\n\
        u1,-1,1.0,1,0.5\nu1,0,2.0,1,0.5\nu1,1,3.5,1,0.5\n\
        u2,-1,0.0,0,1.5\nu2,0,1.0,0,1.5\nu2,1,1.5,0,1.5\n\
        u3,-1,2.0,1,-1\nu3,0,2.5,1,-1\nu3,1,4.0,1,-1\n\
        u4,-1,1.0,0,0\nu4,0,1.0,0,0\nu4,1,2.0,0,0\n";

    fn long_schema() -> PanelSchema {
        PanelSchema {
            unit: "id".into(),
            time: "t".into(),
            outcome: "y".into(),
            treatment: "a".into(),
            covariates: vec!["x1".into()],
            ..Default::default()
        }
    }

    #[test]
    fn long_csv_reshapes_to_grid() {
        let ds = parse_panel_csv(LONG, &long_schema()).unwrap();
        assert_eq!(ds.times(), &[-1, 0, 1]);
        assert_eq!(ds.n_units(), 4);
        assert_eq!(ds.outcome(0, 1), 3.5);
        assert_eq!(ds.outcome(3, -1), 1.0);
        assert_eq!(ds.treatment(), &[1, 0, 1, 0]);
        assert_eq!(ds.covariates().get(2, 0), -1.0);
    }

    #[test]
    fn missing_cell_is_reported() {
        let text = LONG.replace("u2,0,1.0,0,1.5\n", "");
        match parse_panel_csv(&text, &long_schema()) {
            Err(GdidError::MissingCell { unit, time }) => {
                assert_eq!(unit, "u2");
                assert_eq!(time, 0);
            }
            other => panic!("expected MissingCell, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_and_non_binary_rows_fail() {
        let dup = format!("{LONG}u4,1,2.0,0,0\n");
        assert!(matches!(
            parse_panel_csv(&dup, &long_schema()),
            Err(GdidError::DuplicateRow { .. })
        ));
        let bad = LONG.replace("u4,1,2.0,0,0", "u4,1,2.0,2,0");
        assert!(matches!(
            parse_panel_csv(&bad, &long_schema()),
            Err(GdidError::NonBinaryTreatment { .. })
        ));
    }

    #[test]
    fn calendar_labels_are_remapped() {
        let text: String = LONG
            .lines()
            .enumerate()
            .map(|(k, line)| {
                if k == 0 {
                    return format!("{line}\n");
                }
                let mut f: Vec<String> = line.split(',').map(str::to_string).collect();
                f[1] = (2020 + f[1].parse::<i64>().unwrap()).to_string();
                format!("{}\n", f.join(","))
            })
            .collect();
        let ds = parse_panel_csv(&text, &long_schema()).unwrap();
        assert_eq!(ds.times(), &[-1, 0, 1]);
        assert_eq!(ds.outcome(0, 1), 3.5);
    }

    #[test]
    fn conditioning_layout_and_bounds() {
        let ds = parse_panel_csv(LONG, &long_schema()).unwrap();
        let c = build_conditioning(&ds, 0, 1).unwrap();
        assert_eq!(c.width(), 2);
        assert_eq!(c.features.row(0), &[0.5, 2.0]);
        let c0 = build_conditioning(&ds, 0, 0).unwrap();
        assert_eq!(c0.features.row(1), &[1.5]);
        let c2 = build_conditioning(&ds, 0, 2).unwrap();
        assert_eq!(c2.features.row(2), &[-1.0, 2.5, 2.0]);
        assert!(matches!(
            build_conditioning(&ds, -1, 2),
            Err(GdidError::InsufficientHistory { needed: -2, t_min: -1 })
        ));
        assert!(build_conditioning(&ds, 1, 1).is_err());
    }

    #[test]
    fn validate_flags_missing_arm() {
        let ds = PanelDataset::new(
            vec!["a".into()],
            vec![vec![0.0, 1.0]],
            FeatureMatrix::empty(1),
            vec![],
            vec![1],
        )
        .unwrap();
        let c = build_conditioning(&ds, 0, 0).unwrap();
        let r = validate(&ds, &c, 0.01);
        assert!(!r.structural_errors.is_empty());
    }

    #[test]
    fn validate_balanced_constant_covariates() {
        let n = 200;
        let ds = PanelDataset::new(
            (0..n).map(|i| i.to_string()).collect(),
            vec![vec![0.0, 0.0]; n],
            FeatureMatrix::new(vec![1.0; n], n, 1),
            vec!["x".into()],
            (0..n).map(|i| (i % 2) as u8).collect(),
        )
        .unwrap();
        let c = build_conditioning(&ds, 0, 0).unwrap();
        let r = validate(&ds, &c, 0.01);
        assert!(r.is_ok());
        assert!(r.warnings.is_empty(), "{:?}", r.warnings);
        for s in &r.overlap_diagnostics {
            assert!((s.mean - 0.5).abs() < 1e-9);
        }
    }
}
