//! Staggered adoption: group-time effects for arbitrary treatment histories
//! and their weighted aggregates.
//!
//! Times are labelled so that the treatment window starts at 1; periods
//! ≤ 0 are pre-window and must be untreated. A history `ā_t` is the
//! treatment path over times 1..=t.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GdidError, Result};
use crate::estimators::{estimate_gdid, AttEstimate, Estimand};
use crate::learners::NuisanceFits;
use crate::linalg::FeatureMatrix;
use crate::panel::{parse_covariates, parse_f64, parse_treatment, PanelDataset, PanelSchema};
use crate::pipeline::{EstimatorKind, InferenceMethod, NuisanceMode, Pipeline, PipelineOptions};

/// Panel with a per-period treatment indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct StaggeredPanel {
    unit_ids: Vec<String>,
    times: Vec<i64>,
    outcomes: Vec<Vec<f64>>,
    treatment: Vec<Vec<u8>>,
    covariates: FeatureMatrix,
    covariate_names: Vec<String>,
}

impl StaggeredPanel {
    /// `times` must be consecutive integers containing 1; `outcomes[i]` and
    /// `treatment[i]` follow `times`.
    pub fn new(
        unit_ids: Vec<String>,
        times: Vec<i64>,
        outcomes: Vec<Vec<f64>>,
        treatment: Vec<Vec<u8>>,
        covariates: FeatureMatrix,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = unit_ids.len();
        if times.windows(2).any(|w| w[1] != w[0] + 1) || !times.contains(&1) {
            return Err(GdidError::InvalidPanel(
                "staggered times must be consecutive and include 1".into(),
            ));
        }
        if outcomes.len() != n || treatment.len() != n || covariates.n_rows() != n {
            return Err(GdidError::LengthMismatch("staggered panel rows".into()));
        }
        if covariate_names.len() != covariates.n_cols() {
            return Err(GdidError::LengthMismatch("covariate names".into()));
        }
        for i in 0..n {
            if outcomes[i].len() != times.len() || treatment[i].len() != times.len() {
                return Err(GdidError::LengthMismatch(format!("unit {}", unit_ids[i])));
            }
            if outcomes[i].iter().any(|y| !y.is_finite()) {
                return Err(GdidError::InvalidPanel(format!(
                    "non-finite outcome for unit {}",
                    unit_ids[i]
                )));
            }
            for (k, &t) in times.iter().enumerate() {
                if t <= 0 && treatment[i][k] != 0 {
                    return Err(GdidError::InvalidPanel(format!(
                        "unit {} is treated before the treatment window",
                        unit_ids[i]
                    )));
                }
                if treatment[i][k] > 1 {
                    return Err(GdidError::NonBinaryTreatment {
                        unit: unit_ids[i].clone(),
                        value: treatment[i][k].to_string(),
                    });
                }
            }
        }
        Ok(StaggeredPanel {
            unit_ids,
            times,
            outcomes,
            treatment,
            covariates,
            covariate_names,
        })
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
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

    /// Last period of the treatment window.
    pub fn t_max(&self) -> i64 {
        *self.times.last().unwrap()
    }

    fn idx(&self, t: i64) -> usize {
        (t - self.t_min()) as usize
    }

    pub fn outcome(&self, i: usize, t: i64) -> f64 {
        self.outcomes[i][self.idx(t)]
    }

    /// Unit i's treatment path over 1..=t.
    pub fn history(&self, i: usize, t: i64) -> TreatmentHistory {
        let from = self.idx(1);
        TreatmentHistory::new(self.treatment[i][from..=self.idx(t)].to_vec())
    }

    fn check_target(&self, t: i64) -> Result<()> {
        if t < 1 || t > self.t_max() {
            return Err(GdidError::InvalidConfig(format!(
                "target time {t} outside the treatment window 1..={}",
                self.t_max()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct TreatmentHistory {
    path: Vec<u8>,
}

impl TreatmentHistory {
    pub fn new(path: Vec<u8>) -> Self {
        TreatmentHistory { path }
    }

    pub fn path(&self) -> &[u8] {
        &self.path
    }

    /// The t this history runs to.
    pub fn target_time(&self) -> i64 {
        self.path.len() as i64
    }

    /// First treated period, `None` for the never-treated history.
    pub fn adoption_time(&self) -> Option<i64> {
        self.path.iter().position(|&a| a == 1).map(|k| k as i64 + 1)
    }

    pub fn last_pre_period(&self) -> Option<i64> {
        self.adoption_time().map(|a| a - 1)
    }

    pub fn treated_at_target(&self) -> bool {
        self.path.last() == Some(&1)
    }

    pub fn is_never_treated(&self) -> bool {
        self.adoption_time().is_none()
    }
}

impl fmt::Display for TreatmentHistory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.path {
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

impl From<TreatmentHistory> for String {
    fn from(h: TreatmentHistory) -> String {
        h.to_string()
    }
}

impl TryFrom<String> for TreatmentHistory {
    type Error = GdidError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl std::str::FromStr for TreatmentHistory {
    type Err = GdidError;
    fn from_str(s: &str) -> Result<Self> {
        let path = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                _ => Err(GdidError::Parse {
                    what: "treatment history".into(),
                    value: s.into(),
                }),
            })
            .collect::<Result<Vec<u8>>>()?;
        if path.is_empty() {
            return Err(GdidError::Parse {
                what: "treatment history".into(),
                value: s.into(),
            });
        }
        Ok(TreatmentHistory::new(path))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcludedHistory {
    pub history: TreatmentHistory,
    pub n_units: usize,
    pub reason: String,
}

/// The admissible set Ξ_t together with the comparison pool.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistorySet {
    pub target_time: i64,
    /// Admissible histories with their group sizes, in lexicographic order.
    pub admissible: Vec<(TreatmentHistory, usize)>,
    pub excluded: Vec<ExcludedHistory>,
    pub n_never_treated: usize,
}

impl HistorySet {
    pub fn contains(&self, h: &TreatmentHistory) -> bool {
        self.admissible.iter().any(|(a, _)| a == h)
    }

    pub fn histories(&self) -> Vec<TreatmentHistory> {
        self.admissible.iter().map(|(h, _)| h.clone()).collect()
    }

    pub fn size_of(&self, h: &TreatmentHistory) -> Option<usize> {
        self.admissible.iter().find(|(a, _)| a == h).map(|&(_, n)| n)
    }
}

pub const DEFAULT_MIN_GROUP_SIZE: usize = 5;

/// Observed histories through t with at least `min_group_size` units, at
/// least one pre-adoption period on record, and a never-treated pool.
pub fn enumerate_histories(panel: &StaggeredPanel, t: i64, min_group_size: usize) -> Result<HistorySet> {
    panel.check_target(t)?;
    let mut counts: BTreeMap<TreatmentHistory, usize> = BTreeMap::new();
    for i in 0..panel.n_units() {
        *counts.entry(panel.history(i, t)).or_default() += 1;
    }
    let zero = TreatmentHistory::new(vec![0; t as usize]);
    let n_never = counts.remove(&zero).unwrap_or(0);
    if n_never == 0 {
        return Err(GdidError::NoNeverTreatedUnits(t));
    }
    let mut admissible = Vec::new();
    let mut excluded = Vec::new();
    for (h, n_h) in counts {
        let p = h.last_pre_period().expect("zero history removed");
        let reason = if n_h < min_group_size {
            Some(format!("group size {n_h} below minimum {min_group_size}"))
        } else if p < panel.t_min() {
            Some(format!("no outcome recorded at the last pre-period {p}"))
        } else if n_h as f64 / (n_h + n_never) as f64 > 0.99 {
            Some("comparison pool too small for overlap".to_string())
        } else {
            None
        };
        match reason {
            Some(reason) => excluded.push(ExcludedHistory {
                history: h,
                n_units: n_h,
                reason,
            }),
            None => admissible.push((h, n_h)),
        }
    }
    Ok(HistorySet {
        target_time: t,
        admissible,
        excluded,
        n_never_treated: n_never,
    })
}

/// Two-group panel for one history: period 1 is `Y_t`, period 0 is
/// `Y_P` (P the last pre-period), and earlier periods run back from `P − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupTimeView {
    pub dataset: PanelDataset,
    /// Index in the staggered panel of each view row.
    pub members: Vec<usize>,
}

pub fn group_time_view(panel: &StaggeredPanel, history: &TreatmentHistory) -> Result<GroupTimeView> {
    let t = history.target_time();
    panel.check_target(t)?;
    let p = history
        .last_pre_period()
        .ok_or_else(|| GdidError::HistoryNotInXi(history.to_string()))?;
    if p < panel.t_min() {
        return Err(GdidError::InsufficientHistory {
            needed: p,
            t_min: panel.t_min(),
        });
    }
    let zero = TreatmentHistory::new(vec![0; t as usize]);
    let mut members = Vec::new();
    let mut treatment = Vec::new();
    for i in 0..panel.n_units() {
        let h = panel.history(i, t);
        if &h == history {
            members.push(i);
            treatment.push(1);
        } else if h == zero {
            members.push(i);
            treatment.push(0);
        }
    }
    let rows: Vec<Vec<f64>> = members
        .iter()
        .map(|&i| {
            let mut path: Vec<f64> = (panel.t_min()..=p).map(|s| panel.outcome(i, s)).collect();
            path.push(panel.outcome(i, t));
            path
        })
        .collect();
    let dataset = PanelDataset::new(
        members.iter().map(|&i| panel.unit_ids[i].clone()).collect(),
        rows,
        panel.covariates.select_rows(&members),
        panel.covariate_names.clone(),
        treatment,
    )?;
    Ok(GroupTimeView { dataset, members })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupTimeEffect {
    pub history: TreatmentHistory,
    pub target_time: i64,
    /// Estimate on the history's two-group view.
    pub estimate: AttEstimate,
    pub n_in_group: usize,
    /// Staggered-panel index of each entry of `estimate.influence`.
    #[serde(skip)]
    pub members: Vec<usize>,
    /// Arm of each member in the view (1 = this history, 0 = never treated).
    #[serde(skip)]
    pub member_treated: Vec<u8>,
}

/// gDiD for one admissible history, with nuisances already fitted on
/// `view.dataset` (see [`group_time_view`]).
pub fn estimate_group_time(
    xi: &HistorySet,
    history: &TreatmentHistory,
    view: &GroupTimeView,
    fits: &NuisanceFits,
    trim_eps: f64,
) -> Result<GroupTimeEffect> {
    if !xi.contains(history) || history.target_time() != xi.target_time {
        return Err(GdidError::HistoryNotInXi(history.to_string()));
    }
    let mut estimate = estimate_gdid(&view.dataset, fits, trim_eps)?;
    estimate.estimand = Estimand::GroupTime;
    Ok(GroupTimeEffect {
        history: history.clone(),
        target_time: history.target_time(),
        n_in_group: estimate.n_treated,
        estimate,
        members: view.members.clone(),
        member_treated: view.dataset.treatment().to_vec(),
    })
}

/// Build the view, fit nuisances with `opts`, and estimate.
pub fn estimate_group_time_with(
    panel: &StaggeredPanel,
    xi: &HistorySet,
    history: &TreatmentHistory,
    lags: usize,
    mode: NuisanceMode,
    opts: &PipelineOptions,
) -> Result<GroupTimeEffect> {
    if !xi.contains(history) {
        return Err(GdidError::HistoryNotInXi(history.to_string()));
    }
    let view = group_time_view(panel, history)?;
    let mut pipe = Pipeline::new(&view.dataset, opts.clone())?;
    let report = pipe.run(EstimatorKind::Gdid { lags }, mode, InferenceMethod::Plugin)?;
    let mut estimate = report.estimate;
    estimate.estimand = Estimand::GroupTime;
    Ok(GroupTimeEffect {
        history: history.clone(),
        target_time: history.target_time(),
        n_in_group: estimate.n_treated,
        estimate,
        member_treated: view.dataset.treatment().to_vec(),
        members: view.members,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    /// Histories with `a_t = 1`.
    TreatedAtT,
    /// Histories adopting at s.
    AdoptedAtS,
    /// Histories adopting at s and treated at t.
    AdoptedAtSAndTreatedAtT,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationWeights {
    pub kind: WeightKind,
    pub entries: Vec<(TreatmentHistory, f64)>,
}

impl AggregationWeights {
    /// User weights; must be non-negative and sum to 1.
    pub fn custom(entries: Vec<(TreatmentHistory, f64)>) -> Result<Self> {
        let w = AggregationWeights {
            kind: WeightKind::Custom,
            entries,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.entries.iter().map(|(_, w)| w).sum();
        if self.entries.iter().any(|(_, w)| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(GdidError::InvalidConfig(format!(
                "aggregation weights must be non-negative and sum to 1 (sum {total})"
            )));
        }
        Ok(())
    }

    pub fn weight_of(&self, h: &TreatmentHistory) -> Option<f64> {
        self.entries.iter().find(|(a, _)| a == h).map(|&(_, w)| w)
    }

    /// Reweight by group size: `ω_h·n_h / Σ ω·n`.
    pub fn unit_weighted(&self, xi: &HistorySet) -> Result<Self> {
        let mut entries = Vec::with_capacity(self.entries.len());
        for (h, w) in &self.entries {
            let n = xi.size_of(h).ok_or_else(|| GdidError::HistoryNotInXi(h.to_string()))?;
            entries.push((h.clone(), w * n as f64));
        }
        let total: f64 = entries.iter().map(|(_, w)| w).sum();
        if total <= 0.0 {
            return Err(GdidError::EmptySelection);
        }
        entries.iter_mut().for_each(|(_, w)| *w /= total);
        Ok(AggregationWeights {
            kind: WeightKind::Custom,
            entries,
        })
    }
}

/// Indicator-ratio weights over Ξ_t: each selected history gets
/// `1 / #selected`.
pub fn preset_weights(kind: WeightKind, histories: &[TreatmentHistory], s: Option<i64>) -> Result<AggregationWeights> {
    let need_s = || s.ok_or_else(|| GdidError::InvalidConfig(format!("{kind:?} weights need an adoption time s")));
    let selected: Vec<bool> = match kind {
        WeightKind::TreatedAtT => histories.iter().map(|h| h.treated_at_target()).collect(),
        WeightKind::AdoptedAtS => {
            let s = need_s()?;
            histories.iter().map(|h| h.adoption_time() == Some(s)).collect()
        }
        WeightKind::AdoptedAtSAndTreatedAtT => {
            let s = need_s()?;
            histories
                .iter()
                .map(|h| h.adoption_time() == Some(s) && h.treated_at_target())
                .collect()
        }
        WeightKind::Custom => {
            return Err(GdidError::InvalidConfig(
                "custom weights are built with AggregationWeights::custom".into(),
            ))
        }
    };
    let count = selected.iter().filter(|&&b| b).count();
    if count == 0 {
        return Err(GdidError::EmptySelection);
    }
    Ok(AggregationWeights {
        kind,
        entries: histories
            .iter()
            .zip(selected)
            .map(|(h, sel)| (h.clone(), if sel { 1.0 / count as f64 } else { 0.0 }))
            .collect(),
    })
}

/// `τ_ω = Σ ω_h τ_h`. The influence lives on all `n_units` staggered units:
/// entry i is `N Σ_h ω_h ψ_{h,i} / n₁_h` with denominator N, so a shared
/// multiplier per unit captures the covariance between histories.
pub fn aggregate_effects(
    n_units: usize,
    effects: &[GroupTimeEffect],
    weights: &AggregationWeights,
) -> Result<AttEstimate> {
    weights.validate()?;
    if effects.len() != weights.entries.len() {
        return Err(GdidError::WeightMismatch);
    }
    let mut seen = HashMap::new();
    for e in effects {
        let w = weights.weight_of(&e.history).ok_or(GdidError::WeightMismatch)?;
        if seen.insert(e.history.clone(), w).is_some() {
            return Err(GdidError::WeightMismatch);
        }
    }
    let nf = n_units as f64;
    let mut influence = vec![0.0; n_units];
    let mut centering = vec![0.0; n_units];
    let mut in_treated = vec![false; n_units];
    let mut tau = 0.0;
    for e in effects {
        let w = seen[&e.history];
        let est = &e.estimate;
        tau += w * est.tau_hat;
        let scale = nf * w / est.denominator;
        for (k, &i) in e.members.iter().enumerate() {
            if i >= n_units {
                return Err(GdidError::LengthMismatch("effect members exceed panel size".into()));
            }
            influence[i] += scale * est.influence[k];
            let c = est.centering.as_ref().map_or(est.tau_hat, |c| c[k]);
            centering[i] += scale * c;
        }
        if w > 0.0 {
            for (&i, &a) in e.members.iter().zip(&e.member_treated) {
                in_treated[i] |= a == 1;
            }
        }
    }
    let mut out = AttEstimate::from_influence(Estimand::Aggregated, influence, nf, 0, 0.0);
    // the sum already equals N·Σ ω τ_h up to rounding; keep the exact combination
    out.tau_hat = tau;
    out.n_treated = in_treated.iter().filter(|&&b| b).count();
    out.trim_eps = effects.first().map_or(0.0, |e| e.estimate.trim_eps);
    out.lag_depth = effects.first().and_then(|e| e.estimate.lag_depth);
    out.nuisance = effects.first().and_then(|e| e.estimate.nuisance.clone());
    out.centering = Some(centering);
    Ok(out)
}

/// Long-format CSV with per-row treatment. Time labels are replaced by
/// ranks shifted so that the first period in which any unit is treated is 1.
pub fn load_staggered_csv(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<StaggeredPanel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| GdidError::io(path, e))?;
    parse_staggered_csv(&text, schema)
}

pub fn parse_staggered_csv(text: &str, schema: &PanelSchema) -> Result<StaggeredPanel> {
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
    let (uc, tc, yc, ac) = (
        col(&schema.unit)?,
        col(&schema.time)?,
        col(&schema.outcome)?,
        col(&schema.treatment)?,
    );
    let mut order: Vec<String> = Vec::new();
    let mut cells: HashMap<String, (BTreeMap<i64, (f64, u8)>, Vec<f64>)> = HashMap::new();
    let mut all_times = std::collections::BTreeSet::new();
    for rec in reader.records() {
        let rec = rec?;
        let unit = rec.get(uc).unwrap_or("").to_string();
        let raw_t = rec.get(tc).unwrap_or("");
        let t = raw_t.parse::<i64>().map_err(|_| GdidError::Parse {
            what: "time".into(),
            value: raw_t.into(),
        })?;
        let y = parse_f64("outcome", rec.get(yc).unwrap_or(""))?;
        let a = parse_treatment(&unit, rec.get(ac).unwrap_or(""))?;
        let covs = parse_covariates(&rec, &unit, &cov_cols, &cov_names)?;
        all_times.insert(t);
        let entry = cells.entry(unit.clone()).or_insert_with(|| {
            order.push(unit.clone());
            (BTreeMap::new(), covs.clone())
        });
        if entry.1 != covs {
            return Err(GdidError::InvalidPanel(format!(
                "covariates of unit {unit} vary over time"
            )));
        }
        if entry.0.insert(t, (y, a)).is_some() {
            return Err(GdidError::DuplicateRow { unit, time: t });
        }
    }
    let labels: Vec<i64> = all_times.into_iter().collect();
    let first_treated = labels
        .iter()
        .position(|t| cells.values().any(|(m, _)| m.get(t).is_some_and(|&(_, a)| a == 1)))
        .ok_or(GdidError::NoTreated)?;
    let times: Vec<i64> = (0..labels.len()).map(|k| k as i64 - first_treated as i64 + 1).collect();
    let mut outcomes = Vec::with_capacity(order.len());
    let mut treatment = Vec::with_capacity(order.len());
    let mut covs = Vec::new();
    for unit in &order {
        let (m, c) = &cells[unit];
        let mut ys = Vec::with_capacity(labels.len());
        let mut as_ = Vec::with_capacity(labels.len());
        for (k, t) in labels.iter().enumerate() {
            let &(y, a) = m.get(t).ok_or_else(|| GdidError::MissingCell {
                unit: unit.clone(),
                time: times[k],
            })?;
            ys.push(y);
            as_.push(a);
        }
        outcomes.push(ys);
        treatment.push(as_);
        covs.extend_from_slice(c);
    }
    let n = order.len();
    StaggeredPanel::new(
        order,
        times,
        outcomes,
        treatment,
        FeatureMatrix::new(covs, n, cov_names.len()),
        cov_names,
    )
}
