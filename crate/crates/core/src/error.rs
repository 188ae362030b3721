use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GdidError>;

/// Every failure the library can report.
///
/// Variants are grouped by the stage that raises them; [`GdidError::exit_code`]
/// maps each group onto the CLI's exit codes.
#[derive(Debug, Error)]
pub enum GdidError {
    // -- input / validation --------------------------------------------------
    #[error("unit {unit} has no outcome at time {time}")]
    MissingCell { unit: String, time: i64 },
    #[error("treatment value {value:?} for unit {unit} is not binary")]
    NonBinaryTreatment { unit: String, value: String },
    #[error("treatment for unit {unit} changes across pre-periods")]
    InconsistentTreatment { unit: String },
    #[error("duplicate row for unit {unit} at time {time}")]
    DuplicateRow { unit: String, time: i64 },
    #[error("missing covariate {column} for unit {unit}")]
    MissingCovariate { unit: String, column: String },
    #[error("column {0} not found in input")]
    MissingColumn(String),
    #[error("cannot parse {what} from {value:?}")]
    Parse { what: String, value: String },
    #[error("invalid panel: {0}")]
    InvalidPanel(String),
    #[error("conditioning set needs periods back to {needed} but the panel starts at {t_min}")]
    InsufficientHistory { needed: i64, t_min: i64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{0} is not specified; supply the functions programmatically")]
    NotSpecified(String),

    // -- nuisance fitting ----------------------------------------------------
    #[error("design matrix is singular even after ridge regularisation")]
    SingularDesign,
    #[error("knn needs k={k} neighbours but only {available} training rows exist")]
    NotEnoughNeighbors { k: usize, available: usize },
    #[error("learner needs at least {needed} training rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("training complement of fold {fold} has no control units")]
    FoldWithoutControls { fold: usize },
    #[error("training complement of fold {fold} has only one treatment class")]
    FoldWithoutTreated { fold: usize },
    #[error("all ensemble candidates failed: {0}")]
    EnsembleFailed(String),

    // -- estimation ----------------------------------------------------------
    #[error("nuisance fits are missing {0}")]
    MissingFits(&'static str),
    #[error("ATE estimation needs treated-arm outcome regressions")]
    MissingTreatedArmFits,
    #[error("imputation component {0} is not available")]
    MissingComponent(&'static str),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("no treated units")]
    NoTreated,

    // -- inference -----------------------------------------------------------
    #[error("influence vector is empty")]
    EmptyInfluence,
    #[error("stacked estimating-equation Jacobian is singular")]
    SingularJacobian,
    #[error("sandwich variance requires parametric no-split nuisance fits")]
    NotParametricPath,

    // -- staggered -----------------------------------------------------------
    #[error("no never-treated units through time {0}")]
    NoNeverTreatedUnits(i64),
    #[error("history {0} is not in the admissible set")]
    HistoryNotInXi(String),
    #[error("aggregation weights do not match the supplied effects")]
    WeightMismatch,
    #[error("no admissible history satisfies the weight selection")]
    EmptySelection,

    // -- clustered -----------------------------------------------------------
    #[error("cluster {0} has no units")]
    EmptyCluster(String),
    #[error("propensity varies within cluster {0}")]
    ClusterPropensityMismatch(String),

    // -- simulation ----------------------------------------------------------
    #[error("all {0} Monte Carlo replicates failed")]
    AllReplicatesFailed(usize),

    // -- io ------------------------------------------------------------------
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl GdidError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GdidError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the shape or content of the input data or
    /// configuration, as opposed to failures inside estimation.
    pub fn is_validation(&self) -> bool {
        use GdidError::*;
        matches!(
            self,
            MissingCell { .. }
                | NonBinaryTreatment { .. }
                | InconsistentTreatment { .. }
                | DuplicateRow { .. }
                | MissingCovariate { .. }
                | MissingColumn(_)
                | Parse { .. }
                | InvalidPanel(_)
                | InsufficientHistory { .. }
                | InvalidConfig(_)
                | NotParametricPath
                | NotSpecified(_)
                | Io { .. }
                | Csv(_)
                | Toml(_)
        )
    }

    /// CLI exit code: 2 for validation/config problems, 3 for estimation.
    pub fn exit_code(&self) -> i32 {
        if self.is_validation() {
            2
        } else {
            3
        }
    }
}
