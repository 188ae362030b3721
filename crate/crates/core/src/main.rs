use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gdid::clustered::{ClusterCaps, ClusterSummary};
use gdid::config::{
    run_estimate, run_validate, ClusterOptions, EstimandChoice, EstimateConfig, LearnerChoice, SimulateConfig,
    StaggeredOptions,
};
use gdid::error::{GdidError, Result};
use gdid::inference::WeightDist;
use gdid::panel::{Layout, PanelSchema};
use gdid::pipeline::InferenceMethod;
use gdid::staggered::WeightKind;

/// Generalized difference-in-differences estimation.
///
/// Exit codes: 0 success, 2 invalid input or configuration, 3 estimation failure.
#[derive(Parser, Debug)]
#[command(name = "gdid", version)]
struct Cli {
    /// Master seed; overrides the seed in any config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all logical cores).
    #[arg(long, global = true, env = "GDID_THREADS")]
    threads: Option<usize>,
    /// Write results here instead of printing them.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate an effect from a CSV panel.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo experiment described by a TOML file.
    Simulate(SimulateArgs),
    /// Check a CSV panel for structural problems and overlap.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
struct SchemaArgs {
    #[arg(long, value_enum)]
    layout: Option<LayoutArg>,
    #[arg(long)]
    unit_col: Option<String>,
    #[arg(long)]
    time_col: Option<String>,
    #[arg(long)]
    outcome_col: Option<String>,
    #[arg(long)]
    treatment_col: Option<String>,
    /// Comma-separated covariate columns (default: columns prefixed `cov_`).
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LayoutArg {
    Long,
    Wide,
}

impl SchemaArgs {
    fn apply(&self, s: &mut PanelSchema) {
        if let Some(l) = self.layout {
            s.layout = match l {
                LayoutArg::Long => Layout::Long,
                LayoutArg::Wide => Layout::Wide,
            };
        }
        let set = |dst: &mut String, v: &Option<String>| {
            if let Some(v) = v {
                dst.clone_from(v);
            }
        };
        set(&mut s.unit, &self.unit_col);
        set(&mut s.time, &self.time_col);
        set(&mut s.outcome, &self.outcome_col);
        set(&mut s.treatment, &self.treatment_col);
        if let Some(c) = &self.covariates {
            s.covariates.clone_from(c);
        }
    }
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Panel CSV.
    data: PathBuf,
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    schema: SchemaArgs,
    /// did, cdid, gdid, ignorability, ignorability_pre, ate_gdid
    #[arg(long)]
    estimand: Option<EstimandChoice>,
    /// Outcome lags in the conditioning set.
    #[arg(long)]
    lags: Option<usize>,
    /// plugin, bootstrap or sandwich
    #[arg(long = "infer")]
    inference: Option<InferenceMethod>,
    /// Bootstrap replicates.
    #[arg(long = "B")]
    bootstrap_b: Option<usize>,
    #[arg(long, value_enum)]
    weights: Option<WeightArg>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    trim_eps: Option<f64>,
    #[arg(long)]
    level: Option<f64>,
    /// ensemble, linear, knn, stumps or parametric
    #[arg(long)]
    learner: Option<LearnerChoice>,
    /// Column holding cluster labels; turns on the clustered estimator.
    #[arg(long)]
    cluster_col: Option<String>,
    /// mean or mean_and_size
    #[arg(long)]
    cluster_summary: Option<ClusterSummary>,
    /// Per-cluster unit caps `<treated>,<control>`.
    #[arg(long)]
    cluster_cap: Option<ClusterCaps>,
    /// Treatment varies over time; estimate group-time effects.
    #[arg(long)]
    staggered: bool,
    #[arg(long)]
    target_time: Option<i64>,
    /// treated_at_t, adopted_at_s or adopted_at_s_and_treated_at_t
    #[arg(long)]
    aggregate: Option<WeightKind>,
    #[arg(long)]
    adopted_at: Option<i64>,
    #[arg(long)]
    min_group_size: Option<usize>,
    /// Also write per-unit influence values (needs --output-dir).
    #[arg(long)]
    influence: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum WeightArg {
    Exponential,
    Mammen,
    Normal,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Experiment TOML.
    experiment: PathBuf,
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    data: PathBuf,
    #[command(flatten)]
    schema: SchemaArgs,
    #[arg(long, default_value_t = 1)]
    lags: usize,
    #[arg(long, default_value_t = 0.01)]
    trim_eps: f64,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| GdidError::io(path, e))
}

fn estimate_config(a: &EstimateArgs, seed: Option<u64>) -> Result<EstimateConfig> {
    let mut cfg = match &a.config {
        Some(p) => toml::from_str(&read(p)?)?,
        None => EstimateConfig::default(),
    };
    a.schema.apply(&mut cfg.schema);
    macro_rules! over {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src {
                $dst = v;
            }
        };
    }
    over!(cfg.estimand, a.estimand);
    over!(cfg.lags, a.lags);
    over!(cfg.inference, a.inference);
    over!(cfg.pipeline.bootstrap_b, a.bootstrap_b);
    over!(cfg.pipeline.folds, a.folds);
    over!(cfg.pipeline.trim_eps, a.trim_eps);
    over!(cfg.pipeline.level, a.level);
    over!(cfg.pipeline.seed, seed);
    if let Some(w) = a.weights {
        cfg.pipeline.weight_dist = match w {
            WeightArg::Exponential => WeightDist::Exponential,
            WeightArg::Mammen => WeightDist::Mammen,
            WeightArg::Normal => WeightDist::Normal,
        };
    }
    if a.learner.is_some() {
        cfg.learner = a.learner;
    }
    if let Some(col) = &a.cluster_col {
        cfg.schema.cluster = Some(col.clone());
    }
    if cfg.schema.cluster.is_some() || a.cluster_summary.is_some() || a.cluster_cap.is_some() {
        let c = cfg.cluster.get_or_insert_with(ClusterOptions::default);
        over!(c.summary, a.cluster_summary);
        if a.cluster_cap.is_some() {
            c.cap = a.cluster_cap;
        }
        over!(c.cap_seed, seed);
    }
    if a.staggered || cfg.staggered.is_some() {
        let s = cfg.staggered.get_or_insert_with(StaggeredOptions::default);
        if a.target_time.is_some() {
            s.target_time = a.target_time;
        }
        over!(s.aggregate, a.aggregate);
        if a.adopted_at.is_some() {
            s.adopted_at = a.adopted_at;
        }
        over!(s.min_group_size, a.min_group_size);
    }
    Ok(cfg)
}

fn emit(out_dir: Option<&Path>, name: &str, body: &str) -> Result<()> {
    match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| GdidError::io(dir, e))?;
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| GdidError::io(&path, e))?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            let nl = if body.ends_with('\n') { "" } else { "\n" };
            match write!(out, "{body}{nl}").and_then(|_| out.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(GdidError::io("<stdout>", e)),
                _ => Ok(()),
            }
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let dir = cli.output_dir.as_deref();
    let ext = match cli.format {
        Format::Json => "json",
        Format::Csv => "csv",
    };
    match &cli.command {
        Command::Estimate(a) => {
            let cfg = estimate_config(a, cli.seed)?;
            let out = run_estimate(&cfg, &read(&a.data)?)?;
            let body = match cli.format {
                Format::Json => out.to_json()?,
                Format::Csv => out.to_csv()?,
            };
            emit(dir, &format!("estimate.{ext}"), &body)?;
            if a.influence {
                if dir.is_none() {
                    return Err(GdidError::InvalidConfig("--influence needs --output-dir".into()));
                }
                emit(dir, "influence.csv", &out.influence_csv()?)?;
            }
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Simulate(a) => {
            let mut cfg = SimulateConfig::from_toml(&read(&a.experiment)?)?;
            if let Some(s) = cli.seed {
                cfg.settings.seed = s;
            }
            if let Some(r) = a.reps {
                if r == 0 {
                    return Err(GdidError::InvalidConfig("reps must be at least 1".into()));
                }
                cfg.settings.reps = r;
            }
            let report = cfg.run()?;
            let body = match cli.format {
                Format::Json => report.to_json()?,
                Format::Csv => report.to_csv()?,
            };
            emit(dir, &format!("report.{ext}"), &body)?;
        }
        Command::Validate(a) => {
            let mut schema = PanelSchema::default();
            a.schema.apply(&mut schema);
            let report = run_validate(&schema, a.lags, a.trim_eps, &read(&a.data)?)?;
            emit(dir, "validation.json", &serde_json::to_string_pretty(&report)?)?;
            if !report.is_ok() {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
