//! Command-line front end. Every subcommand reads its parameters from flags
//! and, optionally, a JSON object given with `--config`; flags win, unknown
//! config keys are rejected, and the resolved parameters are echoed into the
//! report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use klrs_core::experiments::label_shift::positive_fraction;
use klrs_core::experiments::{
    fair_pca_run, gen_two_gaussian_toy, gen_two_group_pca, label_shift_proportions, long_tail_downsample,
    metrics_from_scores, sample_label_shift_test, select_tau, ErmStats, FairPcaConfig, TauStrategy,
};
use klrs_core::guarantees::{
    asymptotic_continuous_report, asymptotic_discrete_report, chernoff_report, finite_sample_report,
    monte_carlo_expected_kl, tail_report, GuaranteeReport,
};
use klrs_core::hierarchical::solve_hier;
use klrs_core::linalg::Matrix;
use klrs_core::models::{loss_vector, FixedLoss, LeastSquares, Logistic, PointEstimation};
use klrs_core::solver::{erm_solve, solve_klrs};
use klrs_core::tilt::worst_case_weights;
use klrs_core::{
    Dataset, DiscreteDistribution, GroupedDataset, HierConfig, LossModel, SolveResult, SolverConfig, StepSchedule,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::csv_io::{load_csv_dataset, write_csv_dataset, DatasetSchema, LabelKind};
use crate::error::{CliError, CliResult};
use crate::report::{to_value, Format, Report, TraceRow};

#[derive(Debug, Parser)]
#[command(name = "klrs", version, about = "KL robust satisficing: solvers, experiments and guarantee calculators")]
pub struct Cli {
    /// JSON object with parameters for the subcommand; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Random seed (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Report path; stdout when omitted. Sweeps write `<stem>-<i>.<ext>`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Smallest fragility lambda meeting the loss target tau on a dataset.
    Solve(SolveArgs),
    /// Two-level (group / within-group) KL-RS.
    Hsolve(HsolveArgs),
    /// Fair PCA with a KL-RS target over groups.
    Fairpca(FairPcaArgs),
    /// Train on a dataset, evaluate on label-shifted test sets.
    Labelshift(LabelShiftArgs),
    /// Long-tailed class subsampling.
    Longtail(LongTailArgs),
    /// Two-cluster toy problem: tau sweep for a robust point estimate.
    Toy(ToyArgs),
    /// Confidence and radius calculators.
    Guarantees(GuaranteeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Point estimate, loss ||theta - x||^2 / 2.
    Point,
    /// Binary logistic regression with bias.
    Logistic,
    /// Linear least squares.
    LeastSquares,
    /// Each row's single feature is its loss.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleArg {
    Constant,
    InverseT,
}

impl From<ScheduleArg> for StepSchedule {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::Constant => StepSchedule::Constant,
            ScheduleArg::InverseT => StepSchedule::InverseT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TauRule {
    /// a * ERM loss, a >= 1.
    ScaleErm,
    /// a * max + (1 - a) * min of ERM losses.
    MinmaxMix,
    /// mean + a * variance of ERM losses.
    MeanPlusVar,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields, default)]
pub struct SolveArgs {
    /// Dataset CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Feature columns (default: all but label and group).
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub group: Option<String>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Loss target(s); several values run a sweep.
    #[arg(long, value_delimiter = ',')]
    pub tau: Option<Vec<f64>>,
    /// Derive tau from ERM losses when --tau is absent.
    #[arg(long, value_enum)]
    pub tau_rule: Option<TauRule>,
    /// Coefficient `a` of --tau-rule.
    #[arg(long)]
    pub tau_a: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub lambda_init: Option<f64>,
    #[arg(long)]
    pub max_doublings: Option<u32>,
    #[arg(long)]
    pub sgd_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long, value_enum)]
    pub step_schedule: Option<ScheduleArg>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub warm_start: Option<bool>,
    /// Tail-bound offsets as fractions of tau.
    #[arg(long, value_delimiter = ',')]
    pub alpha_frac: Option<Vec<f64>>,
    /// Held-out CSV (same schema) for classification metrics.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Level of the rank-error VaR/CVaR.
    #[arg(long)]
    pub metric_alpha: Option<f64>,
    #[arg(skip)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields, default)]
pub struct HsolveArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
    #[arg(long)]
    pub label: Option<String>,
    /// Group column (integers 0..G).
    #[arg(long)]
    pub group: Option<String>,
    /// Use class labels as groups instead of a group column.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub group_by_label: Option<bool>,
    /// Weight groups uniformly instead of by size.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub uniform_groups: Option<bool>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Weight of lambda2 in lambda1 + w * lambda2.
    #[arg(long)]
    pub w: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub lambda_min: Option<f64>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    #[arg(long)]
    pub lambda2_init: Option<f64>,
    #[arg(long)]
    pub max_doublings: Option<u32>,
    /// Groups per step.
    #[arg(long)]
    pub m1: Option<usize>,
    /// Samples per group per step.
    #[arg(long)]
    pub m2: Option<usize>,
    #[arg(long)]
    pub sgd_steps: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long, value_enum)]
    pub step_schedule: Option<ScheduleArg>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(skip)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields, default)]
pub struct FairPcaArgs {
    /// CSV with features and a group column; synthetic data when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
    #[arg(long)]
    pub group: Option<String>,
    /// Synthetic group sizes (default 190,10).
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Synthetic dimension (default 3).
    #[arg(long)]
    pub dim: Option<usize>,
    /// Projection rank (default 1).
    #[arg(long)]
    pub d: Option<usize>,
    /// Target mix: tau = r * max + (1 - r) * min baseline group loss.
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub lambda_init: Option<f64>,
    #[arg(long)]
    pub max_doublings: Option<u32>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(skip)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields, default)]
pub struct LabelShiftArgs {
    /// Training CSV with 0/1 labels.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
    #[arg(long)]
    pub label: Option<String>,
    /// CSV the test sets are drawn from (default: the training data).
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// KL divergence(s) of test from training label proportions.
    #[arg(long, value_delimiter = ',')]
    pub target_kl: Option<Vec<f64>>,
    /// Rows per test set (default 400).
    #[arg(long)]
    pub test_size: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_enum)]
    pub tau_rule: Option<TauRule>,
    #[arg(long)]
    pub tau_a: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub lambda_init: Option<f64>,
    #[arg(long)]
    pub max_doublings: Option<u32>,
    #[arg(long)]
    pub sgd_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub metric_alpha: Option<f64>,
    #[arg(skip)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields, default)]
pub struct LongTailArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
    #[arg(long)]
    pub label: Option<String>,
    /// Rarest-to-largest class size ratio (default 0.01).
    #[arg(long)]
    pub rho: Option<f64>,
    /// Where to write the subsampled CSV.
    #[arg(long)]
    pub write_data: Option<PathBuf>,
    #[arg(skip)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields, default)]
pub struct ToyArgs {
    /// Loss targets (default: ERM loss times 1.05, 1.2, 1.4, 1.6, 1.8).
    #[arg(long, value_delimiter = ',')]
    pub tau: Option<Vec<f64>>,
    /// Where to write the generated points.
    #[arg(long)]
    pub write_data: Option<PathBuf>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub sgd_steps: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(skip)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields, default)]
pub struct GuaranteeArgs {
    /// Support size.
    #[arg(long)]
    pub k: Option<usize>,
    /// Sample size.
    #[arg(long)]
    pub n: Option<usize>,
    /// KL radius.
    #[arg(long)]
    pub r: Option<f64>,
    /// Failure probability for the finite-sample radius.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Expected KL of the smoothed estimate; estimated from --p if absent.
    #[arg(long)]
    pub expected_kl: Option<f64>,
    /// True distribution for the Monte-Carlo expected KL.
    #[arg(long, value_delimiter = ',')]
    pub p: Option<Vec<f64>>,
    #[arg(long)]
    pub mc_trials: Option<usize>,
    /// Fragility for the tail and continuous bounds.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Tail offset above tau.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Lipschitz-type constant of the continuous bound.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub k_cap: Option<usize>,
    #[arg(skip)]
    pub seed: Option<u64>,
}

/// Overlays the flags that were given onto the config file object. The
/// file alone must deserialize, which rejects unknown keys.
pub fn merge_config<T: Serialize + DeserializeOwned>(flags: &T, file: Option<&Value>) -> CliResult<T> {
    let mut base = match file {
        Some(v @ Value::Object(_)) => {
            serde_json::from_value::<T>(v.clone()).map_err(|e| CliError::Config(e.to_string()))?;
            v.as_object().cloned().unwrap_or_default()
        }
        Some(_) => return Err(CliError::Config("config file must hold a JSON object".into())),
        None => serde_json::Map::new(),
    };
    if let Value::Object(given) = serde_json::to_value(flags)? {
        for (k, v) in given {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(base)).map_err(|e| CliError::Config(e.to_string()))
}

pub fn read_config(path: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.into(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

/// Runs the parsed command and returns its reports (several for sweeps).
pub fn run(cli: &Cli) -> CliResult<Vec<Report>> {
    let file = cli.config.as_deref().map(read_config).transpose()?;
    let file = file.as_ref();
    macro_rules! resolve {
        ($args:expr) => {{
            let mut a = merge_config($args, file)?;
            a.seed = cli.seed.or(a.seed).or(Some(0));
            a
        }};
    }
    match &cli.command {
        Command::Solve(a) => cmd_solve(&resolve!(a)),
        Command::Hsolve(a) => cmd_hsolve(&resolve!(a)).map(|r| vec![r]),
        Command::Fairpca(a) => cmd_fairpca(&resolve!(a)).map(|r| vec![r]),
        Command::Labelshift(a) => cmd_labelshift(&resolve!(a)).map(|r| vec![r]),
        Command::Longtail(a) => cmd_longtail(&resolve!(a)).map(|r| vec![r]),
        Command::Toy(a) => cmd_toy(&resolve!(a)).map(|r| vec![r]),
        Command::Guarantees(a) => cmd_guarantees(&resolve!(a)).map(|r| vec![r]),
    }
}

/// `out` for a single report, `<stem>-<i>.<ext>` for several.
pub fn output_paths(out: Option<&Path>, count: usize) -> Vec<Option<PathBuf>> {
    match out {
        None => vec![None; count],
        Some(p) if count == 1 => vec![Some(p.to_path_buf())],
        Some(p) => {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let ext = p.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
            (0..count).map(|i| Some(p.with_file_name(format!("{stem}-{i}{ext}")))).collect()
        }
    }
}

fn need<T: Clone>(v: &Option<T>, name: &str) -> CliResult<T> {
    v.clone().ok_or_else(|| CliError::Usage(format!("missing required parameter `{name}`")))
}

fn build_model(kind: ModelKind, width: usize) -> Box<dyn LossModel> {
    match kind {
        ModelKind::Point => Box::new(PointEstimation { dim: width }),
        ModelKind::Logistic => Box::new(Logistic { features: width }),
        ModelKind::LeastSquares => Box::new(LeastSquares { features: width }),
        ModelKind::Fixed => Box::new(FixedLoss),
    }
}

fn load_for_model(
    path: &Path,
    features: &Option<Vec<String>>,
    label: &Option<String>,
    group: &Option<String>,
    kind: ModelKind,
) -> CliResult<Dataset> {
    let label_kind = match kind {
        ModelKind::LeastSquares => LabelKind::Target,
        _ => LabelKind::Class,
    };
    let needs_label = matches!(kind, ModelKind::Logistic | ModelKind::LeastSquares);
    if needs_label && label.is_none() {
        return Err(CliError::Usage(format!("model {kind:?} needs --label")));
    }
    load_csv_dataset(
        path,
        &DatasetSchema {
            features: features.clone(),
            label: label.clone(),
            label_kind,
            group: group.clone(),
        },
    )
}

fn tau_from_rule(rule: Option<TauRule>, a: Option<f64>, stats: &ErmStats) -> CliResult<f64> {
    let strategy = match rule.unwrap_or(TauRule::ScaleErm) {
        TauRule::ScaleErm => TauStrategy::ScaleErm(a.unwrap_or(1.1)),
        TauRule::MinmaxMix => TauStrategy::MinmaxMix(a.unwrap_or(0.5)),
        TauRule::MeanPlusVar => TauStrategy::MeanPlusVar(a.unwrap_or(1.0)),
    };
    Ok(select_tau(strategy, stats)?)
}

fn trace_rows(result: &SolveResult) -> Vec<TraceRow> {
    result.trace.iter().map(TraceRow::from).collect()
}

fn tail_reports(lambda: f64, tau: f64, fracs: &[f64]) -> CliResult<Vec<GuaranteeReport>> {
    fracs
        .iter()
        .map(|f| tail_report(lambda, f * tau.abs()).map_err(CliError::from))
        .collect()
}

fn cmd_solve(a: &SolveArgs) -> CliResult<Vec<Report>> {
    let kind = a.model.unwrap_or(ModelKind::Point);
    let data = load_for_model(&need(&a.data, "data")?, &a.features, &a.label, &a.group, kind)?;
    let model = build_model(kind, data.width());
    let d = SolverConfig::default();
    let base = SolverConfig {
        tau: 0.0,
        epsilon: a.epsilon.unwrap_or(d.epsilon),
        lambda_init: a.lambda_init.unwrap_or(d.lambda_init),
        max_doublings: a.max_doublings.unwrap_or(d.max_doublings),
        sgd_steps: a.sgd_steps.unwrap_or(d.sgd_steps),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        step_size: a.step_size.unwrap_or(d.step_size),
        step_schedule: a.step_schedule.map_or(d.step_schedule, StepSchedule::from),
        seed: a.seed.unwrap_or(0),
        warm_start: a.warm_start.unwrap_or(d.warm_start),
        grad_clip: a.grad_clip.unwrap_or(d.grad_clip),
    };
    let taus = match &a.tau {
        Some(t) if !t.is_empty() => t.clone(),
        _ => {
            let (theta, _) = erm_solve(model.as_ref(), &data, &SolverConfig { tau: 1.0, ..base.clone() })?;
            let stats = ErmStats::from_losses(&loss_vector(model.as_ref(), theta.as_slice(), &data)?);
            vec![tau_from_rule(a.tau_rule, a.tau_a, &stats)?]
        }
    };
    let eval = match &a.eval {
        Some(p) => Some(load_for_model(p, &a.features, &a.label, &a.group, kind)?),
        None => None,
    };
    let fracs = a.alpha_frac.clone().unwrap_or_else(|| vec![0.1, 0.5, 1.0]);

    let mut reports = Vec::new();
    for tau in taus {
        let cfg = SolverConfig { tau, ..base.clone() };
        let result = solve_klrs(model.as_ref(), &data, &cfg)?;
        let mut report = Report::new("solve", json!({ "args": a, "solver": cfg }));
        report.trace = trace_rows(&result);
        report.result.theta = result.theta_star.as_slice().to_vec();
        report.result.lambda = Some(result.lambda_star);
        report.result.tau = Some(tau);
        report.result.feasible = result.feasible;
        report.result.extra.insert("erm_loss".into(), json!(result.erm_loss));
        let losses = loss_vector(model.as_ref(), result.theta_star.as_slice(), &data)?;
        report.result.extra.insert("mean_loss".into(), json!(losses.mean()));
        report.result.extra.insert("max_loss".into(), json!(losses.max()));
        report.guarantees = Some(tail_reports(result.lambda_star, tau, &fracs)?);
        if let (ModelKind::Logistic, Some(test)) = (kind, &eval) {
            let lg = Logistic { features: test.width() };
            let scores: Vec<f64> = (0..test.len())
                .map(|i| lg.predict(result.theta_star.as_slice(), test.features().row(i)))
                .collect();
            let m = metrics_from_scores(
                &scores,
                test.class_labels()?,
                a.threshold.unwrap_or(0.5),
                a.metric_alpha.unwrap_or(0.9),
            )?;
            report.metrics = Some(to_value(&m)?);
        }
        reports.push(report);
    }
    Ok(reports)
}

fn hier_config(a: &HsolveArgs, tau: f64) -> HierConfig {
    let d = HierConfig::new(tau);
    HierConfig {
        tau,
        w: a.w.unwrap_or(d.w),
        epsilon: a.epsilon.unwrap_or(d.epsilon),
        lambda_min: a.lambda_min.unwrap_or(d.lambda_min),
        lambda_max: a.lambda_max.unwrap_or(d.lambda_max),
        lambda2_init: a.lambda2_init.unwrap_or(d.lambda2_init),
        max_doublings: a.max_doublings.unwrap_or(d.max_doublings),
        group_batch: a.m1.or(d.group_batch),
        inner_batch: a.m2.unwrap_or(d.inner_batch),
        sgd_steps: a.sgd_steps.unwrap_or(d.sgd_steps),
        step_size: a.step_size.unwrap_or(d.step_size),
        step_schedule: a.step_schedule.map_or(d.step_schedule, StepSchedule::from),
        seed: a.seed.unwrap_or(0),
        grad_clip: a.grad_clip.unwrap_or(d.grad_clip),
    }
}

fn hier_report(model: &dyn LossModel, gdata: &GroupedDataset, cfg: &HierConfig, args: Value) -> CliResult<Report> {
    let result = solve_hier(model, gdata, cfg)?;
    let mut report = Report::new("hsolve", json!({ "args": args, "hier": cfg }));
    report.trace = result
        .trace
        .iter()
        .map(|t| TraceRow {
            lambda: t.lambda1,
            objective: t.objective.is_finite().then_some(t.objective),
            feasible: t.lambda2.is_some(),
        })
        .collect();
    report.result.theta = result.theta_star.as_slice().to_vec();
    report.result.lambda1 = Some(result.lambda1_star);
    report.result.lambda2 = Some(result.lambda2_star);
    report.result.tau = Some(cfg.tau);
    report.result.feasible = result.feasible;
    report
        .result
        .extra
        .insert("group_weights".into(), json!(gdata.group_weights().probs()));
    Ok(report)
}

fn cmd_hsolve(a: &HsolveArgs) -> CliResult<Report> {
    let kind = a.model.unwrap_or(ModelKind::Point);
    let data = load_for_model(&need(&a.data, "data")?, &a.features, &a.label, &a.group, kind)?;
    let mut gdata = if a.group_by_label.unwrap_or(false) {
        GroupedDataset::from_class_labels(&data)?
    } else {
        if a.group.is_none() {
            return Err(CliError::Usage("hsolve needs --group or --group-by-label".into()));
        }
        GroupedDataset::from_group_ids(&data)?
    };
    if a.uniform_groups.unwrap_or(false) {
        gdata = gdata.with_uniform_weights();
    }
    let model = build_model(kind, data.width());
    let cfg = hier_config(a, need(&a.tau, "tau")?);
    hier_report(model.as_ref(), &gdata, &cfg, to_value(a)?)
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn cmd_fairpca(a: &FairPcaArgs) -> CliResult<Report> {
    let seed = a.seed.unwrap_or(0);
    let groups: Vec<Matrix> = match &a.data {
        Some(path) => {
            let group = need(&a.group, "group")?;
            let data = load_csv_dataset(
                path,
                &DatasetSchema {
                    features: a.features.clone(),
                    group: Some(group),
                    ..DatasetSchema::default()
                },
            )?;
            GroupedDataset::from_group_ids(&data)?
                .groups()
                .iter()
                .map(|g| g.features().clone())
                .collect()
        }
        None => {
            let sizes = a.sizes.clone().unwrap_or_else(|| vec![190, 10]);
            let sizes: [usize; 2] = sizes
                .try_into()
                .map_err(|_| CliError::Usage("synthetic fair PCA takes exactly two group sizes".into()))?;
            gen_two_group_pca(sizes, a.dim.unwrap_or(3), seed)?
        }
    };
    let d = FairPcaConfig::default();
    let cfg = FairPcaConfig {
        epsilon: a.epsilon.unwrap_or(d.epsilon),
        lambda_init: a.lambda_init.unwrap_or(d.lambda_init),
        max_doublings: a.max_doublings.unwrap_or(d.max_doublings),
        steps: a.steps.unwrap_or(d.steps),
        step_size: a.step_size.unwrap_or(d.step_size),
    };
    let rank = a.d.unwrap_or(1);
    let r = a.r.unwrap_or(0.5);
    let out = fair_pca_run(&groups, rank, r, &cfg)?;
    let mut report = Report::new("fairpca", json!({ "args": a, "fair_pca": cfg, "d": rank, "r": r }));
    report.trace = out.trace.iter().map(TraceRow::from).collect();
    report.result.lambda = Some(out.lambda_star);
    report.result.tau = Some(out.tau);
    report.result.feasible = true;
    let extra = &mut report.result.extra;
    extra.insert("group_losses".into(), json!(out.group_losses));
    extra.insert("baseline_losses".into(), json!(out.baseline_losses));
    extra.insert("loss_gap".into(), json!(out.loss_gap()));
    extra.insert("average_loss".into(), json!(out.average_loss()));
    extra.insert("u".into(), json!(matrix_rows(&out.u)));
    Ok(report)
}

fn logistic_metrics(theta: &[f64], test: &Dataset, threshold: f64, alpha: f64) -> CliResult<Value> {
    let lg = Logistic { features: test.width() };
    let scores: Vec<f64> = (0..test.len()).map(|i| lg.predict(theta, test.features().row(i))).collect();
    to_value(&metrics_from_scores(&scores, test.class_labels()?, threshold, alpha)?)
}

fn cmd_labelshift(a: &LabelShiftArgs) -> CliResult<Report> {
    let label = need(&a.label, "label")?;
    let schema = DatasetSchema {
        features: a.features.clone(),
        label: Some(label),
        ..DatasetSchema::default()
    };
    let train = load_csv_dataset(&need(&a.data, "data")?, &schema)?;
    let pool = match &a.pool {
        Some(p) => load_csv_dataset(p, &schema)?,
        None => train.clone(),
    };
    let model = Logistic { features: train.width() };
    let d = SolverConfig::default();
    let base = SolverConfig {
        tau: 1.0,
        epsilon: a.epsilon.unwrap_or(d.epsilon),
        lambda_init: a.lambda_init.unwrap_or(d.lambda_init),
        max_doublings: a.max_doublings.unwrap_or(d.max_doublings),
        sgd_steps: a.sgd_steps.unwrap_or(d.sgd_steps),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        step_size: a.step_size.unwrap_or(d.step_size),
        seed: a.seed.unwrap_or(0),
        ..d
    };
    let (erm_theta, _) = erm_solve(&model, &train, &base)?;
    let tau = match a.tau {
        Some(t) => t,
        None => {
            let stats = ErmStats::from_losses(&loss_vector(&model, erm_theta.as_slice(), &train)?);
            tau_from_rule(a.tau_rule, a.tau_a, &stats)?
        }
    };
    let cfg = SolverConfig { tau, ..base };
    let result = solve_klrs(&model, &train, &cfg)?;

    let p = positive_fraction(&train)?;
    let test_size = a.test_size.unwrap_or(400);
    let (threshold, alpha) = (a.threshold.unwrap_or(0.5), a.metric_alpha.unwrap_or(0.9));
    let mut shifts = Vec::new();
    for (i, &target) in a.target_kl.clone().unwrap_or_else(|| vec![0.0]).iter().enumerate() {
        let q = label_shift_proportions(p, target)?;
        let test = sample_label_shift_test(&pool, q, test_size, cfg.seed.wrapping_add(i as u64))?;
        shifts.push(json!({
            "target_kl": target,
            "q": q,
            "test_positive_share": positive_fraction(&test)?,
            "klrs": logistic_metrics(result.theta_star.as_slice(), &test, threshold, alpha)?,
            "erm": logistic_metrics(erm_theta.as_slice(), &test, threshold, alpha)?,
        }));
    }
    let mut report = Report::new("labelshift", json!({ "args": a, "solver": cfg }));
    report.trace = trace_rows(&result);
    report.result.theta = result.theta_star.as_slice().to_vec();
    report.result.lambda = Some(result.lambda_star);
    report.result.tau = Some(tau);
    report.result.feasible = result.feasible;
    report.result.extra.insert("train_positive_share".into(), json!(p));
    report.result.extra.insert("erm_theta".into(), json!(erm_theta.as_slice()));
    report.metrics = Some(Value::Array(shifts));
    Ok(report)
}

fn class_sizes(data: &Dataset) -> CliResult<BTreeMap<String, usize>> {
    let mut sizes = BTreeMap::new();
    for l in data.class_labels()? {
        *sizes.entry(l.to_string()).or_insert(0) += 1;
    }
    Ok(sizes)
}

fn cmd_longtail(a: &LongTailArgs) -> CliResult<Report> {
    let data = load_csv_dataset(
        &need(&a.data, "data")?,
        &DatasetSchema {
            features: a.features.clone(),
            label: Some(need(&a.label, "label")?),
            ..DatasetSchema::default()
        },
    )?;
    let rho = a.rho.unwrap_or(0.01);
    let out = long_tail_downsample(&data, rho, a.seed.unwrap_or(0))?;
    if let Some(p) = &a.write_data {
        write_csv_dataset(p, &out)?;
    }
    let mut report = Report::new("longtail", json!({ "args": a }));
    report.result.feasible = true;
    let extra = &mut report.result.extra;
    extra.insert("rho".into(), json!(rho));
    extra.insert("rows_before".into(), json!(data.len()));
    extra.insert("rows_after".into(), json!(out.len()));
    extra.insert("class_sizes".into(), json!(class_sizes(&out)?));
    Ok(report)
}

fn cmd_toy(a: &ToyArgs) -> CliResult<Report> {
    let seed = a.seed.unwrap_or(0);
    let data = gen_two_gaussian_toy(seed);
    if let Some(p) = &a.write_data {
        write_csv_dataset(p, &data)?;
    }
    let model = PointEstimation { dim: 2 };
    let base = SolverConfig {
        tau: 1.0,
        epsilon: a.epsilon.unwrap_or(1e-4),
        sgd_steps: a.sgd_steps.unwrap_or(2000),
        batch_size: data.len(),
        step_size: a.step_size.unwrap_or(0.1),
        step_schedule: StepSchedule::Constant,
        seed,
        ..SolverConfig::default()
    };
    let (_, erm_loss) = erm_solve(&model, &data, &base)?;
    let taus = a
        .tau
        .clone()
        .unwrap_or_else(|| [1.05, 1.2, 1.4, 1.6, 1.8].iter().map(|m| m * erm_loss).collect());
    let minority: Vec<bool> = data.group_ids().unwrap_or(&[]).iter().map(|&g| g == 1).collect();
    let mut rows = Vec::new();
    let mut trace = Vec::new();
    for &tau in &taus {
        let cfg = SolverConfig { tau, ..base.clone() };
        let result = solve_klrs(&model, &data, &cfg)?;
        let losses = loss_vector(&model, result.theta_star.as_slice(), &data)?;
        let weights = worst_case_weights(&losses, result.lambda_star)?;
        let minority_weight: f64 = weights.probs().iter().zip(&minority).filter(|(_, &m)| m).map(|(w, _)| w).sum();
        trace.extend(trace_rows(&result));
        rows.push(json!({
            "tau": tau,
            "lambda": result.lambda_star,
            "theta": result.theta_star.as_slice(),
            "mean_loss": losses.mean(),
            "max_loss": losses.max(),
            "loss_variance": losses.variance(),
            "minority_weight": minority_weight,
        }));
    }
    let mut report = Report::new("toy", json!({ "args": a, "solver": base, "tau": taus }));
    report.trace = trace;
    report.result.feasible = true;
    let ids = data.group_ids().unwrap_or(&[]);
    let counts = [ids.iter().filter(|&&g| g == 0).count(), ids.iter().filter(|&&g| g == 1).count()];
    let extra = &mut report.result.extra;
    extra.insert("cluster_sizes".into(), json!(counts));
    extra.insert("erm_loss".into(), json!(erm_loss));
    extra.insert("sweep".into(), Value::Array(rows));
    Ok(report)
}

fn cmd_guarantees(a: &GuaranteeArgs) -> CliResult<Report> {
    let mut reports = Vec::new();
    let mut extra = BTreeMap::new();
    if let (Some(lambda), Some(alpha)) = (a.lambda, a.alpha) {
        reports.push(tail_report(lambda, alpha)?);
    }
    if let (Some(k), Some(n), Some(r)) = (a.k, a.n, a.r) {
        reports.push(asymptotic_discrete_report(k, n, r)?);
        reports.push(chernoff_report(k, n, r)?);
    }
    if let (Some(c), Some(lambda), Some(n), Some(r)) = (a.c, a.lambda, a.n, a.r) {
        reports.push(asymptotic_continuous_report(c, lambda, n, r, a.k_cap)?);
    }
    if let (Some(n), Some(delta)) = (a.n, a.delta) {
        let expected = match (a.expected_kl, &a.p) {
            (Some(e), _) => Some(e),
            (None, Some(p)) => {
                let dist = DiscreteDistribution::from_weights(p)?;
                let e = monte_carlo_expected_kl(&dist, n, a.mc_trials.unwrap_or(1000), a.seed.unwrap_or(0))?;
                extra.insert("expected_kl_mc".to_string(), json!(e));
                Some(e)
            }
            (None, None) => None,
        };
        let k = a.k.or(a.p.as_ref().map(Vec::len));
        if let (Some(k), Some(e)) = (k, expected) {
            reports.push(finite_sample_report(k, n, delta, e)?);
        }
    }
    if reports.is_empty() {
        return Err(CliError::Usage(
            "nothing to compute: give --lambda/--alpha, --k/--n/--r, --c with --lambda/--n/--r, or --n/--delta with --expected-kl or --p"
                .into(),
        ));
    }
    let mut report = Report::new("guarantees", json!({ "args": a }));
    report.result.feasible = true;
    report.result.extra = extra;
    report.guarantees = Some(reports);
    Ok(report)
}
