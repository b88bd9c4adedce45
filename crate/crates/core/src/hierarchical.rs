//! Two-level KL-RS with a fragility `lambda1` for shifts in the group
//! marginal and `lambda2` for shifts within groups.
//!
//! The nested tilted risk is
//! `lambda1 log E_g[exp(v_g / lambda1)]` with `v_g = lambda2 log E_{z|g}[exp(l / lambda2)]`,
//! and it is at most `tau` exactly when the feasibility statistic
//! `E_g[(E_{z|g} exp((l - tau) / lambda2))^(lambda2 / lambda1)]` is at most 1.
//! For fixed `lambda1` the smallest feasible `lambda2` is found by bisection,
//! and `lambda1 + w * lambda2(lambda1)` is minimized over `lambda1` by
//! golden-section search.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::error::{check_lambda, Error, Result};
use crate::linalg::Matrix;
use crate::models::{loss_vector, Dataset, Labels, LossModel, ParameterVector};
use crate::rng::stream_rng;
use crate::solver::{
    bisect_lambda, draw_batch, erm_solve, sgd, FeasibilityOutcome, LambdaSearch, SgdParams, SolverConfig, StepSchedule,
    TraceEntry,
};
use crate::tilt::{log_surrogate_mean, tilted_risk_unchecked, DiscreteDistribution, LossVector, TiltConfig};

/// Golden-section interior point fraction.
pub const GOLDEN_GAMMA: f64 = 0.382;

/// Samples split by group, with a distribution over groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    groups: Vec<Dataset>,
    group_weights: DiscreteDistribution,
}

impl GroupedDataset {
    /// Groups weighted by `weights`, or by their empirical share `|A_g| / N`.
    pub fn new(groups: Vec<Dataset>, weights: Option<DiscreteDistribution>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Empty("groups"));
        }
        if let Some(g) = groups.iter().position(Dataset::is_empty) {
            return Err(Error::Domain(format!("group {g} is empty")));
        }
        let group_weights = match weights {
            Some(w) if w.len() != groups.len() => {
                return Err(Error::LengthMismatch {
                    expected: groups.len(),
                    found: w.len(),
                })
            }
            Some(w) => w,
            None => {
                let sizes: Vec<f64> = groups.iter().map(|g| g.len() as f64).collect();
                DiscreteDistribution::from_weights(&sizes)?
            }
        };
        Ok(Self { groups, group_weights })
    }

    /// Splits by the dataset's group ids, which must cover `0..G` with every
    /// group nonempty.
    pub fn from_group_ids(data: &Dataset) -> Result<Self> {
        let ids = data
            .group_ids()
            .ok_or_else(|| Error::Domain("dataset has no group column".into()))?;
        Self::split(data, ids.iter().copied())
    }

    /// Splits by class label; classes are ordered by label value.
    pub fn from_class_labels(data: &Dataset) -> Result<Self> {
        let labels = data.class_labels()?;
        let mut distinct: Vec<i64> = labels.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        Self::split(data, labels.iter().map(|l| distinct.binary_search(l).unwrap_or(0)))
    }

    fn split(data: &Dataset, ids: impl Iterator<Item = usize>) -> Result<Self> {
        let mut members: Vec<Vec<usize>> = Vec::new();
        for (i, g) in ids.enumerate() {
            if g >= members.len() {
                members.resize_with(g + 1, Vec::new);
            }
            members[g].push(i);
        }
        Self::new(members.iter().map(|idx| data.subset(idx)).collect(), None)
    }

    pub fn with_uniform_weights(mut self) -> Self {
        self.group_weights = DiscreteDistribution::uniform(self.groups.len()).expect("nonempty");
        self
    }

    pub fn groups(&self) -> &[Dataset] {
        &self.groups
    }

    pub fn group_weights(&self) -> &DiscreteDistribution {
        &self.group_weights
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// All samples in one dataset, group order preserved, group ids set.
    pub fn pooled(&self) -> Dataset {
        let width = self.groups[0].width();
        let mut data = Vec::new();
        let mut ids = Vec::new();
        let mut classes: Option<Vec<i64>> = Some(Vec::new());
        let mut targets: Option<Vec<f64>> = Some(Vec::new());
        for (g, group) in self.groups.iter().enumerate() {
            data.extend_from_slice(group.features().as_slice());
            ids.extend(core::iter::repeat_n(g, group.len()));
            match group.labels() {
                Some(Labels::Class(c)) => {
                    targets = None;
                    if let Some(v) = classes.as_mut() {
                        v.extend_from_slice(c)
                    }
                }
                Some(Labels::Target(t)) => {
                    classes = None;
                    if let Some(v) = targets.as_mut() {
                        v.extend_from_slice(t)
                    }
                }
                None => {
                    classes = None;
                    targets = None;
                }
            }
        }
        let labels = classes.map(Labels::Class).or(targets.map(Labels::Target));
        let features = Matrix::from_vec(ids.len(), width, data).expect("pooled shape");
        Dataset::new(features, labels, Some(ids)).expect("pooled groups are valid")
    }

    pub fn group_losses<M: LossModel + ?Sized>(&self, model: &M, theta: &[f64]) -> Result<Vec<LossVector>> {
        self.groups.iter().map(|g| loss_vector(model, theta, g)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HierConfig {
    pub tau: f64,
    /// Weight of `lambda2` in the objective `lambda1 + w * lambda2`.
    pub w: f64,
    pub epsilon: f64,
    /// Golden-section bracket on `lambda1`.
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Starting point of the doubling search on `lambda2`.
    pub lambda2_init: f64,
    pub max_doublings: u32,
    /// Groups per step (M1); `None` means `min(G, 8)`.
    pub group_batch: Option<usize>,
    /// Samples per sampled group (M2).
    pub inner_batch: usize,
    pub sgd_steps: usize,
    pub step_size: f64,
    pub step_schedule: StepSchedule,
    pub seed: u64,
    pub grad_clip: f64,
}

impl HierConfig {
    /// Defaults with the `lambda1` bracket `[1e-3 |tau|, 1e3 |tau|]`.
    pub fn new(tau: f64) -> Self {
        let scale = if tau != 0.0 { tau.abs() } else { 1.0 };
        Self {
            tau,
            w: 1.0,
            epsilon: 1e-4,
            lambda_min: 1e-3 * scale,
            lambda_max: 1e3 * scale,
            lambda2_init: 1.0,
            max_doublings: 30,
            group_batch: None,
            inner_batch: 32,
            sgd_steps: 1000,
            step_size: 0.05,
            step_schedule: StepSchedule::InverseT,
            seed: 0,
            grad_clip: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.tau.is_finite() {
            return Err(Error::InvalidConfig("tau must be finite".into()));
        }
        if !(self.w >= 0.0) {
            return Err(Error::InvalidConfig(format!("w must be nonnegative, got {}", self.w)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        if !(self.lambda_min > 0.0 && self.lambda_min < self.lambda_max && self.lambda_max.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < lambda_min < lambda_max, got [{}, {}]",
                self.lambda_min, self.lambda_max
            )));
        }
        if !(self.lambda2_init > 0.0) {
            return Err(Error::InvalidConfig("lambda2_init must be positive".into()));
        }
        if self.group_batch == Some(0) || self.inner_batch == 0 || self.sgd_steps == 0 {
            return Err(Error::InvalidConfig("batch sizes and sgd_steps must be at least 1".into()));
        }
        if !(self.step_size > 0.0 && self.grad_clip > 0.0) {
            return Err(Error::InvalidConfig("step_size and grad_clip must be positive".into()));
        }
        Ok(())
    }

    fn sgd(&self) -> SgdParams {
        SgdParams {
            steps: self.sgd_steps,
            step_size: self.step_size,
            schedule: self.step_schedule,
            grad_clip: self.grad_clip,
        }
    }

    fn lambda2_search(&self) -> LambdaSearch {
        LambdaSearch {
            tau: self.tau,
            epsilon: self.epsilon,
            lambda_init: self.lambda2_init,
            max_doublings: self.max_doublings,
        }
    }

    fn erm_config(&self) -> SolverConfig {
        SolverConfig {
            tau: self.tau,
            epsilon: self.epsilon,
            sgd_steps: self.sgd_steps,
            batch_size: self.inner_batch * self.group_batch.unwrap_or(8),
            step_size: self.step_size,
            step_schedule: self.step_schedule,
            seed: self.seed,
            grad_clip: self.grad_clip,
            ..SolverConfig::default()
        }
    }
}

/// One `lambda1` probe of the golden-section search.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HierTraceEntry {
    pub lambda1: f64,
    /// `None` when no `lambda2` is feasible at this `lambda1`.
    pub lambda2: Option<f64>,
    /// `lambda1 + w * lambda2`, `+inf` when infeasible.
    pub objective: f64,
    pub inner_trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HierSolveResult {
    pub theta_star: ParameterVector,
    pub lambda1_star: f64,
    pub lambda2_star: f64,
    pub feasible: bool,
    pub trace: Vec<HierTraceEntry>,
}

/// Nested tilted risk: per-group tilt at `lambda2`, then a tilt at `lambda1`
/// over the group values weighted by `group_weights`.
pub fn hier_tilted_risk(
    group_losses: &[LossVector],
    lambda1: f64,
    lambda2: f64,
    group_weights: &DiscreteDistribution,
) -> Result<f64> {
    check_lambda(lambda1)?;
    check_lambda(lambda2)?;
    if group_losses.len() != group_weights.len() {
        return Err(Error::LengthMismatch {
            expected: group_weights.len(),
            found: group_losses.len(),
        });
    }
    let inner: Vec<f64> = group_losses.iter().map(|lv| tilted_risk_unchecked(lv, lambda2)).collect();
    let outer = LossVector::with_weights(inner, group_weights.clone())?;
    Ok(tilted_risk_unchecked(&outer, lambda1))
}

/// `h(x) = x^(lambda2 / lambda1)`.
pub fn h_outer(x: f64, lambda1: f64, lambda2: f64) -> Result<f64> {
    check_h(x, lambda1, lambda2)?;
    Ok(x.powf(lambda2 / lambda1))
}

/// `h'(x) = (lambda2 / lambda1) x^(lambda2 / lambda1 - 1)`.
pub fn h_outer_derivative(x: f64, lambda1: f64, lambda2: f64) -> Result<f64> {
    check_h(x, lambda1, lambda2)?;
    let p = lambda2 / lambda1;
    Ok(p * x.powf(p - 1.0))
}

fn check_h(x: f64, lambda1: f64, lambda2: f64) -> Result<()> {
    check_lambda(lambda1)?;
    check_lambda(lambda2)?;
    if !(x > 0.0) {
        return Err(Error::Domain(format!("h needs x > 0, got {x}")));
    }
    Ok(())
}

/// Tilted risk of per-group mean losses: the no-within-group-shift case.
pub fn group_klrs_risk(group_mean_losses: &[f64], lambda: f64, group_weights: &DiscreteDistribution) -> Result<f64> {
    check_lambda(lambda)?;
    let lv = LossVector::with_weights(group_mean_losses.to_vec(), group_weights.clone())?;
    Ok(tilted_risk_unchecked(&lv, lambda))
}

/// Natural log of the feasibility statistic
/// `E_g[(E_{z|g} exp((l - tau) / lambda2))^(lambda2 / lambda1)]`.
///
/// `tau + lambda1 * log_statistic == hier_tilted_risk` up to rounding.
pub fn log_hier_statistic(
    group_losses: &[LossVector],
    lambda1: f64,
    lambda2: f64,
    tau: f64,
    group_weights: &DiscreteDistribution,
) -> Result<f64> {
    let inner = TiltConfig::new(lambda2, tau)?;
    check_lambda(lambda1)?;
    let ratio = lambda2 / lambda1;
    let exponents: Vec<(f64, f64)> = group_losses
        .iter()
        .zip(group_weights.probs())
        .filter(|(_, &w)| w > 0.0)
        .map(|(lv, &w)| (w, ratio * log_surrogate_mean(lv, inner)))
        .collect();
    let max = exponents.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = exponents.iter().map(|(w, e)| w * (e - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Feasibility of `(lambda1, lambda2)` via hierarchical mini-batch SGD.
///
/// Each step samples `M1` groups from the group weights (all groups, weighted
/// exactly, once `M1 >= G`) and `M2` samples within each, then steps along
/// `(1/M1) sum_i h'(f_i) grad f_i` where `f_i` is the sampled group's
/// surrogate mean at `lambda2`. Plugging the inner batch mean into `h'`
/// makes the estimator biased; the bias shrinks as `M2` grows. The verdict
/// uses the exact full-data statistic at the final theta. A `theta_init`
/// that already passes is returned without stepping.
pub fn hier_feasibility<M: LossModel + ?Sized>(
    model: &M,
    gdata: &GroupedDataset,
    lambda1: f64,
    lambda2: f64,
    cfg: &HierConfig,
    theta_init: &ParameterVector,
) -> Result<FeasibilityOutcome> {
    check_lambda(lambda1)?;
    check_lambda(lambda2)?;
    let statistic = |theta: &[f64]| -> Result<f64> {
        let losses = gdata.group_losses(model, theta)?;
        Ok(log_hier_statistic(&losses, lambda1, lambda2, cfg.tau, &gdata.group_weights)?.exp())
    };
    let start = statistic(theta_init.as_slice())?;
    if start <= 1.0 {
        return Ok(FeasibilityOutcome {
            feasible: true,
            theta: theta_init.clone(),
            objective: start,
        });
    }

    let g_count = gdata.num_groups();
    let m1 = cfg.group_batch.unwrap_or(g_count.min(8));
    let full_groups = m1 >= g_count;
    let picker = WeightedIndex::new(gdata.group_weights.probs())
        .map_err(|e| Error::InvalidDistribution(format!("{e}")))?;
    let mut rng = stream_rng(cfg.seed, lambda1.to_bits() ^ lambda2.to_bits().rotate_left(32));
    let ratio = lambda2 / lambda1;
    let mut theta = theta_init.clone().into_vec();
    let mut chosen: Vec<(usize, f64)> = Vec::new();
    let mut batch = Vec::new();
    let mut exps = Vec::new();
    let mut group_dirs: Vec<(f64, Vec<f64>)> = Vec::new();

    let rows: usize = gdata.groups.iter().map(Dataset::len).sum();
    let refresh = (rows / (m1.min(g_count) * cfg.inner_batch).max(1)).max(1);
    let mut log_norm = start.ln();
    let log_lambda1 = lambda1.ln();
    sgd(&mut theta, cfg.sgd(), |th, t, out| {
        if t > 0 && t % refresh == 0 {
            if let Ok(s) = statistic(th) {
                log_norm = s.ln();
            }
        }
        chosen.clear();
        if full_groups {
            chosen.extend(gdata.group_weights.probs().iter().copied().enumerate());
        } else {
            let w = 1.0 / m1 as f64;
            chosen.extend((0..m1).map(|_| (picker.sample(&mut rng), w)));
        }
        group_dirs.clear();
        for &(g, weight) in &chosen {
            let group = &gdata.groups[g];
            draw_batch(&mut rng, group.len(), cfg.inner_batch, &mut batch);
            exps.clear();
            exps.extend(batch.iter().map(|&i| (model.loss(th, group.sample(i)) - cfg.tau) / lambda2));
            let max = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = exps.iter().map(|a| (a - max).exp()).sum();
            let log_mean = max + (sum / batch.len() as f64).ln();
            // h'(f) grad f = (1/lambda1) f^(lambda2/lambda1) sum_j softmax_j grad l_j
            let mut dir = vec![0.0; th.len()];
            for (&i, a) in batch.iter().zip(&exps) {
                model.add_grad(th, group.sample(i), (a - max).exp() / sum, &mut dir);
            }
            group_dirs.push((ratio * log_mean + (weight / lambda1).ln(), dir));
        }
        let top = group_dirs.iter().map(|d| d.0).fold(f64::NEG_INFINITY, f64::max);
        for (e, dir) in &group_dirs {
            let s = (e - top).exp();
            for (o, d) in out.iter_mut().zip(dir) {
                *o += s * d;
            }
        }
        // same normalization as the flat oracle: divide by the full-data
        // statistic at a recent iterate
        top + log_lambda1 - log_norm
    });

    let theta = ParameterVector::new(theta)?;
    let objective = statistic(theta.as_slice())?;
    Ok(FeasibilityOutcome {
        feasible: objective <= 1.0,
        theta,
        objective,
    })
}

/// Smallest feasible `lambda2` at fixed `lambda1`, and its certifying theta.
#[derive(Debug, Clone, PartialEq)]
pub struct Lambda2Solution {
    pub lambda2: f64,
    pub theta: ParameterVector,
    pub trace: Vec<TraceEntry>,
}

/// Doubling + bisection on `lambda2` with [`hier_feasibility`] as oracle,
/// warm-starting theta across probes.
pub fn solve_lambda2<M: LossModel + ?Sized>(
    model: &M,
    gdata: &GroupedDataset,
    lambda1: f64,
    cfg: &HierConfig,
    theta_init: &ParameterVector,
) -> Result<Lambda2Solution> {
    check_lambda(lambda1)?;
    cfg.validate()?;
    let mut theta = theta_init.clone();
    let found = bisect_lambda(cfg.lambda2_search(), |lambda2| {
        let out = hier_feasibility(model, gdata, lambda1, lambda2, cfg, &theta)?;
        theta = out.theta.clone();
        Ok((out.feasible, out.objective, out.theta))
    })?;
    Ok(Lambda2Solution {
        lambda2: found.lambda,
        theta: found.witness,
        trace: found.trace,
    })
}

struct Probe {
    lambda1: f64,
    solution: Option<Lambda2Solution>,
    objective: f64,
}

/// Golden-section search (interior fraction 0.382) for
/// `min lambda1 + w * H(lambda1)` over `[lambda_min, lambda_max]`, where
/// `H(lambda1)` is [`solve_lambda2`]'s answer.
///
/// A `lambda1` with no feasible `lambda2` scores `+inf`; since feasibility
/// only improves as `lambda1` grows, such probes move the left end up.
/// Probes are memoized: a requested point within `1e-3` of the bracket width
/// of an earlier probe reuses it. Returns the best feasible probe seen.
pub fn solve_hier<M: LossModel + ?Sized>(model: &M, gdata: &GroupedDataset, cfg: &HierConfig) -> Result<HierSolveResult> {
    cfg.validate()?;
    for g in gdata.groups() {
        model.check(g)?;
    }
    let pooled = gdata.pooled();
    let (mut warm, _) = erm_solve(model, &pooled, &cfg.erm_config())?;
    let mut probes: Vec<Probe> = Vec::new();

    let evaluate = |probes: &mut Vec<Probe>, target: f64, width: f64, warm: &mut ParameterVector| -> Result<usize> {
        if let Some(i) = probes.iter().position(|p| (p.lambda1 - target).abs() <= 1e-3 * width) {
            return Ok(i);
        }
        let solution = match solve_lambda2(model, gdata, target, cfg, warm) {
            Ok(s) => Some(s),
            Err(Error::InfeasibleTarget { .. }) => None,
            Err(e) => return Err(e),
        };
        let objective = solution.as_ref().map_or(f64::INFINITY, |s| target + cfg.w * s.lambda2);
        if let Some(s) = &solution {
            *warm = s.theta.clone();
        }
        probes.push(Probe {
            lambda1: target,
            solution,
            objective,
        });
        Ok(probes.len() - 1)
    };

    let (mut left, mut right) = (cfg.lambda_min, cfg.lambda_max);
    while right - left >= cfg.epsilon {
        let width = right - left;
        let a = evaluate(&mut probes, left + GOLDEN_GAMMA * width, width, &mut warm)?;
        let b = evaluate(&mut probes, left + (1.0 - GOLDEN_GAMMA) * width, width, &mut warm)?;
        let (pa, pb) = (&probes[a], &probes[b]);
        if pa.objective.is_finite() && pa.objective <= pb.objective {
            right = pb.lambda1;
        } else {
            left = pa.lambda1;
        }
        if pa.lambda1 >= pb.lambda1 {
            break;
        }
    }
    // the right end itself may be the only feasible point
    if probes.iter().all(|p| p.solution.is_none()) {
        let width = right - left;
        evaluate(&mut probes, cfg.lambda_max, width.max(cfg.epsilon), &mut warm)?;
    }

    let trace = probes
        .iter()
        .map(|p| HierTraceEntry {
            lambda1: p.lambda1,
            lambda2: p.solution.as_ref().map(|s| s.lambda2),
            objective: p.objective,
            inner_trace: p.solution.as_ref().map(|s| s.trace.clone()).unwrap_or_default(),
        })
        .collect();
    let best = probes
        .iter()
        .filter(|p| p.solution.is_some())
        .min_by(|x, y| x.objective.partial_cmp(&y.objective).unwrap_or(core::cmp::Ordering::Equal))
        .ok_or_else(|| Error::InfeasibleTarget {
            tau: cfg.tau,
            reason: format!("no lambda1 in [{}, {}] admits a feasible lambda2", cfg.lambda_min, cfg.lambda_max),
        })?;
    let solution = best.solution.as_ref().expect("filtered");
    Ok(HierSolveResult {
        theta_star: solution.theta.clone(),
        lambda1_star: best.lambda1,
        lambda2_star: solution.lambda2,
        feasible: true,
        trace,
    })
}
