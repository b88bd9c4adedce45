//! Flat KL-RS: a feasibility oracle that minimizes the normalized surrogate
//! `E[exp((l - tau) / lambda)]` by mini-batch SGD, and a doubling + bisection
//! search for the smallest feasible `lambda`. ERM and TERM baselines share the
//! same SGD loop.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{check_lambda, Error, Result};
use crate::models::{loss_vector, Dataset, LossModel, ParameterVector};
use crate::rng::stream_rng;
use crate::tilt::{log_surrogate_mean, tilted_risk_unchecked, worst_case_weights, TiltConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum StepSchedule {
    Constant,
    /// `step_size / (1 + t / T0)` with `T0 = sgd_steps / 10`.
    InverseT,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolverConfig {
    pub tau: f64,
    /// Bisection stops once the bracket on lambda is narrower than this.
    pub epsilon: f64,
    pub lambda_init: f64,
    pub max_doublings: u32,
    pub sgd_steps: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub step_schedule: StepSchedule,
    pub seed: u64,
    /// Carry theta from one lambda probe to the next.
    pub warm_start: bool,
    /// Gradient norm cap applied before every step.
    pub grad_clip: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            epsilon: 1e-4,
            lambda_init: 1.0,
            max_doublings: 40,
            sgd_steps: 1000,
            batch_size: 32,
            step_size: 0.05,
            step_schedule: StepSchedule::InverseT,
            seed: 0,
            warm_start: true,
            grad_clip: 100.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.tau.is_finite() {
            return Err(Error::InvalidConfig(format!("tau must be finite, got {}", self.tau)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.lambda_init > 0.0 && self.lambda_init.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda_init must be positive, got {}", self.lambda_init)));
        }
        if self.batch_size == 0 || self.sgd_steps == 0 {
            return Err(Error::InvalidConfig("batch_size and sgd_steps must be at least 1".into()));
        }
        if !(self.step_size > 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::InvalidConfig("step_size and grad_clip must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn sgd(&self) -> SgdParams {
        SgdParams {
            steps: self.sgd_steps,
            step_size: self.step_size,
            schedule: self.step_schedule,
            grad_clip: self.grad_clip,
        }
    }

    pub(crate) fn search(&self) -> LambdaSearch {
        LambdaSearch {
            tau: self.tau,
            epsilon: self.epsilon,
            lambda_init: self.lambda_init,
            max_doublings: self.max_doublings,
        }
    }
}

/// One probe of the lambda search.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TraceEntry {
    pub lambda: f64,
    /// Feasibility statistic at the probe's final theta (at most 1 iff feasible).
    pub objective: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolveResult {
    pub theta_star: ParameterVector,
    pub lambda_star: f64,
    pub feasible: bool,
    pub trace: Vec<TraceEntry>,
    /// Mean loss of the preliminary ERM run used to validate tau.
    pub erm_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityOutcome {
    pub feasible: bool,
    pub theta: ParameterVector,
    /// Full-data statistic at `theta`; feasible iff at most 1.
    pub objective: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SgdParams {
    pub steps: usize,
    pub step_size: f64,
    pub schedule: StepSchedule,
    pub grad_clip: f64,
}

impl SgdParams {
    fn step_at(&self, t: usize) -> f64 {
        match self.schedule {
            StepSchedule::Constant => self.step_size,
            StepSchedule::InverseT => {
                let t0 = (self.steps as f64 / 10.0).max(1.0);
                self.step_size / (1.0 + t as f64 / t0)
            }
        }
    }
}

/// Plain SGD. `batch_grad(theta, t, out)` writes a direction `g_hat` into
/// the zeroed `out` and returns `log_scale`; the true gradient is
/// `exp(log_scale) * g_hat`. Keeping the scale in log space lets
/// exponentially weighted gradients be clipped without overflowing.
pub(crate) fn sgd<F>(theta: &mut [f64], params: SgdParams, mut batch_grad: F)
where
    F: FnMut(&[f64], usize, &mut [f64]) -> f64,
{
    let mut g = vec![0.0; theta.len()];
    if theta.is_empty() {
        return;
    }
    for t in 0..params.steps {
        g.iter_mut().for_each(|x| *x = 0.0);
        let log_scale = batch_grad(theta, t, &mut g);
        let dir_norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(dir_norm > 0.0) || !dir_norm.is_finite() || log_scale.is_nan() {
            continue;
        }
        let log_norm = log_scale + dir_norm.ln();
        let factor = if log_norm > params.grad_clip.ln() {
            params.grad_clip / dir_norm
        } else {
            log_scale.exp()
        };
        let step = params.step_at(t) * factor;
        for (th, gi) in theta.iter_mut().zip(&g) {
            *th -= step * gi;
        }
    }
}

/// Indices for one mini-batch: the whole dataset in order when the batch is
/// at least as large, otherwise uniform draws with replacement.
pub(crate) fn draw_batch<R: Rng>(rng: &mut R, n: usize, batch: usize, out: &mut Vec<usize>) {
    out.clear();
    if batch >= n {
        out.extend(0..n);
    } else {
        out.extend((0..batch).map(|_| rng.random_range(0..n)));
    }
}

fn lambda_stream(lambda: f64) -> u64 {
    lambda.to_bits()
}

/// Mini-batch direction of the surrogate gradient over `batch`:
/// `(1 / (lambda M)) sum exp((l_i - tau) / lambda) grad l_i`, returned as
/// `(g_hat, log_scale)` with the max exponent factored out.
pub(crate) fn surrogate_batch_grad<M: LossModel + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &[f64],
    tilt: TiltConfig,
    batch: &[usize],
    exps: &mut Vec<f64>,
    out: &mut [f64],
) -> f64 {
    exps.clear();
    exps.extend(
        batch
            .iter()
            .map(|&i| (model.loss(theta, data.sample(i)) - tilt.tau()) / tilt.lambda()),
    );
    let max = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = 1.0 / (tilt.lambda() * batch.len() as f64);
    for (&i, a) in batch.iter().zip(exps.iter()) {
        model.add_grad(theta, data.sample(i), scale * (a - max).exp(), out);
    }
    max
}

/// Full-data surrogate mean `E[exp((l - tau) / lambda)]` (may be `+inf`).
pub fn surrogate_mean<M: LossModel + ?Sized>(model: &M, data: &Dataset, theta: &[f64], tilt: TiltConfig) -> Result<f64> {
    Ok(log_surrogate_mean(&loss_vector(model, theta, data)?, tilt).exp())
}

/// Full-data gradient of the surrogate mean in theta.
pub fn surrogate_gradient<M: LossModel + ?Sized>(model: &M, data: &Dataset, theta: &[f64], tilt: TiltConfig) -> Vec<f64> {
    let batch: Vec<usize> = (0..data.len()).collect();
    let mut out = vec![0.0; model.dim()];
    let log_scale = surrogate_batch_grad(model, data, theta, tilt, &batch, &mut Vec::new(), &mut out);
    let s = log_scale.exp();
    out.iter_mut().for_each(|g| *g *= s);
    out
}

/// Tilted risk of the model's losses on `data` at `theta`.
pub fn tilted_risk_at<M: LossModel + ?Sized>(model: &M, data: &Dataset, theta: &[f64], lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(tilted_risk_unchecked(&loss_vector(model, theta, data)?, lambda))
}

/// Is there a theta with `E[exp((l - tau) / lambda)] <= 1`?
///
/// Starts at `theta_init`; if that already satisfies the test it is returned
/// without taking any steps. Otherwise runs `sgd_steps` mini-batch steps with
/// the unbiased gradient `(1/lambda) exp((l - tau)/lambda) grad l`, rescaled
/// by a periodically refreshed full-data normalizer, and tests
/// the full-data surrogate mean at the final theta. The batch stream is
/// derived from `(seed, lambda)`, so the outcome does not depend on which
/// probes ran before.
pub fn feasibility_check<M: LossModel + ?Sized>(
    model: &M,
    data: &Dataset,
    lambda: f64,
    cfg: &SolverConfig,
    theta_init: &ParameterVector,
) -> Result<FeasibilityOutcome> {
    check_lambda(lambda)?;
    let tilt = TiltConfig::new(lambda, cfg.tau)?;
    if theta_init.len() != model.dim() {
        return Err(Error::LengthMismatch {
            expected: model.dim(),
            found: theta_init.len(),
        });
    }
    let start = surrogate_mean(model, data, theta_init.as_slice(), tilt)?;
    if start <= 1.0 {
        return Ok(FeasibilityOutcome {
            feasible: true,
            theta: theta_init.clone(),
            objective: start,
        });
    }
    let mut theta = theta_init.clone().into_vec();
    let mut rng = stream_rng(cfg.seed, lambda_stream(lambda));
    let (mut batch, mut exps) = (Vec::new(), Vec::new());
    // Steps use the unbiased batch gradient divided by the full-data
    // surrogate mean at a recent iterate, i.e. a stochastic gradient of
    // lambda * log f. The divisor is refreshed about once per epoch and
    // never depends on the current batch, so each step stays unbiased.
    let refresh = (data.len() / cfg.batch_size).max(1);
    let mut log_norm = start.ln();
    let log_lambda = lambda.ln();
    sgd(&mut theta, cfg.sgd(), |th, t, out| {
        if t > 0 && t % refresh == 0 {
            if let Ok(losses) = loss_vector(model, th, data) {
                log_norm = log_surrogate_mean(&losses, tilt);
            }
        }
        draw_batch(&mut rng, data.len(), cfg.batch_size, &mut batch);
        surrogate_batch_grad(model, data, th, tilt, &batch, &mut exps, out) + log_lambda - log_norm
    });
    let theta = ParameterVector::new(theta)?;
    let objective = surrogate_mean(model, data, theta.as_slice(), tilt)?;
    Ok(FeasibilityOutcome {
        feasible: objective <= 1.0,
        theta,
        objective,
    })
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LambdaSearch {
    pub tau: f64,
    pub epsilon: f64,
    pub lambda_init: f64,
    pub max_doublings: u32,
}

impl LambdaSearch {
    /// Smallest lambda ever probed; the bracket's lower end is 0 logically.
    pub fn floor(&self) -> f64 {
        (1e-8 * self.tau.abs()).max(f64::MIN_POSITIVE)
    }
}

/// Result of [`bisect_lambda`]: the upper bracket (always feasible) and the
/// witness that certified it.
pub(crate) struct Bracketed<T> {
    pub lambda: f64,
    pub witness: T,
    pub trace: Vec<TraceEntry>,
}

/// Doubling from `lambda_init` until feasible, then bisection until the
/// bracket is narrower than `epsilon`. The lower end is always infeasible (or
/// the logical 0) and the upper end always feasible. `oracle(lambda)`
/// returns `(feasible, statistic, witness)`.
pub(crate) fn bisect_lambda<T, F>(search: LambdaSearch, mut oracle: F) -> Result<Bracketed<T>>
where
    F: FnMut(f64) -> Result<(bool, f64, T)>,
{
    let mut trace = Vec::new();
    let mut lower = 0.0;
    let mut lambda = search.lambda_init;
    let mut doublings = 0;
    let mut witness = loop {
        let (ok, objective, w) = oracle(lambda)?;
        trace.push(TraceEntry { lambda, objective, feasible: ok });
        if ok {
            break w;
        }
        if doublings >= search.max_doublings {
            return Err(Error::InfeasibleTarget {
                tau: search.tau,
                reason: format!("still infeasible at lambda = {lambda} after {doublings} doublings"),
            });
        }
        lower = lambda;
        lambda *= 2.0;
        doublings += 1;
    };
    let mut upper = lambda;
    let floor = search.floor();
    while upper - lower >= search.epsilon {
        let mid = (0.5 * (upper + lower)).max(floor);
        if mid >= upper {
            break;
        }
        let (ok, objective, w) = oracle(mid)?;
        trace.push(TraceEntry { lambda: mid, objective, feasible: ok });
        if ok {
            upper = mid;
            witness = w;
        } else {
            lower = mid;
        }
    }
    Ok(Bracketed {
        lambda: upper,
        witness,
        trace,
    })
}

/// Smallest feasible lambda (to within `epsilon`) and a theta certifying it.
///
/// A preliminary ERM run bounds the attainable mean loss; a target that does
/// not exceed it is rejected up front. The returned `lambda_star` is the
/// feasible end of the final bracket, so `tilted_risk_at(theta_star,
/// lambda_star) <= tau` holds exactly on the full data.
pub fn solve_klrs<M: LossModel + ?Sized>(model: &M, data: &Dataset, cfg: &SolverConfig) -> Result<SolveResult> {
    cfg.validate()?;
    model.check(data)?;
    let (theta_erm, erm_loss) = erm_solve(model, data, cfg)?;
    if !(cfg.tau > erm_loss) {
        return Err(Error::InfeasibleTarget {
            tau: cfg.tau,
            reason: format!("tau does not exceed the ERM loss {erm_loss}"),
        });
    }
    let mut theta = theta_erm.clone();
    let found = bisect_lambda(cfg.search(), |lambda| {
        let start = if cfg.warm_start { &theta } else { &theta_erm };
        let out = feasibility_check(model, data, lambda, cfg, start)?;
        theta = out.theta.clone();
        Ok((out.feasible, out.objective, out.theta))
    })?;
    Ok(SolveResult {
        theta_star: found.witness,
        lambda_star: found.lambda,
        feasible: true,
        trace: found.trace,
        erm_loss,
    })
}

/// Mini-batch SGD on the mean loss from the model's initial parameters.
/// Returns the final theta and its full-data mean loss.
pub fn erm_solve<M: LossModel + ?Sized>(model: &M, data: &Dataset, cfg: &SolverConfig) -> Result<(ParameterVector, f64)> {
    cfg.validate()?;
    model.check(data)?;
    let mut theta = model.initial_parameters().into_vec();
    let mut rng = stream_rng(cfg.seed, u64::MAX);
    let mut batch = Vec::new();
    sgd(&mut theta, cfg.sgd(), |th, _, out| {
        draw_batch(&mut rng, data.len(), cfg.batch_size, &mut batch);
        let scale = 1.0 / batch.len() as f64;
        for &i in &batch {
            model.add_grad(th, data.sample(i), scale, out);
        }
        0.0
    });
    let mean = loss_vector(model, &theta, data)?.mean();
    Ok((ParameterVector::new(theta)?, mean))
}

/// Tilted ERM baseline: full-batch gradient descent directly on
/// `lambda log E[exp(l / lambda)]`, whose gradient reweights each sample's
/// gradient by the worst-case (softmax) weights. Full batches sidestep the
/// biased mini-batch estimate of the normalizer.
pub fn term_baseline<M: LossModel + ?Sized>(
    model: &M,
    data: &Dataset,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<ParameterVector> {
    check_lambda(lambda)?;
    cfg.validate()?;
    model.check(data)?;
    let mut theta = model.initial_parameters().into_vec();
    let mut failure = None;
    sgd(&mut theta, cfg.sgd(), |th, _, out| {
        match term_gradient(model, data, th, lambda) {
            Ok(g) => out.copy_from_slice(&g),
            Err(e) => failure = Some(e),
        }
        0.0
    });
    if let Some(e) = failure {
        return Err(e);
    }
    ParameterVector::new(theta)
}

/// Full-data gradient of the tilted risk: `sum_i p_i grad l_i` with `p` the
/// worst-case weights.
pub fn term_gradient<M: LossModel + ?Sized>(model: &M, data: &Dataset, theta: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let weights = worst_case_weights(&loss_vector(model, theta, data)?, lambda)?;
    let mut g = vec![0.0; model.dim()];
    for (i, &w) in weights.probs().iter().enumerate() {
        model.add_grad(theta, data.sample(i), w, &mut g);
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{FixedLoss, LeastSquares, Labels, PointEstimation};
    use crate::linalg::Matrix;
    use crate::tilt::LossVector;
    use approx::assert_abs_diff_eq;

    fn fixed(losses: &[f64]) -> Dataset {
        Dataset::fixed_losses(losses).unwrap()
    }

    fn cfg(tau: f64) -> SolverConfig {
        SolverConfig { tau, ..SolverConfig::default() }
    }

    #[test]
    fn feasibility_examples() {
        let data = fixed(&[0.0, 1.0]);
        let theta = ParameterVector::zeros(0);
        let out = feasibility_check(&FixedLoss, &data, 1.0, &cfg(0.7), &theta).unwrap();
        assert!(out.feasible);
        // e^{-0.7} (1 + e) / 2
        assert_abs_diff_eq!(out.objective, 0.923_222_055_683_706, epsilon = 1e-12);
        let out = feasibility_check(&FixedLoss, &data, 0.5, &cfg(0.7), &theta).unwrap();
        assert!(!out.feasible);
        assert!(feasibility_check(&FixedLoss, &data, 0.0, &cfg(0.7), &theta).is_err());
    }

    #[test]
    fn feasible_start_takes_no_steps() {
        let data = Dataset::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let theta = ParameterVector::new(vec![0.3, 0.7]).unwrap();
        // max loss at theta is 0.29, so tau = 0.3 is satisfied pointwise
        let out = feasibility_check(&PointEstimation { dim: 2 }, &data, 0.01, &cfg(0.3), &theta).unwrap();
        assert!(out.feasible);
        assert_eq!(out.theta, theta);
    }

    #[test]
    fn solve_fixed_losses_matches_root() {
        let result = solve_klrs(&FixedLoss, &fixed(&[0.0, 1.0]), &cfg(0.7)).unwrap();
        // root of lambda ln((1 + e^{1/lambda}) / 2) = 0.7 is 0.5552250 (Brent)
        assert!((result.lambda_star - 0.555_225).abs() < 2e-4, "{}", result.lambda_star);
        let lv = LossVector::new(vec![0.0, 1.0]).unwrap();
        assert!(tilted_risk_unchecked(&lv, result.lambda_star) <= 0.7);
    }

    #[test]
    fn constant_losses_collapse_to_lower_bracket() {
        let result = solve_klrs(&FixedLoss, &fixed(&[2.0, 2.0, 2.0]), &cfg(2.1)).unwrap();
        assert!(result.lambda_star <= 1e-4);
        assert!(result.trace.iter().all(|t| t.feasible));
    }

    #[test]
    fn bracket_invariant_holds_in_trace() {
        let result = solve_klrs(&FixedLoss, &fixed(&[0.0, 0.3, 1.0, 2.0]), &cfg(1.2)).unwrap();
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        for t in &result.trace {
            if t.feasible {
                hi = hi.min(t.lambda);
            } else {
                lo = lo.max(t.lambda);
            }
            assert!(lo < hi);
        }
        assert_eq!(hi, result.lambda_star);
    }

    #[test]
    fn tau_below_erm_is_rejected() {
        let err = solve_klrs(&FixedLoss, &fixed(&[0.0, 1.0]), &cfg(0.4)).unwrap_err();
        assert!(matches!(err, Error::InfeasibleTarget { .. }));
    }

    #[test]
    fn erm_least_squares_exact_solution() {
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![2.0, -1.0]];
        let theta_true = [0.5, -1.5];
        let y: Vec<f64> = rows.iter().map(|r| r[0] * theta_true[0] + r[1] * theta_true[1]).collect();
        let data = Dataset::new(Matrix::from_rows(&rows).unwrap(), Some(Labels::Target(y)), None).unwrap();
        let c = SolverConfig {
            sgd_steps: 5000,
            batch_size: 4,
            step_size: 0.2,
            step_schedule: StepSchedule::Constant,
            ..SolverConfig::default()
        };
        let (theta, loss) = erm_solve(&LeastSquares { features: 2 }, &data, &c).unwrap();
        assert!(loss < 1e-6);
        assert_abs_diff_eq!(theta.as_slice()[0], 0.5, epsilon = 1e-4);
        assert_abs_diff_eq!(theta.as_slice()[1], -1.5, epsilon = 1e-4);
    }

    #[test]
    fn erm_constant_model_is_target_mean() {
        let rows = vec![vec![1.0]; 4];
        let y = vec![1.0, 2.0, 4.0, 9.0];
        let data = Dataset::new(Matrix::from_rows(&rows).unwrap(), Some(Labels::Target(y)), None).unwrap();
        let c = SolverConfig {
            sgd_steps: 2000,
            batch_size: 4,
            step_size: 0.5,
            step_schedule: StepSchedule::Constant,
            ..SolverConfig::default()
        };
        let (theta, _) = erm_solve(&LeastSquares { features: 1 }, &data, &c).unwrap();
        assert_abs_diff_eq!(theta.as_slice()[0], 4.0, epsilon = 1e-8);
    }

    #[test]
    fn term_gradient_uses_worst_case_weights() {
        let data = Dataset::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let model = PointEstimation { dim: 1 };
        let theta = [0.5];
        let lambda = 0.8;
        let lv = loss_vector(&model, &theta, &data).unwrap();
        let w = worst_case_weights(&lv, lambda).unwrap();
        let expected = w.probs()[0] * (0.5 - 0.0) + w.probs()[1] * (0.5 - 2.0);
        assert_abs_diff_eq!(term_gradient(&model, &data, &theta, lambda).unwrap()[0], expected, epsilon = 1e-15);

        // equal losses: plain ERM gradient
        let data = Dataset::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
        let g = term_gradient(&model, &data, &[0.0], 0.3).unwrap();
        assert_abs_diff_eq!(g[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn determinism() {
        let data = Dataset::from_rows(&(0..30).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64).cos()]).collect::<Vec<_>>()).unwrap();
        let model = PointEstimation { dim: 2 };
        let c = SolverConfig { tau: 0.8, batch_size: 8, sgd_steps: 200, seed: 42, ..SolverConfig::default() };
        let a = solve_klrs(&model, &data, &c).unwrap();
        let b = solve_klrs(&model, &data, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.lambda_star.to_bits(), b.lambda_star.to_bits());
    }
}
