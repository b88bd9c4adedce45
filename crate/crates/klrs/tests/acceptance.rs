//! Acceptance gate: one PASS/FAIL line per criterion, tolerances pinned
//! below. Exits nonzero if any criterion fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use klrs_core::experiments::label_shift::binary_kl;
use klrs_core::experiments::long_tail::long_tail_size;
use klrs_core::experiments::metrics::{conditional_value_at_risk, rank_errors, value_at_risk};
use klrs_core::experiments::{
    fair_pca_run, gen_two_gaussian_toy, gen_two_group_pca, label_shift_proportions, long_tail_downsample,
    ConfusionCounts, FairPcaConfig,
};
use klrs_core::guarantees::{
    asymptotic_discrete_confidence, chernoff_confidence, chi2_cdf, validate_asymptotic_coverage,
};
use klrs_core::hierarchical::{group_klrs_risk, hier_tilted_risk, log_hier_statistic, solve_hier};
use klrs_core::linalg::Matrix;
use klrs_core::models::{loss_vector, FixedLoss, LeastSquares, Logistic, PointEstimation, Sample};
use klrs_core::solver::{erm_solve, solve_klrs, surrogate_gradient, surrogate_mean};
use klrs_core::tilt::{tilted_risk, worst_case_weights};
use klrs_core::{
    Dataset, DiscreteDistribution, GroupedDataset, HierConfig, Labels, LossModel, LossVector, SolverConfig,
    StepSchedule, TiltConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// criterion 1
const DUAL_INSTANCES: usize = 50;
const DUAL_TOL: f64 = 1e-4;
// criterion 2
const MONO_CASES: usize = 1000;
const MONO_SLACK: f64 = 1e-12;
const LIMIT_SLACK: f64 = 1e-6;
// criterion 3
const GRAD_POINTS: usize = 20;
const GRAD_REL_TOL: f64 = 1e-4;
// criterion 4
const SCAN_STEP: f64 = 1e-6;
const BISECT_EPS: f64 = 1e-4;
// criterion 5
const TAIL_SLACK: f64 = 1e-12;
// criterion 6
const CONVEXITY_TOL: f64 = 1e-8;
const STATISTIC_TOL: f64 = 1e-10;
// criterion 7
const CHI2_1_TOL: f64 = 1e-6;
const CHI2_2_TOL: f64 = 1e-9;
const COVERAGE_TOL: f64 = 0.03;
// criterion 8
const TREND_SLACK: f64 = 1e-6;
const MINORITY_FLOOR: f64 = 0.2;
// criterion 10
const ROUND_TRIP_TOL: f64 = 1e-9;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// A solved instance kept for the tail-bound check.
struct Solved {
    label: String,
    losses: Vec<f64>,
    tau: f64,
    lambda: f64,
}

// ---- 1: dual equivalence ----------------------------------------------

fn dual_objective(q: &[f64], l: &[f64], p: &[f64], lambda: f64) -> f64 {
    let mut value = 0.0;
    let mut kl = 0.0;
    for i in 0..q.len() {
        value += q[i] * l[i];
        if q[i] > 0.0 {
            kl += q[i] * (q[i] / p[i]).ln();
        }
    }
    value - lambda * kl
}

/// Best grid point of the simplex with spacing `1 / steps`, restricted to
/// the box `center +- radius` (in grid units) when `center` is given. The
/// first `n - 1` coordinates run over the box, the last takes the rest.
fn grid_sup(l: &[f64], p: &[f64], lambda: f64, steps: i64, center: Option<&[f64]>, radius: i64) -> (f64, Vec<f64>) {
    let n = l.len();
    let h = 1.0 / steps as f64;
    let bounds: Vec<(i64, i64)> = (0..n)
        .map(|i| match center {
            Some(c) => {
                let mid = (c[i] * steps as f64).round() as i64;
                ((mid - radius).max(0), (mid + radius).min(steps))
            }
            None => (0, steps),
        })
        .collect();
    let mut best = (f64::NEG_INFINITY, vec![0.0; n]);
    let mut idx: Vec<i64> = bounds[..n - 1].iter().map(|b| b.0).collect();
    let mut q = vec![0.0; n];
    loop {
        let used: i64 = idx.iter().sum();
        let last = steps - used;
        if last >= bounds[n - 1].0 && last <= bounds[n - 1].1 {
            for (qi, &k) in q.iter_mut().zip(&idx) {
                *qi = k as f64 * h;
            }
            q[n - 1] = last as f64 * h;
            let v = dual_objective(&q, l, p, lambda);
            if v > best.0 {
                best = (v, q.clone());
            }
        }
        // odometer step over the free coordinates
        let mut k = 0;
        while k < idx.len() {
            if idx[k] < bounds[k].1 {
                idx[k] += 1;
                break;
            }
            idx[k] = bounds[k].0;
            k += 1;
        }
        if k == idx.len() {
            return best;
        }
    }
}

/// Exhaustive grid at spacing 1e-2, then local grids at 1e-3, 1e-4, 1e-5
/// around the incumbent.
fn simplex_sup(l: &[f64], p: &[f64], lambda: f64) -> f64 {
    let (mut value, mut q) = grid_sup(l, p, lambda, 100, None, 0);
    for steps in [1_000, 10_000, 100_000] {
        let (v, best) = grid_sup(l, p, lambda, steps, Some(&q), 20);
        if v > value {
            value = v;
            q = best;
        }
    }
    value
}

fn criterion_1() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for case in 0..DUAL_INSTANCES {
        let n = rng.random_range(1..=4);
        let l: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let p = DiscreteDistribution::from_weights(&w).unwrap();
        let lambda = 10f64.powf(rng.random_range(-1.3..1.3));
        let lv = LossVector::with_weights(l.clone(), p.clone()).unwrap();
        let primal = tilted_risk(&lv, lambda).unwrap();
        let dual = simplex_sup(&l, p.probs(), lambda);
        let gap = (primal - dual).abs();
        worst = worst.max(gap);
        ensure(gap < DUAL_TOL, || format!("case {case}: tilted {primal} vs grid sup {dual}"))?;
    }
    Ok(format!("{DUAL_INSTANCES} instances, max gap {worst:.2e} < {DUAL_TOL:e}"))
}

// ---- 2: monotonicity and limits ---------------------------------------

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..MONO_CASES {
        let n = rng.random_range(1..=10);
        let l: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let lv = LossVector::new(l).unwrap();
        let mut grid: Vec<f64> = (0..20).map(|_| 10f64.powf(rng.random_range(-3.0..4.0))).collect();
        grid.sort_by(f64::total_cmp);
        let values: Vec<f64> = grid.iter().map(|&lam| tilted_risk(&lv, lam).unwrap()).collect();
        let scale = lv.max().abs().max(1.0);
        for k in 1..values.len() {
            ensure(values[k] <= values[k - 1] + MONO_SLACK * scale, || {
                format!("case {case}: R({}) = {} > R({}) = {}", grid[k], values[k], grid[k - 1], values[k - 1])
            })?;
        }
        let small = 1e-3;
        let r_small = tilted_risk(&lv, small).unwrap();
        ensure(lv.max() - r_small <= small * (n as f64).ln() + MONO_SLACK * scale, || {
            format!("case {case}: max {} vs R(1e-3) {r_small}", lv.max())
        })?;
        let big = 1e4;
        let r_big = tilted_risk(&lv, big).unwrap();
        let v = lv.variance();
        let approx = lv.mean() + v / (2.0 * big);
        ensure((r_big - approx).abs() <= v / (2.0 * big) + LIMIT_SLACK, || {
            format!("case {case}: R(1e4) {r_big} vs mean + V/(2 lambda) {approx}")
        })?;
    }
    Ok(format!("{MONO_CASES} cases, 20-point lambda grids, limits at 1e-3 and 1e4"))
}

// ---- 3: gradients ------------------------------------------------------

fn rel_err(g: &[f64], fd: &[f64]) -> f64 {
    let diff: f64 = g.iter().zip(fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm.max(1e-8)
}

fn central_diff(theta: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|j| {
            let h = 1e-5 * theta[j].abs().max(1.0);
            t[j] = theta[j] + h;
            let up = f(&t);
            t[j] = theta[j] - h;
            let down = f(&t);
            t[j] = theta[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn one_row(x: Vec<f64>, labels: Option<Labels>) -> Dataset {
    let w = x.len();
    Dataset::new(Matrix::from_vec(1, w, x).unwrap(), labels, None).unwrap()
}

fn check_model(name: &str, model: &dyn LossModel, rng: &mut ChaCha8Rng, make: &dyn Fn(&mut ChaCha8Rng) -> Dataset) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for point in 0..GRAD_POINTS {
        let data = make(rng);
        let theta: Vec<f64> = (0..model.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let sample: Sample<'_> = data.sample(0);
        let g = model.grad(&theta, sample);
        let fd = central_diff(&theta, |t| model.loss(t, data.sample(0)));
        let e = rel_err(&g, &fd);
        worst = worst.max(e);
        ensure(e < GRAD_REL_TOL, || format!("{name} point {point}: rel err {e:.2e}"))?;
    }
    Ok(worst)
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let features = |rng: &mut ChaCha8Rng| (0..3).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>();
    let mut worst: f64 = 0.0;
    worst = worst.max(check_model("point", &PointEstimation { dim: 3 }, &mut rng, &|r| one_row(features(r), None))?);
    worst = worst.max(check_model("logistic", &Logistic { features: 3 }, &mut rng, &|r| {
        let y = r.random_range(0..2);
        one_row(features(r), Some(Labels::Class(vec![y])))
    })?);
    worst = worst.max(check_model("least-squares", &LeastSquares { features: 3 }, &mut rng, &|r| {
        let y = r.random_range(-5.0..5.0);
        one_row(features(r), Some(Labels::Target(vec![y])))
    })?);

    let model = LeastSquares { features: 3 };
    for point in 0..GRAD_POINTS {
        let rows = 8;
        let x: Vec<f64> = (0..rows * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        let data = Dataset::new(Matrix::from_vec(rows, 3, x).unwrap(), Some(Labels::Target(y)), None).unwrap();
        let theta: Vec<f64> = (0..model.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lambda = rng.random_range(0.3..3.0);
        let tau = loss_vector(&model, &theta, &data).unwrap().mean();
        let tilt = TiltConfig::new(lambda, tau).unwrap();
        let g = surrogate_gradient(&model, &data, &theta, tilt);
        let fd = central_diff(&theta, |t| surrogate_mean(&model, &data, t, tilt).unwrap());
        let e = rel_err(&g, &fd);
        worst = worst.max(e);
        ensure(e < GRAD_REL_TOL, || format!("surrogate point {point}: rel err {e:.2e}"))?;
    }
    Ok(format!("point, logistic, least-squares, surrogate at {GRAD_POINTS} points each, max rel err {worst:.1e}"))
}

// ---- 4: bisection vs fine scan ----------------------------------------

/// Smallest `k * SCAN_STEP` whose tilted risk meets `tau`.
fn fine_scan(lv: &LossVector, tau: f64) -> f64 {
    let mut k = 1u64;
    loop {
        let lambda = k as f64 * SCAN_STEP;
        if tilted_risk(lv, lambda).unwrap() <= tau {
            return lambda;
        }
        k += 1;
    }
}

fn criterion_4(solved: &mut Vec<Solved>) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut instances = vec![(vec![0.0, 1.0], 0.7)];
    while instances.len() < 10 {
        let n = rng.random_range(2..=6);
        let l: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
        let lv = LossVector::new(l.clone()).unwrap();
        if lv.max() - lv.mean() < 0.1 {
            continue;
        }
        let tau = lv.mean() + rng.random_range(0.3..0.8) * (lv.max() - lv.mean());
        instances.push((l, tau));
    }
    let mut first = 0.0;
    let mut worst: f64 = 0.0;
    for (i, (l, tau)) in instances.iter().enumerate() {
        let cfg = SolverConfig { tau: *tau, epsilon: BISECT_EPS, ..SolverConfig::default() };
        let out = solve_klrs(&FixedLoss, &Dataset::fixed_losses(l).unwrap(), &cfg).map_err(|e| e.to_string())?;
        let oracle = fine_scan(&LossVector::new(l.clone()).unwrap(), *tau);
        let gap = (out.lambda_star - oracle).abs();
        worst = worst.max(gap);
        if i == 0 {
            first = out.lambda_star;
        }
        ensure(gap <= BISECT_EPS, || format!("instance {i}: bisection {} vs scan {oracle}", out.lambda_star))?;
        solved.push(Solved {
            label: format!("fixed-{i}"),
            losses: l.clone(),
            tau: *tau,
            lambda: out.lambda_star,
        });
    }
    Ok(format!("10 instances, max |lambda* - scan| {worst:.1e}; losses [0,1], tau 0.7 gives {first:.5}"))
}

// ---- 5: tail bound -----------------------------------------------------

fn criterion_5(solved: &[Solved]) -> Check {
    let mut checks = 0;
    for s in solved {
        for frac in [0.1, 0.5, 1.0] {
            let alpha = frac * s.tau;
            let exceed = s.losses.iter().filter(|&&l| l >= s.tau + alpha).count() as f64 / s.losses.len() as f64;
            let bound = (-alpha / s.lambda).exp();
            ensure(exceed <= bound + TAIL_SLACK, || {
                format!("{}: alpha {alpha}: exceedance {exceed} > bound {bound}", s.label)
            })?;
            checks += 1;
        }
    }
    Ok(format!("{} feasible solves, {checks} (solve, alpha) pairs", solved.len()))
}

// ---- 6: hierarchical ---------------------------------------------------

fn criterion_6(solved: &mut Vec<Solved>) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_gap: f64 = 0.0;
    for i in 0..5 {
        let n = rng.random_range(2..=6);
        let l: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
        let lv = LossVector::new(l.clone()).unwrap();
        if lv.max() - lv.mean() < 0.1 {
            continue;
        }
        let tau = lv.mean() + rng.random_range(0.3..0.8) * (lv.max() - lv.mean());
        let data = Dataset::fixed_losses(&l).unwrap();
        let cfg = HierConfig::new(tau);
        let gdata = GroupedDataset::new(vec![data.clone()], None).map_err(|e| e.to_string())?;
        let hier = solve_hier(&FixedLoss, &gdata, &cfg).map_err(|e| e.to_string())?;
        let flat = solve_klrs(&FixedLoss, &data, &SolverConfig { tau, epsilon: cfg.epsilon, ..SolverConfig::default() })
            .map_err(|e| e.to_string())?;
        let gap = (hier.lambda2_star - flat.lambda_star).abs();
        worst_gap = worst_gap.max(gap);
        ensure(gap <= 2.0 * cfg.epsilon, || {
            format!("single group {i}: hier lambda2 {} vs flat {}", hier.lambda2_star, flat.lambda_star)
        })?;
        solved.push(Solved {
            label: format!("flat-{i}"),
            losses: l,
            tau,
            lambda: flat.lambda_star,
        });
    }

    let mut worst_convex: f64 = 0.0;
    let mut worst_stat: f64 = 0.0;
    for case in 0..50 {
        let g = rng.random_range(1..=4);
        let groups: Vec<LossVector> = (0..g)
            .map(|_| {
                let n = rng.random_range(1..=5);
                LossVector::new((0..n).map(|_| rng.random_range(0.0..4.0)).collect()).unwrap()
            })
            .collect();
        let w: Vec<f64> = (0..g).map(|_| rng.random_range(0.1..1.0)).collect();
        let w = DiscreteDistribution::from_weights(&w).unwrap();
        let mut pick = || 10f64.powf(rng.random_range(-1.0..1.5));
        let (a, b) = ((pick(), pick()), (pick(), pick()));
        let mid = ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0);
        let h = |p: (f64, f64)| hier_tilted_risk(&groups, p.0, p.1, &w).unwrap();
        let violation = h(mid) - (h(a) + h(b)) / 2.0;
        worst_convex = worst_convex.max(violation);
        ensure(violation < CONVEXITY_TOL, || format!("case {case}: midpoint convexity violated by {violation:e}"))?;

        let tau = rng.random_range(0.0..4.0);
        let stat = log_hier_statistic(&groups, a.0, a.1, tau, &w).unwrap();
        let diff = (tau + a.0 * stat - h(a)).abs();
        worst_stat = worst_stat.max(diff);
        ensure(diff <= STATISTIC_TOL, || format!("case {case}: statistic identity off by {diff:e}"))?;
        // away from the boundary the two feasibility verdicts agree
        if (h(a) - tau).abs() > STATISTIC_TOL {
            ensure((stat <= 0.0) == (h(a) <= tau), || format!("case {case}: feasibility verdicts differ"))?;
        }
    }
    Ok(format!(
        "single-group gap {worst_gap:.1e} <= 2 eps; max convexity violation {worst_convex:.1e}; statistic identity {worst_stat:.1e}"
    ))
}

// ---- 7: guarantees -----------------------------------------------------

fn criterion_7() -> Check {
    let c1 = chi2_cdf(1, 3.841459).unwrap();
    ensure((c1 - 0.95).abs() <= CHI2_1_TOL, || format!("chi2_cdf(1, 3.841459) = {c1}"))?;
    let y = 5.991465;
    let c2 = chi2_cdf(2, y).unwrap();
    let closed = -(-y / 2.0f64).exp_m1();
    ensure((c2 - closed).abs() <= CHI2_2_TOL && (c2 - 0.95).abs() <= 1e-6, || {
        format!("chi2_cdf(2, {y}) = {c2}, closed form {closed}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..100 {
        let k = rng.random_range(2..=20);
        let n = rng.random_range(1..=5000);
        let r = rng.random_range(0.0..0.2);
        let ch = chernoff_confidence(k, n, r).unwrap();
        let chi = asymptotic_discrete_confidence(k, n, r).unwrap();
        ensure(ch <= chi + 1e-12, || format!("case {case}: chernoff {ch} > chi2 {chi} (K={k}, N={n}, r={r})"))?;
    }

    let (n, trials) = (500, 2000);
    let r = 3.841459 / (2.0 * n as f64);
    let p = DiscreteDistribution::new(vec![0.3, 0.7]).unwrap();
    let coverage = validate_asymptotic_coverage(&p, n, r, trials, 7).unwrap();
    let predicted = asymptotic_discrete_confidence(2, n, r).unwrap();
    ensure((coverage - predicted).abs() <= COVERAGE_TOL, || {
        format!("coverage {coverage} vs predicted {predicted}")
    })?;
    Ok(format!("chi2 values ok; chernoff <= chi2 on 100 inputs; coverage {coverage:.4} vs {predicted:.4}"))
}

// ---- 8: toy trends -----------------------------------------------------

fn criterion_8(solved: &mut Vec<Solved>) -> Check {
    let data = gen_two_gaussian_toy(0);
    let model = PointEstimation { dim: 2 };
    let base = SolverConfig {
        tau: 1.0,
        sgd_steps: 2000,
        batch_size: data.len(),
        step_size: 0.1,
        step_schedule: StepSchedule::Constant,
        ..SolverConfig::default()
    };
    let (_, erm) = erm_solve(&model, &data, &base).map_err(|e| e.to_string())?;
    let minority: Vec<bool> = data.group_ids().unwrap().iter().map(|&g| g == 1).collect();
    let mut rows = Vec::new();
    for m in [1.05, 1.2, 1.4, 1.6, 1.8] {
        let tau = m * erm;
        let out = solve_klrs(&model, &data, &SolverConfig { tau, ..base.clone() }).map_err(|e| e.to_string())?;
        let lv = loss_vector(&model, out.theta_star.as_slice(), &data).unwrap();
        let q = worst_case_weights(&lv, out.lambda_star).unwrap();
        let minority_mass: f64 = q.probs().iter().zip(&minority).filter(|(_, &m)| m).map(|(p, _)| p).sum();
        rows.push((tau, out.lambda_star, lv.max(), lv.variance(), lv.mean(), minority_mass));
        solved.push(Solved {
            label: format!("toy-{m}"),
            losses: lv.losses().to_vec(),
            tau,
            lambda: out.lambda_star,
        });
    }
    for w in rows.windows(2) {
        let (a, b) = (w[0], w[1]);
        ensure(b.2 <= a.2 + TREND_SLACK, || format!("max loss rose from {} to {} (tau {})", a.2, b.2, b.0))?;
        ensure(b.3 <= a.3 + TREND_SLACK, || format!("loss variance rose from {} to {} (tau {})", a.3, b.3, b.0))?;
        ensure(b.4 >= a.4 - TREND_SLACK, || format!("mean loss fell from {} to {} (tau {})", a.4, b.4, b.0))?;
    }
    let last = rows.last().unwrap();
    ensure(last.5 > MINORITY_FLOOR, || format!("minority weight {} at the largest tau", last.5))?;
    Ok(format!(
        "tau = ERM x [1.05..1.8], lambda* {:.3} -> {:.3}, variance {:.3} -> {:.3}, minority weight {:.3}",
        rows[0].1, last.1, rows[0].3, last.3, last.5
    ))
}

// ---- 9: fair PCA -------------------------------------------------------

fn criterion_9() -> Check {
    let groups = gen_two_group_pca([190, 10], 3, 0).map_err(|e| e.to_string())?;
    let cfg = FairPcaConfig::default();
    let lo = fair_pca_run(&groups, 1, 0.1, &cfg).map_err(|e| e.to_string())?;
    let hi = fair_pca_run(&groups, 1, 0.9, &cfg).map_err(|e| e.to_string())?;
    for run in [&lo, &hi] {
        ensure(run.group_losses.iter().all(|&l| l >= 0.0), || "negative group loss".into())?;
        let risk = group_klrs_risk(&run.group_losses, run.lambda_star, &run.group_weights).unwrap();
        ensure(risk <= run.tau + 1e-3, || format!("group risk {risk} above tau {}", run.tau))?;
    }
    ensure(hi.loss_gap() <= lo.loss_gap(), || format!("gap r=0.9 {} > r=0.1 {}", hi.loss_gap(), lo.loss_gap()))?;
    ensure(hi.average_loss() >= lo.average_loss(), || {
        format!("average r=0.9 {} < r=0.1 {}", hi.average_loss(), lo.average_loss())
    })?;
    Ok(format!(
        "gap {:.4} -> {:.4}, average loss {:.4} -> {:.4} (r 0.1 -> 0.9)",
        lo.loss_gap(),
        hi.loss_gap(),
        lo.average_loss(),
        hi.average_loss()
    ))
}

// ---- 10: generators and metrics ---------------------------------------

fn var_by_enumeration(values: &[f64], a: u64, b: u64) -> f64 {
    // smallest v with #{x <= v} / n >= a / b, compared in integers
    let n = values.len() as u64;
    let mut candidates = values.to_vec();
    candidates.sort_by(f64::total_cmp);
    *candidates
        .iter()
        .find(|&&v| values.iter().filter(|&&x| x <= v).count() as u64 * b >= a * n)
        .unwrap()
}

fn criterion_10() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let p = rng.random_range(0.01..0.99);
        let target = rng.random_range(0.0..0.999) * -f64::ln(p);
        let q = label_shift_proportions(p, target).map_err(|e| e.to_string())?;
        let err = (binary_kl(q, p) - target).abs();
        worst = worst.max(err);
        ensure(err < ROUND_TRIP_TOL, || format!("case {case}: KL round trip off by {err:e}"))?;
    }

    let (classes, per) = (100usize, 500usize);
    let rows: Vec<f64> = (0..classes * per).map(|i| i as f64).collect();
    let labels: Vec<i64> = (0..classes * per).map(|i| (i % classes) as i64).collect();
    let data = Dataset::new(Matrix::from_vec(classes * per, 1, rows).unwrap(), Some(Labels::Class(labels)), None).unwrap();
    let sub = long_tail_downsample(&data, 0.01, 0).map_err(|e| e.to_string())?;
    let mut sizes = vec![0usize; classes];
    for &l in sub.class_labels().unwrap() {
        sizes[l as usize] += 1;
    }
    ensure(sizes.windows(2).all(|w| w[1] <= w[0]), || "class sizes increase with rank".into())?;
    for (c, &s) in sizes.iter().enumerate() {
        ensure(s == long_tail_size(per, 0.01, c, classes), || format!("class {c} kept {s}"))?;
    }
    ensure(sizes[0] == 500 && sizes[classes - 1] == 5, || format!("sizes {} .. {}", sizes[0], sizes[classes - 1]))?;

    let c = ConfusionCounts { tp: 2, tn: 3, fp: 1, fn_: 1 };
    ensure(c.mcc() == 5.0 / 12.0, || format!("MCC {}", c.mcc()))?;
    ensure(c.f1() == 2.0 / 3.0, || format!("F1 {}", c.f1()))?;

    for case in 0..20 {
        let n = rng.random_range(4..=12);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..8u8)) / 4.0).collect();
        let mut labels: Vec<i64> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let errors = rank_errors(&scores, &labels).unwrap();
        let mut expected: Vec<f64> = Vec::new();
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li == 0 && lj == 1 {
                    expected.push(scores[i] - scores[j]);
                }
            }
        }
        let (mut got, mut want) = (errors.clone(), expected);
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        ensure(got == want, || format!("case {case}: rank errors differ"))?;
        for (a, b) in [(1u64, 2u64), (3, 4), (9, 10)] {
            let alpha = a as f64 / b as f64;
            let var = value_at_risk(&errors, alpha).unwrap();
            let want_var = var_by_enumeration(&errors, a, b);
            ensure(var == want_var, || format!("case {case}: VaR {var} vs {want_var}"))?;
            let tail: Vec<f64> = errors.iter().copied().filter(|&e| e >= want_var).collect();
            let want_cvar = tail.iter().sum::<f64>() / tail.len() as f64;
            let cvar = conditional_value_at_risk(&errors, alpha).unwrap();
            ensure(cvar == want_cvar, || format!("case {case}: CVaR {cvar} vs {want_cvar}"))?;
        }
    }
    Ok(format!("KL round trip max err {worst:.1e}; long tail 500 -> 5; MCC 5/12; VaR/CVaR exact on 20 cases"))
}

// ---- 11: determinism ---------------------------------------------------

fn criterion_11() -> Check {
    let dir = std::env::temp_dir().join(format!("klrs-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let toy = dir.join("toy.csv");
    let toy_s = toy.to_str().unwrap().to_string();
    let runs: Vec<Vec<String>> = vec![
        vec!["toy".into(), "--seed".into(), "5".into(), "--write-data".into(), toy_s.clone()],
        vec![
            "solve".into(), "--data".into(), toy_s.clone(), "--features".into(), "x0,x1".into(),
            "--tau".into(), "1.2".into(), "--batch-size".into(), "16".into(), "--seed".into(), "9".into(),
        ],
        vec![
            "hsolve".into(), "--data".into(), toy_s.clone(), "--features".into(), "x0,x1".into(),
            "--group".into(), "group".into(), "--tau".into(), "1.5".into(), "--sgd-steps".into(), "300".into(),
        ],
        vec!["guarantees".into(), "--n".into(), "200".into(), "--delta".into(), "0.05".into(), "--p".into(), "0.2,0.3,0.5".into()],
        vec!["fairpca".into(), "--seed".into(), "2".into(), "--steps".into(), "200".into()],
    ];
    for args in &runs {
        let exec = || {
            Command::new(env!("CARGO_BIN_EXE_klrs"))
                .args(args)
                .output()
                .map_err(|e| e.to_string())
        };
        let (a, b) = (exec()?, exec()?);
        ensure(a.status.success(), || format!("`klrs {}` failed: {}", args.join(" "), String::from_utf8_lossy(&a.stderr)))?;
        ensure(a.stdout == b.stdout, || format!("`klrs {}` output differs between runs", args.join(" ")))?;
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(format!("{} commands, byte-identical reports", runs.len()))
}

struct Outcome {
    id: usize,
    name: &'static str,
    result: Check,
    elapsed: Duration,
    budget: Duration,
}

fn timed(id: usize, name: &'static str, budget_s: u64, f: impl FnOnce() -> Check) -> Outcome {
    let start = Instant::now();
    let result = f();
    Outcome {
        id,
        name,
        result,
        elapsed: start.elapsed(),
        budget: Duration::from_secs(budget_s),
    }
}

fn main() -> ExitCode {
    let mut solved = Vec::new();
    let mut outcomes = vec![
        timed(1, "dual equivalence", 10, criterion_1),
        timed(2, "monotonicity and limits", 5, criterion_2),
        timed(3, "gradient checks", 5, criterion_3),
        timed(4, "bisection vs fine scan", 30, || criterion_4(&mut solved)),
        timed(6, "hierarchical consistency", 60, || criterion_6(&mut solved)),
        timed(7, "guarantee calculators", 60, criterion_7),
        timed(8, "toy trends", 60, || criterion_8(&mut solved)),
        timed(9, "fair PCA trend", 60, criterion_9),
        timed(10, "generators and metrics", 60, criterion_10),
        timed(11, "determinism", 120, criterion_11),
    ];
    // the tail bound is checked on every feasible solve gathered above
    outcomes.push(timed(5, "tail bound", 5, || criterion_5(&solved)));
    outcomes.sort_by_key(|o| o.id);

    let mut failed = 0;
    for o in &outcomes {
        let over = o.elapsed > o.budget;
        let (tag, detail) = match (&o.result, over) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("{d}; over budget {:?}", o.budget)),
            (Err(e), _) => ("FAIL", e.clone()),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!("[{tag}] {}: {} ({detail}; {:.2} s)", o.id, o.name, o.elapsed.as_secs_f64());
    }
    println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
