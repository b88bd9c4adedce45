//! Confidence calculators for KL ambiguity sets: the tail bound on a feasible
//! solution, chi-squared asymptotics, a Chernoff lower bound, the
//! finite-sample radius under Laplace smoothing, and Monte-Carlo checks.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::error::{check_lambda, Error, Result};
use crate::rng::stream_rng;
use crate::tilt::{kl_divergence, laplace_smooth, DiscreteDistribution};

const GAMMA_REL_TOL: f64 = 1e-14;
const GAMMA_MIN_ITER: usize = 300;
/// Upper bound on the default number of bins scanned by the continuous bound.
pub const K_CAP_LIMIT: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GuaranteeKind {
    Tail,
    AsymptoticDiscrete,
    AsymptoticContinuous,
    Chernoff,
    FiniteSample,
}

/// One calculator result together with the inputs that produced it.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GuaranteeReport {
    pub kind: GuaranteeKind,
    pub inputs: BTreeMap<String, f64>,
    /// A probability for every kind except `FiniteSample`, which is a radius.
    pub value: f64,
    /// Set when the bound carries no information (Chernoff with `m <= 1`).
    pub vacuous: bool,
}

impl GuaranteeReport {
    fn new(kind: GuaranteeKind, inputs: &[(&str, f64)], value: f64) -> Self {
        Self {
            kind,
            inputs: inputs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            value,
            vacuous: false,
        }
    }
}

/// Empirical probability bound `P(l >= tau + alpha) <= exp(-alpha / lambda)`
/// for any theta whose tilted risk at `lambda` is at most `tau`.
pub fn tail_bound(lambda: f64, alpha: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if !(alpha >= 0.0) {
        return Err(Error::Domain(format!("alpha must be nonnegative, got {alpha}")));
    }
    Ok((-alpha / lambda).exp().clamp(0.0, 1.0))
}

fn gamma_iterations(a: f64) -> usize {
    // near x = a both expansions need O(sqrt(a)) terms
    GAMMA_MIN_ITER + (10.0 * a.sqrt()).ceil() as usize
}

/// Regularized lower incomplete gamma `P(a, x)` by its power series.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..gamma_iterations(a) {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * GAMMA_REL_TOL {
            break;
        }
    }
    (sum.ln() - x + a * x.ln() - libm::lgamma(a)).exp()
}

/// Regularized upper incomplete gamma `Q(a, x)` by continued fraction
/// (modified Lentz).
fn gamma_q_fraction(a: f64, x: f64) -> f64 {
    let tiny = f64::MIN_POSITIVE / f64::EPSILON;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=gamma_iterations(a) {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < GAMMA_REL_TOL {
            break;
        }
    }
    (h.ln() - x + a * x.ln() - libm::lgamma(a)).exp()
}

/// CDF of the chi-squared distribution with `dof` degrees of freedom.
pub fn chi2_cdf(dof: usize, y: f64) -> Result<f64> {
    if dof == 0 {
        return Err(Error::Domain("chi-squared needs dof >= 1".into()));
    }
    if y.is_nan() || y < 0.0 {
        return Err(Error::Domain(format!("chi-squared argument must be nonnegative, got {y}")));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    if y.is_infinite() {
        return Ok(1.0);
    }
    let (a, x) = (0.5 * dof as f64, 0.5 * y);
    let p = if y < dof as f64 + 1.0 {
        gamma_p_series(a, x)
    } else {
        1.0 - gamma_q_fraction(a, x)
    };
    Ok(p.clamp(0.0, 1.0))
}

fn check_counts(k: usize, n: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::Domain(format!("need K >= 2 support points, got {k}")));
    }
    if n == 0 {
        return Err(Error::Domain("need N >= 1 samples".into()));
    }
    Ok(())
}

fn check_radius(r: f64) -> Result<()> {
    if !(r >= 0.0) || r.is_infinite() {
        return Err(Error::Domain(format!("radius must be finite and nonnegative, got {r}")));
    }
    Ok(())
}

/// Asymptotic probability that the true distribution on `k` points lies in
/// the KL ball of radius `r` around the empirical one from `n` samples.
pub fn asymptotic_discrete_confidence(k: usize, n: usize, r: f64) -> Result<f64> {
    check_counts(k, n)?;
    check_radius(r)?;
    chi2_cdf(k - 1, 2.0 * n as f64 * r)
}

/// `10 * ceil(N C / (r lambda))`, at most [`K_CAP_LIMIT`].
pub fn default_k_cap(c: f64, lambda: f64, n: usize, r: f64) -> usize {
    let raw = 10.0 * (n as f64 * c / (r * lambda)).ceil();
    if raw.is_finite() && raw >= 2.0 {
        (raw as usize).min(K_CAP_LIMIT)
    } else if raw < 2.0 {
        2
    } else {
        K_CAP_LIMIT
    }
}

/// Continuous-distribution confidence: the maximum over bin counts
/// `K in [2, k_cap]` of `chi2_cdf(K - 1, max(0, 2Nr - 2NC / (K lambda)))`.
/// Returns the value and the maximizing `K` (smallest on ties).
pub fn asymptotic_continuous_confidence(c: f64, lambda: f64, n: usize, r: f64, k_cap: usize) -> Result<(f64, usize)> {
    check_lambda(lambda)?;
    check_counts(2, n)?;
    check_radius(r)?;
    if !(c > 0.0) || c.is_infinite() {
        return Err(Error::Domain(format!("C must be positive, got {c}")));
    }
    if k_cap < 2 {
        return Err(Error::Domain(format!("K cap must be at least 2, got {k_cap}")));
    }
    let nf = n as f64;
    let mut best = (f64::NEG_INFINITY, 2);
    for k in 2..=k_cap {
        let y = (2.0 * nf * r - 2.0 * nf * c / (k as f64 * lambda)).max(0.0);
        let v = chi2_cdf(k - 1, y)?;
        if v > best.0 {
            best = (v, k);
        }
    }
    Ok(best)
}

/// Chernoff lower bound `1 - (m e^(1-m))^((K-1)/2)` with `m = 2Nr / (K-1)`;
/// 0 when `m <= 1`, where the bound is vacuous.
pub fn chernoff_confidence(k: usize, n: usize, r: f64) -> Result<f64> {
    check_counts(k, n)?;
    check_radius(r)?;
    let dof = (k - 1) as f64;
    let m = 2.0 * n as f64 * r / dof;
    if m <= 1.0 {
        return Ok(0.0);
    }
    let log_tail = 0.5 * dof * (m.ln() + 1.0 - m);
    Ok((-log_tail.exp_m1()).clamp(0.0, 1.0))
}

/// Smallest `N` for which [`chernoff_confidence`] reaches `target`.
pub fn chernoff_min_samples(k: usize, r: f64, target: f64) -> Result<usize> {
    check_counts(k, 1)?;
    if !(r > 0.0) || r.is_infinite() {
        return Err(Error::Domain(format!("radius must be positive, got {r}")));
    }
    if !(0.0..1.0).contains(&target) {
        return Err(Error::Domain(format!("target confidence must lie in [0, 1), got {target}")));
    }
    let reaches = |n: usize| chernoff_confidence(k, n, r).map(|c| c >= target);
    let mut hi = 1usize;
    while !reaches(hi)? {
        hi = hi.checked_mul(2).ok_or_else(|| Error::Domain("sample size overflow".into()))?;
    }
    let mut lo = hi / 2;
    // invariant: lo fails (or is 0), hi reaches
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if reaches(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Radius guaranteeing coverage with probability `1 - delta` for the
/// Laplace-smoothed estimate from `n` samples on `k` points.
pub fn finite_sample_radius(k: usize, n: usize, delta: f64, expected_kl: f64) -> Result<f64> {
    check_counts(k, n)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(expected_kl >= 0.0) {
        return Err(Error::Domain(format!("expected KL must be nonnegative, got {expected_kl}")));
    }
    let (kf, nf) = (k as f64, n as f64);
    let log = (4.0 * kf / delta).ln();
    Ok(expected_kl + (6.0 * (kf * log.powi(5)).sqrt() + 311.0) / nf + 160.0 * kf / nf.powf(1.5))
}

fn empirical_counts<R: rand::Rng>(rng: &mut R, picker: &WeightedIndex<f64>, k: usize, n: usize) -> Vec<u64> {
    let mut counts = vec![0u64; k];
    for _ in 0..n {
        counts[picker.sample(rng)] += 1;
    }
    counts
}

fn picker(p: &DiscreteDistribution) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(p.probs()).map_err(|e| Error::InvalidDistribution(format!("{e}")))
}

/// Average of `KL(p || laplace_smooth(counts))` over `trials` multinomial
/// draws of size `n`. Trial `t` uses its own stream, so results do not depend
/// on evaluation order.
pub fn monte_carlo_expected_kl(p_true: &DiscreteDistribution, n: usize, trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::Domain("need at least one trial".into()));
    }
    let pick = picker(p_true)?;
    let mut total = 0.0;
    for t in 0..trials {
        let mut rng = stream_rng(seed, t as u64);
        let counts = empirical_counts(&mut rng, &pick, p_true.len(), n);
        total += kl_divergence(p_true, &laplace_smooth(&counts)?)?;
    }
    Ok(total / trials as f64)
}

/// Fraction of trials in which the raw empirical distribution from `n`
/// draws satisfies `KL(p || p_hat) <= r`. A trial whose empirical
/// distribution misses a support point has infinite divergence and counts
/// as a miss.
pub fn validate_asymptotic_coverage(
    p_true: &DiscreteDistribution,
    n: usize,
    r: f64,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if trials == 0 || n == 0 {
        return Err(Error::Domain("need at least one trial and one sample".into()));
    }
    check_radius(r)?;
    if p_true.probs().iter().any(|&p| p <= 0.0) {
        return Err(Error::Domain("coverage check needs a fully supported distribution".into()));
    }
    let pick = picker(p_true)?;
    let mut covered = 0usize;
    for t in 0..trials {
        let mut rng = stream_rng(seed, t as u64);
        let counts = empirical_counts(&mut rng, &pick, p_true.len(), n);
        let weights: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        let p_hat = DiscreteDistribution::from_weights(&weights)?;
        match kl_divergence(p_true, &p_hat) {
            Ok(kl) if kl <= r => covered += 1,
            Ok(_) | Err(Error::AbsoluteContinuity { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(covered as f64 / trials as f64)
}

pub fn tail_report(lambda: f64, alpha: f64) -> Result<GuaranteeReport> {
    let v = tail_bound(lambda, alpha)?;
    Ok(GuaranteeReport::new(GuaranteeKind::Tail, &[("lambda", lambda), ("alpha", alpha)], v))
}

pub fn asymptotic_discrete_report(k: usize, n: usize, r: f64) -> Result<GuaranteeReport> {
    let v = asymptotic_discrete_confidence(k, n, r)?;
    Ok(GuaranteeReport::new(
        GuaranteeKind::AsymptoticDiscrete,
        &[("K", k as f64), ("N", n as f64), ("r", r)],
        v,
    ))
}

/// Continuous bound with the default cap unless `k_cap` is given; the
/// maximizing `K` is reported as the `K_argmax` input.
pub fn asymptotic_continuous_report(c: f64, lambda: f64, n: usize, r: f64, k_cap: Option<usize>) -> Result<GuaranteeReport> {
    let cap = k_cap.unwrap_or_else(|| default_k_cap(c, lambda, n, r));
    let (v, k) = asymptotic_continuous_confidence(c, lambda, n, r, cap)?;
    Ok(GuaranteeReport::new(
        GuaranteeKind::AsymptoticContinuous,
        &[
            ("C", c),
            ("lambda", lambda),
            ("N", n as f64),
            ("r", r),
            ("K_cap", cap as f64),
            ("K_argmax", k as f64),
        ],
        v,
    ))
}

pub fn chernoff_report(k: usize, n: usize, r: f64) -> Result<GuaranteeReport> {
    let v = chernoff_confidence(k, n, r)?;
    let m = 2.0 * n as f64 * r / (k - 1) as f64;
    let mut report = GuaranteeReport::new(GuaranteeKind::Chernoff, &[("K", k as f64), ("N", n as f64), ("r", r), ("m", m)], v);
    report.vacuous = m <= 1.0;
    Ok(report)
}

pub fn finite_sample_report(k: usize, n: usize, delta: f64, expected_kl: f64) -> Result<GuaranteeReport> {
    let v = finite_sample_radius(k, n, delta, expected_kl)?;
    Ok(GuaranteeReport::new(
        GuaranteeKind::FiniteSample,
        &[("K", k as f64), ("N", n as f64), ("delta", delta), ("expected_kl", expected_kl)],
        v,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn tail_examples() {
        assert_eq!(tail_bound(0.3, 0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(tail_bound(0.5, 1.0).unwrap(), 0.135_335_283_236_613, epsilon = 1e-14);
        assert_eq!(tail_bound(0.5, f64::INFINITY).unwrap(), 0.0);
        assert!(tail_bound(0.5, -1.0).is_err());
        assert!(tail_bound(0.0, 1.0).is_err());
    }

    #[test]
    fn chi2_closed_forms() {
        assert_abs_diff_eq!(chi2_cdf(2, 5.991465).unwrap(), 0.95, epsilon = 1e-7);
        for y in [0.01, 0.5, 2.9, 3.0, 3.1, 10.0, 40.0] {
            assert_abs_diff_eq!(chi2_cdf(2, y).unwrap(), 1.0 - (-y / 2.0).exp(), epsilon = 1e-13);
            // dof 1: erf(sqrt(y/2))
            assert_abs_diff_eq!(chi2_cdf(1, y).unwrap(), libm::erf((y / 2.0).sqrt()), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(chi2_cdf(1, 3.841459).unwrap(), 0.95, epsilon = 1e-6);
        assert_abs_diff_eq!(chi2_cdf(1, 10.0).unwrap(), 0.998_434_597_741_997, epsilon = 1e-12);
        for dof in 1..12 {
            assert_eq!(chi2_cdf(dof, 0.0).unwrap(), 0.0);
            assert_eq!(chi2_cdf(dof, f64::INFINITY).unwrap(), 1.0);
        }
        assert!(chi2_cdf(0, 1.0).is_err());
        assert!(chi2_cdf(1, -1.0).is_err());
    }

    #[test]
    fn chi2_large_dof_near_mean() {
        // Wilson-Hilferty is accurate to ~1e-4 at this size
        for dof in [1_000usize, 50_000] {
            let k = dof as f64;
            let p = chi2_cdf(dof, k).unwrap();
            let z = (1.0 - (1.0 - 2.0 / (9.0 * k))) / (2.0 / (9.0 * k)).sqrt();
            let approx = 0.5 * libm::erfc(-z / core::f64::consts::SQRT_2);
            assert!((p - approx).abs() < 1e-3, "{dof}: {p} vs {approx}");
        }
    }

    #[test]
    fn discrete_examples() {
        assert_eq!(asymptotic_discrete_confidence(3, 50, 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(asymptotic_discrete_confidence(2, 100, 0.05).unwrap(), 0.998_434_597_741_997, epsilon = 1e-12);
        assert!(asymptotic_discrete_confidence(2, 100, 10.0).unwrap() > 1.0 - 1e-12);
        assert!(asymptotic_discrete_confidence(1, 100, 0.1).is_err());
    }

    #[test]
    fn chernoff_examples() {
        assert_abs_diff_eq!(chernoff_confidence(2, 100, 0.05).unwrap(), 0.964_870_268_420_2, epsilon = 1e-12);
        assert_eq!(chernoff_confidence(2, 10, 0.05).unwrap(), 0.0);
        assert!(chernoff_report(2, 10, 0.05).unwrap().vacuous);
        assert!(!chernoff_report(2, 100, 0.05).unwrap().vacuous);
        let n = chernoff_min_samples(2, 0.05, 0.9).unwrap();
        assert!(chernoff_confidence(2, n, 0.05).unwrap() >= 0.9);
        assert!(chernoff_confidence(2, n - 1, 0.05).unwrap() < 0.9);
    }

    #[test]
    fn continuous_examples() {
        // radius too small for every K
        let (v, _) = asymptotic_continuous_confidence(1.0, 1.0, 10, 0.01, 50).unwrap();
        assert_eq!(v, 0.0);
        // tiny C approaches the best discrete value, which is at K = 2
        let (v, k) = asymptotic_continuous_confidence(1e-12, 1.0, 100, 0.05, 30).unwrap();
        assert_eq!(k, 2);
        assert_abs_diff_eq!(v, asymptotic_discrete_confidence(2, 100, 0.05).unwrap(), epsilon = 1e-9);
        let r = asymptotic_continuous_report(1.0, 1.0, 200, 0.1, None).unwrap();
        assert_eq!(r.inputs["K_cap"], 20_000.0);
        assert!(r.value > 0.0 && r.value <= 1.0);
    }

    #[test]
    fn finite_sample_example() {
        let log = 160f64.ln();
        let want = 0.01 + (6.0 * (2.0 * log.powi(5)).sqrt() + 311.0) / 1000.0 + 320.0 / 1000f64.powf(1.5);
        let got = finite_sample_radius(2, 1000, 0.05, 0.01).unwrap();
        assert_abs_diff_eq!(got, want, epsilon = 1e-15);
        assert_abs_diff_eq!(got, 0.823_491_517_600_4, epsilon = 1e-9);
        assert!(finite_sample_radius(2, 10_000, 0.05, 0.01).unwrap() < got);
        assert!(finite_sample_radius(2, 1000, 0.0, 0.01).is_err());
        assert!(finite_sample_radius(2, 1000, 1.0, 0.01).is_err());
    }

    #[test]
    fn monte_carlo_examples() {
        let point = DiscreteDistribution::new(vec![1.0]).unwrap();
        assert_eq!(monte_carlo_expected_kl(&point, 7, 20, 1).unwrap(), 0.0);
        let fair = DiscreteDistribution::uniform(2).unwrap();
        let want = 0.5 * (0.5f64 / (2.0 / 3.0)).ln() + 0.5 * (0.5f64 / (1.0 / 3.0)).ln();
        assert_abs_diff_eq!(monte_carlo_expected_kl(&fair, 1, 50, 3).unwrap(), want, epsilon = 1e-15);
        assert_abs_diff_eq!(want, 0.058_891_517_828_2, epsilon = 1e-12);
        let a = monte_carlo_expected_kl(&fair, 40, 200, 9).unwrap();
        assert_eq!(a, monte_carlo_expected_kl(&fair, 40, 200, 9).unwrap());
    }

    #[test]
    fn coverage_examples() {
        let fair = DiscreteDistribution::uniform(2).unwrap();
        assert_eq!(validate_asymptotic_coverage(&fair, 20, 100.0, 100, 0).unwrap(), 1.0);
        let skew = DiscreteDistribution::new(vec![0.999, 0.001]).unwrap();
        // almost every sample of size 5 misses the rare point
        assert!(validate_asymptotic_coverage(&skew, 5, 100.0, 200, 0).unwrap() < 0.05);
    }
}
