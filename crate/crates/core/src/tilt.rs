//! Tilted risk and the quantities derived from it.
//!
//! Every exp/log aggregation is max-shifted: for losses `l_i` and tilt
//! `lambda`, the only exponentials evaluated are `exp((l_i - l_max) / lambda)`,
//! which lie in `[0, 1]`. Inputs with `|l_i| / lambda` up to about `1e300` are
//! handled without overflow; the surrogate `exp((l - tau) / lambda)` itself is
//! returned as `+inf` when it genuinely exceeds `f64::MAX`.

use alloc::format;
use alloc::vec::Vec;


use crate::error::{check_lambda, Error, Result};

/// Absolute tolerance on the total mass of a [`DiscreteDistribution`].
pub const DISTRIBUTION_SUM_TOL: f64 = 1e-12;

/// Probability vector over a finite support.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DiscreteDistribution {
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("distribution"));
        }
        if let Some(i) = probs.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidDistribution(format!(
                "entry {i} is {} (must be finite and nonnegative)",
                probs[i]
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > DISTRIBUTION_SUM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {total}, not 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative weights with a positive total.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {total}"
            )));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("distribution"));
        }
        Ok(Self {
            probs: alloc::vec![1.0 / n as f64; n],
        })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }
}

/// Per-sample losses with optional sample weights (uniform when absent).
#[derive(Debug, Clone, PartialEq)]
pub struct LossVector {
    losses: Vec<f64>,
    weights: Option<DiscreteDistribution>,
}

impl LossVector {
    pub fn new(losses: Vec<f64>) -> Result<Self> {
        if losses.is_empty() {
            return Err(Error::Empty("losses"));
        }
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("losses"));
        }
        Ok(Self {
            losses,
            weights: None,
        })
    }

    pub fn with_weights(losses: Vec<f64>, weights: DiscreteDistribution) -> Result<Self> {
        let mut lv = Self::new(losses)?;
        if weights.len() != lv.losses.len() {
            return Err(Error::LengthMismatch {
                expected: lv.losses.len(),
                found: weights.len(),
            });
        }
        lv.weights = Some(weights);
        Ok(lv)
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn weights(&self) -> Option<&DiscreteDistribution> {
        self.weights.as_ref()
    }

    /// `(weight, loss)` pairs in sample order.
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let uniform = 1.0 / self.losses.len() as f64;
        self.losses.iter().enumerate().map(move |(i, &l)| {
            let w = self.weights.as_ref().map_or(uniform, |d| d.probs[i]);
            (w, l)
        })
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(w, l)| w * l).sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.iter().map(|(w, l)| w * (l - mean) * (l - mean)).sum()
    }

    /// Largest loss among samples with positive weight.
    pub fn max(&self) -> f64 {
        self.iter()
            .filter(|(w, _)| *w > 0.0)
            .map(|(_, l)| l)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.iter()
            .filter(|(w, _)| *w > 0.0)
            .map(|(_, l)| l)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Fragility `lambda` together with the target `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltConfig {
    lambda: f64,
    tau: f64,
}

impl TiltConfig {
    pub fn new(lambda: f64, tau: f64) -> Result<Self> {
        check_lambda(lambda)?;
        if !tau.is_finite() {
            return Err(Error::NonFinite("tau"));
        }
        Ok(Self { lambda, tau })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// `lambda * log E_w[exp(l / lambda)]`, the 1/lambda-tilted loss.
///
/// Evaluated as `l_max + lambda * ln_1p(E_w[expm1((l - l_max) / lambda)])`,
/// which stays accurate both for tiny `lambda` (max-dominated) and huge
/// `lambda` (mean-dominated). The result is clamped into
/// `[weighted mean, max]`, the interval it provably lies in.
pub fn tilted_risk(lv: &LossVector, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(tilted_risk_unchecked(lv, lambda))
}

pub(crate) fn tilted_risk_unchecked(lv: &LossVector, lambda: f64) -> f64 {
    let max = lv.max();
    let excess: f64 = lv
        .iter()
        .filter(|(w, _)| *w > 0.0)
        .map(|(w, l)| w * ((l - max) / lambda).exp_m1())
        .sum();
    let raw = max + lambda * excess.max(-1.0).ln_1p();
    raw.min(max).max(lv.mean())
}

/// Natural log of the surrogate mean, `log E_w[exp((l - tau) / lambda)]`.
///
/// Equals `(tilted_risk - tau) / lambda`; the surrogate mean is at most one
/// exactly when this is at most zero.
pub fn log_surrogate_mean(lv: &LossVector, cfg: TiltConfig) -> f64 {
    (tilted_risk_unchecked(lv, cfg.lambda) - cfg.tau) / cfg.lambda
}

/// Per-sample normalized surrogate `exp((l_i - tau) / lambda)`.
pub fn normalized_surrogate(lv: &LossVector, cfg: TiltConfig) -> Vec<f64> {
    lv.losses
        .iter()
        .map(|l| ((l - cfg.tau) / cfg.lambda).exp())
        .collect()
}

/// Worst-case reweighting `w_i exp(l_i / lambda) / sum_j w_j exp(l_j / lambda)`.
pub fn worst_case_weights(lv: &LossVector, lambda: f64) -> Result<DiscreteDistribution> {
    check_lambda(lambda)?;
    let max = lv.max();
    let mut weights: Vec<f64> = lv
        .iter()
        .map(|(w, l)| if w > 0.0 { w * ((l - max) / lambda).exp() } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    renormalize(&mut weights);
    Ok(DiscreteDistribution { probs: weights })
}

/// Large-lambda expansion `E[l] + Var[l] / (2 lambda)`.
pub fn mean_variance_approx(lv: &LossVector, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(lv.mean() + lv.variance() / (2.0 * lambda))
}

/// `KL(q || p) = sum_{q_i > 0} q_i ln(q_i / p_i)`.
pub fn kl_divergence(q: &DiscreteDistribution, p: &DiscreteDistribution) -> Result<f64> {
    if q.len() != p.len() {
        return Err(Error::LengthMismatch {
            expected: q.len(),
            found: p.len(),
        });
    }
    let mut kl = 0.0;
    for (i, (&qi, &pi)) in q.probs.iter().zip(&p.probs).enumerate() {
        if qi == 0.0 {
            continue;
        }
        if pi == 0.0 {
            return Err(Error::AbsoluteContinuity { index: i });
        }
        kl += qi * (qi / pi).ln();
    }
    Ok(kl.max(0.0))
}

/// Add-one smoothing `(N_k + 1) / (N + K)` of category counts.
pub fn laplace_smooth(counts: &[u64]) -> Result<DiscreteDistribution> {
    if counts.is_empty() {
        return Err(Error::Empty("counts"));
    }
    let total = counts.iter().sum::<u64>() as f64 + counts.len() as f64;
    let mut probs: Vec<f64> = counts.iter().map(|&c| (c as f64 + 1.0) / total).collect();
    renormalize(&mut probs);
    Ok(DiscreteDistribution { probs })
}

// Pushes the rounding residue of a normalization into the largest entry.
fn renormalize(probs: &mut [f64]) {
    let total: f64 = probs.iter().sum();
    if let Some(big) = probs
        .iter_mut()
        .max_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal))
    {
        *big += 1.0 - total;
    }
}
