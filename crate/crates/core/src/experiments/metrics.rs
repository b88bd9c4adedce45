//! Binary classification metrics and pairwise ranking-error risk measures.

use alloc::vec::Vec;


use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[cfg_attr(feature = "serde", serde(rename = "fn"))]
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionCounts {
    /// A score at or above `threshold` predicts the positive class (label 1).
    pub fn from_scores(scores: &[f64], labels: &[i64], threshold: f64) -> Result<Self> {
        check_inputs(scores, labels)?;
        let mut c = Self::default();
        for (&s, &l) in scores.iter().zip(labels) {
            match (s >= threshold, l == 1) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// Recall on positives.
    pub fn acc_pos(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Recall on negatives.
    pub fn acc_neg(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    /// Matthews correlation; 0 when any margin is empty.
    pub fn mcc(&self) -> f64 {
        let (tp, tn, fp, fn_) = (self.tp as f64, self.tn as f64, self.fp as f64, self.fn_ as f64);
        let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
        if den == 0.0 {
            return 0.0;
        }
        ((tp * tn - fp * fn_) / den.sqrt()).clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub acc: f64,
    pub acc_pos: f64,
    pub acc_neg: f64,
    pub f1: f64,
    pub mcc: f64,
    pub alpha: f64,
    pub rank_error_var: f64,
    pub rank_error_cvar: f64,
}

fn check_inputs(scores: &[f64], labels: &[i64]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            found: scores.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::Empty("scores"));
    }
    if labels.iter().any(|&l| l != 0 && l != 1) {
        return Err(Error::Domain("binary metrics need labels in {0, 1}".into()));
    }
    Ok(())
}

/// `h(x-) - h(x+)` for every (negative, positive) pair; positive values are
/// misorderings.
pub fn rank_errors(scores: &[f64], labels: &[i64]) -> Result<Vec<f64>> {
    check_inputs(scores, labels)?;
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l == 0).map(|(&s, _)| s).collect();
    if pos.is_empty() {
        return Err(Error::MissingClass("no positive samples for ranking error"));
    }
    if neg.is_empty() {
        return Err(Error::MissingClass("no negative samples for ranking error"));
    }
    Ok(neg.iter().flat_map(|n| pos.iter().map(move |p| n - p)).collect())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(alloc::format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Lower `alpha`-quantile: the smallest value whose empirical CDF is at
/// least `alpha`.
pub fn value_at_risk(values: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if values.is_empty() {
        return Err(Error::Empty("values"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let k = ((alpha * n - 1e-9).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[k - 1])
}

/// Mean of the values at or above [`value_at_risk`].
pub fn conditional_value_at_risk(values: &[f64], alpha: f64) -> Result<f64> {
    let var = value_at_risk(values, alpha)?;
    let tail: Vec<f64> = values.iter().copied().filter(|&v| v >= var).collect();
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

pub fn metrics_from_scores(scores: &[f64], labels: &[i64], threshold: f64, alpha: f64) -> Result<MetricsReport> {
    check_alpha(alpha)?;
    let counts = ConfusionCounts::from_scores(scores, labels, threshold)?;
    let errors = rank_errors(scores, labels)?;
    Ok(MetricsReport {
        counts,
        acc: counts.accuracy(),
        acc_pos: counts.acc_pos(),
        acc_neg: counts.acc_neg(),
        f1: counts.f1(),
        mcc: counts.mcc(),
        alpha,
        rank_error_var: value_at_risk(&errors, alpha)?,
        rank_error_cvar: conditional_value_at_risk(&errors, alpha)?,
    })
}
