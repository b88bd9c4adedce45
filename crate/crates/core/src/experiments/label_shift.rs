//! Binary label shift toward the positive (rare) class at a prescribed KL
//! divergence from the training proportions.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::models::Dataset;
use crate::rng::stream_rng;

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

/// `KL((q, 1-q) || (p, 1-p))`.
pub fn binary_kl(q: f64, p: f64) -> f64 {
    xlogy(q, p) + xlogy(1.0 - q, 1.0 - p)
}

/// Positive share `q > p` with `KL((q, 1-q) || (p, 1-p)) = target_kl`,
/// by bisection on `(p, 1]` run to floating-point resolution.
pub fn label_shift_proportions(train_pos_frac: f64, target_kl: f64) -> Result<f64> {
    let p = train_pos_frac;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("training positive share must lie in (0, 1), got {p}")));
    }
    if !(target_kl >= 0.0) {
        return Err(Error::Domain(format!("target divergence must be nonnegative, got {target_kl}")));
    }
    let max = -p.ln();
    if target_kl > max {
        return Err(Error::UnreachableDivergence { target: target_kl, max });
    }
    if target_kl == 0.0 {
        return Ok(p);
    }
    // binary_kl(., p) increases on [p, 1]
    let (mut lo, mut hi) = (p, 1.0);
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if binary_kl(mid, p) < target_kl {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let pick = if (binary_kl(lo, p) - target_kl).abs() <= (binary_kl(hi, p) - target_kl).abs() {
        lo
    } else {
        hi
    };
    Ok(pick)
}

/// Test set of `test_size` rows with `round(q * test_size)` positives (label
/// 1) and the rest negatives (label 0), drawn without replacement.
pub fn sample_label_shift_test(data: &Dataset, q: f64, test_size: usize, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("positive share must lie in [0, 1], got {q}")));
    }
    let labels = data.class_labels()?;
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    if pos.len() + neg.len() != labels.len() {
        return Err(Error::Domain("label shift needs labels in {0, 1}".into()));
    }
    let n_pos = (q * test_size as f64).round() as usize;
    let n_neg = test_size - n_pos;
    if n_pos > pos.len() || n_neg > neg.len() {
        return Err(Error::Domain(format!(
            "need {n_pos} positives and {n_neg} negatives, have {} and {}",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = stream_rng(seed, 1);
    let mut picked: Vec<usize> = sample(&mut rng, pos.len(), n_pos).into_iter().map(|i| pos[i]).collect();
    picked.extend(sample(&mut rng, neg.len(), n_neg).into_iter().map(|i| neg[i]));
    picked.sort_unstable();
    Ok(data.subset(&picked))
}

/// Share of label-1 rows.
pub fn positive_fraction(data: &Dataset) -> Result<f64> {
    let labels = data.class_labels()?;
    if labels.is_empty() {
        return Err(Error::Empty("labels"));
    }
    Ok(labels.iter().filter(|&&l| l == 1).count() as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use crate::linalg::Matrix;
    use crate::models::Labels;

    #[test]
    fn zero_target_keeps_share() {
        assert_eq!(label_shift_proportions(0.3, 0.0).unwrap(), 0.3);
    }

    #[test]
    fn round_trip() {
        for (p, t) in [(0.2, 0.1), (0.05, 0.5), (0.5, 0.01), (0.9, 0.1)] {
            let q = label_shift_proportions(p, t).unwrap();
            assert!(q > p);
            assert!((binary_kl(q, p) - t).abs() < 1e-9, "{p} {t}");
        }
    }

    #[test]
    fn boundary_and_unreachable() {
        let q = label_shift_proportions(0.5, core::f64::consts::LN_2 - 1e-9).unwrap();
        assert!(q > 0.9999);
        assert!(matches!(
            label_shift_proportions(0.5, 0.7),
            Err(Error::UnreachableDivergence { .. })
        ));
        assert!(label_shift_proportions(0.0, 0.1).is_err());
    }

    #[test]
    fn test_sampler_hits_share() {
        let n = 200;
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let labels: Vec<i64> = (0..n).map(|i| i64::from(i % 5 == 0)).collect();
        let d = Dataset::new(Matrix::from_rows(&rows).unwrap(), Some(Labels::Class(labels)), None).unwrap();
        let p = positive_fraction(&d).unwrap();
        assert_eq!(p, 0.2);
        let same = sample_label_shift_test(&d, label_shift_proportions(p, 0.0).unwrap(), 50, 3).unwrap();
        assert_eq!(positive_fraction(&same).unwrap(), 0.2);
        let q = label_shift_proportions(p, 0.05).unwrap();
        let shifted = sample_label_shift_test(&d, q, 50, 3).unwrap();
        assert_eq!(shifted.len(), 50);
        assert!(positive_fraction(&shifted).unwrap() > 0.2);
        assert!(sample_label_shift_test(&d, 1.0, 50, 3).is_err());
    }
}
