//! Picking the loss target from ERM loss statistics.

use alloc::format;

use crate::error::{Error, Result};
use crate::tilt::LossVector;

/// Summary of the per-sample losses at the ERM solution.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ErmStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub var: f64,
}

impl ErmStats {
    pub fn from_losses(lv: &LossVector) -> Self {
        Self {
            mean: lv.mean(),
            min: lv.min(),
            max: lv.max(),
            var: lv.variance(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", tag = "strategy", content = "a"))]
pub enum TauStrategy {
    /// `a * E0` with `a >= 1`.
    ScaleErm(f64),
    /// `a * max + (1 - a) * min` with `a` in `[0, 1]`; must not fall below `E0`.
    MinmaxMix(f64),
    /// `mean + a * var` with `a >= 0`.
    MeanPlusVar(f64),
}

pub fn select_tau(strategy: TauStrategy, stats: &ErmStats) -> Result<f64> {
    match strategy {
        TauStrategy::ScaleErm(a) if a >= 1.0 => Ok(a * stats.mean),
        TauStrategy::ScaleErm(a) => Err(Error::InvalidConfig(format!("scale_erm needs a >= 1, got {a}"))),
        TauStrategy::MinmaxMix(a) if (0.0..=1.0).contains(&a) => {
            let tau = a * stats.max + (1.0 - a) * stats.min;
            if tau < stats.mean {
                return Err(Error::InfeasibleTarget {
                    tau,
                    reason: format!("below the ERM loss {}; increase a", stats.mean),
                });
            }
            Ok(tau)
        }
        TauStrategy::MinmaxMix(a) => Err(Error::InvalidConfig(format!("minmax_mix needs a in [0, 1], got {a}"))),
        TauStrategy::MeanPlusVar(a) if a >= 0.0 => Ok(stats.mean + a * stats.var),
        TauStrategy::MeanPlusVar(a) => Err(Error::InvalidConfig(format!("mean_plus_var needs a >= 0, got {a}"))),
    }
}
