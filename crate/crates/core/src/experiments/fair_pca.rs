//! Fair PCA: a rank-d projection whose per-group excess reconstruction
//! losses satisfy a KL-RS target over the group distribution.

use alloc::format;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::hierarchical::group_klrs_risk;
use crate::linalg::{symmetric_eigh, thin_qr, Matrix};
use crate::models::PcaGroup;
use crate::rng::stream_rng;
use crate::solver::{bisect_lambda, LambdaSearch, TraceEntry};
use crate::tilt::DiscreteDistribution;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FairPcaConfig {
    pub epsilon: f64,
    pub lambda_init: f64,
    pub max_doublings: u32,
    /// Projected-gradient iterations per feasibility check.
    pub steps: usize,
    /// Initial step length along the normalized gradient; decays as
    /// `1 / (1 + t / (steps / 10))`.
    pub step_size: f64,
}

impl Default for FairPcaConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            lambda_init: 1.0,
            max_doublings: 40,
            steps: 500,
            step_size: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairPcaResult {
    /// `n x d` with orthonormal columns.
    pub u: Matrix,
    pub group_losses: Vec<f64>,
    pub lambda_star: f64,
    pub tau: f64,
    /// Per-group losses of standard PCA.
    pub baseline_losses: Vec<f64>,
    pub group_weights: DiscreteDistribution,
    pub trace: Vec<TraceEntry>,
}

impl FairPcaResult {
    /// `max - min` of the per-group losses.
    pub fn loss_gap(&self) -> f64 {
        spread(&self.group_losses)
    }

    /// Row-weighted average loss.
    pub fn average_loss(&self) -> f64 {
        self.group_losses.iter().zip(self.group_weights.probs()).map(|(l, w)| l * w).sum()
    }
}

fn spread(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

struct Problem {
    groups: Vec<PcaGroup>,
    weights: DiscreteDistribution,
    tau: f64,
}

impl Problem {
    fn losses(&self, u: &Matrix) -> Vec<f64> {
        self.groups.iter().map(|g| g.loss(u)).collect()
    }

    fn risk(&self, u: &Matrix, lambda: f64) -> f64 {
        group_klrs_risk(&self.losses(u), lambda, &self.weights).unwrap_or(f64::INFINITY)
    }

    /// Projected gradient on `E_g[exp((l_g(U) - tau) / lambda)]` with a QR
    /// retraction, stopping once the tilted risk reaches `tau`.
    fn descend(&self, u0: &Matrix, lambda: f64, cfg: &FairPcaConfig) -> Result<(Matrix, f64)> {
        let mut u = u0.clone();
        let t0 = (cfg.steps as f64 / 10.0).max(1.0);
        for t in 0..cfg.steps {
            let losses = self.losses(&u);
            let risk = group_klrs_risk(&losses, lambda, &self.weights)?;
            if risk <= self.tau {
                return Ok((u, risk));
            }
            let exps: Vec<f64> = losses
                .iter()
                .zip(self.weights.probs())
                .map(|(l, w)| if *w > 0.0 { w.ln() + l / lambda } else { f64::NEG_INFINITY })
                .collect();
            let top = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut grad = Matrix::zeros(u.rows(), u.cols());
            for (g, e) in self.groups.iter().zip(&exps) {
                let s = (e - top).exp();
                if s > 0.0 {
                    grad = grad.sub(&g.grad(&u).scale(-s));
                }
            }
            let norm = grad.frobenius_sq().sqrt();
            if !(norm > 0.0) {
                break;
            }
            let step = cfg.step_size / (1.0 + t as f64 / t0);
            u = thin_qr(&u.sub(&grad.scale(step / norm)))?;
        }
        let risk = self.risk(&u, lambda);
        Ok((u, risk))
    }
}

fn pooled_gram(groups: &[Matrix]) -> Matrix {
    let mut total = groups[0].gram();
    for g in &groups[1..] {
        total = total.sub(&g.gram().scale(-1.0));
    }
    total
}

/// Runs standard PCA, sets `tau = r * max + (1 - r) * min` of its per-group
/// losses, then finds the smallest `lambda` at which some projection has
/// group tilted risk at most `tau` (groups weighted by row share).
pub fn fair_pca_run(groups: &[Matrix], d: usize, r: f64, cfg: &FairPcaConfig) -> Result<FairPcaResult> {
    if groups.is_empty() {
        return Err(Error::Empty("groups"));
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Domain(format!("r must lie in [0, 1], got {r}")));
    }
    if !(cfg.epsilon > 0.0 && cfg.lambda_init > 0.0 && cfg.step_size > 0.0) || cfg.steps == 0 {
        return Err(Error::InvalidConfig("fair PCA needs positive epsilon, lambda_init, step_size and steps".into()));
    }
    let n = groups[0].cols();
    if let Some(g) = groups.iter().find(|g| g.cols() != n) {
        return Err(Error::LengthMismatch { expected: n, found: g.cols() });
    }
    let pca_groups = groups.iter().map(|g| PcaGroup::new(g, d)).collect::<Result<Vec<_>>>()?;
    let eig = symmetric_eigh(&pooled_gram(groups))?;
    if !(eig.values[d - 1] > 1e-12 * eig.values[0].abs().max(f64::MIN_POSITIVE)) {
        return Err(Error::Domain(format!("pooled data has rank below d = {d}")));
    }
    let u0 = eig.vectors.leading_cols(d);
    let sizes: Vec<f64> = groups.iter().map(|g| g.rows() as f64).collect();
    let weights = DiscreteDistribution::from_weights(&sizes)?;
    let baseline_losses: Vec<f64> = pca_groups.iter().map(|g| g.loss(&u0)).collect();
    let hi = baseline_losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = baseline_losses.iter().copied().fold(f64::INFINITY, f64::min);
    let tau = r * hi + (1.0 - r) * lo;
    let problem = Problem {
        groups: pca_groups,
        weights: weights.clone(),
        tau,
    };

    let search = LambdaSearch {
        tau,
        epsilon: cfg.epsilon,
        lambda_init: cfg.lambda_init,
        max_doublings: cfg.max_doublings,
    };
    let mut warm = u0.clone();
    let found = bisect_lambda(search, |lambda| {
        let (u, risk) = problem.descend(&warm, lambda, cfg)?;
        let ok = risk <= tau;
        if ok {
            warm = u.clone();
        }
        Ok((ok, risk, u))
    })?;
    let u = found.witness;
    Ok(FairPcaResult {
        group_losses: problem.losses(&u),
        u,
        lambda_star: found.lambda,
        tau,
        baseline_losses,
        group_weights: weights,
        trace: found.trace,
    })
}

/// Two groups in `dim >= 2` dimensions whose dominant directions are the
/// orthogonal axes `e_0` (first group) and `e_1` (second group): standard
/// deviation 3 along the dominant axis, 0.5 elsewhere.
pub fn gen_two_group_pca(sizes: [usize; 2], dim: usize, seed: u64) -> Result<Vec<Matrix>> {
    if dim < 2 {
        return Err(Error::Domain(format!("need dim >= 2, got {dim}")));
    }
    let mut rng = stream_rng(seed, 3);
    let wide = Normal::new(0.0, 3.0).expect("valid");
    let narrow = Normal::new(0.0, 0.5).expect("valid");
    sizes
        .iter()
        .enumerate()
        .map(|(g, &rows)| {
            let data = (0..rows * dim)
                .map(|k| if k % dim == g { wide.sample(&mut rng) } else { narrow.sample(&mut rng) })
                .collect();
            Matrix::from_vec(rows, dim, data)
        })
        .collect()
}
