//! Loss models with analytic gradients, and the datasets they run on.

use alloc::vec;
use alloc::vec::Vec;


use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigh, Matrix};
use crate::tilt::LossVector;

/// Model parameters `theta`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        Ok(Self(theta))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Integer class labels or real regression targets.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Labels {
    Class(Vec<i64>),
    Target(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Class(c) => c.len(),
            Labels::Target(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, i: usize) -> f64 {
        match self {
            Labels::Class(c) => c[i] as f64,
            Labels::Target(t) => t[i],
        }
    }
}

/// One observation handed to a [`LossModel`]. `y` is 0 for unlabeled data.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub x: &'a [f64],
    pub y: f64,
}

/// `N x F` features with optional labels and group ids.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    features: Matrix,
    labels: Option<Labels>,
    group_ids: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Option<Labels>, group_ids: Option<Vec<usize>>) -> Result<Self> {
        let n = features.rows();
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::LengthMismatch { expected: n, found: l.len() });
            }
            if let Labels::Target(t) = l {
                if t.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("labels"));
                }
            }
        }
        if let Some(g) = &group_ids {
            if g.len() != n {
                return Err(Error::LengthMismatch { expected: n, found: g.len() });
            }
        }
        if features.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        Ok(Self {
            features,
            labels,
            group_ids,
        })
    }

    /// Unlabeled, ungrouped data from feature rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?, None, None)
    }

    /// θ-free data for [`FixedLoss`]: one feature holding each sample's loss.
    pub fn fixed_losses(losses: &[f64]) -> Result<Self> {
        Self::new(Matrix::from_vec(losses.len(), 1, losses.to_vec())?, None, None)
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }

    pub fn group_ids(&self) -> Option<&[usize]> {
        self.group_ids.as_deref()
    }

    pub fn class_labels(&self) -> Result<&[i64]> {
        match &self.labels {
            Some(Labels::Class(c)) => Ok(c),
            _ => Err(Error::MissingClass("dataset has no integer class labels")),
        }
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        Sample {
            x: self.features.row(i),
            y: self.labels.as_ref().map_or(0.0, |l| l.value(i)),
        }
    }

    /// Rows at `indices`, in that order, with labels and groups carried along.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let width = self.width();
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
        }
        let labels = self.labels.as_ref().map(|l| match l {
            Labels::Class(c) => Labels::Class(indices.iter().map(|&i| c[i]).collect()),
            Labels::Target(t) => Labels::Target(indices.iter().map(|&i| t[i]).collect()),
        });
        let group_ids = self
            .group_ids
            .as_ref()
            .map(|g| indices.iter().map(|&i| g[i]).collect());
        Self {
            features: Matrix::from_vec(indices.len(), width, data).expect("subset shape"),
            labels,
            group_ids,
        }
    }
}

/// A loss `l(theta, z)` with its gradient in `theta`.
pub trait LossModel {
    fn dim(&self) -> usize;

    fn loss(&self, theta: &[f64], sample: Sample<'_>) -> f64;

    /// Adds `scale * grad l(theta, sample)` into `out`.
    fn add_grad(&self, theta: &[f64], sample: Sample<'_>, scale: f64, out: &mut [f64]);

    /// Rejects datasets the model cannot consume.
    fn check(&self, data: &Dataset) -> Result<()>;

    fn grad(&self, theta: &[f64], sample: Sample<'_>) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.add_grad(theta, sample, 1.0, &mut g);
        g
    }

    fn initial_parameters(&self) -> ParameterVector {
        ParameterVector::zeros(self.dim())
    }
}

/// Per-sample losses of `model` at `theta` over the whole dataset.
pub fn loss_vector<M: LossModel + ?Sized>(model: &M, theta: &[f64], data: &Dataset) -> Result<LossVector> {
    LossVector::new((0..data.len()).map(|i| model.loss(theta, data.sample(i))).collect())
}

fn expect_width(data: &Dataset, width: usize) -> Result<()> {
    if data.width() != width {
        return Err(Error::LengthMismatch {
            expected: width,
            found: data.width(),
        });
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `l(theta, z) = ||theta - z||^2 / 2`.
#[derive(Debug, Clone, Copy)]
pub struct PointEstimation {
    pub dim: usize,
}

impl LossModel for PointEstimation {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, theta: &[f64], s: Sample<'_>) -> f64 {
        0.5 * theta.iter().zip(s.x).map(|(t, z)| (t - z) * (t - z)).sum::<f64>()
    }

    fn add_grad(&self, theta: &[f64], s: Sample<'_>, scale: f64, out: &mut [f64]) {
        for ((o, t), z) in out.iter_mut().zip(theta).zip(s.x) {
            *o += scale * (t - z);
        }
    }

    fn check(&self, data: &Dataset) -> Result<()> {
        expect_width(data, self.dim)
    }
}

pub fn point_estimation_loss(theta: &[f64], z: &[f64]) -> Result<f64> {
    if theta.len() != z.len() {
        return Err(Error::LengthMismatch {
            expected: theta.len(),
            found: z.len(),
        });
    }
    Ok(PointEstimation { dim: theta.len() }.loss(theta, Sample { x: z, y: 0.0 }))
}

/// Linear score with a sigmoid link and cross-entropy loss; `theta = (w, b)`.
#[derive(Debug, Clone, Copy)]
pub struct Logistic {
    pub features: usize,
}

/// `log(1 + exp(s))` without overflow.
pub fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

impl Logistic {
    pub fn score(&self, theta: &[f64], x: &[f64]) -> f64 {
        dot(&theta[..self.features], x) + theta[self.features]
    }

    /// Predicted probability of the positive class.
    pub fn predict(&self, theta: &[f64], x: &[f64]) -> f64 {
        sigmoid(self.score(theta, x))
    }
}

impl LossModel for Logistic {
    fn dim(&self) -> usize {
        self.features + 1
    }

    fn loss(&self, theta: &[f64], s: Sample<'_>) -> f64 {
        let z = self.score(theta, s.x);
        // -y log σ(z) - (1-y) log(1-σ(z)) = softplus(z) - y z = softplus(-z) + (1-y) z;
        // the form is chosen so the linear term does not cancel
        if z >= 0.0 {
            softplus(-z) + (1.0 - s.y) * z
        } else {
            softplus(z) - s.y * z
        }
    }

    fn add_grad(&self, theta: &[f64], s: Sample<'_>, scale: f64, out: &mut [f64]) {
        let r = scale * (sigmoid(self.score(theta, s.x)) - s.y);
        for (o, x) in out.iter_mut().zip(s.x) {
            *o += r * x;
        }
        out[self.features] += r;
    }

    fn check(&self, data: &Dataset) -> Result<()> {
        expect_width(data, self.features)?;
        let labels = data.class_labels()?;
        if labels.iter().any(|&y| y != 0 && y != 1) {
            return Err(Error::Domain("logistic model needs labels in {0, 1}".into()));
        }
        Ok(())
    }
}

pub fn logistic_loss(theta: &[f64], x: &[f64], y: f64) -> Result<f64> {
    if theta.len() != x.len() + 1 {
        return Err(Error::LengthMismatch {
            expected: x.len() + 1,
            found: theta.len(),
        });
    }
    Ok(Logistic { features: x.len() }.loss(theta, Sample { x, y }))
}

/// `(theta . x - y)^2 / 2`.
#[derive(Debug, Clone, Copy)]
pub struct LeastSquares {
    pub features: usize,
}

impl LossModel for LeastSquares {
    fn dim(&self) -> usize {
        self.features
    }

    fn loss(&self, theta: &[f64], s: Sample<'_>) -> f64 {
        let r = dot(theta, s.x) - s.y;
        0.5 * r * r
    }

    fn add_grad(&self, theta: &[f64], s: Sample<'_>, scale: f64, out: &mut [f64]) {
        let r = scale * (dot(theta, s.x) - s.y);
        for (o, x) in out.iter_mut().zip(s.x) {
            *o += r * x;
        }
    }

    fn check(&self, data: &Dataset) -> Result<()> {
        expect_width(data, self.features)?;
        if data.labels().is_none() {
            return Err(Error::Domain("least squares needs targets".into()));
        }
        Ok(())
    }
}

pub fn least_squares_loss(theta: &[f64], x: &[f64], y: f64) -> Result<f64> {
    if theta.len() != x.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            found: theta.len(),
        });
    }
    Ok(LeastSquares { features: x.len() }.loss(theta, Sample { x, y }))
}

/// Parameter-free model whose loss is the sample's first feature. Turns a
/// fixed loss table into a dataset, so solvers can be checked against
/// closed forms.
#[derive(Debug, Clone, Copy, Default)]
pub struct FixedLoss;

impl LossModel for FixedLoss {
    fn dim(&self) -> usize {
        0
    }

    fn loss(&self, _theta: &[f64], s: Sample<'_>) -> f64 {
        s.x[0]
    }

    fn add_grad(&self, _theta: &[f64], _s: Sample<'_>, _scale: f64, _out: &mut [f64]) {}

    fn check(&self, data: &Dataset) -> Result<()> {
        expect_width(data, 1)
    }
}

const ORTHONORMAL_TOL: f64 = 1e-8;

fn check_orthonormal(u: &Matrix) -> Result<()> {
    let defect = u.orthonormality_defect();
    if defect > ORTHONORMAL_TOL {
        return Err(Error::NotOrthonormal(defect));
    }
    Ok(())
}

/// Per-row excess reconstruction error of projecting `group` (a x n) onto the
/// span of `u` (n x d, orthonormal columns), relative to the best rank-d
/// approximation: `(||Y - Y U U^T||_F^2 - ||Y - Y_d||_F^2) / a`.
pub fn pca_reconstruction_loss(group: &Matrix, u: &Matrix) -> Result<f64> {
    if group.cols() != u.rows() {
        return Err(Error::LengthMismatch {
            expected: group.cols(),
            found: u.rows(),
        });
    }
    if group.rows() == 0 {
        return Err(Error::Empty("group"));
    }
    check_orthonormal(u)?;
    let projected = group.matmul(u)?.matmul(&u.transpose())?;
    let residual = group.sub(&projected).frobenius_sq();
    let eig = symmetric_eigh(&group.gram())?;
    let best: f64 = eig.values[u.cols()..].iter().map(|v| v.max(0.0)).sum();
    Ok((residual - best) / group.rows() as f64)
}

/// Precomputed statistics of one PCA subgroup, so its loss and gradient in
/// `U` cost one `n x n` by `n x d` product.
///
/// For orthonormal `U`, `||Y - Y U U^T||^2 = ||Y||^2 - tr(U^T Y^T Y U)`, so
/// the loss is `(sum of top-d eigenvalues of Y^T Y - tr(U^T G U)) / a`.
#[derive(Debug, Clone)]
pub struct PcaGroup {
    rows: usize,
    gram: Matrix,
    top_energy: f64,
}

impl PcaGroup {
    pub fn new(group: &Matrix, d: usize) -> Result<Self> {
        if group.rows() == 0 {
            return Err(Error::Empty("group"));
        }
        if d == 0 || d >= group.cols() {
            return Err(Error::InvalidConfig(alloc::format!(
                "projection rank d = {d} must lie in [1, n) with n = {}",
                group.cols()
            )));
        }
        let gram = group.gram();
        let eig = symmetric_eigh(&gram)?;
        Ok(Self {
            rows: group.rows(),
            top_energy: eig.values[..d].iter().map(|v| v.max(0.0)).sum(),
            gram,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    pub fn loss(&self, u: &Matrix) -> f64 {
        let gu = self.gram.matmul(u).expect("gram shape");
        let captured: f64 = (0..u.cols())
            .map(|j| (0..u.rows()).map(|i| u[(i, j)] * gu[(i, j)]).sum::<f64>())
            .sum();
        ((self.top_energy - captured) / self.rows as f64).max(0.0)
    }

    /// Euclidean gradient `-2 G U / a` of the loss in `U`.
    pub fn grad(&self, u: &Matrix) -> Matrix {
        self.gram
            .matmul(u)
            .expect("gram shape")
            .scale(-2.0 / self.rows as f64)
    }
}
