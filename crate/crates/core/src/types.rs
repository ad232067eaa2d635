//! Domain types shared by the solver, diagnostics and simulator.
//!
//! Matrices are dense. Time indices exposed by [`Segmentation`] are 1-based;
//! sequences stored in `Vec`s are indexed from 0 as usual.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{GfglError, Result};
use crate::matops::{inverse_spd, is_symmetric, logdet_spd, sym_eigen};
use crate::Mat;

/// A `T×p` matrix of observations, one row per time point.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    data: Mat,
}

impl TimeSeries {
    pub fn new(data: Mat) -> Result<Self> {
        if data.nrows() < 1 {
            return Err(GfglError::InvalidInput("time series needs at least one row".into()));
        }
        if data.ncols() < 2 {
            return Err(GfglError::InvalidInput(format!(
                "time series needs at least two variables, got {}",
                data.ncols()
            )));
        }
        if let Some(k) = data.iter().position(|x| !x.is_finite()) {
            let (t, j) = (k % data.nrows(), k / data.nrows());
            return Err(GfglError::NonFinite(format!(
                "observation at t={}, variable {}",
                t + 1,
                j + 1
            )));
        }
        Ok(Self { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let t = rows.len();
        if t == 0 {
            return Err(GfglError::InvalidInput("time series needs at least one row".into()));
        }
        let p = rows[0].len();
        if let Some(bad) = rows.iter().position(|r| r.len() != p) {
            return Err(GfglError::DimensionMismatch(format!(
                "row {} has {} columns, expected {p}",
                bad + 1,
                rows[bad].len()
            )));
        }
        Self::new(Mat::from_fn(t, p, |i, j| rows[i][j]))
    }

    pub fn data(&self) -> &Mat {
        &self.data
    }

    pub fn t_len(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Observation at 0-based time `t`.
    pub fn observation(&self, t: usize) -> Vec<f64> {
        self.data.row(t).iter().copied().collect()
    }
}

/// Per-time empirical covariances `Ŝ(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalCovarianceSeq {
    matrices: Vec<Mat>,
}

impl LocalCovarianceSeq {
    /// Wraps arbitrary symmetric matrices. Used for pooled or synthetic
    /// covariance inputs; [`local_covariances`] builds the usual rank-one
    /// sequence from data.
    pub fn from_matrices(matrices: Vec<Mat>) -> Result<Self> {
        let Some(first) = matrices.first() else {
            return Err(GfglError::InvalidInput("covariance sequence is empty".into()));
        };
        let p = first.nrows();
        for (t, s) in matrices.iter().enumerate() {
            if s.nrows() != p || s.ncols() != p {
                return Err(GfglError::DimensionMismatch(format!(
                    "covariance at t={} is {}x{}, expected {p}x{p}",
                    t + 1,
                    s.nrows(),
                    s.ncols()
                )));
            }
            if s.iter().any(|x| !x.is_finite()) {
                return Err(GfglError::NonFinite(format!("covariance at t={}", t + 1)));
            }
            if !is_symmetric(s, 1e-12) {
                return Err(GfglError::InvalidInput(format!(
                    "covariance at t={} is not symmetric",
                    t + 1
                )));
            }
        }
        Ok(Self { matrices })
    }

    pub fn matrices(&self) -> &[Mat] {
        &self.matrices
    }

    pub fn t_len(&self) -> usize {
        self.matrices.len()
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    /// `S̄ = T⁻¹ Σ_t Ŝ(t)`.
    pub fn pooled(&self) -> Mat {
        let p = self.dim();
        let mut acc = Mat::zeros(p, p);
        for s in &self.matrices {
            acc += s;
        }
        acc / self.t_len() as f64
    }
}

/// `Ŝ(t) = x(t) x(t)ᵀ` for every row of `x`. The products are formed so that
/// each matrix is exactly symmetric.
pub fn local_covariances(x: &TimeSeries) -> LocalCovarianceSeq {
    let p = x.dim();
    let matrices = (0..x.t_len())
        .map(|t| {
            let row = x.data.row(t);
            Mat::from_fn(p, p, |i, j| row[i] * row[j])
        })
        .collect();
    LocalCovarianceSeq { matrices }
}

/// A sequence of symmetric positive-definite precision matrices `Θ(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionSequence {
    matrices: Vec<Mat>,
    jump_indicators: Option<Vec<bool>>,
}

impl PrecisionSequence {
    pub const SYMMETRY_TOL: f64 = 1e-10;

    pub fn new(matrices: Vec<Mat>) -> Result<Self> {
        let Some(first) = matrices.first() else {
            return Err(GfglError::InvalidInput("precision sequence is empty".into()));
        };
        let p = first.nrows();
        for (t, m) in matrices.iter().enumerate() {
            if m.nrows() != p || m.ncols() != p {
                return Err(GfglError::DimensionMismatch(format!(
                    "precision at t={} has wrong shape",
                    t + 1
                )));
            }
            if !is_symmetric(m, Self::SYMMETRY_TOL) {
                return Err(GfglError::InvalidInput(format!(
                    "precision at t={} is not symmetric",
                    t + 1
                )));
            }
            if logdet_spd(m).is_none() {
                return Err(GfglError::NotPositiveDefinite { t: t + 1 });
            }
        }
        Ok(Self { matrices, jump_indicators: None })
    }

    /// Attaches exact jump indicators: `indicators[t]` is true when the
    /// difference entering at 0-based time `t` is nonzero. The first entry
    /// must be false.
    pub fn with_jump_indicators(mut self, indicators: Vec<bool>) -> Result<Self> {
        if indicators.len() != self.matrices.len() {
            return Err(GfglError::DimensionMismatch(format!(
                "{} jump indicators for {} time points",
                indicators.len(),
                self.matrices.len()
            )));
        }
        if indicators[0] {
            return Err(GfglError::InvalidInput("no jump can enter at t=1".into()));
        }
        self.jump_indicators = Some(indicators);
        Ok(self)
    }

    pub fn matrices(&self) -> &[Mat] {
        &self.matrices
    }

    pub fn jump_indicators(&self) -> Option<&[bool]> {
        self.jump_indicators.as_deref()
    }

    pub fn t_len(&self) -> usize {
        self.matrices.len()
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    /// `Γ(1) = Θ(1)`, `Γ(t) = Θ(t) − Θ(t−1)`.
    pub fn differences(&self) -> Vec<Mat> {
        let mut out = Vec::with_capacity(self.matrices.len());
        out.push(self.matrices[0].clone());
        for w in self.matrices.windows(2) {
            out.push(&w[1] - &w[0]);
        }
        out
    }
}

/// Ordered changepoints over `1..=T`, with the block separators
/// `{1} ∪ changepoints ∪ {T+1}`. All indices are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    changepoints: Vec<usize>,
    t_len: usize,
}

impl Segmentation {
    pub fn new(changepoints: Vec<usize>, t_len: usize) -> Result<Self> {
        if t_len == 0 {
            return Err(GfglError::InvalidInput("segmentation over an empty series".into()));
        }
        if changepoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GfglError::InvalidInput(format!(
                "changepoints must be strictly increasing: {changepoints:?}"
            )));
        }
        if let Some(&bad) = changepoints.iter().find(|&&c| c < 2 || c > t_len) {
            return Err(GfglError::InvalidInput(format!(
                "changepoint {bad} outside [2, {t_len}]"
            )));
        }
        Ok(Self { changepoints, t_len })
    }

    /// A single block covering the whole series.
    pub fn single_block(t_len: usize) -> Self {
        Self { changepoints: Vec::new(), t_len }
    }

    pub fn from_separators(separators: &[usize]) -> Result<Self> {
        if separators.len() < 2 || separators[0] != 1 {
            return Err(GfglError::InvalidInput(format!(
                "separators must start at 1 and end at T+1: {separators:?}"
            )));
        }
        let t_len = separators[separators.len() - 1] - 1;
        Self::new(separators[1..separators.len() - 1].to_vec(), t_len)
    }

    pub fn changepoints(&self) -> &[usize] {
        &self.changepoints
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn num_changepoints(&self) -> usize {
        self.changepoints.len()
    }

    pub fn block_count(&self) -> usize {
        self.changepoints.len() + 1
    }

    pub fn separators(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.changepoints.len() + 2);
        s.push(1);
        s.extend_from_slice(&self.changepoints);
        s.push(self.t_len + 1);
        s
    }

    pub fn block_lengths(&self) -> Vec<usize> {
        self.separators().windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Blocks as 0-based half-open ranges into a length-`T` sequence.
    pub fn block_ranges(&self) -> Vec<Range<usize>> {
        self.separators().windows(2).map(|w| (w[0] - 1)..(w[1] - 1)).collect()
    }

    /// Block index (0-based) containing 0-based time `t`.
    pub fn block_of(&self, t: usize) -> usize {
        self.changepoints.partition_point(|&c| c - 1 <= t)
    }
}

/// Regularization weights: `lambda1` on off-diagonal ℓ1, `lambda2` on the
/// Frobenius norm of consecutive differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizationConfig {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl RegularizationConfig {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        let reg = Self { lambda1, lambda2 };
        reg.validate()?;
        Ok(reg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 > 0.0) || !self.lambda1.is_finite() {
            return Err(GfglError::InvalidConfig(format!(
                "lambda1 must be positive (got {})",
                self.lambda1
            )));
        }
        if !(self.lambda2 >= 0.0) || !self.lambda2.is_finite() {
            return Err(GfglError::InvalidConfig(format!(
                "lambda2 must be nonnegative (got {})",
                self.lambda2
            )));
        }
        Ok(())
    }

    /// `ρ = λ₂/λ₁`.
    pub fn ratio(&self) -> f64 {
        self.lambda2 / self.lambda1
    }
}

/// Ground truth of a piecewise-constant Gaussian graphical model.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub block_covariances: Vec<Mat>,
    pub block_precisions: Vec<Mat>,
    pub segmentation: Segmentation,
    /// Per block, the off-diagonal support `{(i, j) : i < j, Θ_ij ≠ 0}` with
    /// 0-based variable indices.
    pub edge_sets: Vec<Vec<(usize, usize)>>,
}

impl GroundTruth {
    /// Builds the truth from block precisions, inverting each to get the
    /// covariance and reading the edge sets off the nonzero pattern.
    pub fn from_precisions(block_precisions: Vec<Mat>, segmentation: Segmentation) -> Result<Self> {
        if block_precisions.len() != segmentation.block_count() {
            return Err(GfglError::DimensionMismatch(format!(
                "{} precision blocks for {} segments",
                block_precisions.len(),
                segmentation.block_count()
            )));
        }
        let mut block_covariances = Vec::with_capacity(block_precisions.len());
        for (k, theta) in block_precisions.iter().enumerate() {
            if !is_symmetric(theta, 0.0) {
                return Err(GfglError::InvalidInput(format!("precision block {} not symmetric", k + 1)));
            }
            let sigma = inverse_spd(theta).ok_or(GfglError::NotPositiveDefinite { t: k + 1 })?;
            block_covariances.push(sigma);
        }
        let edge_sets = block_precisions.iter().map(support_edges).collect();
        let truth = Self { block_covariances, block_precisions, segmentation, edge_sets };
        truth.validate()?;
        Ok(truth)
    }

    pub fn validate(&self) -> Result<()> {
        for (k, (theta, sigma)) in self.block_precisions.iter().zip(&self.block_covariances).enumerate() {
            let p = theta.nrows();
            let prod = theta * sigma;
            if (prod - Mat::identity(p, p)).iter().any(|x| x.abs() > 1e-8) {
                return Err(GfglError::InvalidInput(format!(
                    "block {}: precision times covariance is not the identity",
                    k + 1
                )));
            }
            if support_edges(theta) != self.edge_sets[k] {
                return Err(GfglError::InvalidInput(format!(
                    "block {}: edge set disagrees with the precision support",
                    k + 1
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.block_precisions[0].nrows()
    }

    pub fn t_len(&self) -> usize {
        self.segmentation.t_len()
    }

    /// Smallest Frobenius jump between consecutive block covariances; `None`
    /// for a single block.
    pub fn eta_min(&self) -> Option<f64> {
        self.block_covariances
            .windows(2)
            .map(|w| (&w[1] - &w[0]).norm())
            .reduce(f64::min)
    }

    /// Largest Frobenius distance between any two block covariances.
    pub fn max_jump(&self) -> f64 {
        let b = &self.block_covariances;
        let mut m = 0.0_f64;
        for i in 0..b.len() {
            for j in (i + 1)..b.len() {
                m = m.max((&b[i] - &b[j]).norm());
            }
        }
        m
    }

    /// Largest covariance eigenvalue across blocks.
    pub fn phi_max(&self) -> Result<f64> {
        let mut m = f64::NEG_INFINITY;
        for s in &self.block_covariances {
            let e = sym_eigen(s)?;
            m = m.max(e.values[e.values.len() - 1]);
        }
        Ok(m)
    }
}

/// Off-diagonal support of a matrix as `i < j` pairs.
pub fn support_edges(theta: &Mat) -> Vec<(usize, usize)> {
    let p = theta.nrows();
    let mut edges = Vec::new();
    for i in 0..p {
        for j in (i + 1)..p {
            if theta[(i, j)] != 0.0 {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// The GFGL objective
/// `Σ_t [−log det U(t) + tr(Ŝ(t)U(t))] + λ₁ Σ_t Σ_{i≠j} |U(t)_ij| + λ₂ Σ_{t≥2} ‖U(t) − U(t−1)‖_F`.
pub fn gfgl_objective(u: &[Mat], s: &LocalCovarianceSeq, reg: &RegularizationConfig) -> Result<f64> {
    if u.len() != s.t_len() {
        return Err(GfglError::DimensionMismatch(format!(
            "{} precision matrices for {} covariances",
            u.len(),
            s.t_len()
        )));
    }
    let mut total = 0.0;
    for (t, (ut, st)) in u.iter().zip(s.matrices()).enumerate() {
        if ut.shape() != st.shape() {
            return Err(GfglError::DimensionMismatch(format!("shape mismatch at t={}", t + 1)));
        }
        let logdet = logdet_spd(ut).ok_or(GfglError::NotPositiveDefinite { t: t + 1 })?;
        total += -logdet + st.dot(ut);
        total += reg.lambda1 * crate::matops::norms(ut).l1_offdiag;
    }
    for w in u.windows(2) {
        total += reg.lambda2 * (&w[1] - &w[0]).norm();
    }
    if !total.is_finite() {
        return Err(GfglError::NonFinite("objective".into()));
    }
    Ok(total)
}
