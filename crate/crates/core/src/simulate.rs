//! Synthetic piecewise-constant Gaussian graphical models and samples from
//! them, plus a Monte-Carlo check of the empirical covariance tail bounds.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GfglError, Result};
use crate::matops::{max_eigenvalue, min_eigenvalue, sym_eigen};
use crate::types::{GroundTruth, Segmentation, TimeSeries};
use crate::Mat;

/// Smallest eigenvalue every generated precision matrix must reach.
pub const MIN_EIGENVALUE: f64 = 0.05;

/// Attempts made to reach [`SimSpec::min_jump`] before giving up.
const MAX_JUMP_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphModel {
    /// Exactly this many edges, placed uniformly at random.
    ErdosRenyiEdges(usize),
    /// Each pair independently with this probability.
    ErdosRenyiProb(f64),
    Chain,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureChange {
    /// Every block draws a fresh graph and fresh weights.
    RedrawAll,
    /// `m` edges of the previous block are dropped and `m` new ones added.
    PerturbSubset(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub p: usize,
    pub t_len: usize,
    /// 1-based, strictly increasing, within `2..=T`.
    pub changepoints: Vec<usize>,
    pub graph: GraphModel,
    pub base_diagonal: f64,
    /// Magnitude range of the off-diagonal weights.
    pub weight_range: (f64, f64),
    pub random_sign: bool,
    pub structure_change: StructureChange,
    /// Regenerate until every covariance jump has at least this Frobenius norm.
    pub min_jump: Option<f64>,
    pub seed: u64,
}

impl SimSpec {
    pub fn new(p: usize, t_len: usize, changepoints: Vec<usize>, graph: GraphModel, seed: u64) -> Self {
        Self {
            p,
            t_len,
            changepoints,
            graph,
            base_diagonal: 1.0,
            weight_range: (0.3, 0.6),
            random_sign: true,
            structure_change: StructureChange::RedrawAll,
            min_jump: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GfglError::InvalidConfig(m));
        if self.p < 2 {
            return bad(format!("p must be at least 2 (got {})", self.p));
        }
        Segmentation::new(self.changepoints.clone(), self.t_len)
            .map_err(|e| GfglError::InvalidConfig(e.to_string()))?;
        if !(self.base_diagonal > 0.0) || !self.base_diagonal.is_finite() {
            return bad(format!("base_diagonal must be positive (got {})", self.base_diagonal));
        }
        let (lo, hi) = self.weight_range;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("weight_range must satisfy 0 <= lo <= hi (got {lo}, {hi})"));
        }
        let pairs = self.p * (self.p - 1) / 2;
        match self.graph {
            GraphModel::ErdosRenyiEdges(m) if m > pairs => {
                return bad(format!("{m} edges requested but only {pairs} pairs exist"));
            }
            GraphModel::ErdosRenyiProb(q) if !(0.0..=1.0).contains(&q) => {
                return bad(format!("edge probability must be in [0, 1] (got {q})"));
            }
            GraphModel::Identity if !self.changepoints.is_empty() => {
                return bad("the identity graph cannot change between blocks".into());
            }
            _ => {}
        }
        if let Some(j) = self.min_jump {
            if !(j >= 0.0) {
                return bad(format!("min_jump must be nonnegative (got {j})"));
            }
        }
        Ok(())
    }
}

type Edge = (usize, usize);

fn all_pairs(p: usize) -> Vec<Edge> {
    (0..p).flat_map(|j| (0..j).map(move |i| (i, j))).collect()
}

fn draw_graph(spec: &SimSpec, rng: &mut ChaCha8Rng) -> Vec<Edge> {
    let pairs = all_pairs(spec.p);
    match spec.graph {
        GraphModel::ErdosRenyiEdges(m) => {
            let mut idx = sample(rng, pairs.len(), m).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|k| pairs[k]).collect()
        }
        GraphModel::ErdosRenyiProb(q) => pairs.into_iter().filter(|_| rng.random::<f64>() < q).collect(),
        GraphModel::Chain => (1..spec.p).map(|j| (j - 1, j)).collect(),
        GraphModel::Identity => Vec::new(),
    }
}

fn draw_weight(spec: &SimSpec, rng: &mut ChaCha8Rng) -> f64 {
    let (lo, hi) = spec.weight_range;
    let w = rng.random_range(lo..=hi);
    if spec.random_sign && rng.random::<bool>() {
        -w
    } else {
        w
    }
}

fn build_precision(spec: &SimSpec, edges: &[(Edge, f64)]) -> Result<Mat> {
    let p = spec.p;
    let mut theta = Mat::identity(p, p) * spec.base_diagonal;
    for &((i, j), w) in edges {
        theta[(i, j)] = w;
        theta[(j, i)] = w;
    }
    if min_eigenvalue(&theta)? < MIN_EIGENVALUE {
        for i in 0..p {
            let row: f64 = (0..p).filter(|&j| j != i).map(|j| theta[(i, j)].abs()).sum();
            theta[(i, i)] = row + spec.base_diagonal;
        }
        let lo = min_eigenvalue(&theta)?;
        if lo < MIN_EIGENVALUE {
            return Err(GfglError::Simulation(format!(
                "diagonal loading left the smallest eigenvalue at {lo:.3e}"
            )));
        }
    }
    Ok(theta)
}

fn draw_blocks(spec: &SimSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Mat>> {
    let blocks = spec.changepoints.len() + 1;
    let mut weighted: Vec<(Edge, f64)> = draw_graph(spec, rng).into_iter().map(|e| (e, draw_weight(spec, rng))).collect();
    let mut out = vec![build_precision(spec, &weighted)?];
    for _ in 1..blocks {
        weighted = match spec.structure_change {
            StructureChange::RedrawAll => draw_graph(spec, rng).into_iter().map(|e| (e, draw_weight(spec, rng))).collect(),
            StructureChange::PerturbSubset(m) => {
                let present: Vec<Edge> = weighted.iter().map(|(e, _)| *e).collect();
                let absent: Vec<Edge> = all_pairs(spec.p).into_iter().filter(|e| !present.contains(e)).collect();
                if m > present.len() || m > absent.len() {
                    return Err(GfglError::Simulation(format!(
                        "cannot swap {m} edges with {} present and {} absent",
                        present.len(),
                        absent.len()
                    )));
                }
                let mut drop = sample(rng, present.len(), m).into_vec();
                drop.sort_unstable();
                let mut add = sample(rng, absent.len(), m).into_vec();
                add.sort_unstable();
                let mut next: Vec<(Edge, f64)> = weighted
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| !drop.contains(k))
                    .map(|(_, x)| *x)
                    .collect();
                for k in add {
                    next.push((absent[k], draw_weight(spec, rng)));
                }
                next
            }
        };
        out.push(build_precision(spec, &weighted)?);
    }
    Ok(out)
}

/// Ground truth for `spec`; deterministic in `spec.seed`.
pub fn generate_truth(spec: &SimSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let seg = Segmentation::new(spec.changepoints.clone(), spec.t_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let attempts = if spec.min_jump.is_some() { MAX_JUMP_ATTEMPTS } else { 1 };
    let mut best = 0.0;
    for _ in 0..attempts {
        let truth = GroundTruth::from_precisions(draw_blocks(spec, &mut rng)?, seg.clone())?;
        match (spec.min_jump, truth.eta_min()) {
            (Some(target), Some(eta)) if eta < target => best = f64::max(best, eta),
            _ => return Ok(truth),
        }
    }
    Err(GfglError::Simulation(format!(
        "no draw reached a covariance jump of {} in {attempts} attempts (best {best:.3})",
        spec.min_jump.unwrap_or(0.0)
    )))
}

fn cholesky_factor(sigma: &Mat) -> Result<Mat> {
    sigma
        .clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| GfglError::Simulation("block covariance is not positive definite".into()))
}

/// `T` zero-mean Gaussian observations, row `t` drawn from the covariance of its block.
pub fn sample_timeseries(truth: &GroundTruth, t_len: usize, seed: u64) -> Result<TimeSeries> {
    if truth.t_len() != t_len {
        return Err(GfglError::DimensionMismatch(format!(
            "ground truth covers T={} but {t_len} samples were requested",
            truth.t_len()
        )));
    }
    let p = truth.dim();
    let factors = truth.block_covariances.iter().map(cholesky_factor).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Mat::zeros(t_len, p);
    for t in 0..t_len {
        let z = nalgebra::DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &factors[truth.segmentation.block_of(t + 1)] * z;
        data.row_mut(t).copy_from(&x.transpose());
    }
    TimeSeries::new(data)
}

/// Monte-Carlo tail frequencies of `Ŵ = n⁻¹ Σ XXᵀ − Σ` against the
/// analytic bounds, one entry per grid value of ε.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovErrorExperiment {
    pub n: usize,
    pub reps: usize,
    pub eps: Vec<f64>,
    /// Fraction of replicates with `‖Ŵ‖_F > ε`.
    pub frobenius_frequency: Vec<f64>,
    /// `min(1, 4p² exp(−nε² / (2⁷ c² p²)))`, `c = 5·max Σ_ii`.
    pub frobenius_bound: Vec<f64>,
    /// Whether ε lies in `(0, 2³ c p)`, where the Frobenius bound is claimed.
    pub frobenius_bound_valid: Vec<bool>,
    /// Fraction of replicates with `|||Ŵ|||₂ ≥ ε`.
    pub spectral_frequency: Vec<f64>,
    /// `min(1, 2 exp(−n a² / 2))` with `a` solving `φ_max δ(n, p, a) = ε`;
    /// absent when `p > n`.
    pub spectral_bound: Vec<Option<f64>>,
}

/// Sub-Gaussian constant used by the Frobenius bound for Gaussian data.
pub fn c_sigma(sigma: &Mat) -> f64 {
    5.0 * sigma.diagonal().max()
}

pub fn frobenius_tail_bound(p: usize, n: usize, c: f64, eps: f64) -> f64 {
    let p = p as f64;
    (4.0 * p * p * (-(n as f64) * eps * eps / (128.0 * c * c * p * p)).exp()).min(1.0)
}

/// `None` when `p > n`.
pub fn spectral_tail_bound(p: usize, n: usize, phi_max: f64, eps: f64) -> Option<f64> {
    if p > n {
        return None;
    }
    let delta = eps / phi_max;
    let s = (1.0 + delta).sqrt() - 1.0;
    let a = s - (p as f64 / n as f64).sqrt();
    if a <= 0.0 {
        return Some(1.0);
    }
    Some((2.0 * (-(n as f64) * a * a / 2.0).exp()).min(1.0))
}

/// Evenly spaced ε in `[0, 2³ c p)`, the range where the Frobenius bound applies.
pub fn default_eps_grid(sigma: &Mat, points: usize) -> Vec<f64> {
    let top = 8.0 * c_sigma(sigma) * sigma.nrows() as f64;
    (0..points).map(|k| top * k as f64 / points as f64).collect()
}

/// Replicate `r` uses the seed `seed + r`.
pub fn empirical_cov_error_experiment(sigma: &Mat, n: usize, reps: usize, seed: u64, eps: &[f64]) -> Result<CovErrorExperiment> {
    if n == 0 || reps < 100 {
        return Err(GfglError::InvalidInput(format!("need n >= 1 and reps >= 100 (got n={n}, reps={reps})")));
    }
    let p = sigma.nrows();
    let factor = cholesky_factor(sigma)?;
    let errors: Vec<(f64, f64)> = (0..reps)
        .into_par_iter()
        .map(|r| -> Result<(f64, f64)> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
            let mut acc = Mat::zeros(p, p);
            for _ in 0..n {
                let z = nalgebra::DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
                let x = &factor * z;
                acc += &x * x.transpose();
            }
            let w = acc / n as f64 - sigma;
            let spec = sym_eigen(&w)?.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            Ok((w.norm(), spec))
        })
        .collect::<Result<_>>()?;

    let c = c_sigma(sigma);
    let phi = max_eigenvalue(sigma)?;
    let freq = |pred: &dyn Fn(&(f64, f64)) -> bool| errors.iter().filter(|x| pred(x)).count() as f64 / reps as f64;
    Ok(CovErrorExperiment {
        n,
        reps,
        eps: eps.to_vec(),
        frobenius_frequency: eps.iter().map(|&e| freq(&|x| x.0 > e)).collect(),
        frobenius_bound: eps.iter().map(|&e| frobenius_tail_bound(p, n, c, e)).collect(),
        frobenius_bound_valid: eps.iter().map(|&e| e > 0.0 && e < 8.0 * c * p as f64).collect(),
        spectral_frequency: eps.iter().map(|&e| freq(&|x| x.1 >= e)).collect(),
        spectral_bound: eps.iter().map(|&e| spectral_tail_bound(p, n, phi, e)).collect(),
    })
}
