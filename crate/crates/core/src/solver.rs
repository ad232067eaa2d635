//! Multi-block ADMM for the group-fused graphical lasso.
//!
//! Variables, for `t = 1..T` (stored 0-based):
//!
//! * `U(t)` primal estimates, kept positive definite by the log-det prox;
//! * `V1(t)` sparse copies of `U(t)` (ℓ1 prox);
//! * `V2(t)`, `t < T`, second copies of `U(t)` feeding the difference chain;
//! * `W(t)`, `t ≥ 2`, the differences `V1(t) − V2(t−1)` (group prox);
//! * scaled duals for the three constraint families.
//!
//! One iteration updates `U` and `W` from the previous iterate, then the
//! pairs `(V1(t), V2(t−1))` jointly from the new `U` and `W`, then the
//! duals. Grouped this way it is a two-block ADMM, which converges for any
//! positive weights; updating `V1`, `V2` and `W` one after another from
//! stale values can cycle. No per-`t` computation reads another `t` of the
//! same sweep, so every sweep runs in parallel over `t` with results
//! bitwise identical to the sequential order.

use rayon::prelude::*;

use crate::error::{GfglError, Result};
use crate::matops::{
    group_soft_threshold_in_place, logdet_prox_eigenvalue_map_weighted, min_eigenvalue,
    soft_threshold_offdiag_in_place, sym_eigen, symmetrize,
};
use crate::types::{gfgl_objective, LocalCovarianceSeq, PrecisionSequence, RegularizationConfig, Segmentation};
use crate::Mat;

/// Tuning of the ADMM run.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub reg: RegularizationConfig,
    pub gamma_v1: f64,
    pub gamma_v2: f64,
    pub gamma_w: f64,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub max_iter: usize,
    pub record_history: bool,
    /// Run the per-time sweeps on the rayon pool.
    pub parallel: bool,
    /// Any `U` entry larger than this in magnitude is taken as divergence
    /// towards an unbounded objective.
    pub divergence_bound: f64,
}

impl SolverConfig {
    pub fn new(reg: RegularizationConfig) -> Self {
        Self {
            reg,
            gamma_v1: 1.0,
            gamma_v2: 1.0,
            gamma_w: 1.0,
            tol_primal: 1e-5,
            tol_dual: 1e-5,
            max_iter: 2000,
            record_history: false,
            parallel: false,
            divergence_bound: 1e12,
        }
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol_primal = tol;
        self.tol_dual = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_history(mut self, record: bool) -> Self {
        self.record_history = record;
        self
    }

    /// Sets all three penalty weights to `gamma`.
    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma_v1 = gamma;
        self.gamma_v2 = gamma;
        self.gamma_w = gamma;
        self
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.reg.validate()?;
        for (name, g) in [("gamma_v1", self.gamma_v1), ("gamma_v2", self.gamma_v2), ("gamma_w", self.gamma_w)] {
            if !(g > 0.0) || !g.is_finite() {
                return Err(GfglError::InvalidConfig(format!("{name} must be positive (got {g})")));
            }
        }
        if !(self.tol_primal > 0.0) || !(self.tol_dual > 0.0) {
            return Err(GfglError::InvalidConfig("tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(GfglError::InvalidConfig("max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// Complete ADMM iterate. `v2` and `dual_v2` have length `T − 1`; `w` and
/// `dual_w` have length `T` with entry 0 unused.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub u: Vec<Mat>,
    pub v1: Vec<Mat>,
    pub v2: Vec<Mat>,
    pub w: Vec<Mat>,
    pub dual_v1: Vec<Mat>,
    pub dual_v2: Vec<Mat>,
    pub dual_w: Vec<Mat>,
    pub iteration: usize,
    pub eps_primal: f64,
    pub eps_dual: f64,
}

impl SolverState {
    /// `U = V1 = V2 = W = I`, duals zero.
    pub fn cold(t_len: usize, p: usize) -> Self {
        let eye = Mat::identity(p, p);
        let zero = Mat::zeros(p, p);
        let mut w = vec![eye.clone(); t_len];
        w[0] = zero.clone();
        Self {
            u: vec![eye.clone(); t_len],
            v1: vec![eye.clone(); t_len],
            v2: vec![eye; t_len.saturating_sub(1)],
            w,
            dual_v1: vec![zero.clone(); t_len],
            dual_v2: vec![zero.clone(); t_len.saturating_sub(1)],
            dual_w: vec![zero; t_len],
            iteration: 0,
            eps_primal: f64::INFINITY,
            eps_dual: f64::INFINITY,
        }
    }

    pub fn t_len(&self) -> usize {
        self.u.len()
    }

    pub fn dim(&self) -> usize {
        self.u.first().map_or(0, |m| m.nrows())
    }

    fn check_shapes(&self, t_len: usize, p: usize) -> Result<()> {
        let expect = |name: &str, v: &[Mat], len: usize| -> Result<()> {
            if v.len() != len || v.iter().any(|m| m.shape() != (p, p)) {
                return Err(GfglError::DimensionMismatch(format!(
                    "warm start `{name}` does not match T={t_len}, p={p}"
                )));
            }
            Ok(())
        };
        expect("u", &self.u, t_len)?;
        expect("v1", &self.v1, t_len)?;
        expect("v2", &self.v2, t_len - 1)?;
        expect("w", &self.w, t_len)?;
        expect("dual_v1", &self.dual_v1, t_len)?;
        expect("dual_v2", &self.dual_v2, t_len - 1)?;
        expect("dual_w", &self.dual_w, t_len)
    }
}

/// Output of a solve.
#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Precision estimates taken from the sparse copies `V1`, with exact
    /// jump indicators attached.
    pub precisions: PrecisionSequence,
    pub segmentation: Segmentation,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
    pub eps_primal: f64,
    pub eps_dual: f64,
    /// `‖W(t)‖_F` per time point, zero at `t = 1`.
    pub jump_norms: Vec<f64>,
    pub residual_history: Option<Vec<(f64, f64)>>,
    pub objective_history: Option<Vec<f64>>,
    /// Final iterate, usable as a warm start.
    pub state: SolverState,
}

/// Primal residual: the largest Frobenius violation of `U = V1`, `U = V2`
/// and `V1(t) − V2(t−1) = W(t)`.
pub fn primal_residual(state: &SolverState) -> f64 {
    let t_len = state.t_len();
    let mut eps = 0.0_f64;
    for t in 0..t_len {
        eps = eps.max((&state.u[t] - &state.v1[t]).norm());
        if t + 1 < t_len {
            eps = eps.max((&state.u[t] - &state.v2[t]).norm());
        }
        if t >= 1 {
            eps = eps.max((&state.v1[t] - &state.v2[t - 1] - &state.w[t]).norm());
        }
    }
    eps
}

/// Dual residual: the largest γ-weighted Frobenius change of `V1`, `V2`, `W`
/// between two consecutive iterates.
pub fn dual_residual(previous: &SolverState, current: &SolverState, cfg: &SolverConfig) -> f64 {
    let change = |a: &[Mat], b: &[Mat], g: f64| {
        a.iter().zip(b).map(|(x, y)| g * (x - y).norm()).fold(0.0, f64::max)
    };
    change(&previous.v1, &current.v1, cfg.gamma_v1)
        .max(change(&previous.v2, &current.v2, cfg.gamma_v2))
        .max(change(&previous.w[1..], &current.w[1..], cfg.gamma_w))
}

/// Both residuals of `current`, measured against `previous` for the dual part.
pub fn compute_residuals(previous: &SolverState, current: &SolverState, cfg: &SolverConfig) -> (f64, f64) {
    (primal_residual(current), dual_residual(previous, current, cfg))
}

/// Solves from the cold start `U = V = W = I`.
pub fn admm_solve(s: &LocalCovarianceSeq, cfg: &SolverConfig) -> Result<SolveResult> {
    let init = SolverState::cold(s.t_len(), s.dim());
    run(s, cfg, init)
}

/// Solves starting from a previous iterate (same `T` and `p`).
pub fn warm_start_solve(s: &LocalCovarianceSeq, cfg: &SolverConfig, init: &SolverState) -> Result<SolveResult> {
    init.check_shapes(s.t_len(), s.dim())?;
    let mut init = init.clone();
    init.iteration = 0;
    run(s, cfg, init)
}

fn map_t<F>(t_len: usize, parallel: bool, f: F) -> Vec<Mat>
where
    F: Fn(usize) -> Mat + Sync + Send,
{
    if parallel {
        (0..t_len).into_par_iter().map(f).collect()
    } else {
        (0..t_len).map(f).collect()
    }
}

fn primal_step(s: &LocalCovarianceSeq, cfg: &SolverConfig, st: &SolverState, weights: Option<&[f64]>) -> Result<Vec<Mat>> {
    let t_len = st.t_len();
    let (g1, g2) = (cfg.gamma_v1, cfg.gamma_v2);
    let update = |t: usize| -> Result<Mat> {
        // the last time point has no V2 copy; its second target is the
        // current U, which leaves the fixed points unchanged
        let second = if t + 1 < t_len { &st.v2[t] - &st.dual_v2[t] } else { st.u[t].clone() };
        let target = (&st.v1[t] - &st.dual_v1[t]) * g1 + second * g2;
        let (shifted, weight) = match weights {
            None => (&s.matrices()[t] - target, g1 + g2),
            Some(n) => (&s.matrices()[t] - target / n[t], (g1 + g2) / n[t]),
        };
        let eig = sym_eigen(&shifted)?;
        Ok(eig.reconstruct_with(|eta| logdet_prox_eigenvalue_map_weighted(eta, weight)))
    };
    if cfg.parallel {
        (0..t_len).into_par_iter().map(update).collect()
    } else {
        (0..t_len).map(update).collect()
    }
}

struct AuxStep {
    v1: Vec<Mat>,
    v2: Vec<Mat>,
    w: Vec<Mat>,
}

fn auxiliary_step(cfg: &SolverConfig, st: &SolverState, u_new: &[Mat], weights: Option<&[f64]>) -> AuxStep {
    let t_len = st.t_len();
    let p = st.dim();
    let (g1, g2, gw) = (cfg.gamma_v1, cfg.gamma_v2, cfg.gamma_w);
    let (l1, l2) = (cfg.reg.lambda1, cfg.reg.lambda2);

    let w = map_t(t_len, cfg.parallel, |t| {
        if t == 0 {
            return Mat::zeros(p, p);
        }
        let mut w = &st.v1[t] - &st.v2[t - 1] + &st.dual_w[t];
        group_soft_threshold_in_place(&mut w, l2 / gw);
        w
    });

    // V1(t) and V2(t−1) are minimised jointly: eliminating V2 leaves an ℓ1
    // prox on V1 whose second quadratic has weight h = γ2γw/(γ2+γw)
    let h = g2 * gw / (g2 + gw);
    let step = |t: usize| -> (Mat, Option<Mat>) {
        let l1 = weights.map_or(l1, |n| l1 * n[t]);
        let mut v1 = &u_new[t] + &st.dual_v1[t];
        if t == 0 {
            soft_threshold_offdiag_in_place(&mut v1, l1 / g1);
            return (v1, None);
        }
        let b = &u_new[t - 1] + &st.dual_v2[t - 1];
        let c = &w[t] - &st.dual_w[t];
        v1 = (v1 * g1 + (&b + &c) * h) / (g1 + h);
        soft_threshold_offdiag_in_place(&mut v1, l1 / (g1 + h));
        let v2 = (b * g2 + (&v1 - c) * gw) / (g2 + gw);
        (v1, Some(v2))
    };
    let parts: Vec<(Mat, Option<Mat>)> = if cfg.parallel {
        (0..t_len).into_par_iter().map(step).collect()
    } else {
        (0..t_len).map(step).collect()
    };

    let mut v1 = Vec::with_capacity(t_len);
    let mut v2 = Vec::with_capacity(t_len.saturating_sub(1));
    for (a, b) in parts {
        v1.push(a);
        v2.extend(b);
    }
    AuxStep { v1, v2, w }
}

fn dual_step(cfg: &SolverConfig, st: &SolverState, u_new: &[Mat], aux: &AuxStep) -> (Vec<Mat>, Vec<Mat>, Vec<Mat>) {
    let t_len = st.t_len();
    let dual_v1 = map_t(t_len, cfg.parallel, |t| &st.dual_v1[t] + &u_new[t] - &aux.v1[t]);
    let dual_v2 = map_t(t_len - 1, cfg.parallel, |t| &st.dual_v2[t] + &u_new[t] - &aux.v2[t]);
    let dual_w = map_t(t_len, cfg.parallel, |t| {
        if t == 0 {
            st.dual_w[0].clone()
        } else {
            &st.dual_w[t] + &aux.v1[t] - &aux.v2[t - 1] - &aux.w[t]
        }
    });
    (dual_v1, dual_v2, dual_w)
}

/// One full ADMM iteration; returns the new state with residuals filled in.
pub fn iterate(s: &LocalCovarianceSeq, cfg: &SolverConfig, st: &SolverState) -> Result<SolverState> {
    iterate_weighted(s, cfg, st, None)
}

fn iterate_weighted(s: &LocalCovarianceSeq, cfg: &SolverConfig, st: &SolverState, weights: Option<&[f64]>) -> Result<SolverState> {
    let iteration = st.iteration + 1;
    let u_new = primal_step(s, cfg, st, weights)?;
    for (t, u) in u_new.iter().enumerate() {
        if u.iter().any(|x| !x.is_finite()) {
            return Err(GfglError::NumericalFailure {
                iteration,
                reason: format!("non-finite primal iterate at t={}", t + 1),
            });
        }
        if u.iter().any(|x| x.abs() > cfg.divergence_bound) {
            return Err(GfglError::UnboundedObjective { iteration });
        }
    }
    let aux = auxiliary_step(cfg, st, &u_new, weights);
    let (dual_v1, dual_v2, dual_w) = dual_step(cfg, st, &u_new, &aux);
    let mut next = SolverState {
        u: u_new,
        v1: aux.v1,
        v2: aux.v2,
        w: aux.w,
        dual_v1,
        dual_v2,
        dual_w,
        iteration,
        eps_primal: 0.0,
        eps_dual: 0.0,
    };
    let (ep, ed) = compute_residuals(st, &next, cfg);
    if !ep.is_finite() || !ed.is_finite() {
        return Err(GfglError::NumericalFailure { iteration, reason: "non-finite residual".into() });
    }
    next.eps_primal = ep;
    next.eps_dual = ed;
    Ok(next)
}

/// ADMM on the problem whose loss and ℓ1 terms at time `t` carry the
/// factor `weights[t]`. Returns the final state and whether it converged.
pub(crate) fn solve_weighted(
    s: &LocalCovarianceSeq,
    weights: &[f64],
    cfg: &SolverConfig,
    init: SolverState,
) -> Result<(SolverState, bool)> {
    cfg.validate()?;
    init.check_shapes(s.t_len(), s.dim())?;
    let mut state = init;
    while state.iteration < cfg.max_iter {
        state = iterate_weighted(s, cfg, &state, Some(weights))?;
        if state.eps_primal <= cfg.tol_primal && state.eps_dual <= cfg.tol_dual {
            return Ok((state, true));
        }
    }
    Ok((state, false))
}

fn run(s: &LocalCovarianceSeq, cfg: &SolverConfig, init: SolverState) -> Result<SolveResult> {
    cfg.validate()?;
    let mut residual_history = cfg.record_history.then(Vec::new);
    let mut objective_history = cfg.record_history.then(Vec::new);
    let mut state = init;
    let mut converged = false;
    while state.iteration < cfg.max_iter {
        state = iterate(s, cfg, &state)?;
        if let Some(h) = residual_history.as_mut() {
            h.push((state.eps_primal, state.eps_dual));
        }
        if let Some(h) = objective_history.as_mut() {
            h.push(gfgl_objective(&state.u, s, &cfg.reg)?);
        }
        if state.eps_primal <= cfg.tol_primal && state.eps_dual <= cfg.tol_dual {
            converged = true;
            break;
        }
    }
    finish(s, cfg, state, converged, residual_history, objective_history)
}

/// Smallest eigenvalue tolerated in a returned estimate before it is
/// reported as indefinite; values in `[-PD_SLACK, 0]` are shifted by
/// `PD_SLACK·I`.
const PD_SLACK: f64 = 1e-8;

fn finish(
    s: &LocalCovarianceSeq,
    cfg: &SolverConfig,
    state: SolverState,
    converged: bool,
    residual_history: Option<Vec<(f64, f64)>>,
    objective_history: Option<Vec<f64>>,
) -> Result<SolveResult> {
    let t_len = state.t_len();
    let p = state.dim();
    let mut estimates = Vec::with_capacity(t_len);
    for (t, v1) in state.v1.iter().enumerate() {
        let mut theta = symmetrize(v1);
        let lo = min_eigenvalue(&theta)?;
        if lo < -PD_SLACK {
            return Err(GfglError::NotPositiveDefinite { t: t + 1 });
        }
        if lo <= 0.0 {
            theta += Mat::identity(p, p) * PD_SLACK;
        }
        estimates.push(theta);
    }
    let jumps: Vec<bool> = (0..t_len).map(|t| t > 0 && state.w[t].iter().any(|&x| x != 0.0)).collect();
    let jump_norms: Vec<f64> = (0..t_len).map(|t| if t == 0 { 0.0 } else { state.w[t].norm() }).collect();
    let changepoints: Vec<usize> = (0..t_len).filter(|&t| jumps[t]).map(|t| t + 1).collect();
    let segmentation = Segmentation::new(changepoints, t_len)?;
    let final_objective = gfgl_objective(&estimates, s, &cfg.reg)?;
    let precisions = PrecisionSequence::new(estimates)?.with_jump_indicators(jumps)?;
    Ok(SolveResult {
        precisions,
        segmentation,
        iterations: state.iteration,
        converged,
        final_objective,
        eps_primal: state.eps_primal,
        eps_dual: state.eps_dual,
        jump_norms,
        residual_history,
        objective_history,
        state,
    })
}
