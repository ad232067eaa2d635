//! First-order optimality certificate for GFGL estimates.
//!
//! With `E(t) = S(t) − Θ(t)⁻¹` and `Γ(l) = Θ(l) − Θ(l−1)`, a minimiser
//! satisfies, for every `l`,
//!
//! ```text
//! H(l) + λ2·R2(l) = 0,   H(l) = Σ_{t≥l} (E(t) + λ1·R1(t)),
//! ```
//!
//! where `R1(t)` is a subgradient of the off-diagonal ℓ1 norm at `Θ(t)` and
//! `R2(l)` one of the Frobenius norm at `Γ(l)`, with `R2(1) = 0` since the
//! first time point carries no fusion term. Entries of `R1` at zeros and
//! `R2` at non-jumps are free; they are chosen here to make the violation as
//! small as possible.

use nalgebra::DMatrix;

use crate::error::{GfglError, Result};
use crate::matops::{inverse_spd, max_abs};
use crate::types::{LocalCovarianceSeq, PrecisionSequence, RegularizationConfig};
use crate::Mat;

/// Entries at or below this magnitude count as zero.
pub const DEFAULT_ZERO_TOL: f64 = 1e-9;

const BOUND_SLACK: f64 = 1e-12;

/// Subgradients of the two penalties. Free entries hold 0 until resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgradientPair {
    /// ℓ1 subgradients, one per time point; diagonals are always 0.
    pub r1: Vec<Mat>,
    /// `true` where `Θ(t)_ij` is zero and `R1(t)_ij` may lie anywhere in [−1, 1].
    pub r1_free: Vec<DMatrix<bool>>,
    /// Fusion subgradients; entry 0 is the fixed `R2(1) = 0`.
    pub r2: Vec<Mat>,
    /// `true` where `Γ(l)` is a jump and `R2(l) = Γ(l)/‖Γ(l)‖_F`.
    pub r2_forced: Vec<bool>,
}

impl SubgradientPair {
    /// Checks `|R1| ≤ 1` and `‖R2‖_F ≤ 1` up to rounding.
    pub fn is_feasible(&self) -> bool {
        self.r1.iter().all(|m| max_abs(m) <= 1.0 + BOUND_SLACK)
            && self.r2.iter().all(|m| m.norm() <= 1.0 + BOUND_SLACK)
    }
}

/// Result of [`kkt_residual`].
#[derive(Debug, Clone)]
pub struct KktReport {
    /// Largest element-wise violation over all `l`.
    pub max_residual: f64,
    /// Violation per time point `l = 1..T`.
    pub per_l: Vec<f64>,
    pub feasible: bool,
    /// Subgradients with the free entries resolved.
    pub subgradients: SubgradientPair,
}

/// Forced subgradients of `theta`. Jumps come from the attached indicators
/// when present, otherwise from `‖Γ(l)‖_max > zero_tol`.
pub fn build_subgradients(theta: &PrecisionSequence, zero_tol: f64) -> SubgradientPair {
    let t_len = theta.t_len();
    let p = theta.dim();
    let mut r1 = Vec::with_capacity(t_len);
    let mut r1_free = Vec::with_capacity(t_len);
    for m in theta.matrices() {
        let mut r = Mat::zeros(p, p);
        let mut free = DMatrix::from_element(p, p, false);
        for j in 0..p {
            for i in 0..p {
                if i == j {
                    continue;
                }
                let x = m[(i, j)];
                if x.abs() > zero_tol {
                    r[(i, j)] = x.signum();
                } else {
                    free[(i, j)] = true;
                }
            }
        }
        r1.push(r);
        r1_free.push(free);
    }

    let diffs = theta.differences();
    let mut r2 = vec![Mat::zeros(p, p)];
    let mut r2_forced = vec![false];
    for l in 1..t_len {
        let gamma = &diffs[l];
        let jump = match theta.jump_indicators() {
            Some(ind) => ind[l],
            None => max_abs(gamma) > zero_tol,
        };
        let norm = gamma.norm();
        if jump && norm > 0.0 {
            r2.push(gamma / norm);
            r2_forced.push(true);
        } else {
            r2.push(Mat::zeros(p, p));
            r2_forced.push(false);
        }
    }
    SubgradientPair { r1, r1_free, r2, r2_forced }
}

/// Optimality residual with the default zero tolerance.
pub fn kkt_residual(theta: &PrecisionSequence, s: &LocalCovarianceSeq, reg: &RegularizationConfig) -> Result<KktReport> {
    kkt_residual_with(theta, s, reg, DEFAULT_ZERO_TOL)
}

pub fn kkt_residual_with(
    theta: &PrecisionSequence,
    s: &LocalCovarianceSeq,
    reg: &RegularizationConfig,
    zero_tol: f64,
) -> Result<KktReport> {
    let t_len = theta.t_len();
    let p = theta.dim();
    if s.t_len() != t_len || s.dim() != p {
        return Err(GfglError::DimensionMismatch(format!(
            "estimate is T={t_len}, p={p} but covariances are T={}, p={}",
            s.t_len(),
            s.dim()
        )));
    }
    let (l1, l2) = (reg.lambda1, reg.lambda2);

    let mut e = Vec::with_capacity(t_len);
    for (t, (th, st)) in theta.matrices().iter().zip(s.matrices()).enumerate() {
        let inv = inverse_spd(th).ok_or(GfglError::Singular { t: t + 1 })?;
        e.push(st - inv);
    }

    let mut sub = build_subgradients(theta, zero_tol);
    // admissible range of R1(t) per entry
    let lo: Vec<Mat> = (0..t_len)
        .map(|t| sub.r1[t].zip_map(&sub.r1_free[t], |r, f| if f { -1.0 } else { r }))
        .collect();
    let hi: Vec<Mat> = (0..t_len)
        .map(|t| sub.r1[t].zip_map(&sub.r1_free[t], |r, f| if f { 1.0 } else { r }))
        .collect();

    // suffix sums: index l holds Σ_{t≥l}
    let suffix = |xs: &[Mat]| {
        let mut out = vec![Mat::zeros(p, p); t_len + 1];
        for t in (0..t_len).rev() {
            out[t] = &out[t + 1] + &xs[t];
        }
        out
    };
    let ce = suffix(&e);
    let clo = suffix(&lo);
    let chi = suffix(&hi);

    // target value of H(l) where it is pinned down
    let target: Vec<Option<Mat>> = (0..t_len)
        .map(|l| {
            if l == 0 {
                Some(Mat::zeros(p, p))
            } else if sub.r2_forced[l] {
                Some(&sub.r2[l] * -l2)
            } else {
                None
            }
        })
        .collect();
    let next_forced: Vec<usize> = {
        let mut out = vec![0; t_len];
        let mut last = 0;
        for l in 0..t_len {
            if target[l].is_some() {
                last = l;
            }
            out[l] = last;
        }
        out
    };

    let mut per_l = vec![0.0; t_len];
    let mut h_next = Mat::zeros(p, p);
    for l in (0..t_len).rev() {
        let base = &h_next + &e[l];
        let f_lo = &base + &lo[l] * l1;
        let f_hi = &base + &hi[l] * l1;
        let m = next_forced[l];
        let tgt = target[m].as_ref().expect("next forced index has a target");
        let mut h = Mat::zeros(p, p);
        for j in 0..p {
            for i in 0..p {
                let (a, b) = (f_lo[(i, j)], f_hi[(i, j)]);
                h[(i, j)] = if m == l {
                    tgt[(i, j)].clamp(a, b)
                } else {
                    // values of H(l) from which H(m) = target stays reachable
                    let shift = ce[m][(i, j)] - ce[l][(i, j)];
                    let r_lo = tgt[(i, j)] - shift - l1 * (chi[m][(i, j)] - chi[l][(i, j)]);
                    let r_hi = tgt[(i, j)] - shift - l1 * (clo[m][(i, j)] - clo[l][(i, j)]);
                    let (c, d) = (a.max(r_lo), b.min(r_hi));
                    if c <= d {
                        0.0_f64.clamp(c, d)
                    } else if b < r_lo {
                        b
                    } else {
                        a
                    }
                };
            }
        }

        if l1 > 0.0 {
            for j in 0..p {
                for i in 0..p {
                    if sub.r1_free[l][(i, j)] {
                        let r = (h[(i, j)] - base[(i, j)]) / l1;
                        sub.r1[l][(i, j)] = r.clamp(-1.0, 1.0);
                    }
                }
            }
        }

        per_l[l] = if let Some(tgt) = &target[l] {
            max_abs(&(&h - tgt))
        } else {
            let norm = h.norm();
            if norm <= l2 {
                if l2 > 0.0 {
                    sub.r2[l] = &h / -l2;
                }
                0.0
            } else {
                sub.r2[l] = &h / -norm;
                max_abs(&h) * (1.0 - l2 / norm)
            }
        };
        h_next = h;
    }

    let max_residual = per_l.iter().cloned().fold(0.0, f64::max);
    let feasible = sub.is_feasible();
    Ok(KktReport { max_residual, per_l, feasible, subgradients: sub })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{admm_solve, SolverConfig};
    use crate::types::local_covariances;
    use crate::TimeSeries;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_series(t_len: usize, p: usize, seed: u64) -> TimeSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..t_len)
            .map(|t| {
                let scale = if t >= t_len / 2 { 2.0 } else { 1.0 };
                (0..p).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
            })
            .collect();
        TimeSeries::from_rows(&rows).unwrap()
    }

    fn solve(x: &TimeSeries, l1: f64, l2: f64, tol: f64) -> (LocalCovarianceSeq, PrecisionSequence, RegularizationConfig) {
        let s = local_covariances(x);
        let reg = RegularizationConfig::new(l1, l2).unwrap();
        let cfg = SolverConfig::new(reg.clone()).with_tolerance(tol).with_max_iter(100_000);
        let res = admm_solve(&s, &cfg).unwrap();
        assert!(res.converged);
        (s, res.precisions, reg)
    }

    #[test]
    fn identity_fixed_point() {
        let t_len = 4;
        let eye = Mat::identity(3, 3);
        let theta = PrecisionSequence::new(vec![eye.clone(); t_len]).unwrap();
        let s = LocalCovarianceSeq::from_matrices(vec![eye; t_len]).unwrap();
        let reg = RegularizationConfig::new(0.01, 0.5).unwrap();
        let rep = kkt_residual(&theta, &s, &reg).unwrap();
        assert_eq!(rep.max_residual, 0.0);
        assert!(rep.feasible);
    }

    #[test]
    fn single_time_point_glasso_solution() {
        let s = LocalCovarianceSeq::from_matrices(vec![Mat::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0])]).unwrap();
        let reg = RegularizationConfig::new(0.05, 0.0).unwrap();
        // closed form for p = 2: the off-diagonal of Σ̂ = Θ⁻¹ is 0.3 − 0.05
        let sigma = Mat::from_row_slice(2, 2, &[1.0, 0.25, 0.25, 1.0]);
        let theta = PrecisionSequence::new(vec![sigma.try_inverse().unwrap()]).unwrap();
        let rep = kkt_residual(&theta, &s, &reg).unwrap();
        assert!(rep.max_residual <= 1e-12, "{}", rep.max_residual);
    }

    #[test]
    fn constant_sequence_has_free_fusion() {
        let theta = PrecisionSequence::new(vec![Mat::identity(2, 2); 5]).unwrap();
        let sub = build_subgradients(&theta, DEFAULT_ZERO_TOL);
        assert!(sub.r2_forced.iter().all(|f| !f));
    }

    #[test]
    fn single_jump_is_normalised() {
        let a = Mat::identity(3, 3);
        let mut b = a.clone();
        b[(0, 0)] = 2.0;
        b[(1, 2)] = 0.5;
        b[(2, 1)] = 0.5;
        let theta = PrecisionSequence::new(vec![a.clone(), a, b.clone(), b]).unwrap();
        let sub = build_subgradients(&theta, DEFAULT_ZERO_TOL);
        assert_eq!(sub.r2_forced, vec![false, false, true, false]);
        assert!((sub.r2[2].norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sign_flip_follows_entry() {
        let mk = |x: f64| Mat::from_row_slice(2, 2, &[1.0, x, x, 1.0]);
        let theta = PrecisionSequence::new(vec![mk(0.2), mk(0.1), mk(-0.1), mk(0.0)]).unwrap();
        let sub = build_subgradients(&theta, DEFAULT_ZERO_TOL);
        let signs: Vec<f64> = sub.r1.iter().map(|r| r[(0, 1)]).collect();
        assert_eq!(signs, vec![1.0, 1.0, -1.0, 0.0]);
        assert_eq!(sub.r1_free[3][(0, 1)], true);
        assert!(sub.r1.iter().all(|r| r[(0, 0)] == 0.0));
    }

    #[test]
    fn solver_output_is_stationary() {
        for (seed, p, t_len, l1, l2) in [(1, 2, 4, 0.05, 0.1), (2, 3, 8, 0.2, 1.0), (3, 4, 8, 0.05, 1.0), (4, 3, 6, 0.1, 0.3)] {
            let x = random_series(t_len, p, seed);
            let (s, theta, reg) = solve(&x, l1, l2, 1e-7);
            let rep = kkt_residual(&theta, &s, &reg).unwrap();
            assert!(rep.feasible);
            assert!(rep.max_residual <= 1e-5, "seed {seed}: {}", rep.max_residual);
        }
    }

    #[test]
    fn perturbation_is_detected() {
        let x = random_series(6, 3, 11);
        let (s, theta, reg) = solve(&x, 0.1, 0.5, 1e-8);
        let base = kkt_residual(&theta, &s, &reg).unwrap().max_residual;
        let mut mats = theta.matrices().to_vec();
        mats[2][(0, 0)] += 0.1;
        let bumped = PrecisionSequence::new(mats).unwrap();
        let worse = kkt_residual(&bumped, &s, &reg).unwrap().max_residual;
        assert!(worse > 10.0 * base.max(1e-8), "{base} vs {worse}");
    }

    #[test]
    fn residual_shrinks_with_tolerance() {
        let x = random_series(8, 3, 5);
        let mut last = f64::INFINITY;
        for tol in [1e-3, 1e-4, 1e-5] {
            let (s, theta, reg) = solve(&x, 0.1, 0.5, tol);
            let r = kkt_residual(&theta, &s, &reg).unwrap().max_residual;
            assert!(r <= last, "{tol}: {r} > {last}");
            last = r;
        }
    }
}
