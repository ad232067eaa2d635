//! Warm-started sweeps over a decreasing `λ2` grid.

use serde::Serialize;

use crate::error::{GfglError, Result};
use crate::active::segment_start;
use crate::solver::{admm_solve, warm_start_solve, SolveResult, SolverConfig};
use crate::types::{LocalCovarianceSeq, Segmentation};

/// Smallest `λ2` known to give a constant estimate: the largest Frobenius
/// norm of the tail sums `Σ_{t≥l} (S(t) − S̄)`, `l ≥ 2`. Above it the pooled
/// graphical lasso solution, repeated over time, is optimal.
pub fn lambda2_max(s: &LocalCovarianceSeq) -> f64 {
    let pooled = s.pooled();
    let mut tail = pooled.clone() * 0.0;
    let mut best = 0.0_f64;
    for m in s.matrices().iter().skip(1).rev() {
        tail += m - &pooled;
        best = best.max(tail.norm());
    }
    best
}

/// `n` values from `top` down by the factor `ratio`.
pub fn geometric_grid(top: f64, ratio: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| top * ratio.powi(k as i32)).collect()
}

/// Grid used when none is given: `n` values from just above
/// [`lambda2_max`] down by `ratio`. The margin keeps the first point off the
/// boundary, where rounding can leave a vanishing jump.
pub fn default_grid(s: &LocalCovarianceSeq, ratio: f64, n: usize) -> Vec<f64> {
    geometric_grid(lambda2_max(s) * (1.0 + 1e-3), ratio, n)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathPoint {
    pub lambda1: f64,
    pub lambda2: f64,
    pub k_hat: usize,
    pub changepoints: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub eps_primal: f64,
    pub eps_dual: f64,
}

#[derive(Debug, Clone, Default)]
pub struct PathOptions {
    /// Changepoint count to look for.
    pub target_k: Option<usize>,
    /// End the sweep at the first grid value reaching `target_k`.
    pub stop_at_target: bool,
    /// Start every grid point cold instead of from its predecessor.
    pub cold: bool,
    /// When consecutive grid values step over `target_k`, bisect between
    /// them (geometrically) up to this many times looking for it.
    pub refine_steps: usize,
}

#[derive(Debug, Clone)]
pub struct PathOutcome {
    /// Every solved point in decreasing `λ2`, bisection points included.
    pub points: Vec<PathPoint>,
    /// Index into `points` and full result of the largest `λ2` with
    /// `K̂ = target_k`.
    pub target: Option<(usize, SolveResult)>,
}

/// Reduced fits allowed per warm start.
const START_ROUNDS: usize = 50;

fn point(res: &SolveResult, lambda1: f64, lambda2: f64) -> PathPoint {
    PathPoint {
        lambda1,
        lambda2,
        k_hat: res.segmentation.num_changepoints(),
        changepoints: res.segmentation.changepoints().to_vec(),
        objective: res.final_objective,
        iterations: res.iterations,
        converged: res.converged,
        eps_primal: res.eps_primal,
        eps_dual: res.eps_dual,
    }
}

/// Solves at each `λ2` of `grid` in the given order. Unless `opts.cold`,
/// each point starts from [`segment_start`] seeded with the previous
/// changepoints, so the ADMM mostly certifies. `cfg.reg.lambda2` is
/// overwritten per point.
pub fn run_path(s: &LocalCovarianceSeq, cfg: &SolverConfig, grid: &[f64], opts: &PathOptions) -> Result<PathOutcome> {
    if grid.is_empty() {
        return Err(GfglError::InvalidConfig("empty lambda2 grid".into()));
    }
    let solve = |l2: f64, prev: &Segmentation| -> Result<SolveResult> {
        let mut c = cfg.clone();
        c.reg.lambda2 = l2;
        if opts.cold {
            admm_solve(s, &c)
        } else {
            let start = segment_start(s, &c, prev, START_ROUNDS)?;
            warm_start_solve(s, &c, &start.state)
        }
    };
    let mut points = Vec::with_capacity(grid.len());
    let mut target: Option<(f64, SolveResult)> = None;
    let mut prev = Segmentation::single_block(s.t_len());
    let mut prev_point: Option<(f64, usize, Segmentation)> = None;
    for &l2 in grid {
        let res = solve(l2, &prev)?;
        let k_hat = res.segmentation.num_changepoints();
        points.push(point(&res, cfg.reg.lambda1, l2));
        if let (Some(want), None) = (opts.target_k, &target) {
            if k_hat == want {
                target = Some((l2, res.clone()));
            } else if let Some((hi, _, seg_hi)) = prev_point.as_ref().filter(|(_, k, _)| *k < want && want < k_hat) {
                // bisect (hi, l2) for the skipped count
                let (mut hi, mut lo, mut seg_hi) = (*hi, l2, seg_hi.clone());
                for _ in 0..opts.refine_steps {
                    let mid = (hi * lo).sqrt();
                    let r = solve(mid, &seg_hi)?;
                    let k = r.segmentation.num_changepoints();
                    points.push(point(&r, cfg.reg.lambda1, mid));
                    if k == want {
                        target = Some((mid, r));
                        break;
                    } else if k < want {
                        hi = mid;
                        seg_hi = r.segmentation.clone();
                    } else {
                        lo = mid;
                    }
                }
            }
        }
        prev = res.segmentation.clone();
        prev_point = Some((l2, k_hat, res.segmentation));
        if target.is_some() && opts.stop_at_target {
            break;
        }
    }
    points.sort_by(|a, b| b.lambda2.total_cmp(&a.lambda2));
    let target = target.map(|(l2, res)| (points.iter().position(|p| p.lambda2 == l2).unwrap(), res));
    Ok(PathOutcome { points, target })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{local_covariances, RegularizationConfig, TimeSeries};
    use crate::Mat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn jump_series(t_len: usize, p: usize, seed: u64) -> LocalCovarianceSeq {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..t_len)
            .map(|t| {
                let sc = if t >= t_len / 2 { 3.0 } else { 1.0 };
                (0..p).map(|_| sc * rng.sample::<f64, _>(StandardNormal)).collect()
            })
            .collect();
        local_covariances(&TimeSeries::from_rows(&rows).unwrap())
    }

    fn cfg(l1: f64) -> SolverConfig {
        SolverConfig::new(RegularizationConfig::new(l1, 1.0).unwrap()).with_tolerance(1e-6).with_max_iter(50_000)
    }

    #[test]
    fn bound_gives_constant_fit() {
        let s = jump_series(12, 3, 1);
        let top = lambda2_max(&s);
        let out = run_path(&s, &cfg(0.1), &[top * 1.01, top * 0.5], &PathOptions::default()).unwrap();
        assert_eq!(out.points[0].k_hat, 0);
        assert!(out.points[1].k_hat > 0);
    }

    #[test]
    fn bound_matches_direct_sum() {
        let s = jump_series(6, 2, 2);
        let sbar = s.pooled();
        let mut best = 0.0_f64;
        for l in 1..6 {
            let mut acc = Mat::zeros(2, 2);
            for t in l..6 {
                acc += &s.matrices()[t] - &sbar;
            }
            best = best.max(acc.norm());
        }
        assert!((lambda2_max(&s) - best).abs() < 1e-12);
    }

    #[test]
    fn target_is_largest_matching_value() {
        let s = jump_series(20, 3, 3);
        let grid = geometric_grid(lambda2_max(&s), 0.8, 15);
        let opts = PathOptions { target_k: Some(1), ..Default::default() };
        let out = run_path(&s, &cfg(0.1), &grid, &opts).unwrap();
        let (idx, res) = out.target.expect("some grid value gives one changepoint");
        assert!(out.points[..idx].iter().all(|p| p.k_hat != 1));
        assert_eq!(res.segmentation.num_changepoints(), 1);
        assert_eq!(out.points.len(), grid.len());

        let early = run_path(&s, &cfg(0.1), &grid, &PathOptions { stop_at_target: true, ..opts }).unwrap();
        assert_eq!(early.points.len(), idx + 1);
    }

    #[test]
    fn warm_path_matches_cold_path() {
        let s = jump_series(10, 2, 4);
        let grid = geometric_grid(lambda2_max(&s), 0.6, 5);
        let warm = run_path(&s, &cfg(0.1), &grid, &PathOptions::default()).unwrap();
        let cold = run_path(&s, &cfg(0.1), &grid, &PathOptions { cold: true, ..Default::default() }).unwrap();
        for (a, b) in warm.points.iter().zip(&cold.points) {
            assert!((a.objective - b.objective).abs() < 1e-4 * b.objective.abs().max(1.0));
        }
        let total = |o: &PathOutcome| o.points.iter().map(|p| p.iterations).sum::<usize>();
        assert!(total(&warm) <= total(&cold));
    }

    #[test]
    fn skipped_target_is_found_by_bisection() {
        let s = jump_series(20, 3, 3);
        let top = lambda2_max(&s) * 1.001;
        let coarse = [top, top * 0.2];
        let plain = run_path(&s, &cfg(0.1), &coarse, &PathOptions::default()).unwrap();
        assert_eq!(plain.points[0].k_hat, 0);
        let want = 1;
        assert!(plain.points[1].k_hat > want, "coarse grid must skip the target");

        let opts = PathOptions { target_k: Some(want), refine_steps: 40, ..Default::default() };
        let out = run_path(&s, &cfg(0.1), &coarse, &opts).unwrap();
        let (idx, res) = out.target.expect("bisection reaches one changepoint");
        assert_eq!(res.segmentation.num_changepoints(), want);
        assert!(out.points.len() > coarse.len());
        assert!(out.points.windows(2).all(|w| w[0].lambda2 > w[1].lambda2));
        assert!(coarse[1] < out.points[idx].lambda2 && out.points[idx].lambda2 < coarse[0]);
    }

    #[test]
    fn empty_grid_is_rejected() {
        assert!(run_path(&jump_series(4, 2, 0), &cfg(0.1), &[], &PathOptions::default()).is_err());
    }
}
