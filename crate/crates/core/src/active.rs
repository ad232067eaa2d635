//! Warm starts assembled from fits restricted to a segmentation.
//!
//! On a fixed segmentation the problem collapses to one matrix per block,
//! with the block means of `Ŝ` weighted by the block lengths. Its solution,
//! repeated over each block, is completed to a full ADMM state by taking the
//! fusion multipliers as tail sums of the stationarity terms. Time points
//! where those multipliers exceed `λ2` become changepoints and the reduced
//! problem is solved again. The completed state is an exact fixed point of
//! the full iteration once no multiplier exceeds `λ2`, so the ADMM started
//! from it only has to polish.

use crate::error::{GfglError, Result};
use crate::matops::inverse_spd;
use crate::solver::{solve_weighted, SolverConfig, SolverState};
use crate::types::{LocalCovarianceSeq, Segmentation};
use crate::Mat;

/// Relative slack on `‖multiplier‖ ≤ λ2` before a time point is called a violation.
const VIOLATION_SLACK: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct SegmentStart {
    pub state: SolverState,
    pub segmentation: Segmentation,
    pub rounds: usize,
    /// `max_t ‖multiplier(t)‖ / λ2` over non-changepoints; at most `1` up to
    /// the slack when the start is a fixed point.
    pub max_ratio: f64,
}

struct BlockFit {
    thetas: Vec<Mat>,
    /// `λ1` times the ℓ1 subgradient of each block.
    l1_sub: Vec<Mat>,
    /// Blocks whose jump from the previous block vanished.
    fused: Vec<bool>,
}

fn fit_blocks(s: &LocalCovarianceSeq, cfg: &SolverConfig, seg: &Segmentation) -> Result<BlockFit> {
    let ranges = seg.block_ranges();
    let weights: Vec<f64> = ranges.iter().map(|r| r.len() as f64).collect();
    let means: Vec<Mat> = ranges
        .iter()
        .map(|r| {
            let mut acc = Mat::zeros(s.dim(), s.dim());
            for m in &s.matrices()[r.clone()] {
                acc += m;
            }
            acc / r.len() as f64
        })
        .collect();
    let reduced = LocalCovarianceSeq::from_matrices(means)?;
    let n_mean = weights.iter().sum::<f64>() / weights.len() as f64;
    let inner = cfg
        .clone()
        .with_gamma(10.0 * n_mean)
        .with_tolerance(1e-10 * n_mean)
        .with_max_iter(100_000)
        .with_parallel(false);
    let (st, _) = solve_weighted(&reduced, &weights, &inner, SolverState::cold(weights.len(), s.dim()))?;

    let l1 = cfg.reg.lambda1;
    let (g1, gw) = (inner.gamma_v1, inner.gamma_w);
    let l1_sub = (0..weights.len())
        .map(|k| {
            let raw = if k == 0 {
                &st.dual_v1[0] * g1
            } else {
                &st.dual_v1[k] * g1 - &st.dual_w[k] * gw
            } / weights[k];
            let theta = &st.v1[k];
            Mat::from_fn(raw.nrows(), raw.ncols(), |i, j| {
                if i == j {
                    0.0
                } else if theta[(i, j)] != 0.0 {
                    l1 * theta[(i, j)].signum()
                } else {
                    raw[(i, j)].clamp(-l1, l1)
                }
            })
        })
        .collect();
    let fused = (0..weights.len()).map(|k| k > 0 && st.w[k].iter().all(|&x| x == 0.0)).collect();
    Ok(BlockFit { thetas: st.v1, l1_sub, fused })
}

/// Builds a start for `cfg` beginning from the changepoints of `initial`,
/// adding and dropping changepoints for at most `max_rounds` reduced fits.
pub fn segment_start(
    s: &LocalCovarianceSeq,
    cfg: &SolverConfig,
    initial: &Segmentation,
    max_rounds: usize,
) -> Result<SegmentStart> {
    cfg.validate()?;
    let t_len = s.t_len();
    let p = s.dim();
    if initial.t_len() != t_len {
        return Err(GfglError::DimensionMismatch(format!(
            "initial segmentation covers T={} but the data has T={t_len}",
            initial.t_len()
        )));
    }
    let l2 = cfg.reg.lambda2;
    let mut seg = initial.clone();
    let mut rounds = 0;
    let mut seen = vec![seg.changepoints().to_vec()];
    loop {
        rounds += 1;
        let fit = fit_blocks(s, cfg, &seg)?;
        let ranges = seg.block_ranges();
        let mut block_of = vec![0; t_len];
        for (k, r) in ranges.iter().enumerate() {
            block_of[r.clone()].iter_mut().for_each(|b| *b = k);
        }
        let inverses = fit
            .thetas
            .iter()
            .enumerate()
            .map(|(k, th)| inverse_spd(th).ok_or(GfglError::NotPositiveDefinite { t: ranges[k].start + 1 }))
            .collect::<Result<Vec<_>>>()?;

        // y(t) = −Σ_{s≥t} (Ŝ(s) − Θ(s)⁻¹ + λ1 R1(s)), entry 0 unused
        let mut y = vec![Mat::zeros(p, p); t_len + 1];
        for t in (1..t_len).rev() {
            let k = block_of[t];
            y[t] = &y[t + 1] - (&s.matrices()[t] - &inverses[k] + &fit.l1_sub[k]);
        }
        y.truncate(t_len);

        let is_cp: Vec<bool> = (0..t_len).map(|t| t > 0 && block_of[t] != block_of[t - 1]).collect();
        let ratio: Vec<f64> = (0..t_len).map(|t| if t == 0 || is_cp[t] { 0.0 } else { y[t].norm() / l2 }).collect();
        let max_ratio = ratio.iter().cloned().fold(0.0, f64::max);

        // the worst violator joins; fused jumps leave
        let mut cps: Vec<usize> = seg
            .changepoints()
            .iter()
            .zip(fit.fused.iter().skip(1))
            .filter(|(_, &f)| !f)
            .map(|(&c, _)| c)
            .collect();
        let dropped = cps.len() < seg.num_changepoints();
        let worst = (1..t_len).max_by(|&a, &b| ratio[a].total_cmp(&ratio[b]));
        let added = match worst {
            Some(t) if ratio[t] > 1.0 + VIOLATION_SLACK => {
                cps.push(t + 1);
                true
            }
            _ => false,
        };
        cps.sort_unstable();
        // a repeated segmentation means the reduced fits disagree at the
        // margin; the ADMM sorts it out from here
        let repeat = seen.contains(&cps);
        if (!added && !dropped) || repeat || rounds >= max_rounds {
            let state = complete_state(cfg, &fit, &block_of, &y);
            return Ok(SegmentStart { state, segmentation: seg, rounds, max_ratio });
        }
        seen.push(cps.clone());
        seg = Segmentation::new(cps, t_len)?;
    }
}

fn complete_state(cfg: &SolverConfig, fit: &BlockFit, block_of: &[usize], y: &[Mat]) -> SolverState {
    let t_len = block_of.len();
    let p = fit.thetas[0].nrows();
    let (g1, g2, gw) = (cfg.gamma_v1, cfg.gamma_v2, cfg.gamma_w);
    let theta = |t: usize| fit.thetas[block_of[t]].clone();
    let mut st = SolverState::cold(t_len, p);
    st.u = (0..t_len).map(theta).collect();
    st.v1 = st.u.clone();
    st.v2 = st.u[..t_len - 1].to_vec();
    st.w = (0..t_len).map(|t| if t == 0 { Mat::zeros(p, p) } else { &st.u[t] - &st.u[t - 1] }).collect();
    st.dual_w = (0..t_len).map(|t| if t == 0 { Mat::zeros(p, p) } else { &y[t] / gw }).collect();
    st.dual_v1 = (0..t_len)
        .map(|t| {
            let sub = &fit.l1_sub[block_of[t]];
            if t == 0 {
                sub / g1
            } else {
                (sub + &y[t]) / g1
            }
        })
        .collect();
    st.dual_v2 = (0..t_len - 1).map(|t| -&y[t + 1] / g2).collect();
    st
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::lambda2_max;
    use crate::solver::{admm_solve, iterate, warm_start_solve};
    use crate::stationarity::kkt_residual;
    use crate::types::{local_covariances, PrecisionSequence, RegularizationConfig, TimeSeries};
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

    fn cfg(l1: f64, l2: f64) -> SolverConfig {
        SolverConfig::new(RegularizationConfig::new(l1, l2).unwrap()).with_tolerance(1e-7)
    }

    fn estimates(st: &SolverState) -> PrecisionSequence {
        let jumps = (0..st.t_len()).map(|t| t > 0 && st.w[t].iter().any(|&x| x != 0.0)).collect();
        PrecisionSequence::new(st.v1.clone()).unwrap().with_jump_indicators(jumps).unwrap()
    }

    #[test]
    fn above_bound_start_is_constant_fixed_point() {
        let s = jump_series(30, 3, 1);
        let c = cfg(0.1, lambda2_max(&s) * 1.01);
        let start = segment_start(&s, &c, &Segmentation::single_block(30), 10).unwrap();
        assert!(start.segmentation.changepoints().is_empty());
        assert!(start.max_ratio < 1.0);
        let res = warm_start_solve(&s, &c, &start.state).unwrap();
        assert_eq!(res.iterations, 1);
        assert!(res.segmentation.changepoints().is_empty());
        assert!(kkt_residual(&estimates(&start.state), &s, &c.reg).unwrap().max_residual < 1e-6);
    }

    #[test]
    fn start_is_stationary_and_matches_admm() {
        let s = jump_series(16, 2, 2);
        let c = cfg(0.1, lambda2_max(&s) * 0.4);
        let start = segment_start(&s, &c, &Segmentation::single_block(16), 50).unwrap();
        assert!(!start.segmentation.changepoints().is_empty());
        assert!(start.max_ratio <= 1.0 + 1e-6);
        let kkt = kkt_residual(&estimates(&start.state), &s, &c.reg).unwrap();
        assert!(kkt.max_residual < 1e-5, "{}", kkt.max_residual);

        let next = iterate(&s, &c, &start.state).unwrap();
        for (a, b) in next.u.iter().zip(&start.state.u) {
            assert!((a - b).norm() < 1e-6);
        }

        let long = c.clone().with_tolerance(1e-9).with_max_iter(200_000).with_gamma(5.0);
        let cold = admm_solve(&s, &long).unwrap();
        let warm = warm_start_solve(&s, &c, &start.state).unwrap();
        assert_eq!(warm.segmentation, cold.segmentation);
        assert!((warm.final_objective - cold.final_objective).abs() < 1e-6 * cold.final_objective.abs());
    }

    #[test]
    fn spurious_changepoints_are_dropped() {
        let s = jump_series(20, 3, 3);
        let c = cfg(0.1, lambda2_max(&s) * 1.5);
        let start = segment_start(&s, &c, &Segmentation::new(vec![4, 9, 15], 20).unwrap(), 10).unwrap();
        assert!(start.segmentation.changepoints().is_empty());
    }

    #[test]
    fn mismatched_initial_segmentation_is_rejected() {
        let s = jump_series(10, 2, 4);
        assert!(segment_start(&s, &cfg(0.1, 1.0), &Segmentation::single_block(9), 5).is_err());
    }
}
