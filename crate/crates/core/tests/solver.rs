use gfgl::solver::{admm_solve, compute_residuals, iterate, primal_residual, warm_start_solve, SolverConfig, SolverState};
use gfgl::stationarity::kkt_residual;
use gfgl::{gfgl_objective, local_covariances, LocalCovarianceSeq, Mat, RegularizationConfig, TimeSeries};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn series(t_len: usize, p: usize, seed: u64) -> TimeSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..t_len)
        .map(|_| (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    TimeSeries::from_rows(&rows).unwrap()
}

fn config(l1: f64, l2: f64, tol: f64) -> SolverConfig {
    SolverConfig::new(RegularizationConfig::new(l1, l2).unwrap())
        .with_tolerance(tol)
        .with_max_iter(200_000)
}

fn single(s: &Mat) -> LocalCovarianceSeq {
    LocalCovarianceSeq::from_matrices(vec![s.clone()]).unwrap()
}

#[test]
fn no_fusion_splits_into_independent_problems() {
    let s = local_covariances(&series(3, 2, 7));
    let joint = admm_solve(&s, &config(0.1, 0.0, 1e-9)).unwrap();
    assert!(joint.converged);
    let mut separate = 0.0;
    for m in s.matrices() {
        let r = admm_solve(&single(m), &config(0.1, 0.0, 1e-9)).unwrap();
        assert!(r.converged);
        separate += r.final_objective;
    }
    assert!((joint.final_objective - separate).abs() <= 1e-6, "{} vs {}", joint.final_objective, separate);
}

#[test]
fn huge_fusion_collapses_to_pooled_problem() {
    let t_len = 5;
    let l1 = 0.1;
    let s = local_covariances(&series(t_len, 3, 8));
    let res = admm_solve(&s, &config(l1, 1e6 * l1 * t_len as f64, 1e-9)).unwrap();
    let thetas = res.precisions.matrices();
    let spread = thetas.iter().map(|m| (m - &thetas[0]).norm()).fold(0.0, f64::max);
    assert!(spread <= 1e-6, "spread {spread}");
    assert!(res.segmentation.changepoints().is_empty());

    let pooled = admm_solve(&single(&s.pooled()), &config(l1, 0.0, 1e-10)).unwrap();
    let collapsed = t_len as f64 * pooled.final_objective;
    assert!((res.final_objective - collapsed).abs() <= 1e-6 * collapsed.abs(), "{} vs {}", res.final_objective, collapsed);
}

#[test]
fn planted_variance_jump_is_found() {
    let rows = vec![vec![0.3, -0.2], vec![-0.25, 0.3], vec![2.5, 2.0], vec![-2.2, -2.6]];
    let s = local_covariances(&TimeSeries::from_rows(&rows).unwrap());
    let mut hit = None;
    for k in 0..60 {
        let l2 = 5.0 * 0.85_f64.powi(k);
        let res = admm_solve(&s, &config(0.1, l2, 1e-8)).unwrap();
        if res.segmentation.changepoints() == [3] {
            hit = Some((l2, res));
            break;
        }
    }
    let (l2, res) = hit.expect("no λ2 on the grid isolates t=3");
    let kkt = kkt_residual(&res.precisions, &s, &RegularizationConfig::new(0.1, l2).unwrap()).unwrap();
    assert!(kkt.max_residual <= 1e-5, "{}", kkt.max_residual);
}

#[test]
fn fixed_points_satisfy_optimality() {
    for seed in 0..6 {
        let p = 2 + (seed as usize % 3);
        let t_len = 4 + 2 * (seed as usize % 4);
        let tol = 1e-6;
        let cfg = config(0.1, 0.4, tol);
        let s = local_covariances(&series(t_len, p, 100 + seed));
        let res = admm_solve(&s, &cfg).unwrap();
        assert!(res.converged);
        let kkt = kkt_residual(&res.precisions, &s, &cfg.reg).unwrap();
        assert!(kkt.feasible);
        // H(l) sums T − l + 1 terms, each off by O(tol)
        for (l, r) in kkt.per_l.iter().enumerate() {
            let terms = (t_len - l) as f64;
            assert!(*r <= 10.0 * tol * terms, "seed {seed}, l={}: {r}", l + 1);
        }
        if t_len <= 4 {
            assert!(kkt.max_residual <= 10.0 * tol, "seed {seed}: {}", kkt.max_residual);
        }
    }
}

#[test]
fn converged_result_respects_tolerances_and_is_pd() {
    let cfg = config(0.05, 0.5, 1e-5);
    let s = local_covariances(&series(10, 4, 3));
    let res = admm_solve(&s, &cfg).unwrap();
    assert!(res.converged);
    assert!(res.eps_primal <= cfg.tol_primal && res.eps_dual <= cfg.tol_dual);
    for m in res.precisions.matrices() {
        assert!(m.clone().symmetric_eigenvalues().min() > 0.0);
    }
    for (t, w) in res.state.w.iter().enumerate().skip(1) {
        let zero = w.iter().all(|&x| x == 0.0);
        assert!(zero || w.norm() > 0.0);
        assert_eq!(res.segmentation.changepoints().contains(&(t + 1)), !zero);
        assert_eq!(res.jump_norms[t], w.norm());
    }
}

#[test]
fn residuals_at_consensus_and_first_step() {
    let s = local_covariances(&series(4, 3, 1));
    let cold = SolverState::cold(4, 3);
    let mut consensus = cold.clone();
    for w in consensus.w.iter_mut() {
        w.fill(0.0);
    }
    assert_eq!(primal_residual(&consensus), 0.0);
    let cfg = config(0.1, 0.1, 1e-6);
    let next = iterate(&s, &cfg, &cold).unwrap();
    let (ep, _) = compute_residuals(&cold, &next, &cfg);
    assert!(ep > 0.0);
    assert_eq!((next.eps_primal, next.iteration), (ep, 1));
}

#[test]
fn warm_start_from_solution_stops_immediately() {
    let cfg = config(0.1, 0.3, 1e-7);
    let s = local_covariances(&series(6, 3, 4));
    let first = admm_solve(&s, &cfg).unwrap();
    let again = warm_start_solve(&s, &cfg, &first.state).unwrap();
    assert!(again.converged);
    assert!(again.iterations <= 2, "{}", again.iterations);
}

#[test]
fn warm_start_from_cold_state_matches_cold_solve() {
    let cfg = config(0.1, 0.3, 1e-7);
    let s = local_covariances(&series(6, 3, 5));
    let a = admm_solve(&s, &cfg).unwrap();
    let b = warm_start_solve(&s, &cfg, &SolverState::cold(6, 3)).unwrap();
    assert!((a.final_objective - b.final_objective).abs() <= 1e-8);
}

#[test]
fn warm_started_path_is_cheaper() {
    let s = local_covariances(&series(20, 3, 6));
    let grid: Vec<f64> = (0..6).map(|k| 2.0 * 0.6_f64.powi(k)).collect();
    let (mut cold_total, mut warm_total) = (0, 0);
    let mut state: Option<SolverState> = None;
    for &l2 in &grid {
        let cfg = config(0.1, l2, 1e-5);
        cold_total += admm_solve(&s, &cfg).unwrap().iterations;
        let res = match &state {
            Some(st) => warm_start_solve(&s, &cfg, st).unwrap(),
            None => admm_solve(&s, &cfg).unwrap(),
        };
        warm_total += res.iterations;
        state = Some(res.state);
    }
    assert!(warm_total <= cold_total, "{warm_total} > {cold_total}");
}

#[test]
fn warm_start_shape_mismatch_is_rejected() {
    let s = local_covariances(&series(5, 3, 9));
    assert!(warm_start_solve(&s, &config(0.1, 0.1, 1e-5), &SolverState::cold(4, 3)).is_err());
}

#[test]
fn runs_are_bitwise_reproducible() {
    let s = local_covariances(&series(12, 4, 10));
    let cfg = config(0.05, 0.5, 1e-6).with_history(true);
    let a = admm_solve(&s, &cfg).unwrap();
    let b = admm_solve(&s, &cfg).unwrap();
    let bits = |h: &[(f64, f64)]| h.iter().map(|(x, y)| (x.to_bits(), y.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(a.residual_history.as_ref().unwrap()), bits(b.residual_history.as_ref().unwrap()));
    assert_eq!(a.state, b.state);
    let objs = a.objective_history.unwrap();
    assert_eq!(objs.len(), a.iterations);
}

#[test]
fn parallel_matches_sequential() {
    let s = local_covariances(&series(16, 4, 11));
    let cfg = config(0.05, 0.5, 1e-6).with_history(true);
    let seq = admm_solve(&s, &cfg).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let par = pool.install(|| admm_solve(&s, &cfg.clone().with_parallel(true)).unwrap());
    assert_eq!(seq.state, par.state);
    assert_eq!(seq.residual_history, par.residual_history);
    assert_eq!(seq.final_objective.to_bits(), par.final_objective.to_bits());
}

#[test]
fn non_convergence_is_reported_not_raised() {
    let s = local_covariances(&series(8, 3, 12));
    let res = admm_solve(&s, &config(0.1, 0.5, 1e-12).with_max_iter(5)).unwrap();
    assert!(!res.converged);
    assert_eq!(res.iterations, 5);
}

#[test]
fn invalid_configuration_is_rejected() {
    let s = local_covariances(&series(4, 2, 13));
    let mut cfg = config(0.1, 0.1, 1e-5);
    cfg.gamma_w = 0.0;
    assert!(admm_solve(&s, &cfg).is_err());
    assert!(RegularizationConfig::new(0.0, 1.0).is_err());
}

#[test]
fn objective_matches_reported_value() {
    let cfg = config(0.2, 0.2, 1e-6);
    let s = local_covariances(&series(5, 3, 14));
    let res = admm_solve(&s, &cfg).unwrap();
    let direct = gfgl_objective(res.precisions.matrices(), &s, &cfg.reg).unwrap();
    assert_eq!(direct, res.final_objective);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn solver_output_is_positive_definite(seed in 0u64..1000, l2 in 0.0f64..2.0) {
        let s = local_covariances(&series(5, 3, seed));
        let res = admm_solve(&s, &config(0.1, l2, 1e-5)).unwrap();
        for m in res.precisions.matrices() {
            prop_assert!(m.clone().symmetric_eigenvalues().min() > 0.0);
        }
    }
}
