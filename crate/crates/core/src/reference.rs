//! Slow independent solver for tiny GFGL instances, used to cross-check the
//! ADMM.
//!
//! The absolute values are replaced by `√(x² + μ²) − μ` and the group norms
//! by `√(‖G‖² + μ²) − μ`, which turns the problem into a smooth, strictly
//! convex one. It is minimised by damped Newton steps with the exact Hessian
//! while `μ` is driven towards zero, each stage warm-started from the last.
//! The exact objective of the final point is an upper bound on the minimum
//! that overshoots by at most a few multiples of the last `μ`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GfglError, Result};
use crate::matops::inverse_spd;
use crate::types::{gfgl_objective, LocalCovarianceSeq, RegularizationConfig};
use crate::Mat;

pub const MAX_DIM: usize = 3;
pub const MAX_T: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub mu_start: f64,
    pub mu_end: f64,
    /// Factor applied to `μ` between stages.
    pub mu_factor: f64,
    pub max_newton: usize,
    /// Extra random starting points beyond the deterministic one.
    pub restarts: usize,
    pub seed: u64,
    /// Objective change between the last two stages above which the
    /// result is flagged.
    pub stability_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { mu_start: 1e-2, mu_end: 1e-9, mu_factor: 0.1, max_newton: 500, restarts: 2, seed: 0, stability_tol: 1e-4 }
    }
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    /// Exact GFGL objective of `precisions`.
    pub objective: f64,
    pub precisions: Vec<Mat>,
    /// Set when some Newton stage ran out of steps or the objective had not
    /// settled over the last stages.
    pub warning: bool,
}

/// Coordinates of the upper triangle (row ≤ column) of a `p × p` matrix.
fn triangle(p: usize) -> Vec<(usize, usize)> {
    (0..p).flat_map(|j| (0..=j).map(move |i| (i, j))).collect()
}

struct Problem<'a> {
    s: &'a LocalCovarianceSeq,
    reg: &'a RegularizationConfig,
    p: usize,
    t_len: usize,
    coords: Vec<(usize, usize)>,
}

impl Problem<'_> {
    fn m(&self) -> usize {
        self.coords.len()
    }

    fn unpack(&self, x: &DVector<f64>) -> Vec<Mat> {
        let m = self.m();
        (0..self.t_len)
            .map(|t| {
                let mut a = Mat::zeros(self.p, self.p);
                for (k, &(i, j)) in self.coords.iter().enumerate() {
                    a[(i, j)] = x[t * m + k];
                    a[(j, i)] = x[t * m + k];
                }
                a
            })
            .collect()
    }

    fn pack(&self, mats: &[Mat]) -> DVector<f64> {
        let m = self.m();
        DVector::from_fn(self.t_len * m, |r, _| {
            let (i, j) = self.coords[r % m];
            mats[r / m][(i, j)]
        })
    }

    /// Entries off the diagonal appear twice in the matrix.
    fn weight(&self, k: usize) -> f64 {
        let (i, j) = self.coords[k];
        if i == j {
            1.0
        } else {
            2.0
        }
    }

    fn unit(&self, k: usize) -> Mat {
        let (i, j) = self.coords[k];
        let mut e = Mat::zeros(self.p, self.p);
        e[(i, j)] = 1.0;
        e[(j, i)] = 1.0;
        e
    }

    /// Smoothed objective; `None` outside the positive-definite cone.
    fn value(&self, x: &DVector<f64>, mu: f64) -> Option<f64> {
        let mats = self.unpack(x);
        let m = self.m();
        let mut f = 0.0;
        for (t, a) in mats.iter().enumerate() {
            let chol = a.clone().cholesky()?;
            let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
            f += -logdet + (&self.s.matrices()[t] * a).trace();
            for k in 0..m {
                if self.weight(k) == 2.0 {
                    let v = x[t * m + k];
                    f += 2.0 * self.reg.lambda1 * ((v * v + mu * mu).sqrt() - mu);
                }
            }
            if t > 0 {
                let q: f64 = (0..m).map(|k| self.weight(k) * (x[t * m + k] - x[(t - 1) * m + k]).powi(2)).sum();
                f += self.reg.lambda2 * ((q + mu * mu).sqrt() - mu);
            }
        }
        Some(f)
    }

    fn gradient_hessian(&self, x: &DVector<f64>, mu: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let m = self.m();
        let n = self.t_len * m;
        let mats = self.unpack(x);
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        let units: Vec<Mat> = (0..m).map(|k| self.unit(k)).collect();
        for (t, a) in mats.iter().enumerate() {
            let inv = inverse_spd(a)?;
            let s = &self.s.matrices()[t];
            let prods: Vec<Mat> = units.iter().map(|e| &inv * e).collect();
            for k in 0..m {
                let r = t * m + k;
                g[r] = (&units[k] * (s - &inv)).trace();
                for l in 0..m {
                    h[(r, t * m + l)] = (&prods[k] * &prods[l]).trace();
                }
                if self.weight(k) == 2.0 {
                    let v = x[r];
                    let d = (v * v + mu * mu).sqrt();
                    g[r] += 2.0 * self.reg.lambda1 * v / d;
                    h[(r, r)] += 2.0 * self.reg.lambda1 * mu * mu / (d * d * d);
                }
            }
            if t > 0 {
                let diff: Vec<f64> = (0..m).map(|k| self.weight(k) * (x[t * m + k] - x[(t - 1) * m + k])).collect();
                let q: f64 = (0..m).map(|k| diff[k] * (x[t * m + k] - x[(t - 1) * m + k])).sum();
                let root = (q + mu * mu).sqrt();
                let l2 = self.reg.lambda2;
                for k in 0..m {
                    let gk = l2 * diff[k] / root;
                    g[t * m + k] += gk;
                    g[(t - 1) * m + k] -= gk;
                    for l in 0..m {
                        let mut c = -l2 * diff[k] * diff[l] / (root * root * root);
                        if k == l {
                            c += l2 * self.weight(k) / root;
                        }
                        h[(t * m + k, t * m + l)] += c;
                        h[((t - 1) * m + k, (t - 1) * m + l)] += c;
                        h[(t * m + k, (t - 1) * m + l)] -= c;
                        h[((t - 1) * m + k, t * m + l)] -= c;
                    }
                }
            }
        }
        Some((g, h))
    }

    /// Damped Newton at fixed `μ`; returns the point and whether it converged.
    fn newton(&self, mut x: DVector<f64>, mu: f64, max_steps: usize) -> (DVector<f64>, bool) {
        let mut fx = match self.value(&x, mu) {
            Some(f) => f,
            None => return (x, false),
        };
        for _ in 0..max_steps {
            let Some((g, h)) = self.gradient_hessian(&x, mu) else { return (x, false) };
            let Some(chol) = h.cholesky() else { return (x, false) };
            let d = -chol.solve(&g);
            let decrement = -g.dot(&d);
            if decrement <= 1e-16 * (1.0 + fx.abs()) {
                return (x, true);
            }
            let mut step = 1.0;
            loop {
                let trial = &x + &d * step;
                if let Some(ft) = self.value(&trial, mu) {
                    if ft <= fx - 0.25 * step * decrement {
                        x = trial;
                        fx = ft;
                        break;
                    }
                }
                step *= 0.5;
                if step < 1e-20 {
                    return (x, decrement < 1e-14);
                }
            }
        }
        (x, false)
    }
}

/// Minimises the GFGL objective on a tiny instance (`p ≤ 3`, `T ≤ 10`).
pub fn oracle_gfgl(s: &LocalCovarianceSeq, reg: &RegularizationConfig, cfg: &OracleConfig) -> Result<OracleResult> {
    reg.validate()?;
    let (p, t_len) = (s.dim(), s.t_len());
    if p > MAX_DIM || t_len > MAX_T {
        return Err(GfglError::InvalidInput(format!(
            "the reference solver handles p <= {MAX_DIM} and T <= {MAX_T} (got p={p}, T={t_len})"
        )));
    }
    if !(cfg.mu_start >= cfg.mu_end && cfg.mu_end > 0.0 && cfg.mu_factor > 0.0 && cfg.mu_factor < 1.0) {
        return Err(GfglError::InvalidConfig("need mu_start >= mu_end > 0 and mu_factor in (0, 1)".into()));
    }
    let prob = Problem { s, reg, p, t_len, coords: triangle(p) };

    let pooled = s.pooled();
    let mut starts = vec![vec![Mat::from_fn(p, p, |i, j| if i == j { 1.0 / (pooled[(i, i)] + reg.lambda1) } else { 0.0 }); t_len]];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.restarts {
        starts.push(
            (0..t_len)
                .map(|_| {
                    let b = Mat::from_fn(p, p, |_, _| rng.random_range(-0.5..0.5));
                    Mat::identity(p, p) + &b * b.transpose()
                })
                .collect(),
        );
    }

    let mut best: Option<OracleResult> = None;
    for start in starts {
        let mut x = prob.pack(&start);
        let mut warning = false;
        let mut history = Vec::new();
        let mut mu = cfg.mu_start;
        loop {
            let (next, ok) = prob.newton(x, mu, cfg.max_newton);
            x = next;
            warning |= !ok;
            history.push(gfgl_objective(&prob.unpack(&x), s, reg)?);
            if mu <= cfg.mu_end {
                break;
            }
            mu = (mu * cfg.mu_factor).max(cfg.mu_end);
        }
        if let [.., a, b] = history[..] {
            warning |= (a - b).abs() > cfg.stability_tol;
        }
        let precisions = prob.unpack(&x);
        let objective = gfgl_objective(&precisions, s, reg)?;
        if best.as_ref().is_none_or(|b| objective < b.objective) {
            best = Some(OracleResult { objective, precisions, warning });
        }
    }
    Ok(best.expect("at least one start"))
}
