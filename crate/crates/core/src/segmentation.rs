//! Changepoints from precision sequences, block averages and alignment of
//! estimated blocks with true ones.

use crate::error::{GfglError, Result};
use crate::types::{PrecisionSequence, Segmentation};
use crate::Mat;

/// Default Frobenius threshold for calling two consecutive estimates different.
pub const DEFAULT_TOL_CP: f64 = 1e-6;

/// Changepoints `{t ≥ 2 : ‖Θ(t) − Θ(t−1)‖_F > tol_cp}`. With `tol_cp = 0`
/// and attached jump indicators the indicators are used as they are.
pub fn extract_changepoints(theta: &PrecisionSequence, tol_cp: f64) -> Result<Segmentation> {
    if !(tol_cp >= 0.0) {
        return Err(GfglError::InvalidInput(format!("tol_cp must be nonnegative (got {tol_cp})")));
    }
    let t_len = theta.t_len();
    let cps: Vec<usize> = match theta.jump_indicators() {
        Some(ind) if tol_cp == 0.0 => (1..t_len).filter(|&t| ind[t]).map(|t| t + 1).collect(),
        _ => {
            let m = theta.matrices();
            (1..t_len).filter(|&t| (&m[t] - &m[t - 1]).norm() > tol_cp).map(|t| t + 1).collect()
        }
    };
    Segmentation::new(cps, t_len)
}

/// Element-wise mean of the estimates within each block.
pub fn block_precisions(theta: &PrecisionSequence, seg: &Segmentation) -> Result<Vec<Mat>> {
    if seg.t_len() != theta.t_len() {
        return Err(GfglError::DimensionMismatch(format!(
            "segmentation covers T={} but the sequence has T={}",
            seg.t_len(),
            theta.t_len()
        )));
    }
    let p = theta.dim();
    Ok(seg
        .block_ranges()
        .into_iter()
        .map(|r| {
            let n = r.len() as f64;
            let mut acc = Mat::zeros(p, p);
            for m in &theta.matrices()[r] {
                acc += m;
            }
            acc / n
        })
        .collect())
}

/// Overlap between estimated blocks (rows) and true blocks (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// `overlap[k][l]`: time points shared by estimated block `k` and true block `l`.
    pub overlap: Vec<Vec<usize>>,
    /// Index of the maximally overlapping true block for each estimated
    /// block; ties go to the lowest index. Blocks are 0-based.
    pub k_max: Vec<usize>,
}

/// Overlap matrix and maximally overlapping true block per estimated block.
pub fn max_overlap_alignment(est: &Segmentation, truth: &Segmentation) -> Result<Alignment> {
    if est.t_len() != truth.t_len() {
        return Err(GfglError::DimensionMismatch(format!(
            "segmentations cover T={} and T={}",
            est.t_len(),
            truth.t_len()
        )));
    }
    let es = est.separators();
    let ts = truth.separators();
    let overlap: Vec<Vec<usize>> = es
        .windows(2)
        .map(|e| {
            ts.windows(2)
                .map(|t| e[1].min(t[1]).saturating_sub(e[0].max(t[0])))
                .collect()
        })
        .collect();
    let k_max = overlap
        .iter()
        .map(|row| {
            let mut best = 0;
            for (l, &n) in row.iter().enumerate() {
                if n > row[best] {
                    best = l;
                }
            }
            best
        })
        .collect();
    Ok(Alignment { overlap, k_max })
}
