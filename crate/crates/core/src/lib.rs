//! Group-fused graphical lasso (GFGL).
//!
//! Joint estimation of a sequence of sparse precision matrices that is
//! piecewise constant in time, together with the changepoints where the
//! underlying Gaussian graphical model switches. The estimator is computed
//! with a multi-block ADMM ([`solver`]), certified with a first-order
//! optimality checker ([`stationarity`]) and cross-checked against an
//! independent slow solver ([`reference`]). [`simulate`] and [`evaluate`]
//! provide synthetic ground truth and the metrics used to score fits.

pub mod active;
pub mod error;
pub mod evaluate;
pub mod matops;
pub mod path;
pub mod reference;
pub mod segmentation;
pub mod simulate;
pub mod solver;
pub mod stationarity;
pub mod types;

pub use error::{GfglError, Result};
pub use nalgebra::DMatrix;
pub use types::{
    gfgl_objective, local_covariances, GroundTruth, LocalCovarianceSeq, PrecisionSequence,
    RegularizationConfig, Segmentation, TimeSeries,
};

/// Dense real matrix used throughout the crate.
pub type Mat = DMatrix<f64>;
