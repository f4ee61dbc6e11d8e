//! Small learning toolkit: standardization, PCA, k-means, diagonal Gaussian
//! mixtures, DBSCAN, least squares and the adjusted Rand index.
//!
//! Everything works on a dense row-major [`Matrix`]. All randomized fits take
//! an explicit seed and are deterministic.

mod ari;
mod dbscan;
mod eigen;
mod gmm;
mod kmeans;
mod linreg;
mod matrix;
mod pca;
mod standardize;

pub use ari::adjusted_rand_index;
pub use dbscan::{dbscan, NOISE};
pub use eigen::{symmetric_eigen, SymEigen};
pub use gmm::{gmm_fit, GmmModel, VAR_FLOOR};
pub use kmeans::{kmeans, kmeans_restarts, KMeansResult};
pub use linreg::{linreg_fit, linreg_predict, LinearModel, RIDGE_LAMBDA};
pub use matrix::{sq_dist, Matrix};
pub use pca::{pca_fit, pca_transform, PcaModel};
pub use standardize::{standardize, Standardized};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MlError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArg(String),
}
