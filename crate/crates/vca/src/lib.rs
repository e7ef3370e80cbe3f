//! Polynomial basis computation on point sets with pluggable normalization,
//! plus a transformation-classification anomaly detector built on top of it.
//!
//! The core algorithm ([`basis::fit_vca`]) constructs, degree by degree, a set
//! of polynomials that vanish on a point set `X`. The normalization strategy
//! decides what "unit size" means for a polynomial: normalized on a second
//! point set `Y` (contrastive), unit coefficient vector, or unit mean gradient
//! norm. The anomaly module ([`anomaly`]) fits one contrastive basis per
//! transformation of the training data and scores new points by how well the
//! per-transformation bases classify which transformation produced them.

extern crate blas_src;

pub mod anomaly;
pub mod basis;
pub mod data_io;
pub mod error;
pub mod experiments;
pub mod linalg;
mod parallel;
pub mod preprocess;
pub mod transforms;

pub use basis::{fit_vca, BasisSelection, NormalizationStrategy, PointSet, VcaModel};
pub use error::VcaError;

pub type Result<T> = std::result::Result<T, VcaError>;
