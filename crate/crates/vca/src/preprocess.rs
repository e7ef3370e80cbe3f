//! Mean-centering PCA projection applied before basis computation, plus the
//! optional global rescale that keeps projected point magnitudes O(1).

use ndarray::{Array1, Array2, Axis};
use ndarray_linalg::{Eigh, UPLO};
use serde::{Deserialize, Serialize};

use crate::basis::PointSet;
use crate::error::VcaError;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjector {
    pub mean: Array1<f64>,
    /// d x n, orthonormal rows, by descending explained variance.
    pub components: Array2<f64>,
    /// Descending, clamped at zero.
    pub explained_variance: Vec<f64>,
}

/// Fit a PCA projector to the top `d` directions of the centered data.
pub fn fit_pca(x: &PointSet, d: usize) -> Result<PcaProjector> {
    let n = x.dim();
    let m = x.len();
    if d == 0 || d > n.min(m) {
        return Err(VcaError::invalid(format!(
            "pca dimension {d} out of range 1..=min({n}, {m})"
        )));
    }
    let mean = x.data().mean_axis(Axis(0)).expect("nonempty");
    let centered = x.data() - &mean.view().insert_axis(Axis(0));
    let denom = (m.max(2) - 1) as f64;
    let cov = centered.t().dot(&centered) / denom;
    let (vals, vecs) = cov
        .eigh(UPLO::Lower)
        .map_err(|e| VcaError::Backend(format!("eigh(cov): {e}")))?;
    // eigh returns ascending; take the top d, descending.
    let mut components = Array2::zeros((d, n));
    let mut explained = Vec::with_capacity(d);
    for out in 0..d {
        let src = n - 1 - out;
        let mut row = vecs.column(src).to_owned();
        // fix sign: largest-magnitude entry positive, for determinism
        let lead = row
            .iter()
            .cloned()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if lead < 0.0 {
            row.mapv_inplace(|v| -v);
        }
        components.row_mut(out).assign(&row);
        explained.push(vals[src].max(0.0));
    }
    Ok(PcaProjector {
        mean,
        components,
        explained_variance: explained,
    })
}

/// Project rows onto the fitted components: x -> components (x - mean).
pub fn project(p: &PcaProjector, points: &PointSet) -> Result<PointSet> {
    if points.dim() != p.mean.len() {
        return Err(VcaError::dim(format!(
            "projector expects dimension {}, got {}",
            p.mean.len(),
            points.dim()
        )));
    }
    let centered = points.data() - &p.mean.view().insert_axis(Axis(0));
    PointSet::new(centered.dot(&p.components.t()))
}

/// RMS of the row norms; dividing a projected training set by this puts its
/// points at unit scale on average.
pub fn rms_row_norm(points: &PointSet) -> f64 {
    let sum: f64 = points.data().iter().map(|v| v * v).sum();
    (sum / points.len() as f64).sqrt()
}

/// Uniformly scale every entry by `1/scale`.
pub fn rescale(points: &PointSet, scale: f64) -> Result<PointSet> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(VcaError::invalid(format!("invalid scale {scale}")));
    }
    PointSet::new(points.data().mapv(|v| v / scale))
}
