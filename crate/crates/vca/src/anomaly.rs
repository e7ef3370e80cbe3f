//! Transformation-classification anomaly detection.
//!
//! One polynomial basis is fitted per transformation of the normal training
//! data; a test point is scored by how confidently the per-transformation
//! feature distances identify which transformation it went through. Normal
//! points classify well (low score), anomalies do not.

use ndarray::{Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::basis::{
    evaluate, fit_vca, BasisSelection, NormalizationStrategy, PointSet, StrategyKind, VcaModel,
};
use crate::error::VcaError;
use crate::preprocess::{project, rescale, PcaProjector};
use crate::transforms::{apply, Transform};
use crate::Result;

/// Dimensionality reduction applied after each transform: PCA projection
/// followed by division by a fixed scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionStep {
    pub projector: PcaProjector,
    pub scale: f64,
}

impl ProjectionStep {
    pub fn apply(&self, points: &PointSet) -> Result<PointSet> {
        rescale(&project(&self.projector, points)?, self.scale)
    }
}

/// A fitted detector: M transforms, one vanishing basis per transform with its
/// frozen feature center and a per-feature weight vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyModel {
    pub schema_version: u32,
    pub transforms: Vec<Transform>,
    /// Applied to the transformed points before basis evaluation, when the
    /// transforms act on a higher-dimensional raw space (e.g. pixels).
    pub projection: Option<ProjectionStep>,
    pub bases: Vec<VcaModel>,
    pub centers: Vec<Array1<f64>>,
    pub weights: Vec<Array1<f64>>,
    pub eps_reg: f64,
}

impl AnomalyModel {
    pub fn n_transforms(&self) -> usize {
        self.transforms.len()
    }

    /// Transformed (and optionally projected) view of `points` under
    /// transform `i`; the space the i-th basis lives in.
    pub fn transformed(&self, points: &PointSet, i: usize) -> Result<PointSet> {
        let t = apply(&self.transforms[i], points)?;
        match &self.projection {
            Some(p) => p.apply(&t),
            None => Ok(t),
        }
    }
}

/// Per-point score and transformation-classification probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub scores: Vec<f64>,
    /// `|P| x M`: probability assigned to the true transform for each view.
    pub probabilities: Array2<f64>,
}

/// Result of gradient-descent weight tuning.
#[derive(Debug, Clone)]
pub struct OptimizedModel {
    pub model: AnomalyModel,
    /// Mean training score before the first step and after every epoch.
    pub loss_trajectory: Vec<f64>,
}

pub const DEFAULT_EPS_REG: f64 = 1e-6;

/// Fit one basis per transform on the transformed normal data.
///
/// With the contrastive strategy, the normalization set for transform `i` is
/// the union of the other transformed copies; coefficient and gradient
/// strategies ignore the other copies and normalize on the transform's own
/// data, which plugs the corresponding plain bases into the same scoring
/// frame.
pub fn fit_anomaly(
    x: &PointSet,
    transforms: Vec<Transform>,
    projection: Option<ProjectionStep>,
    strategy: StrategyKind,
    epsilon: f64,
    max_degree: usize,
    eps_reg: f64,
) -> Result<AnomalyModel> {
    let m = transforms.len();
    if m < 2 {
        return Err(VcaError::invalid("need at least 2 transforms"));
    }
    if !(eps_reg > 0.0 && eps_reg.is_finite()) {
        return Err(VcaError::invalid("eps_reg must be positive and finite"));
    }

    let mut model = AnomalyModel {
        schema_version: crate::basis::MODEL_SCHEMA_VERSION,
        transforms,
        projection,
        bases: Vec::with_capacity(m),
        centers: Vec::with_capacity(m),
        weights: Vec::with_capacity(m),
        eps_reg,
    };

    let wrap = |index: usize| move |e: VcaError| VcaError::TransformFit {
        index,
        source: Box::new(e),
    };

    let transformed: Vec<PointSet> = (0..m)
        .map(|i| model.transformed(x, i).map_err(wrap(i)))
        .collect::<Result<_>>()?;

    for i in 0..m {
        let strat = match strategy {
            StrategyKind::Contrastive => {
                let others: Vec<&PointSet> = (0..m).filter(|&j| j != i).map(|j| &transformed[j]).collect();
                NormalizationStrategy::Contrastive(PointSet::vstack(&others).map_err(wrap(i))?)
            }
            StrategyKind::Coefficient => NormalizationStrategy::Coefficient,
            StrategyKind::Gradient => NormalizationStrategy::Gradient,
        };
        let basis = fit_vca(&transformed[i], &strat, epsilon, max_degree).map_err(wrap(i))?;
        let feats = evaluate(&basis, &transformed[i], BasisSelection::Vanishing).map_err(wrap(i))?;
        let center = if feats.ncols() == 0 {
            Array1::zeros(0)
        } else {
            feats.mean_axis(Axis(0)).expect("nonempty")
        };
        let n_g = center.len();
        model.bases.push(basis);
        model.centers.push(center);
        model.weights.push(Array1::ones(n_g));
    }
    Ok(model)
}

/// Weighted squared feature distances `a[point, i, k]` for every pair of
/// (view transform `i`, basis `k`).
fn feature_distances(model: &AnomalyModel, points: &PointSet) -> Result<Array3<f64>> {
    let m = model.n_transforms();
    let mut a = Array3::zeros((points.len(), m, m));
    for i in 0..m {
        let view = model.transformed(points, i)?;
        for k in 0..m {
            let feats = evaluate(&model.bases[k], &view, BasisSelection::Vanishing)?;
            if feats.ncols() != model.centers[k].len() {
                return Err(VcaError::dim(format!(
                    "basis {k} emits {} features but center has {}",
                    feats.ncols(),
                    model.centers[k].len()
                )));
            }
            for (p, row) in feats.rows().into_iter().enumerate() {
                let d: f64 = row
                    .iter()
                    .zip(model.centers[k].iter())
                    .zip(model.weights[k].iter())
                    .map(|((&f, &c), &w)| {
                        let v = w * (f - c);
                        v * v
                    })
                    .sum();
                a[[p, i, k]] = d;
            }
        }
    }
    Ok(a)
}

/// Probabilities and scores from the distance tensor. Distances are >= 0, so
/// exp(-a) never overflows; underflow toward zero is harmless because the
/// regularizer keeps every probability strictly positive.
fn score_from_distances(a: &Array3<f64>, eps_reg: f64) -> (Vec<f64>, Array2<f64>) {
    let (npts, m, _) = a.dim();
    let mut probs = Array2::zeros((npts, m));
    let mut scores = vec![0.0; npts];
    for p in 0..npts {
        let mut s = 0.0;
        for i in 0..m {
            let e_ii = (-a[[p, i, i]]).exp();
            let denom: f64 = (0..m).map(|k| (-a[[p, i, k]]).exp()).sum::<f64>()
                + m as f64 * eps_reg;
            let pi = (e_ii + eps_reg) / denom;
            probs[[p, i]] = pi;
            s -= pi.ln();
        }
        scores[p] = s;
    }
    (scores, probs)
}

/// Score points: higher means less consistent with the normal class.
pub fn score(model: &AnomalyModel, points: &PointSet) -> Result<ScoreReport> {
    let a = feature_distances(model, points)?;
    let (scores, probabilities) = score_from_distances(&a, model.eps_reg);
    Ok(ScoreReport {
        scores,
        probabilities,
    })
}

/// Squared centered features per (view, basis): `q[i][k]` is `|X| x |G_k|`.
/// These stay fixed during weight optimization; only the weights move.
fn squared_centered_features(
    model: &AnomalyModel,
    x: &PointSet,
) -> Result<Vec<Vec<Array2<f64>>>> {
    let m = model.n_transforms();
    let mut q = Vec::with_capacity(m);
    for i in 0..m {
        let view = model.transformed(x, i)?;
        let mut per_k = Vec::with_capacity(m);
        for k in 0..m {
            let mut feats = evaluate(&model.bases[k], &view, BasisSelection::Vanishing)?;
            for mut row in feats.rows_mut() {
                for (v, &c) in row.iter_mut().zip(model.centers[k].iter()) {
                    let d = *v - c;
                    *v = d * d;
                }
            }
            per_k.push(feats);
        }
        q.push(per_k);
    }
    Ok(q)
}

fn distances_from_q(q: &[Vec<Array2<f64>>], weights: &[Array1<f64>]) -> Array3<f64> {
    let m = q.len();
    let npts = q[0][0].nrows();
    let mut a = Array3::zeros((npts, m, m));
    for i in 0..m {
        for k in 0..m {
            let w2 = weights[k].mapv(|w| w * w);
            let col = q[i][k].dot(&w2);
            for p in 0..npts {
                a[[p, i, k]] = col[p];
            }
        }
    }
    a
}

/// Mean score over the training set plus its gradient with respect to every
/// weight vector.
///
/// With e_ik = exp(-a_ik) and S_i = sum_k e_ik,
///   d(-log P_i)/d a_ik = delta_ki * e_ii/(e_ii + eps) - e_ik/(S_i + M eps)
/// and d a_ik / d w_k[j] = 2 w_k[j] q_ik[j].
fn loss_and_gradient(
    q: &[Vec<Array2<f64>>],
    weights: &[Array1<f64>],
    eps_reg: f64,
) -> (f64, Vec<Array1<f64>>) {
    let m = q.len();
    let npts = q[0][0].nrows();
    let a = distances_from_q(q, weights);
    let (scores, _) = score_from_distances(&a, eps_reg);
    let loss = scores.iter().sum::<f64>() / npts as f64;

    // coef[p, i, k] = d(score_p)/d a[p, i, k]
    let mut grad: Vec<Array1<f64>> = weights.iter().map(|w| Array1::zeros(w.len())).collect();
    for k in 0..m {
        if weights[k].is_empty() {
            continue;
        }
        // accumulate sum over p, i of coef * q[i][k][p, :]
        let mut acc = Array1::<f64>::zeros(weights[k].len());
        for i in 0..m {
            let mut coefs = Array1::zeros(npts);
            for p in 0..npts {
                let e_ii = (-a[[p, i, i]]).exp();
                let s_i: f64 = (0..m).map(|kk| (-a[[p, i, kk]]).exp()).sum();
                let e_ik = (-a[[p, i, k]]).exp();
                let mut c = -e_ik / (s_i + m as f64 * eps_reg);
                if k == i {
                    c += e_ii / (e_ii + eps_reg);
                }
                coefs[p] = c;
            }
            acc = acc + q[i][k].t().dot(&coefs);
        }
        grad[k] = 2.0 * &weights[k] * &acc / npts as f64;
    }
    (loss, grad)
}

/// Full-batch gradient descent on the mean training score over the weight
/// vectors; features and centers are frozen. Deterministic.
pub fn optimize_weights(
    model: &AnomalyModel,
    x: &PointSet,
    learning_rate: f64,
    epochs: usize,
) -> Result<OptimizedModel> {
    if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
        return Err(VcaError::invalid("learning rate must be finite and >= 0"));
    }
    let q = squared_centered_features(model, x)?;
    let mut weights = model.weights.clone();
    let mut trajectory = Vec::with_capacity(epochs + 1);
    for epoch in 0..=epochs {
        let (loss, grad) = loss_and_gradient(&q, &weights, model.eps_reg);
        if !loss.is_finite() {
            return Err(VcaError::Diverged(format!(
                "non-finite training loss at epoch {epoch}"
            )));
        }
        trajectory.push(loss);
        if epoch == epochs {
            break;
        }
        for (w, g) in weights.iter_mut().zip(grad.iter()) {
            *w -= &(learning_rate * g);
            if w.iter().any(|v| !v.is_finite()) {
                return Err(VcaError::Diverged(format!(
                    "non-finite weights at epoch {epoch}"
                )));
            }
        }
    }
    let mut out = model.clone();
    out.weights = weights;
    Ok(OptimizedModel {
        model: out,
        loss_trajectory: trajectory,
    })
}

/// Baseline score for a single fitted basis: Euclidean norm of the vanishing
/// feature vector at each point.
pub fn feature_norm_score(model: &VcaModel, points: &PointSet) -> Result<Vec<f64>> {
    let feats = evaluate(model, points, BasisSelection::Vanishing)?;
    Ok(feats
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect())
}
