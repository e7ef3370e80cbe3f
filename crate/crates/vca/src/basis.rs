//! Degree-by-degree construction of polynomial bases on point sets.
//!
//! `fit_vca` builds, for increasing degree `t`, candidate polynomials as
//! pairwise products of lower-degree nonvanishing polynomials, orthogonalizes
//! their evaluation vectors against everything already constructed, and splits
//! the solutions of a generalized eigenproblem into vanishing (`G`) and
//! nonvanishing (`F`) combinations. The normalization strategy picks the
//! right-hand side of that eigenproblem.
//!
//! A fitted [`VcaModel`] is a layered computation graph: polynomials are never
//! expanded into monomial coefficients, they are re-evaluated at new points by
//! replaying the same product/projection/combination steps.

use ndarray::{s, Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::VcaError;
use crate::linalg::{self, check_finite, solve_symmetric_gep, DEFAULT_RANK_TOL};
use crate::parallel;
use crate::Result;

/// Rows are points of `R^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    data: Array2<f64>,
}

impl PointSet {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(VcaError::invalid("point set must contain at least 1 point"));
        }
        check_finite(&data, "point set")?;
        Ok(PointSet { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(VcaError::invalid("point set must contain at least 1 point"));
        }
        let dim = rows[0].len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(VcaError::dim("rows have inconsistent lengths"));
        }
        let mut data = Array2::zeros((rows.len(), dim));
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                data[[i, j]] = v;
            }
        }
        PointSet::new(data)
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // by construction
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Stack several point sets of equal dimension.
    pub fn vstack(sets: &[&PointSet]) -> Result<PointSet> {
        if sets.is_empty() {
            return Err(VcaError::invalid("vstack of zero point sets"));
        }
        let dim = sets[0].dim();
        if sets.iter().any(|s| s.dim() != dim) {
            return Err(VcaError::dim("vstack dimension mismatch"));
        }
        let total: usize = sets.iter().map(|s| s.len()).sum();
        let mut data = Array2::zeros((total, dim));
        let mut row = 0;
        for set in sets {
            data.slice_mut(s![row..row + set.len(), ..])
                .assign(&set.data);
            row += set.len();
        }
        PointSet::new(data)
    }
}

/// Selects the right-hand-side matrix of the per-degree eigenproblem.
#[derive(Debug, Clone)]
pub enum NormalizationStrategy {
    /// Unit mean-square value on a second point set `Y`.
    Contrastive(PointSet),
    /// Unit coefficient vector over the candidate combination (plain VCA).
    Coefficient,
    /// Unit mean squared gradient norm over `X` (gradient-normalized VCA).
    Gradient,
}

/// Serializable tag of the strategy a model was fitted with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Contrastive,
    Coefficient,
    Gradient,
}

impl NormalizationStrategy {
    pub fn kind(&self) -> StrategyKind {
        match self {
            NormalizationStrategy::Contrastive(_) => StrategyKind::Contrastive,
            NormalizationStrategy::Coefficient => StrategyKind::Coefficient,
            NormalizationStrategy::Gradient => StrategyKind::Gradient,
        }
    }
}

/// How degree-t candidates are generated from lower layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CandidateSource {
    /// Degree 1: the coordinate functions x_1..x_n.
    Coordinates,
    /// Degree t>1: products F1\[i\] * F_{t-1}\[j\].
    Products(Vec<(usize, usize)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateLayer {
    pub source: CandidateSource,
    /// `|F^{t-1}| x |C_t|` projection used for orthogonalization.
    pub projection: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisLayer {
    /// Columns combine candidates into vanishing polynomials (sqrt(lambda) <= eps).
    pub combine_g: Array2<f64>,
    /// Columns combine candidates into nonvanishing polynomials.
    pub combine_f: Array2<f64>,
    pub eigenvalues_g: Vec<f64>,
    pub eigenvalues_f: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcaLayer {
    pub candidates: CandidateLayer,
    pub basis: BasisLayer,
}

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// A fitted layered polynomial basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcaModel {
    pub schema_version: u32,
    pub ambient_dim: usize,
    pub epsilon: f64,
    pub strategy: StrategyKind,
    /// One entry per degree t = 1, 2, ... Degree 0 is the implicit constant 1.
    pub layers: Vec<VcaLayer>,
    /// True when max_degree was reached with nonvanishing polynomials left.
    pub truncated: bool,
}

/// Which basis polynomials to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisSelection {
    Vanishing,
    NonVanishing,
    Both,
}

impl VcaModel {
    pub fn g_counts(&self) -> Vec<usize> {
        self.layers
            .iter()
            .map(|l| l.basis.combine_g.ncols())
            .collect()
    }

    pub fn f_counts(&self) -> Vec<usize> {
        self.layers
            .iter()
            .map(|l| l.basis.combine_f.ncols())
            .collect()
    }

    pub fn total_g(&self) -> usize {
        self.g_counts().iter().sum()
    }

    /// Count of nonvanishing polynomials including the degree-0 constant.
    pub fn total_f(&self) -> usize {
        self.f_counts().iter().sum::<usize>() + 1
    }
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

/// Per-point-set evaluation state threaded through the degree loop.
struct EvalState {
    /// `|P| x |F^{t-1}|` cumulative nonvanishing evaluations; column 0 is the
    /// degree-0 constant 1.
    f_cum: Array2<f64>,
    f1: Array2<f64>,
    fprev: Array2<f64>,
}

impl EvalState {
    fn init(npoints: usize) -> Self {
        EvalState {
            f_cum: Array2::ones((npoints, 1)),
            f1: Array2::zeros((npoints, 0)),
            fprev: Array2::ones((npoints, 1)),
        }
    }

    fn candidate_pre(&self, points: &Array2<f64>, source: &CandidateSource) -> Array2<f64> {
        match source {
            CandidateSource::Coordinates => points.to_owned(),
            CandidateSource::Products(pairs) => {
                let mut c = Array2::zeros((points.nrows(), pairs.len()));
                for (col, &(i, j)) in pairs.iter().enumerate() {
                    let prod = &self.f1.column(i) * &self.fprev.column(j);
                    c.column_mut(col).assign(&prod);
                }
                c
            }
        }
    }

    fn advance(&mut self, f_t: Array2<f64>, degree: usize) {
        if degree == 1 {
            self.f1 = f_t.clone();
        }
        self.f_cum = ndarray::concatenate(Axis(1), &[self.f_cum.view(), f_t.view()])
            .expect("row counts agree");
        self.fprev = f_t;
    }
}

/// Gradient state: per ambient dimension, the same matrices as [`EvalState`].
struct GradState {
    d_cum: Vec<Array2<f64>>,
    d_f1: Vec<Array2<f64>>,
    d_prev: Vec<Array2<f64>>,
}

impl GradState {
    fn init(npoints: usize, dims: usize) -> Self {
        GradState {
            d_cum: (0..dims).map(|_| Array2::zeros((npoints, 1))).collect(),
            d_f1: (0..dims).map(|_| Array2::zeros((npoints, 0))).collect(),
            d_prev: (0..dims).map(|_| Array2::zeros((npoints, 1))).collect(),
        }
    }

    /// Gradient of the pre-candidates in dimension `d` (product rule).
    fn candidate_pre_dim(
        &self,
        state: &EvalState,
        npoints: usize,
        source: &CandidateSource,
        d: usize,
        dims: usize,
    ) -> Array2<f64> {
        match source {
            CandidateSource::Coordinates => {
                let mut g = Array2::zeros((npoints, dims));
                g.column_mut(d).fill(1.0);
                g
            }
            CandidateSource::Products(pairs) => {
                let mut g = Array2::zeros((npoints, pairs.len()));
                for (col, &(i, j)) in pairs.iter().enumerate() {
                    let v = &self.d_f1[d].column(i) * &state.fprev.column(j)
                        + &state.f1.column(i) * &self.d_prev[d].column(j);
                    g.column_mut(col).assign(&v);
                }
                g
            }
        }
    }

    fn advance(&mut self, d_f_t: Vec<Array2<f64>>, degree: usize) {
        for (d, m) in d_f_t.into_iter().enumerate() {
            if degree == 1 {
                self.d_f1[d] = m.clone();
            }
            self.d_cum[d] = ndarray::concatenate(Axis(1), &[self.d_cum[d].view(), m.view()])
                .expect("row counts agree");
            self.d_prev[d] = m;
        }
    }
}

fn pair_indices(n_f1: usize, n_fprev: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(n_f1 * n_fprev);
    for i in 0..n_f1 {
        for j in 0..n_fprev {
            pairs.push((i, j));
        }
    }
    pairs
}

/// The normalization matrix for one candidate layer.
///
/// Contrastive: Gram matrix of the candidate evaluations on `Y`, divided by
/// `|Y|`. Coefficient: identity. Gradient: mean Gram matrix of the candidate
/// gradients over `X`.
pub fn normalization_matrix(
    candidates_on_y: Option<&Array2<f64>>,
    strategy_kind: StrategyKind,
    candidate_grads_on_x: Option<(&[Array2<f64>], usize)>,
    n_candidates: usize,
) -> Result<Array2<f64>> {
    match strategy_kind {
        StrategyKind::Contrastive => {
            let cy = candidates_on_y
                .ok_or_else(|| VcaError::invalid("contrastive normalization requires Y evaluations"))?;
            let m = cy.t().dot(cy) / cy.nrows() as f64;
            Ok(symmetrized(m))
        }
        StrategyKind::Coefficient => Ok(Array2::eye(n_candidates)),
        StrategyKind::Gradient => {
            let (grads, npoints) = candidate_grads_on_x
                .ok_or_else(|| VcaError::invalid("gradient normalization requires gradient evaluations"))?;
            let mut b = Array2::zeros((n_candidates, n_candidates));
            for g in grads {
                b = b + g.t().dot(g);
            }
            Ok(symmetrized(b / npoints as f64))
        }
    }
}

fn symmetrized(m: Array2<f64>) -> Array2<f64> {
    let mt = m.t().to_owned();
    (m + mt) * 0.5
}

/// Fit the layered basis on `X` under the given normalization.
pub fn fit_vca(
    x: &PointSet,
    strategy: &NormalizationStrategy,
    epsilon: f64,
    max_degree: usize,
) -> Result<VcaModel> {
    if epsilon < 0.0 {
        return Err(VcaError::invalid("epsilon must be >= 0"));
    }
    if max_degree < 1 {
        return Err(VcaError::invalid("max_degree must be >= 1"));
    }
    let n = x.dim();
    if let NormalizationStrategy::Contrastive(y) = strategy {
        if y.dim() != n {
            return Err(VcaError::dim(format!(
                "X has dimension {n} but Y has dimension {}",
                y.dim()
            )));
        }
    }

    let mut state_x = EvalState::init(x.len());
    let mut state_y = match strategy {
        NormalizationStrategy::Contrastive(y) => Some((EvalState::init(y.len()), y)),
        _ => None,
    };
    let mut grads = match strategy {
        NormalizationStrategy::Gradient => Some(GradState::init(x.len(), n)),
        _ => None,
    };

    let mut layers = Vec::new();
    let mut truncated = false;

    for t in 1..=max_degree {
        let source = if t == 1 {
            CandidateSource::Coordinates
        } else {
            let pairs = pair_indices(state_x.f1.ncols(), state_x.fprev.ncols());
            if pairs.is_empty() {
                break;
            }
            CandidateSource::Products(pairs)
        };

        let c_pre_x = state_x.candidate_pre(x.data(), &source);
        let n_cand = c_pre_x.ncols();

        // Orthogonalize against everything of lower degree.
        let f_pinv = linalg::pseudo_inverse(&state_x.f_cum, DEFAULT_RANK_TOL)?;
        let projection = f_pinv.dot(&c_pre_x);
        let c_x = &c_pre_x - &state_x.f_cum.dot(&projection);

        let c_y = state_y.as_ref().map(|(sy, y)| {
            let c_pre_y = sy.candidate_pre(y.data(), &source);
            &c_pre_y - &sy.f_cum.dot(&projection)
        });

        // Per-dimension candidate gradients for the gradient normalization.
        let c_grads: Option<Vec<Array2<f64>>> = grads.as_ref().map(|gs| {
            (0..n)
                .map(|d| {
                    let dpre = gs.candidate_pre_dim(&state_x, x.len(), &source, d, n);
                    &dpre - &gs.d_cum[d].dot(&projection)
                })
                .collect()
        });

        let a = symmetrized(c_x.t().dot(&c_x));
        let b = normalization_matrix(
            c_y.as_ref(),
            strategy.kind(),
            c_grads.as_ref().map(|g| (g.as_slice(), x.len())),
            n_cand,
        )?;

        let gep = solve_symmetric_gep(&a, &b, DEFAULT_RANK_TOL)?;

        // Eigenvalues ascending: the G block is the leading prefix.
        // Ties (sqrt(lambda) == epsilon) go to G, as do eigenvalues that are
        // zero up to the numerical rank tolerance — otherwise an exact-zero
        // direction computed as ~1e-17 would never count as vanishing at
        // epsilon = 0.
        let lmax = gep.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l));
        let zero_tol = DEFAULT_RANK_TOL * lmax;
        let split = gep
            .eigenvalues
            .iter()
            .position(|&l| l.sqrt() > epsilon && l > zero_tol)
            .unwrap_or(gep.eigenvalues.len());
        let combine_g = gep.eigenvectors.slice(s![.., ..split]).to_owned();
        let combine_f = gep.eigenvectors.slice(s![.., split..]).to_owned();
        let eigenvalues_g = gep.eigenvalues[..split].to_vec();
        let eigenvalues_f = gep.eigenvalues[split..].to_vec();

        let f_t_x = c_x.dot(&combine_f);
        let f_t_y = c_y.as_ref().map(|cy| cy.dot(&combine_f));
        let d_f_t = c_grads
            .as_ref()
            .map(|cg| cg.iter().map(|g| g.dot(&combine_f)).collect::<Vec<_>>());

        let n_f_t = combine_f.ncols();
        layers.push(VcaLayer {
            candidates: CandidateLayer { source, projection },
            basis: BasisLayer {
                combine_g,
                combine_f,
                eigenvalues_g,
                eigenvalues_f,
            },
        });

        if n_f_t == 0 {
            return Ok(VcaModel {
                schema_version: MODEL_SCHEMA_VERSION,
                ambient_dim: n,
                epsilon,
                strategy: strategy.kind(),
                layers,
                truncated: false,
            });
        }

        state_x.advance(f_t_x, t);
        if let (Some((sy, _)), Some(fy)) = (state_y.as_mut(), f_t_y) {
            sy.advance(fy, t);
        }
        if let (Some(gs), Some(df)) = (grads.as_mut(), d_f_t) {
            gs.advance(df, t);
        }
        if t == max_degree {
            truncated = true;
        }
    }

    Ok(VcaModel {
        schema_version: MODEL_SCHEMA_VERSION,
        ambient_dim: n,
        epsilon,
        strategy: strategy.kind(),
        layers,
        truncated,
    })
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

const EVAL_CHUNK: usize = 2048;

/// Evaluate basis polynomials at the rows of `p`.
///
/// Column order: vanishing polynomials by increasing degree, then (for
/// `NonVanishing`/`Both`) the degree-0 constant followed by nonvanishing
/// polynomials by increasing degree.
pub fn evaluate(model: &VcaModel, p: &PointSet, which: BasisSelection) -> Result<Array2<f64>> {
    check_dims(model, p)?;
    let blocks = parallel::map_chunks(p.len(), EVAL_CHUNK, |range| {
        let chunk = p.data().slice(s![range, ..]).to_owned();
        evaluate_chunk(model, &chunk, which)
    });
    stack_blocks(blocks)
}

/// Single-threaded reference path for [`evaluate`]; used by the benches to
/// compare against the data-parallel path. Results are identical.
pub fn evaluate_seq(model: &VcaModel, p: &PointSet, which: BasisSelection) -> Result<Array2<f64>> {
    check_dims(model, p)?;
    Ok(evaluate_chunk(model, p.data(), which))
}

fn check_dims(model: &VcaModel, p: &PointSet) -> Result<()> {
    if p.dim() != model.ambient_dim {
        return Err(VcaError::dim(format!(
            "model expects dimension {} but points have {}",
            model.ambient_dim,
            p.dim()
        )));
    }
    Ok(())
}

fn stack_blocks(blocks: Vec<Array2<f64>>) -> Result<Array2<f64>> {
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| VcaError::Backend(e.to_string()))
}

fn evaluate_chunk(model: &VcaModel, points: &Array2<f64>, which: BasisSelection) -> Array2<f64> {
    let mut state = EvalState::init(points.nrows());
    let mut g_blocks: Vec<Array2<f64>> = Vec::new();
    let mut f_blocks: Vec<Array2<f64>> = vec![Array2::ones((points.nrows(), 1))];

    for (idx, layer) in model.layers.iter().enumerate() {
        let t = idx + 1;
        let c_pre = state.candidate_pre(points, &layer.candidates.source);
        let c = &c_pre - &state.f_cum.dot(&layer.candidates.projection);
        if matches!(which, BasisSelection::Vanishing | BasisSelection::Both) {
            g_blocks.push(c.dot(&layer.basis.combine_g));
        }
        let f_t = c.dot(&layer.basis.combine_f);
        if matches!(which, BasisSelection::NonVanishing | BasisSelection::Both) {
            f_blocks.push(f_t.clone());
        }
        state.advance(f_t, t);
    }

    let mut blocks = Vec::new();
    match which {
        BasisSelection::Vanishing => blocks = g_blocks,
        BasisSelection::NonVanishing => blocks = f_blocks,
        BasisSelection::Both => {
            blocks.extend(g_blocks);
            blocks.extend(f_blocks);
        }
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    ndarray::concatenate(Axis(1), &views).expect("row counts agree")
}

/// Jacobians of the selected basis polynomials at each row of `p`:
/// entry `[point, polynomial, dimension]`.
pub fn evaluate_gradient(
    model: &VcaModel,
    p: &PointSet,
    which: BasisSelection,
) -> Result<Array3<f64>> {
    check_dims(model, p)?;
    let blocks = parallel::map_chunks(p.len(), EVAL_CHUNK, |range| {
        let chunk = p.data().slice(s![range, ..]).to_owned();
        evaluate_gradient_chunk(model, &chunk, which)
    });
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| VcaError::Backend(e.to_string()))
}

fn evaluate_gradient_chunk(
    model: &VcaModel,
    points: &Array2<f64>,
    which: BasisSelection,
) -> Array3<f64> {
    let npts = points.nrows();
    let dims = model.ambient_dim;
    let mut state = EvalState::init(npts);
    let mut gstate = GradState::init(npts, dims);

    // per dim: blocks of |P| x |basis| gradient values
    let mut g_blocks: Vec<Vec<Array2<f64>>> = vec![Vec::new(); dims];
    let mut f_blocks: Vec<Vec<Array2<f64>>> =
        vec![vec![Array2::zeros((npts, 1))]; dims];

    for (idx, layer) in model.layers.iter().enumerate() {
        let t = idx + 1;
        let c_pre = state.candidate_pre(points, &layer.candidates.source);
        let c = &c_pre - &state.f_cum.dot(&layer.candidates.projection);
        let d_c: Vec<Array2<f64>> = (0..dims)
            .map(|d| {
                let dpre = gstate.candidate_pre_dim(&state, npts, &layer.candidates.source, d, dims);
                &dpre - &gstate.d_cum[d].dot(&layer.candidates.projection)
            })
            .collect();

        for d in 0..dims {
            if matches!(which, BasisSelection::Vanishing | BasisSelection::Both) {
                g_blocks[d].push(d_c[d].dot(&layer.basis.combine_g));
            }
            if matches!(which, BasisSelection::NonVanishing | BasisSelection::Both) {
                f_blocks[d].push(d_c[d].dot(&layer.basis.combine_f));
            }
        }

        let f_t = c.dot(&layer.basis.combine_f);
        let d_f_t: Vec<Array2<f64>> = d_c.iter().map(|dc| dc.dot(&layer.basis.combine_f)).collect();
        state.advance(f_t, t);
        gstate.advance(d_f_t, t);
    }

    // Assemble |P| x |basis| x dims
    let per_dim: Vec<Array2<f64>> = (0..dims)
        .map(|d| {
            let mut blocks: Vec<Array2<f64>> = Vec::new();
            match which {
                BasisSelection::Vanishing => blocks = std::mem::take(&mut g_blocks[d]),
                BasisSelection::NonVanishing => blocks = std::mem::take(&mut f_blocks[d]),
                BasisSelection::Both => {
                    blocks.extend(std::mem::take(&mut g_blocks[d]));
                    blocks.extend(std::mem::take(&mut f_blocks[d]));
                }
            }
            let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
            ndarray::concatenate(Axis(1), &views).expect("row counts agree")
        })
        .collect();

    let n_basis = per_dim[0].ncols();
    let mut out = Array3::zeros((npts, n_basis, dims));
    for (d, m) in per_dim.iter().enumerate() {
        out.slice_mut(s![.., .., d]).assign(m);
    }
    out
}

/// RMS magnitude of each basis column evaluated on `p`; used by tests and
/// diagnostics.
pub fn column_rms(values: &Array2<f64>) -> Array1<f64> {
    let n = values.nrows() as f64;
    values
        .map_axis(Axis(0), |col| (col.iter().map(|v| v * v).sum::<f64>() / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn fit(
        x: &PointSet,
        strategy: &NormalizationStrategy,
        eps: f64,
        deg: usize,
    ) -> VcaModel {
        fit_vca(x, strategy, eps, deg).unwrap()
    }

    #[test]
    fn single_point_degree_one() {
        let x = PointSet::from_rows(&[vec![0.0]]).unwrap();
        let y = PointSet::from_rows(&[vec![1.0]]).unwrap();
        let model = fit(&x, &NormalizationStrategy::Contrastive(y.clone()), 0.0, 4);
        assert_eq!(model.layers.len(), 1);
        assert_eq!(model.g_counts(), vec![1]);
        assert_eq!(model.f_counts(), vec![0]);
        assert!(!model.truncated);
        let gx = evaluate(&model, &x, BasisSelection::Vanishing).unwrap();
        assert_abs_diff_eq!(gx[[0, 0]], 0.0, epsilon = 1e-12);
        let gy = evaluate(&model, &y, BasisSelection::Vanishing).unwrap();
        assert_abs_diff_eq!(gy[[0, 0]] * gy[[0, 0]], 1.0, epsilon = 1e-10);
    }

    fn circle_fixture() -> (PointSet, PointSet, VcaModel) {
        let x = PointSet::from_rows(&[
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
        ])
        .unwrap();
        let m = 8;
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / m as f64;
                vec![2.0 * a.cos(), 2.0 * a.sin()]
            })
            .collect();
        let y = PointSet::from_rows(&rows).unwrap();
        let model = fit(&x, &NormalizationStrategy::Contrastive(y.clone()), 0.0, 2);
        (x, y, model)
    }

    /// Brute-force oracle for the circle fixture: exact null space of the
    /// degree-<=2 monomial evaluation matrix on X, rescaled to unit RMS on Y.
    /// Returns the oracle polynomial evaluated on `pts` for the basis
    /// {1, x, y, x^2, xy, y^2}: here it is proportional to x^2 + y^2 - 1.
    fn circle_oracle_eval(y: &PointSet, pts: &PointSet) -> Vec<f64> {
        // g = x^2 + y^2 - 1 vanishes on X exactly; rescale to unit RMS on Y.
        let val = |p: &[f64]| p[0] * p[0] + p[1] * p[1] - 1.0;
        let ys: Vec<f64> = y
            .data()
            .rows()
            .into_iter()
            .map(|r| val(r.as_slice().unwrap()))
            .collect();
        let rms = (ys.iter().map(|v| v * v).sum::<f64>() / ys.len() as f64).sqrt();
        pts.data()
            .rows()
            .into_iter()
            .map(|r| val(r.as_slice().unwrap()) / rms)
            .collect()
    }

    #[test]
    fn circle_vanishing_component_matches_oracle() {
        let (x, y, model) = circle_fixture();
        // grid probe
        let mut rows = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                rows.push(vec![-2.0 + i as f64 * 0.45, -2.0 + j as f64 * 0.45]);
            }
        }
        let probe = PointSet::from_rows(&rows).unwrap();
        let oracle = circle_oracle_eval(&y, &probe);

        let gx = evaluate(&model, &x, BasisSelection::Vanishing).unwrap();
        // all G vanish on X
        for v in gx.iter() {
            assert!(v.abs() <= 1e-8, "not vanishing on X: {v}");
        }
        // The degree-2 vanishing components must span the oracle polynomial.
        // (xy also vanishes on the 4-point X, so the eigenbasis of the
        // degenerate zero eigenspace need not align with the oracle itself.)
        let gp = evaluate(&model, &probe, BasisSelection::Vanishing).unwrap();
        let g1_count: usize = model.g_counts()[0];
        let g2 = gp.slice(s![.., g1_count..]).to_owned();
        let rel = span_residual(&g2, &oracle);
        assert!(
            rel <= 1e-6,
            "degree-2 vanishing span does not recover the circle oracle (rel {rel})"
        );
    }

    /// Relative residual of least-squares fitting `target` by the columns of
    /// `basis`.
    fn span_residual(basis: &Array2<f64>, target: &[f64]) -> f64 {
        let t = Array1::from(target.to_vec());
        let pinv = linalg::pseudo_inverse(basis, 1e-12).unwrap();
        let coeffs = pinv.dot(&t);
        let fitted = basis.dot(&coeffs);
        let num: f64 = fitted
            .iter()
            .zip(t.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let den: f64 = t.iter().map(|v| v * v).sum();
        (num / den).sqrt()
    }

    #[test]
    fn circle_evaluate_on_and_off_variety() {
        let (_, y, model) = circle_fixture();
        let on = PointSet::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let off = PointSet::from_rows(&[vec![2.0, 0.0]]).unwrap();
        let von = evaluate(&model, &on, BasisSelection::Vanishing).unwrap();
        let voff = evaluate(&model, &off, BasisSelection::Vanishing).unwrap();
        assert!(von.iter().all(|v| v.abs() <= 1e-8));
        assert!(voff.iter().any(|v| v.abs() > 0.1));
        // off-variety magnitude consistent with the oracle polynomial: the
        // G evaluations' norm is at least the oracle value reachable in span
        let oracle = circle_oracle_eval(&y, &off);
        let norm: f64 = voff.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm >= oracle[0].abs() * (1.0 - 1e-6), "off-variety norm {norm}");
    }

    #[test]
    fn contrastive_y_normalization_holds_for_all_basis_polynomials() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = PointSet::new(Array2::from_shape_fn((20, 3), |_| rng.random_range(-1.0..1.0)))
            .unwrap();
        let y = PointSet::new(Array2::from_shape_fn((25, 3), |_| rng.random_range(-1.0..1.0)))
            .unwrap();
        let model = fit(&x, &NormalizationStrategy::Contrastive(y.clone()), 0.0, 3);
        let vals = evaluate(&model, &y, BasisSelection::Both).unwrap();
        let rms = column_rms(&vals);
        // skip the degree-0 constant column (index total_g)
        for (i, r) in rms.iter().enumerate() {
            if i == model.total_g() {
                continue;
            }
            assert!(
                (r * r - 1.0).abs() <= 1e-6,
                "column {i}: ||.(Y)||^2/|Y| = {}",
                r * r
            );
        }
    }

    #[test]
    fn orthogonality_residual_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = PointSet::new(Array2::from_shape_fn((30, 4), |_| rng.random_range(-1.0..1.0)))
            .unwrap();
        let model = fit(&x, &NormalizationStrategy::Coefficient, 0.0, 3);
        // replay: F^{t-1}(X)' C_t(X) ~ 0
        let mut state = EvalState::init(x.len());
        for (idx, layer) in model.layers.iter().enumerate() {
            let c_pre = state.candidate_pre(x.data(), &layer.candidates.source);
            let c = &c_pre - &state.f_cum.dot(&layer.candidates.projection);
            let resid = state.f_cum.t().dot(&c);
            let scale = c_pre.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for v in resid.iter() {
                assert!(v.abs() <= 1e-8 * scale, "layer {idx} residual {v}");
            }
            let f_t = c.dot(&layer.basis.combine_f);
            state.advance(f_t, idx + 1);
        }
    }

    #[test]
    fn coefficient_strategy_degree1_matches_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        // random low-rank X in R^6: points on a 2D subspace
        let basis = Array2::from_shape_fn((2, 6), |_| rng.random_range(-1.0..1.0));
        let coeff = Array2::from_shape_fn((25, 2), |_| rng.random_range(-1.0..1.0));
        let x = PointSet::new(coeff.dot(&basis)).unwrap();
        let model = fit(&x, &NormalizationStrategy::Coefficient, 0.0, 1);
        // independent rank of mean-centered X via SVD
        let mean = x.data().mean_axis(Axis(0)).unwrap();
        let centered = x.data() - &mean.broadcast((25, 6)).unwrap();
        use ndarray_linalg::SVD;
        let (_, s, _) = centered.svd(false, false).unwrap();
        let smax = s.iter().fold(0.0f64, |m, &v| m.max(v));
        let rank = s.iter().filter(|&&v| v > 1e-10 * smax).count();
        assert_eq!(model.g_counts()[0], 6 - rank);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = PointSet::new(Array2::from_shape_fn((15, 3), |_| rng.random_range(-1.0..1.0)))
            .unwrap();
        for strategy in [
            NormalizationStrategy::Coefficient,
            NormalizationStrategy::Gradient,
        ] {
            let model = fit(&x, &strategy, 0.0, 3);
            let pts = PointSet::new(Array2::from_shape_fn((50, 3), |_| {
                rng.random_range(-1.0..1.0)
            }))
            .unwrap();
            let jac = evaluate_gradient(&model, &pts, BasisSelection::Both).unwrap();
            let h = 1e-5;
            let vals = evaluate(&model, &pts, BasisSelection::Both).unwrap();
            let scale = vals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for d in 0..3 {
                let mut plus = pts.data().clone();
                plus.column_mut(d).mapv_inplace(|v| v + h);
                let mut minus = pts.data().clone();
                minus.column_mut(d).mapv_inplace(|v| v - h);
                let vp = evaluate(&model, &PointSet::new(plus).unwrap(), BasisSelection::Both)
                    .unwrap();
                let vm = evaluate(&model, &PointSet::new(minus).unwrap(), BasisSelection::Both)
                    .unwrap();
                let fd = (&vp - &vm) / (2.0 * h);
                for p in 0..pts.len() {
                    for b in 0..fd.ncols() {
                        let a = jac[[p, b, d]];
                        let e = fd[[p, b]];
                        assert!(
                            (a - e).abs() <= 1e-5 * scale.max(a.abs()),
                            "grad mismatch p={p} b={b} d={d}: {a} vs {e}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let x = PointSet::from_rows(&[vec![1.0, 2.0], vec![0.5, -0.25], vec![-1.0, 0.75]]).unwrap();
        let model = fit(&x, &NormalizationStrategy::Coefficient, 0.0, 2);
        let p = PointSet::from_rows(&[vec![0.3, 0.4]]).unwrap();
        let jac = evaluate_gradient(&model, &p, BasisSelection::NonVanishing).unwrap();
        // column 0 of NonVanishing is the constant
        for d in 0..2 {
            assert_abs_diff_eq!(jac[[0, 0, d]], 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn degree1_gradient_is_constant_direction() {
        // x ~ one coordinate: a single point at the origin in R^2 with
        // coefficient normalization gives degree-1 polys with constant grads.
        let x = PointSet::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let model = fit(&x, &NormalizationStrategy::Coefficient, 0.0, 1);
        assert_eq!(model.g_counts()[0], 2);
        let p = PointSet::from_rows(&[vec![3.0, -7.0], vec![0.1, 0.2]]).unwrap();
        let jac = evaluate_gradient(&model, &p, BasisSelection::Vanishing).unwrap();
        for b in 0..2 {
            for d in 0..2 {
                assert_abs_diff_eq!(jac[[0, b, d]], jac[[1, b, d]], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn normalization_matrix_contrastive_single_candidate() {
        let cy = array![[2.0]];
        let b = normalization_matrix(Some(&cy), StrategyKind::Contrastive, None, 1).unwrap();
        assert_abs_diff_eq!(b[[0, 0]], 4.0, epsilon = 1e-14);
    }

    #[test]
    fn normalization_matrix_coefficient_is_identity() {
        let b = normalization_matrix(None, StrategyKind::Coefficient, None, 3).unwrap();
        assert_eq!(b, Array2::<f64>::eye(3));
    }

    #[test]
    fn normalization_matrix_gradient_coordinate() {
        // candidate c(x)=x_1 on any X: gradient e_1 everywhere -> entry 1
        let npoints = 4;
        let grads = vec![Array2::ones((npoints, 1)), Array2::zeros((npoints, 1))];
        let b =
            normalization_matrix(None, StrategyKind::Gradient, Some((&grads, npoints)), 1).unwrap();
        assert_abs_diff_eq!(b[[0, 0]], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn evaluate_parallel_matches_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = PointSet::new(Array2::from_shape_fn((20, 3), |_| rng.random_range(-1.0..1.0)))
            .unwrap();
        let model = fit(&x, &NormalizationStrategy::Coefficient, 0.0, 3);
        let p = PointSet::new(Array2::from_shape_fn((513, 3), |_| rng.random_range(-2.0..2.0)))
            .unwrap();
        let a = evaluate(&model, &p, BasisSelection::Both).unwrap();
        let b = evaluate_seq(&model, &p, BasisSelection::Both).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let x = PointSet::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let y = PointSet::from_rows(&[vec![1.0]]).unwrap();
        assert!(fit_vca(&x, &NormalizationStrategy::Contrastive(y), 0.0, 2).is_err());
        let model = fit(&x, &NormalizationStrategy::Coefficient, 0.0, 1);
        let bad = PointSet::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(evaluate(&model, &bad, BasisSelection::Both).is_err());
    }

    #[test]
    fn truncation_flag_set_when_degree_capped() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = PointSet::new(Array2::from_shape_fn((40, 3), |_| rng.random_range(-1.0..1.0)))
            .unwrap();
        let model = fit(&x, &NormalizationStrategy::Coefficient, 0.0, 2);
        assert!(model.truncated);
        assert!(*model.f_counts().last().unwrap() > 0);
    }

    #[test]
    fn model_json_roundtrip_value_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let x = PointSet::new(Array2::from_shape_fn((12, 2), |_| rng.random_range(-1.0..1.0)))
            .unwrap();
        let y = PointSet::new(Array2::from_shape_fn((15, 2), |_| rng.random_range(-1.0..1.0)))
            .unwrap();
        let model = fit(&x, &NormalizationStrategy::Contrastive(y), 0.0, 3);
        let json = serde_json::to_string(&model).unwrap();
        let back: VcaModel = serde_json::from_str(&json).unwrap();
        assert_eq!(model, back);
    }
}
