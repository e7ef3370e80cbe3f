//! Synthetic validation of the concentration bounds for degree-1 bases on
//! random subspace data, the AUC metric, and the image anomaly-detection
//! benchmark pipeline.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::anomaly::{
    feature_norm_score, fit_anomaly, optimize_weights, score, ProjectionStep, DEFAULT_EPS_REG,
};
use crate::basis::{fit_vca, NormalizationStrategy, PointSet, StrategyKind};
use crate::data_io::LabeledDataset;
use crate::error::VcaError;
use crate::preprocess::{fit_pca, project, rescale, rms_row_norm};
use crate::transforms::{make_transform_family, FamilyKind};
use crate::Result;

// ---------------------------------------------------------------------------
// Degree-1 tail-probability experiment
// ---------------------------------------------------------------------------

/// Setup: X spans the first `k` coordinate directions of R^n, the
/// normalization set Z is standard normal in R^n, and the probe set R lives in
/// the first `k + m` coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem6Config {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub x_size: usize,
    pub z_size: usize,
    pub r_size: usize,
    pub t_grid: Vec<f64>,
    pub epsilon: f64,
    pub seed: u64,
}

impl Theorem6Config {
    /// The configuration used for the reference run: n=105, k=5, m=5,
    /// |X|=|Z|=10000, |R|=1000, t = 0.24..1.0 step 0.01.
    pub fn reference(seed: u64) -> Self {
        Theorem6Config {
            n: 105,
            k: 5,
            m: 5,
            x_size: 10_000,
            z_size: 10_000,
            r_size: 1_000,
            t_grid: t_grid(0.24, 1.0, 0.01),
            epsilon: 1e-6,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k + self.m > self.n {
            return Err(VcaError::invalid("k + m must be <= n"));
        }
        if self.x_size == 0 || self.z_size == 0 || self.r_size == 0 {
            return Err(VcaError::invalid("all sizes must be >= 1"));
        }
        if self.t_grid.is_empty()
            || self.t_grid.iter().any(|&t| !(t > 0.0))
            || self.t_grid.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(VcaError::invalid(
                "t grid must be strictly increasing and positive",
            ));
        }
        Ok(())
    }
}

/// Inclusive arithmetic grid from `start` to `end` with the given step.
pub fn t_grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    let count = ((end - start) / step).round() as usize + 1;
    (0..count).map(|i| start + i as f64 * step).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem6Result {
    pub t_grid: Vec<f64>,
    /// 1 - m / ((n - k) t^2) at each grid point.
    pub bound: Vec<f64>,
    /// One curve per degree-1 vanishing polynomial: fraction of probe points
    /// with |g_i| < t.
    pub curves: Vec<Vec<f64>>,
    pub generator_count: usize,
}

/// Lower bound on P[|g(p)| < t] for a degree-1 polynomial vanishing on a
/// k-dimensional subspace arrangement, probed in k+m dimensions.
pub fn theorem6_bound(n: usize, k: usize, m: usize, t: f64) -> f64 {
    1.0 - m as f64 / ((n - k) as f64 * t * t)
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

pub fn theorem6_experiment(cfg: &Theorem6Config) -> Result<Theorem6Result> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // X: first k coordinates standard normal, rest zero.
    let mut x = Array2::zeros((cfg.x_size, cfg.n));
    for i in 0..cfg.x_size {
        for j in 0..cfg.k {
            x[[i, j]] = StandardNormal.sample(&mut rng);
        }
    }
    let z = normal_matrix(&mut rng, cfg.z_size, cfg.n);
    // R: first k + m coordinates standard normal, rest zero.
    let mut r = Array2::zeros((cfg.r_size, cfg.n));
    for i in 0..cfg.r_size {
        for j in 0..cfg.k + cfg.m {
            r[[i, j]] = StandardNormal.sample(&mut rng);
        }
    }

    let x = PointSet::new(x)?;
    let z = PointSet::new(z)?;
    let r = PointSet::new(r)?;

    let model = fit_vca(&x, &NormalizationStrategy::Contrastive(z), cfg.epsilon, 1)?;
    let generator_count = model.total_g();

    let vals = crate::basis::evaluate(&model, &r, crate::basis::BasisSelection::Vanishing)?;
    let curves = (0..generator_count)
        .map(|g| {
            cfg.t_grid
                .iter()
                .map(|&t| {
                    let hits = vals.column(g).iter().filter(|v| v.abs() < t).count();
                    hits as f64 / cfg.r_size as f64
                })
                .collect()
        })
        .collect();
    let bound = cfg
        .t_grid
        .iter()
        .map(|&t| theorem6_bound(cfg.n, cfg.k, cfg.m, t))
        .collect();

    Ok(Theorem6Result {
        t_grid: cfg.t_grid.clone(),
        bound,
        curves,
        generator_count,
    })
}

/// Binomial-sampling slack for comparing an empirical frequency over
/// `samples` draws against a bound on the true probability.
pub fn sampling_slack(samples: usize) -> f64 {
    2.0 * (0.25 / samples as f64).sqrt()
}

// ---------------------------------------------------------------------------
// Normalization-concentration probe
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposition5Result {
    pub epsilons: Vec<f64>,
    /// Empirical frequency of | ||g'(Z)||^2/|Z| - 1 | >= 2 eps, per epsilon.
    pub frequencies: Vec<f64>,
    /// Numeric bound value per epsilon.
    pub bounds: Vec<f64>,
    /// Largest |g'(x)| seen over all trials and training points (0 exactly).
    pub max_train_value: f64,
    pub trials: usize,
}

/// Tail bound on the probability that a random orthogonal-complement linear
/// form deviates from unit mean square on a fresh normal sample Z.
pub fn proposition5_bound(n: usize, k: usize, z_size: usize, eps: f64) -> f64 {
    let nn = (n - k) as f64;
    let zs = z_size as f64;
    let eta = eps / ((1.0 + eps) * nn);
    (-eps * eps * nn / 6.0).exp()
        + (-eps * nn / 3.0).exp()
        + (nn * nn - nn) * (-eta * eta * zs / 2.0).exp()
        + nn * ((-eta * eta * zs / 6.0).exp() + (-eta * zs / 3.0).exp())
}

/// Sample linear forms supported on the orthogonal complement of the first
/// `k` coordinates, with i.i.d. N(0, 1/(n-k)) coefficients, and measure how
/// often their mean square on a fresh normal set Z strays from 1.
pub fn proposition5_probe(
    n: usize,
    k: usize,
    z_size: usize,
    trials: usize,
    seed: u64,
) -> Result<Proposition5Result> {
    if k >= n {
        return Err(VcaError::invalid("k must be < n"));
    }
    if z_size == 0 || trials == 0 {
        return Err(VcaError::invalid("z_size and trials must be >= 1"));
    }
    let epsilons = vec![0.05, 0.1, 0.2];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = (1.0 / (n - k) as f64).sqrt();
    let mut exceed = vec![0usize; epsilons.len()];
    let mut max_train_value = 0.0f64;
    let train_points = 100.min(z_size);

    for _ in 0..trials {
        // coefficients on coordinates k..n only
        let mut w = vec![0.0; n];
        for wj in w.iter_mut().skip(k) {
            let g: f64 = StandardNormal.sample(&mut rng);
            *wj = sigma * g;
        }
        // training points live on the first k coordinates: w . x = 0 exactly
        for _ in 0..train_points {
            let mut v = 0.0;
            for wj in w.iter().take(k) {
                let g: f64 = StandardNormal.sample(&mut rng);
                v += wj * g;
            }
            max_train_value = max_train_value.max(v.abs());
        }
        let mut sum_sq = 0.0;
        for _ in 0..z_size {
            let mut dot = 0.0;
            for wj in w.iter().skip(k) {
                let g: f64 = StandardNormal.sample(&mut rng);
                dot += wj * g;
            }
            sum_sq += dot * dot;
        }
        let dev = (sum_sq / z_size as f64 - 1.0).abs();
        for (e, cnt) in epsilons.iter().zip(exceed.iter_mut()) {
            if dev >= 2.0 * e {
                *cnt += 1;
            }
        }
    }

    let frequencies = exceed.iter().map(|&c| c as f64 / trials as f64).collect();
    let bounds = epsilons
        .iter()
        .map(|&e| proposition5_bound(n, k, z_size, e))
        .collect();
    Ok(Proposition5Result {
        epsilons,
        frequencies,
        bounds,
        max_train_value,
        trials,
    })
}

// ---------------------------------------------------------------------------
// AUC
// ---------------------------------------------------------------------------

/// Probability that a random anomalous score exceeds a random normal score,
/// ties counted half (Mann-Whitney rank statistic). Labels: 1 = anomalous.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(VcaError::dim("scores and labels length mismatch"));
    }
    let n1 = labels.iter().filter(|&&l| l != 0).count();
    let n0 = labels.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(VcaError::invalid("both classes must be present"));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(VcaError::invalid("non-finite score"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks over tie groups, 1-based
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels.iter())
        .filter(|(_, &l)| l != 0)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n1 * (n1 + 1)) as f64 / 2.0;
    Ok(u / (n1 as f64 * n0 as f64))
}

// ---------------------------------------------------------------------------
// Benchmark pipeline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Contrastive bases in the classification frame, with weight tuning.
    Ours,
    /// Single coefficient-normalized basis, feature-norm score.
    VcaSimple,
    /// Single gradient-normalized basis, feature-norm score.
    NvcaSimple,
    /// Coefficient-normalized bases in the classification frame.
    VcaGoad,
    /// Gradient-normalized bases in the classification frame.
    NvcaGoad,
}

impl Method {
    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "ours" => Ok(Method::Ours),
            "vca-simple" => Ok(Method::VcaSimple),
            "nvca-simple" => Ok(Method::NvcaSimple),
            "vca-goad" => Ok(Method::VcaGoad),
            "nvca-goad" => Ok(Method::NvcaGoad),
            _ => Err(VcaError::invalid(format!("unknown method '{s}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::VcaSimple => "vca-simple",
            Method::NvcaSimple => "nvca-simple",
            Method::VcaGoad => "vca-goad",
            Method::NvcaGoad => "nvca-goad",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub dataset: String,
    pub normal_labels: Vec<u8>,
    pub train_size: usize,
    pub transform_kind: FamilyKind,
    pub n_transforms: usize,
    pub method: Method,
    pub pca_dim: usize,
    pub epsilon: f64,
    pub max_degree: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub eps_reg: f64,
    pub seed: u64,
}

impl BenchmarkConfig {
    pub fn defaults(dataset: impl Into<String>, method: Method) -> Self {
        BenchmarkConfig {
            dataset: dataset.into(),
            normal_labels: vec![0, 2, 4, 6, 8],
            train_size: 10_000,
            transform_kind: FamilyKind::Rotations,
            n_transforms: 4,
            method,
            pca_dim: 30,
            epsilon: 0.5,
            max_degree: 4,
            learning_rate: 1e-5,
            epochs: 300,
            eps_reg: DEFAULT_EPS_REG,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucResult {
    pub auc: f64,
    pub n_normal: usize,
    pub n_anomalous: usize,
    pub config: BenchmarkConfig,
}

fn take_rows(points: &PointSet, rows: &[usize]) -> Result<PointSet> {
    let data = points.data();
    let mut out = Array2::zeros((rows.len(), points.dim()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&data.row(r));
    }
    PointSet::new(out)
}

/// Run one benchmark configuration against loaded train/test splits.
///
/// Training uses the first `train_size` rows of the train split filtered to
/// the normal labels. Rotation transforms act on raw pixels with PCA applied
/// after each transform; random-affine transforms act in PCA space directly.
pub fn run_benchmark(
    cfg: &BenchmarkConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<AucResult> {
    if cfg.train_size == 0 || cfg.train_size > train.points.len() {
        return Err(VcaError::invalid(format!(
            "train_size {} out of range (split has {} rows)",
            cfg.train_size,
            train.points.len()
        )));
    }
    let is_normal = |l: u8| cfg.normal_labels.contains(&l);
    let normal_rows: Vec<usize> = (0..cfg.train_size)
        .filter(|&i| is_normal(train.labels[i]))
        .collect();
    if normal_rows.is_empty() {
        return Err(VcaError::invalid("no normal-class training rows"));
    }
    let x_raw = take_rows(&train.points, &normal_rows)?;

    let projector = fit_pca(&x_raw, cfg.pca_dim)?;
    let x_proj = project(&projector, &x_raw)?;
    let scale = rms_row_norm(&x_proj);
    let projection = ProjectionStep { projector, scale };
    let x_proj = rescale(&x_proj, scale)?;
    let test_proj = projection.apply(&test.points)?;

    let labels: Vec<u8> = test
        .labels
        .iter()
        .map(|&l| if is_normal(l) { 0 } else { 1 })
        .collect();
    let n_anomalous = labels.iter().filter(|&&l| l != 0).count();
    let n_normal = labels.len() - n_anomalous;

    let scores: Vec<f64> = match cfg.method {
        Method::VcaSimple | Method::NvcaSimple => {
            let strategy = if cfg.method == Method::VcaSimple {
                NormalizationStrategy::Coefficient
            } else {
                NormalizationStrategy::Gradient
            };
            let model = fit_vca(&x_proj, &strategy, cfg.epsilon, cfg.max_degree)?;
            feature_norm_score(&model, &test_proj)?
        }
        Method::Ours | Method::VcaGoad | Method::NvcaGoad => {
            let strategy = match cfg.method {
                Method::Ours => StrategyKind::Contrastive,
                Method::VcaGoad => StrategyKind::Coefficient,
                _ => StrategyKind::Gradient,
            };
            // Rotations permute raw pixels; affine maps act in PCA space.
            let (transforms, fit_input, projection_step, test_input) = match cfg.transform_kind {
                FamilyKind::Rotations => (
                    make_transform_family(
                        FamilyKind::Rotations,
                        cfg.n_transforms,
                        train.side,
                        cfg.seed,
                    )?,
                    x_raw.clone(),
                    Some(projection.clone()),
                    test.points.clone(),
                ),
                FamilyKind::RandomAffine => (
                    make_transform_family(
                        FamilyKind::RandomAffine,
                        cfg.n_transforms,
                        cfg.pca_dim,
                        cfg.seed,
                    )?,
                    x_proj.clone(),
                    None,
                    test_proj.clone(),
                ),
            };
            let model = fit_anomaly(
                &fit_input,
                transforms,
                projection_step,
                strategy,
                cfg.epsilon,
                cfg.max_degree,
                cfg.eps_reg,
            )?;
            let model = if cfg.method == Method::Ours && cfg.epochs > 0 {
                optimize_weights(&model, &fit_input, cfg.learning_rate, cfg.epochs)?.model
            } else {
                model
            };
            score(&model, &test_input)?.scores
        }
    };

    Ok(AucResult {
        auc: auc(&scores, &labels)?,
        n_normal,
        n_anomalous,
        config: cfg.clone(),
    })
}
