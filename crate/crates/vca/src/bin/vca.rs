//! Command-line front end: basis fitting, anomaly-detector training/scoring,
//! the synthetic bound experiment, and the benchmark runner.
//!
//! Exit codes: 0 success, 2 usage error (clap), 1 runtime failure with a
//! single-line error on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use vca::anomaly::{fit_anomaly, optimize_weights, score, AnomalyModel, ProjectionStep};
use vca::basis::{fit_vca, StrategyKind};
use vca::data_io::{
    fmt_f64, load_labeled_dataset, read_csv_points, save_json, write_csv, LabeledDataset,
};
use vca::experiments::{
    run_benchmark, t_grid, theorem6_experiment, AucResult, BenchmarkConfig, Method,
    Theorem6Config,
};
use vca::preprocess::{fit_pca, project, rms_row_norm};
use vca::transforms::{make_transform_family, FamilyKind};
use vca::{NormalizationStrategy, Result, VcaError};

#[derive(Parser)]
#[command(
    name = "vca",
    about = "Vanishing polynomial bases on point sets, with an anomaly-detection pipeline",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a polynomial basis on a CSV point set
    Fit(FitArgs),
    /// Train and score the transformation-classification anomaly detector
    Anomaly(AnomalyArgs),
    /// Tail-probability experiment for degree-1 bases on subspace data
    Theorem6(Theorem6Args),
    /// Run benchmark configurations from a config file
    Bench(BenchArgs),
}

#[derive(Args, Serialize)]
struct FitArgs {
    /// CSV of points the basis should vanish on
    #[arg(long)]
    x: PathBuf,
    /// CSV of normalization points (required for --strategy contrastive)
    #[arg(long)]
    y: Option<PathBuf>,
    /// contrastive | coefficient | gradient
    #[arg(long, default_value = "contrastive")]
    strategy: String,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 4)]
    max_degree: usize,
    /// Output model JSON path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize, Clone)]
struct AnomalyArgs {
    #[arg(long)]
    train_images: PathBuf,
    #[arg(long)]
    train_labels: PathBuf,
    #[arg(long)]
    test_images: PathBuf,
    #[arg(long)]
    test_labels: PathBuf,
    /// Comma-separated labels of the normal class
    #[arg(long, default_value = "0,2,4,6,8")]
    normal_labels: String,
    /// rot4 | rot3 | ra:<M>
    #[arg(long, default_value = "rot4")]
    transforms: String,
    #[arg(long, default_value_t = 30)]
    pca_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    #[arg(long, default_value_t = 4)]
    max_degree: usize,
    #[arg(long, default_value_t = 1e-5)]
    lr: f64,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-6)]
    eps_reg: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (model.json, scores.csv, config.json)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct Theorem6Args {
    #[arg(long, default_value_t = 105)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[arg(long, default_value_t = 10_000)]
    x_size: usize,
    #[arg(long, default_value_t = 10_000)]
    z_size: usize,
    #[arg(long, default_value_t = 1_000)]
    r_size: usize,
    /// start:end:step
    #[arg(long, default_value = "0.24:1.0:0.01")]
    t_grid: String,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (curves.csv, config.json)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct BenchArgs {
    /// key=value config file; multiple runs separated by a '---' line
    #[arg(long)]
    config: PathBuf,
    /// Directory containing <dataset>/{train,test}-{images,labels}.idx
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    /// Output directory (results.csv, config.json)
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Anomaly(a) => cmd_anomaly(a),
        Command::Theorem6(a) => cmd_theorem6(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", single_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}

fn single_line(s: &str) -> String {
    s.replace('\n', " ")
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| VcaError::io(path.display().to_string(), e))
}

fn parse_strategy(s: &str) -> Result<StrategyKind> {
    match s {
        "contrastive" => Ok(StrategyKind::Contrastive),
        "coefficient" => Ok(StrategyKind::Coefficient),
        "gradient" => Ok(StrategyKind::Gradient),
        _ => Err(VcaError::invalid(format!("unknown strategy '{s}'"))),
    }
}

fn parse_transforms(s: &str) -> Result<(FamilyKind, usize)> {
    match s {
        "rot4" => Ok((FamilyKind::Rotations, 4)),
        "rot3" => Ok((FamilyKind::Rotations, 3)),
        _ => {
            if let Some(m) = s.strip_prefix("ra:") {
                let m: usize = m
                    .parse()
                    .map_err(|_| VcaError::invalid(format!("bad transform family '{s}'")))?;
                Ok((FamilyKind::RandomAffine, m))
            } else {
                Err(VcaError::invalid(format!(
                    "transform family must be rot4, rot3, or ra:<M>, got '{s}'"
                )))
            }
        }
    }
}

fn parse_labels(s: &str) -> Result<Vec<u8>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<u8>()
                .map_err(|_| VcaError::invalid(format!("bad label '{v}'")))
        })
        .collect()
}

fn parse_t_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(VcaError::invalid(format!(
            "t grid must be start:end:step, got '{s}'"
        )));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| VcaError::invalid(format!("bad t-grid number '{p}'")))
        })
        .collect::<Result<_>>()?;
    if !(nums[2] > 0.0 && nums[1] >= nums[0]) {
        return Err(VcaError::invalid("t grid requires end >= start, step > 0"));
    }
    Ok(t_grid(nums[0], nums[1], nums[2]))
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let x = read_csv_points(&args.x)?;
    let kind = parse_strategy(&args.strategy)?;
    let strategy = match kind {
        StrategyKind::Contrastive => {
            let y_path = args
                .y
                .as_ref()
                .ok_or_else(|| VcaError::invalid("--y is required with --strategy contrastive"))?;
            NormalizationStrategy::Contrastive(read_csv_points(y_path)?)
        }
        StrategyKind::Coefficient => NormalizationStrategy::Coefficient,
        StrategyKind::Gradient => NormalizationStrategy::Gradient,
    };
    let model = fit_vca(&x, &strategy, args.epsilon, args.max_degree)?;
    save_json(&args.out, &model)?;
    println!(
        "fitted {} vanishing / {} nonvanishing polynomials over {} layers -> {}",
        model.total_g(),
        model.total_f(),
        model.layers.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_anomaly(args: AnomalyArgs) -> Result<()> {
    ensure_dir(&args.out)?;
    let train = load_labeled_dataset(&args.train_images, &args.train_labels)?;
    let test = load_labeled_dataset(&args.test_images, &args.test_labels)?;
    let normal = parse_labels(&args.normal_labels)?;
    let (kind, m) = parse_transforms(&args.transforms)?;

    let normal_rows: Vec<Vec<f64>> = train
        .points
        .data()
        .rows()
        .into_iter()
        .zip(train.labels.iter())
        .filter(|(_, l)| normal.contains(l))
        .map(|(r, _)| r.to_vec())
        .collect();
    if normal_rows.is_empty() {
        return Err(VcaError::invalid("no training rows match the normal labels"));
    }
    let x_raw = vca::PointSet::from_rows(&normal_rows)?;

    let projector = fit_pca(&x_raw, args.pca_dim)?;
    let x_proj = project(&projector, &x_raw)?;
    let scale = rms_row_norm(&x_proj);
    let projection = ProjectionStep { projector, scale };

    let (transforms, fit_input, projection_step, test_input) = match kind {
        FamilyKind::Rotations => (
            make_transform_family(kind, m, train.side, args.seed)?,
            x_raw,
            Some(projection),
            test.points.clone(),
        ),
        FamilyKind::RandomAffine => {
            let x_scaled = vca::preprocess::rescale(&x_proj, scale)?;
            let test_scaled = projection.apply(&test.points)?;
            (
                make_transform_family(kind, m, args.pca_dim, args.seed)?,
                x_scaled,
                None,
                test_scaled,
            )
        }
    };

    let model = fit_anomaly(
        &fit_input,
        transforms,
        projection_step,
        StrategyKind::Contrastive,
        args.epsilon,
        args.max_degree,
        args.eps_reg,
    )?;
    let optimized = optimize_weights(&model, &fit_input, args.lr, args.epochs)?;
    let model = optimized.model;
    let report = score(&model, &test_input)?;

    save_json(args.out.join("model.json"), &model)?;
    save_json(args.out.join("config.json"), &args)?;
    write_scores_csv(&args.out.join("scores.csv"), &report, &model)?;
    println!(
        "scored {} points with {} transforms -> {}",
        report.scores.len(),
        model.n_transforms(),
        args.out.display()
    );
    Ok(())
}

fn write_scores_csv(
    path: &Path,
    report: &vca::anomaly::ScoreReport,
    model: &AnomalyModel,
) -> Result<()> {
    let m = model.n_transforms();
    let mut header = vec!["point_index".to_string(), "score".to_string()];
    header.extend((1..=m).map(|i| format!("P_{i}")));
    let file = std::fs::File::create(path)
        .map_err(|e| VcaError::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    use std::io::Write;
    let io_err = |e| VcaError::io(path.display().to_string(), e);
    writeln!(w, "{}", header.join(",")).map_err(io_err)?;
    for (i, &s) in report.scores.iter().enumerate() {
        let mut fields = vec![i.to_string(), fmt_f64(s)];
        fields.extend(report.probabilities.row(i).iter().map(|&p| fmt_f64(p)));
        writeln!(w, "{}", fields.join(",")).map_err(io_err)?;
    }
    Ok(())
}

fn cmd_theorem6(args: Theorem6Args) -> Result<()> {
    ensure_dir(&args.out)?;
    let cfg = Theorem6Config {
        n: args.n,
        k: args.k,
        m: args.m,
        x_size: args.x_size,
        z_size: args.z_size,
        r_size: args.r_size,
        t_grid: parse_t_grid(&args.t_grid)?,
        epsilon: args.epsilon,
        seed: args.seed,
    };
    let res = theorem6_experiment(&cfg)?;
    if res.generator_count == 0 {
        eprintln!("warning: no degree-1 vanishing polynomials found");
    }
    save_json(args.out.join("config.json"), &cfg)?;
    let mut header = vec!["t".to_string(), "bound".to_string()];
    header.extend((1..=res.generator_count).map(|i| format!("P_{i}")));
    let rows = (0..res.t_grid.len()).map(|row| {
        let mut r = vec![res.t_grid[row], res.bound[row]];
        r.extend(res.curves.iter().map(|c| c[row]));
        r
    });
    write_csv(args.out.join("curves.csv"), Some(&header), rows)?;
    println!(
        "{} polynomials over {} grid points -> {}",
        res.generator_count,
        res.t_grid.len(),
        args.out.display()
    );
    Ok(())
}

fn parse_bench_configs(path: &Path) -> Result<Vec<BenchmarkConfig>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| VcaError::io(path.display().to_string(), e))?;
    let mut configs = Vec::new();
    for (block_no, block) in text.split("---").enumerate() {
        let mut cfg = BenchmarkConfig::defaults("", Method::Ours);
        let mut any = false;
        for raw in block.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                VcaError::invalid(format!("config block {block_no}: expected key=value, got '{line}'"))
            })?;
            let (key, value) = (key.trim(), value.trim());
            any = true;
            let bad = |what: &str| VcaError::invalid(format!("config block {block_no}: bad {what} '{value}'"));
            match key {
                "dataset" => cfg.dataset = value.to_string(),
                "normal_labels" => cfg.normal_labels = parse_labels(value)?,
                "train_size" => cfg.train_size = value.parse().map_err(|_| bad("train_size"))?,
                "transform" => {
                    let (kind, m) = parse_transforms(value)?;
                    cfg.transform_kind = kind;
                    cfg.n_transforms = m;
                }
                "method" => cfg.method = Method::parse(value)?,
                "pca_dim" => cfg.pca_dim = value.parse().map_err(|_| bad("pca_dim"))?,
                "epsilon" => cfg.epsilon = value.parse().map_err(|_| bad("epsilon"))?,
                "max_degree" => cfg.max_degree = value.parse().map_err(|_| bad("max_degree"))?,
                "lr" => cfg.learning_rate = value.parse().map_err(|_| bad("lr"))?,
                "epochs" => cfg.epochs = value.parse().map_err(|_| bad("epochs"))?,
                "eps_reg" => cfg.eps_reg = value.parse().map_err(|_| bad("eps_reg"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
                _ => return Err(VcaError::invalid(format!("config block {block_no}: unknown key '{key}'"))),
            }
        }
        if any {
            if cfg.dataset.is_empty() {
                return Err(VcaError::invalid(format!(
                    "config block {block_no}: missing 'dataset'"
                )));
            }
            configs.push(cfg);
        }
    }
    if configs.is_empty() {
        return Err(VcaError::invalid("config file contains no runs"));
    }
    Ok(configs)
}

fn load_split(data_dir: &Path, dataset: &str, split: &str) -> Result<LabeledDataset> {
    let dir = data_dir.join(dataset);
    load_labeled_dataset(
        dir.join(format!("{split}-images.idx")),
        dir.join(format!("{split}-labels.idx")),
    )
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    ensure_dir(&args.out)?;
    let configs = parse_bench_configs(&args.config)?;
    save_json(args.out.join("config.json"), &configs)?;

    let mut lines = vec![
        "dataset,method,transform,n_transforms,train_size,pca_dim,epsilon,max_degree,seed,n_normal,n_anomalous,auc"
            .to_string(),
    ];
    let mut cached: Option<(String, LabeledDataset, LabeledDataset)> = None;
    for cfg in &configs {
        let reuse = matches!(&cached, Some((name, _, _)) if name == &cfg.dataset);
        if !reuse {
            let train = load_split(&args.data_dir, &cfg.dataset, "train")?;
            let test = load_split(&args.data_dir, &cfg.dataset, "test")?;
            cached = Some((cfg.dataset.clone(), train, test));
        }
        let (_, train, test) = cached.as_ref().unwrap();
        let result: AucResult = run_benchmark(cfg, train, test)?;
        let kind = match cfg.transform_kind {
            FamilyKind::Rotations => "rot",
            FamilyKind::RandomAffine => "ra",
        };
        println!(
            "{} {} {}{}: auc {:.4}",
            cfg.dataset,
            cfg.method.name(),
            kind,
            cfg.n_transforms,
            result.auc
        );
        lines.push(format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            cfg.dataset,
            cfg.method.name(),
            kind,
            cfg.n_transforms,
            cfg.train_size,
            cfg.pca_dim,
            fmt_f64(cfg.epsilon),
            cfg.max_degree,
            cfg.seed,
            result.n_normal,
            result.n_anomalous,
            fmt_f64(result.auc)
        ));
    }
    let out_path = args.out.join("results.csv");
    std::fs::write(&out_path, lines.join("\n") + "\n")
        .map_err(|e| VcaError::io(out_path.display().to_string(), e))?;
    println!("wrote {}", out_path.display());
    Ok(())
}
