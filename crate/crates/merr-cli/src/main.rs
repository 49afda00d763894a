//! Command-line front end: fit/predict on bag files, synthetic data
//! generation, rate and concentration experiments, and bound evaluation.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data or numeric
//! errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use merr::embedding::median_heuristic_bandwidth;
use merr::experiment::{run_concentration_experiment, run_rate_experiment, ExperimentConfig};
use merr::io;
use merr::outer::OuterKernel;
use merr::regressor::{cross_validate, default_lambda_grid, fit, predict};
use merr::theory::{
    bag_size_schedule, check_conditions, empirical_effective_dimension, misspecified_bound,
    misspecified_threshold, rate_exponents_misspecified, rate_exponents_wellspecified,
    saturated_rate_comparison, wellspecified_bound, wellspecified_threshold, BoundInputs,
    PriorParams,
};
use merr::synthetic::{
    make_dataset, LabelFunctional, LabelKind, MeanLaw, MetaDistribution,
};
use merr::{BaseKernel, Error};

#[derive(Parser)]
#[command(name = "merr", version, about = "Ridge regression on bags of samples via kernel mean embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model from a manifest of bag files and labels.
    Fit(FitArgs),
    /// Predict labels for the bags of a manifest with a saved model.
    Predict(PredictArgs),
    /// Select the regularizer by bag-level cross-validation.
    Cv(CvArgs),
    /// Generate a synthetic two-stage dataset with known Bayes values.
    Synth(SynthArgs),
    /// Run the bag-size/accuracy rate sweep from a config file.
    Rates(RatesArgs),
    /// Run the embedding concentration experiment from a config file.
    Concentration(ConcentrationArgs),
    /// Evaluate excess-risk bounds, preconditions, and rate exponents.
    Theory(TheoryArgs),
    /// List the outer kernel families and their smoothness exponents.
    Kernels,
}

#[derive(Args)]
struct KernelOpts {
    /// Base kernel family: gaussian, laplacian, cauchy.
    #[arg(long, default_value = "gaussian")]
    base: String,
    /// Base kernel bandwidth, or `median` for the median heuristic.
    #[arg(long, default_value = "median")]
    bandwidth: String,
    /// Outer kernel family: linear, gaussian, exponential, cauchy,
    /// tstudent, invmultiquadric.
    #[arg(long, default_value = "linear")]
    outer: String,
    /// Outer kernel scale parameter (ignored by the linear family).
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
}

impl KernelOpts {
    fn resolve(&self, bags: &[merr::PointBag], seed: u64) -> Result<(BaseKernel, OuterKernel), Error> {
        let bandwidth = if self.bandwidth == "median" {
            median_heuristic_bandwidth(bags, 10_000, seed)?
        } else {
            self.bandwidth
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad bandwidth `{}`", self.bandwidth)))?
        };
        let base = BaseKernel::from_name(&self.base, bandwidth)?;
        let outer = OuterKernel::from_name(&self.outer, self.theta)?;
        Ok((base, outer))
    }
}

#[derive(Args)]
struct FitArgs {
    /// Manifest CSV with columns `bag_path,y_1..y_d`.
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    kernels: KernelOpts,
    /// Ridge regularizer.
    #[arg(long)]
    lambda: f64,
    /// Declared label-norm bound; labels beyond it are rejected.
    #[arg(long)]
    label_bound: Option<f64>,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PredictArgs {
    /// Saved model file.
    #[arg(long)]
    model: PathBuf,
    /// Manifest CSV; label columns are ignored if present.
    #[arg(long)]
    manifest: PathBuf,
    /// Output CSV of predictions.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    kernels: KernelOpts,
    /// Number of folds.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Comma-separated lambda grid; defaults to 20 log-spaced values
    /// scaled by the Gram trace.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    label_bound: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for bag files, manifest.csv, and bayes.csv.
    #[arg(long)]
    out_dir: PathBuf,
    /// Number of bags.
    #[arg(long)]
    bags: usize,
    /// Points per bag.
    #[arg(long)]
    points: usize,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// Mean law: uniform or gaussian.
    #[arg(long, default_value = "uniform")]
    mean_law: String,
    #[arg(long, default_value_t = -1.0)]
    lo: f64,
    #[arg(long, default_value_t = 1.0)]
    hi: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Component standard deviation.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Label functional: mean_norm_sq, gaussian_entropy, linear_of_mean.
    #[arg(long, default_value = "mean_norm_sq")]
    functional: String,
    #[arg(long, default_value_t = 1)]
    output_dim: usize,
    #[arg(long, default_value_t = 0)]
    map_seed: u64,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    /// Label-norm bound declared for the dataset.
    #[arg(long)]
    clip_bound: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RatesArgs {
    /// Experiment config file (flat key = value text).
    #[arg(long)]
    config: PathBuf,
    /// Output report CSV.
    #[arg(long)]
    out: PathBuf,
    /// Cap the worker pool; overrides the config.
    #[arg(long)]
    threads: Option<usize>,
    /// Also write the fitted slopes as CSV.
    #[arg(long)]
    slopes: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ConcentrationArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TheoryArgs {
    /// Eigenvalue decay exponent of the prior class.
    #[arg(long, default_value_t = 2.0)]
    b: f64,
    /// Smoothness index of the prior class, in (1, 2].
    #[arg(long, default_value_t = 2.0)]
    c: f64,
    /// Source norm bound of the prior class.
    #[arg(long, default_value_t = 1.0)]
    r: f64,
    /// Spectrum envelope constants.
    #[arg(long, default_value_t = 1.0)]
    spectrum_lower: f64,
    #[arg(long, default_value_t = 1.0)]
    spectrum_upper: f64,
    /// Misspecified smoothness index, in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    s: f64,
    /// Bag-growth exponent for schedules and exponents.
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    #[arg(long, default_value_t = 100)]
    bags: usize,
    #[arg(long, default_value_t = 1000)]
    bag_size: usize,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    /// Hölder exponent of the outer kernel.
    #[arg(long, default_value_t = 1.0)]
    h: f64,
    /// Hölder scale of the outer kernel feature map (conservative default 1).
    #[arg(long, default_value_t = 1.0)]
    holder_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    base_bound: f64,
    /// Outer kernel bound; defaults to 1, the supremum for the bounded
    /// families at unit scale.
    #[arg(long, default_value_t = 1.0)]
    outer_bound: f64,
    #[arg(long, default_value_t = 1.0)]
    label_bound: f64,
    #[arg(long, default_value_t = 1.0)]
    target_norm: f64,
    /// Operator norm bound of the embedded covariance.
    #[arg(long, default_value_t = 1.0)]
    t_opnorm: f64,
    /// Norm of the misspecified pre-image.
    #[arg(long, default_value_t = 1.0)]
    f_norm: f64,
    /// Bernstein variance proxy; defaults to the outer bound.
    #[arg(long)]
    sigma_bern: Option<f64>,
    /// Optional Gram CSV (headerless, square) for the empirical effective
    /// dimension proxy.
    #[arg(long)]
    gram: Option<PathBuf>,
    /// Also write the printed values as `key,value` CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap renders its own message (help and version requests
            // included); usage problems exit 1.
            let is_help = matches!(
                err.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = err.print();
            return if is_help { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Cv(args) => cmd_cv(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Rates(args) => cmd_rates(args),
        Command::Concentration(args) => cmd_concentration(args),
        Command::Theory(args) => cmd_theory(args),
        Command::Kernels => cmd_kernels(),
    }
}

fn cmd_fit(args: FitArgs) -> Result<(), Error> {
    let data = io::load_dataset(&args.manifest, args.label_bound)?;
    let (base, outer) = args.kernels.resolve(data.bags(), args.seed)?;
    let model = fit(&data, &base, &outer, args.lambda)?;
    let manifest = io::read_manifest(&args.manifest)?;
    let bag_paths: Vec<String> =
        manifest.bag_paths.iter().map(|p| p.to_string_lossy().into_owned()).collect();
    io::save_model(&args.out, &model, &bag_paths)?;
    println!("fitted l={} bags, lambda={}, jitter={}", data.len(), model.lambda(), model.jitter());
    println!("model written to {}", args.out.display());
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), Error> {
    let model = io::load_model(&args.model)?;
    let bags = io::load_bags(&args.manifest)?;
    let preds = predict(&model, &bags)?;
    let mut out = String::new();
    use std::fmt::Write as _;
    let header: Vec<String> = (1..=preds.ncols()).map(|j| format!("y_{j}")).collect();
    let _ = writeln!(out, "{}", header.join(","));
    for i in 0..preds.nrows() {
        let row: Vec<String> =
            (0..preds.ncols()).map(|j| io::format_float(preds[(i, j)])).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    std::fs::write(&args.out, out)?;
    println!("wrote {} predictions to {}", preds.nrows(), args.out.display());
    Ok(())
}

fn cmd_cv(args: CvArgs) -> Result<(), Error> {
    let data = io::load_dataset(&args.manifest, args.label_bound)?;
    let (base, outer) = args.kernels.resolve(data.bags(), args.seed)?;
    let grid: Vec<f64> = match &args.grid {
        Some(text) => text
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad grid entry `{s}`")))
            })
            .collect::<Result<_, _>>()?,
        None => {
            let geometry = merr::embedding::embedding_gram(&base, data.bags())?;
            let gram = outer.gram(&geometry)?;
            default_lambda_grid(gram.trace() / data.len() as f64)
        }
    };
    let outcome = cross_validate(&data, &base, &outer, &grid, args.folds, args.seed)?;
    println!("lambda,mean_risk");
    for (lambda, risk) in &outcome.curve {
        println!("{},{}", io::format_float(*lambda), io::format_float(*risk));
    }
    println!("best_lambda={}", io::format_float(outcome.best_lambda));
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), Error> {
    let mean_law = match args.mean_law.as_str() {
        "uniform" => MeanLaw::UniformBox { lo: args.lo, hi: args.hi },
        "gaussian" => MeanLaw::Gaussian { tau: args.tau },
        other => return Err(Error::Config(format!("unknown mean law `{other}`"))),
    };
    let meta = MetaDistribution::new(args.dim, mean_law, args.sigma)?;
    let kind = match args.functional.as_str() {
        "mean_norm_sq" => LabelKind::MeanNormSq,
        "gaussian_entropy" => LabelKind::GaussianEntropy,
        "linear_of_mean" => {
            LabelKind::LinearOfMean { map_seed: args.map_seed, output_dim: args.output_dim }
        }
        other => return Err(Error::Config(format!("unknown functional `{other}`"))),
    };
    let functional = LabelFunctional::new(kind, args.noise_sigma, args.clip_bound)?;
    let out = make_dataset(&meta, &functional, args.bags, args.points, args.seed)?;

    std::fs::create_dir_all(&args.out_dir)?;
    let mut bag_paths = Vec::new();
    for (i, bag) in out.data.bags().iter().enumerate() {
        let name = format!("bag_{i:04}.csv");
        io::write_bag(&args.out_dir.join(&name), bag)?;
        bag_paths.push(name);
    }
    io::write_manifest(&args.out_dir.join("manifest.csv"), &bag_paths, out.data.labels())?;
    write_matrix_csv(&args.out_dir.join("bayes.csv"), &out.bayes, "bayes")?;
    println!(
        "wrote {} bags of {} points to {}",
        args.bags,
        args.points,
        args.out_dir.display()
    );
    Ok(())
}

fn write_matrix_csv(path: &Path, matrix: &nalgebra::DMatrix<f64>, prefix: &str) -> Result<(), Error> {
    use std::fmt::Write as _;
    let mut out = String::new();
    let header: Vec<String> = (1..=matrix.ncols()).map(|j| format!("{prefix}_{j}")).collect();
    let _ = writeln!(out, "{}", header.join(","));
    for i in 0..matrix.nrows() {
        let row: Vec<String> =
            (0..matrix.ncols()).map(|j| io::format_float(matrix[(i, j)])).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn cmd_rates(args: RatesArgs) -> Result<(), Error> {
    let mut config = ExperimentConfig::from_file(&args.config)?;
    if let Some(threads) = args.threads {
        config.threads = threads;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let report = run_rate_experiment(&config)?;
    std::fs::write(&args.out, report.to_csv())?;
    let failed = report.rows.iter().filter(|r| r.status != "ok").count();
    println!("wrote {} rows ({failed} failed) to {}", report.rows.len(), args.out.display());
    for line in &report.slopes {
        match line.fit {
            Some((slope, stderr)) => println!(
                "a={} slope={} stderr={} theory_risk_exponent={} theory_lambda_exponent={}",
                io::format_float(line.a),
                io::format_float(slope),
                io::format_float(stderr),
                io::format_float(line.theory_risk_exponent),
                io::format_float(line.theory_lambda_exponent)
            ),
            None => println!("a={} slope=NA (needs >= 3 positive mean risks)", io::format_float(line.a)),
        }
    }
    if let Some(slopes_path) = args.slopes {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "a,slope,stderr,theory_risk_exponent,theory_lambda_exponent");
        for line in &report.slopes {
            let (slope, stderr) = line
                .fit
                .map(|(s, e)| (io::format_float(s), io::format_float(e)))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                io::format_float(line.a),
                slope,
                stderr,
                io::format_float(line.theory_risk_exponent),
                io::format_float(line.theory_lambda_exponent)
            );
        }
        std::fs::write(slopes_path, out)?;
    }
    Ok(())
}

fn cmd_concentration(args: ConcentrationArgs) -> Result<(), Error> {
    let mut config = ExperimentConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let report = run_concentration_experiment(&config)?;
    std::fs::write(&args.out, report.to_csv())?;
    println!("wrote {} rows to {}", report.rows.len(), args.out.display());
    Ok(())
}

fn cmd_theory(args: TheoryArgs) -> Result<(), Error> {
    let prior = PriorParams::new(args.b, args.c, args.r, args.spectrum_lower, args.spectrum_upper)?;
    let inputs = BoundInputs {
        base_bound: args.base_bound,
        outer_bound: args.outer_bound,
        holder_scale: args.holder_scale,
        holder_exponent: args.h,
        label_bound: args.label_bound,
        bags: args.bags,
        bag_size: args.bag_size,
        lambda: args.lambda,
        eta: args.eta,
        delta: args.delta,
        target_norm: args.target_norm,
    };
    let mut lines: Vec<(String, String)> = Vec::new();
    let mut push = |key: &str, value: f64| {
        lines.push((key.to_string(), io::format_float(value)));
    };

    let at = prior.bounds_at(args.lambda)?;
    push("prior.approximation", at.approximation);
    push("prior.reconstruction", at.reconstruction);
    push("prior.effective_dimension", at.effective_dimension);

    push("bound.wellspecified", wellspecified_bound(&inputs, &prior)?);
    let sigma_bern = args.sigma_bern.unwrap_or(args.outer_bound);
    push(
        "bound.misspecified",
        misspecified_bound(&inputs, args.s, args.t_opnorm, args.f_norm, sigma_bern)?,
    );

    let effective_dimension = match &args.gram {
        Some(path) => {
            let gram = read_square_matrix(path)?;
            let value = empirical_effective_dimension(&gram, args.lambda, gram.nrows())?;
            push("effective_dimension.empirical_proxy", value);
            value
        }
        None => at.effective_dimension,
    };
    for check in check_conditions(&inputs, effective_dimension, args.t_opnorm) {
        lines.push((
            format!("condition.{}.satisfied", check.name),
            check.satisfied.to_string(),
        ));
        lines.push((format!("condition.{}.margin", check.name), io::format_float(check.margin)));
    }

    let well = rate_exponents_wellspecified(args.a, args.b, args.c)?;
    lines.push(("exponent.wellspecified.risk".into(), io::format_float(well.risk)));
    lines.push(("exponent.wellspecified.lambda".into(), io::format_float(well.lambda)));
    lines.push((
        "exponent.wellspecified.threshold".into(),
        io::format_float(wellspecified_threshold(args.b, args.c)),
    ));
    let mis = rate_exponents_misspecified(args.a.min(misspecified_threshold(args.s)), args.s)?;
    lines.push(("exponent.misspecified.risk".into(), io::format_float(mis.risk)));
    lines.push(("exponent.misspecified.lambda".into(), io::format_float(mis.lambda)));
    lines.push((
        "exponent.misspecified.threshold".into(),
        io::format_float(misspecified_threshold(args.s)),
    ));
    let (two_stage, one_stage) = saturated_rate_comparison(args.s)?;
    lines.push(("exponent.saturated.two_stage".into(), io::format_float(two_stage)));
    lines.push(("exponent.saturated.one_stage_reference".into(), io::format_float(one_stage)));
    lines.push((
        "schedule.bag_size".into(),
        bag_size_schedule(args.bags.max(2), args.a, args.h)?.to_string(),
    ));

    for (key, value) in &lines {
        println!("{key}={value}");
    }
    if let Some(csv_path) = args.csv {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "key,value");
        for (key, value) in &lines {
            let _ = writeln!(out, "{key},{value}");
        }
        std::fs::write(csv_path, out)?;
    }
    Ok(())
}

fn read_square_matrix(path: &Path) -> Result<nalgebra::DMatrix<f64>, Error> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad matrix entry `{s}`")))
            })
            .collect::<Result<Vec<f64>, Error>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Parse(format!("{} is not a square matrix", path.display())));
    }
    Ok(nalgebra::DMatrix::from_fn(n, n, |r, c| rows[r][c]))
}

fn cmd_kernels() -> Result<(), Error> {
    println!("family            h      formula");
    let entries = [
        ("linear", "1", "<mu_a, mu_b>  (set kernel)"),
        ("gaussian", "1", "exp(-D^2 / (2 theta^2))"),
        ("exponential", "1/2", "exp(-D / (2 theta^2))"),
        ("cauchy", "1", "1 / (1 + D^2 / theta^2)"),
        ("tstudent", "theta/2", "1 / (1 + D^theta), theta <= 2"),
        ("invmultiquadric", "1", "1 / sqrt(D^2 + theta^2)"),
    ];
    for (name, h, formula) in entries {
        println!("{name:<17} {h:<6} {formula}");
    }
    println!();
    println!("D = embedding distance ||mu_a - mu_b||; h = Hölder exponent of the feature map");
    Ok(())
}
