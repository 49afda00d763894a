//! Experiment harness: rate sweeps, concentration runs, slope fits, and
//! reproducible CSV reports.
//!
//! Every sweep cell owns a counter-based random stream derived from the
//! config seed and the cell's grid coordinates, so reports are byte-stable
//! under any thread count. Reports embed the config hash and tool version
//! in `#` comment lines.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::embedding::{concentration_radius, embedding_gram, median_heuristic_bandwidth};
use crate::error::{Error, Result};
use crate::io::format_float;
use crate::kernel::BaseKernel;
use crate::outer::OuterKernel;
use crate::regressor::{
    cross_validate_with_geometry, default_lambda_grid, excess_risk_estimate, fit_with_geometry,
    predict,
};
use crate::rng::derive_seed;
use crate::synthetic::{
    make_dataset, population_embedding_sq_dist, sample_bags, sample_meta, LabelFunctional,
    LabelKind, MeanLaw, MetaDistribution,
};
use crate::theory::{bag_size_schedule, rate_exponents_misspecified, rate_exponents_wellspecified};

/// Pinned header of the rates report.
pub const RATES_HEADER: &str = "l,a,trial,N,lambda,excess_risk,wall_time_ms,status";
/// Pinned header of the concentration report.
pub const CONCENTRATION_HEADER: &str = "N,alpha,radius,observed_freq,bound";

/// How the regularizer of each cell is chosen.
///
/// The theorem rules set `lambda = scale * l^e` where the exponent comes
/// from the matching trade-off branch; the prefactor does not affect the
/// rate and defaults to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaRule {
    /// Exponent from the well-specified trade-off at the cell's bag-growth
    /// exponent.
    WellspecifiedTheorem { b: f64, c: f64, scale: f64 },
    /// Exponent from the misspecified trade-off. The config's `a` is always
    /// the bag-growth exponent `N = l^(a/h) ln l`; the misspecified
    /// trade-off parameter is `a/2`.
    MisspecifiedTheorem { s: f64, scale: f64 },
    /// Bag-level cross-validation over the default grid.
    CrossValidate { folds: usize },
}

/// Bandwidth selection for the base kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthRule {
    Fixed(f64),
    /// Median heuristic over the cell's training points (up to 10000 pairs).
    Median,
}

/// Parsed experiment configuration (flat `key = value` text file with
/// dotted section keys).
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub meta: MetaDistribution,
    pub functional: LabelFunctional,
    pub base_family: String,
    pub bandwidth: BandwidthRule,
    pub outer: OuterKernel,
    pub l_grid: Vec<usize>,
    pub a_values: Vec<f64>,
    pub trials: usize,
    pub n_test: usize,
    /// Points per test bag; 0 means the default of `10 * N_train`.
    pub n_test_points: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the global pool.
    pub threads: usize,
    pub lambda_rule: LambdaRule,
    /// Write zeros in the wall-time column for bitwise-reproducible reports.
    pub zero_wall_time: bool,
    pub concentration_n_grid: Vec<usize>,
    pub concentration_trials: usize,
    pub concentration_alpha: f64,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str(&text)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<Self> {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1))
            })?;
            let key = key.trim().to_string();
            if map.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key `{key}`")));
            }
        }
        Self::from_map(map)
    }

    fn from_map(mut map: BTreeMap<String, String>) -> Result<Self> {
        let mut take = |key: &str| map.remove(key);
        let require = |value: Option<String>, key: &str| {
            value.ok_or_else(|| Error::Config(format!("missing key `{key}`")))
        };

        let dim = parse_usize(&require(take("meta.dim"), "meta.dim")?, "meta.dim")?;
        let mean_law = match require(take("meta.mean_law"), "meta.mean_law")?.as_str() {
            "uniform" => {
                let lo = parse_f64(&require(take("meta.lo"), "meta.lo")?, "meta.lo")?;
                let hi = parse_f64(&require(take("meta.hi"), "meta.hi")?, "meta.hi")?;
                MeanLaw::UniformBox { lo, hi }
            }
            "gaussian" => {
                let tau = parse_f64(&require(take("meta.tau"), "meta.tau")?, "meta.tau")?;
                MeanLaw::Gaussian { tau }
            }
            other => return Err(Error::Config(format!("unknown mean law `{other}`"))),
        };
        let component_sigma = parse_f64(
            &require(take("meta.component_sigma"), "meta.component_sigma")?,
            "meta.component_sigma",
        )?;
        let meta = MetaDistribution::new(dim, mean_law, component_sigma)?;

        let kind = match require(take("functional.kind"), "functional.kind")?.as_str() {
            "mean_norm_sq" => LabelKind::MeanNormSq,
            "gaussian_entropy" => LabelKind::GaussianEntropy,
            "linear_of_mean" => {
                let output_dim = take("functional.output_dim")
                    .map(|v| parse_usize(&v, "functional.output_dim"))
                    .transpose()?
                    .unwrap_or(1);
                let map_seed = take("functional.map_seed")
                    .map(|v| parse_u64(&v, "functional.map_seed"))
                    .transpose()?
                    .unwrap_or(0);
                LabelKind::LinearOfMean { map_seed, output_dim }
            }
            other => return Err(Error::Config(format!("unknown functional `{other}`"))),
        };
        let noise_sigma = parse_f64(
            &require(take("functional.noise_sigma"), "functional.noise_sigma")?,
            "functional.noise_sigma",
        )?;
        let clip_bound = parse_f64(
            &require(take("functional.clip_bound"), "functional.clip_bound")?,
            "functional.clip_bound",
        )?;
        let functional = LabelFunctional::new(kind, noise_sigma, clip_bound)?;

        let base_family = require(take("base.family"), "base.family")?;
        let bandwidth_text = require(take("base.bandwidth"), "base.bandwidth")?;
        let bandwidth = if bandwidth_text == "median" {
            BandwidthRule::Median
        } else {
            BandwidthRule::Fixed(parse_f64(&bandwidth_text, "base.bandwidth")?)
        };
        if let BandwidthRule::Fixed(bw) = bandwidth {
            BaseKernel::from_name(&base_family, bw)?;
        } else {
            BaseKernel::from_name(&base_family, 1.0)?;
        }

        let outer_family = require(take("outer.family"), "outer.family")?;
        let theta = take("outer.theta")
            .map(|v| parse_f64(&v, "outer.theta"))
            .transpose()?
            .unwrap_or(1.0);
        let outer = OuterKernel::from_name(&outer_family, theta)?;

        let l_grid = take("experiment.l_grid")
            .map(|v| parse_list(&v, |s| parse_usize(s, "experiment.l_grid")))
            .transpose()?
            .unwrap_or_default();
        let a_values = take("experiment.a_values")
            .map(|v| parse_list(&v, |s| parse_f64(s, "experiment.a_values")))
            .transpose()?
            .unwrap_or_default();
        let trials = take("experiment.trials")
            .map(|v| parse_usize(&v, "experiment.trials"))
            .transpose()?
            .unwrap_or(1);
        let n_test = take("experiment.n_test")
            .map(|v| parse_usize(&v, "experiment.n_test"))
            .transpose()?
            .unwrap_or(50);
        let n_test_points = take("experiment.n_test_points")
            .map(|v| parse_usize(&v, "experiment.n_test_points"))
            .transpose()?
            .unwrap_or(0);
        let seed =
            take("experiment.seed").map(|v| parse_u64(&v, "experiment.seed")).transpose()?.unwrap_or(0);
        let threads = take("experiment.threads")
            .map(|v| parse_usize(&v, "experiment.threads"))
            .transpose()?
            .unwrap_or(0);

        let lambda_scale = take("lambda.scale")
            .map(|v| parse_f64(&v, "lambda.scale"))
            .transpose()?
            .unwrap_or(1.0);
        let lambda_rule = match require(take("lambda.rule"), "lambda.rule")?.as_str() {
            "theorem" => match require(take("lambda.case"), "lambda.case")?.as_str() {
                "wellspecified" => LambdaRule::WellspecifiedTheorem {
                    b: parse_f64(&require(take("lambda.b"), "lambda.b")?, "lambda.b")?,
                    c: parse_f64(&require(take("lambda.c"), "lambda.c")?, "lambda.c")?,
                    scale: lambda_scale,
                },
                "misspecified" => LambdaRule::MisspecifiedTheorem {
                    s: parse_f64(&require(take("lambda.s"), "lambda.s")?, "lambda.s")?,
                    scale: lambda_scale,
                },
                other => return Err(Error::Config(format!("unknown lambda case `{other}`"))),
            },
            "cv" => LambdaRule::CrossValidate {
                folds: take("lambda.folds")
                    .map(|v| parse_usize(&v, "lambda.folds"))
                    .transpose()?
                    .unwrap_or(5),
            },
            other => return Err(Error::Config(format!("unknown lambda rule `{other}`"))),
        };

        let zero_wall_time = take("report.zero_wall_time")
            .map(|v| parse_bool(&v, "report.zero_wall_time"))
            .transpose()?
            .unwrap_or(false);

        let concentration_n_grid = take("concentration.n_grid")
            .map(|v| parse_list(&v, |s| parse_usize(s, "concentration.n_grid")))
            .transpose()?
            .unwrap_or_else(|| vec![25, 100, 400]);
        let concentration_trials = take("concentration.trials")
            .map(|v| parse_usize(&v, "concentration.trials"))
            .transpose()?
            .unwrap_or(500);
        let concentration_alpha = take("concentration.alpha")
            .map(|v| parse_f64(&v, "concentration.alpha"))
            .transpose()?
            .unwrap_or(3.0);

        if let Some(key) = map.keys().next() {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }

        Ok(ExperimentConfig {
            meta,
            functional,
            base_family,
            bandwidth,
            outer,
            l_grid,
            a_values,
            trials,
            n_test,
            n_test_points,
            seed,
            threads,
            lambda_rule,
            zero_wall_time,
            concentration_n_grid,
            concentration_trials,
            concentration_alpha,
        })
    }

    /// Canonical text form; its hash identifies the configuration in
    /// report headers.
    pub fn canonical_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "meta.dim={}", self.meta.dim);
        match self.meta.mean_law {
            MeanLaw::UniformBox { lo, hi } => {
                let _ = writeln!(s, "meta.mean_law=uniform");
                let _ = writeln!(s, "meta.lo={}", format_float(lo));
                let _ = writeln!(s, "meta.hi={}", format_float(hi));
            }
            MeanLaw::Gaussian { tau } => {
                let _ = writeln!(s, "meta.mean_law=gaussian");
                let _ = writeln!(s, "meta.tau={}", format_float(tau));
            }
        }
        let _ = writeln!(s, "meta.component_sigma={}", format_float(self.meta.component_sigma));
        match self.functional.kind {
            LabelKind::MeanNormSq => {
                let _ = writeln!(s, "functional.kind=mean_norm_sq");
            }
            LabelKind::GaussianEntropy => {
                let _ = writeln!(s, "functional.kind=gaussian_entropy");
            }
            LabelKind::LinearOfMean { map_seed, output_dim } => {
                let _ = writeln!(s, "functional.kind=linear_of_mean");
                let _ = writeln!(s, "functional.map_seed={map_seed}");
                let _ = writeln!(s, "functional.output_dim={output_dim}");
            }
        }
        let _ = writeln!(s, "functional.noise_sigma={}", format_float(self.functional.noise_sigma));
        let _ = writeln!(s, "functional.clip_bound={}", format_float(self.functional.clip_bound));
        let _ = writeln!(s, "base.family={}", self.base_family);
        match self.bandwidth {
            BandwidthRule::Fixed(bw) => {
                let _ = writeln!(s, "base.bandwidth={}", format_float(bw));
            }
            BandwidthRule::Median => {
                let _ = writeln!(s, "base.bandwidth=median");
            }
        }
        let _ = writeln!(s, "outer.family={}", self.outer.family_name());
        if let Some(theta) = self.outer.theta() {
            let _ = writeln!(s, "outer.theta={}", format_float(theta));
        }
        let _ = writeln!(
            s,
            "experiment.l_grid={}",
            self.l_grid.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(
            s,
            "experiment.a_values={}",
            self.a_values.iter().map(|v| format_float(*v)).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(s, "experiment.trials={}", self.trials);
        let _ = writeln!(s, "experiment.n_test={}", self.n_test);
        let _ = writeln!(s, "experiment.n_test_points={}", self.n_test_points);
        let _ = writeln!(s, "experiment.seed={}", self.seed);
        match self.lambda_rule {
            LambdaRule::WellspecifiedTheorem { b, c, scale } => {
                let _ = writeln!(s, "lambda.rule=theorem");
                let _ = writeln!(s, "lambda.case=wellspecified");
                let _ = writeln!(s, "lambda.b={}", format_float(b));
                let _ = writeln!(s, "lambda.c={}", format_float(c));
                let _ = writeln!(s, "lambda.scale={}", format_float(scale));
            }
            LambdaRule::MisspecifiedTheorem { s: sm, scale } => {
                let _ = writeln!(s, "lambda.rule=theorem");
                let _ = writeln!(s, "lambda.case=misspecified");
                let _ = writeln!(s, "lambda.s={}", format_float(sm));
                let _ = writeln!(s, "lambda.scale={}", format_float(scale));
            }
            LambdaRule::CrossValidate { folds } => {
                let _ = writeln!(s, "lambda.rule=cv");
                let _ = writeln!(s, "lambda.folds={folds}");
            }
        }
        let _ = writeln!(
            s,
            "concentration.n_grid={}",
            self.concentration_n_grid.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(s, "concentration.trials={}", self.concentration_trials);
        let _ = writeln!(s, "concentration.alpha={}", format_float(self.concentration_alpha));
        s
    }

    /// First 16 hex digits of the SHA-256 of the canonical form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn parse_f64(s: &str, key: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Config(format!("bad number for `{key}`: `{s}`")))
}

fn parse_usize(s: &str, key: &str) -> Result<usize> {
    s.parse::<usize>().map_err(|_| Error::Config(format!("bad integer for `{key}`: `{s}`")))
}

fn parse_u64(s: &str, key: &str) -> Result<u64> {
    s.parse::<u64>().map_err(|_| Error::Config(format!("bad integer for `{key}`: `{s}`")))
}

fn parse_bool(s: &str, key: &str) -> Result<bool> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Config(format!("bad boolean for `{key}`: `{other}`"))),
    }
}

fn parse_list<T>(s: &str, item: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    s.split(',').map(|part| item(part.trim())).collect()
}

/// One data row of a rate sweep.
#[derive(Debug, Clone)]
pub struct RateRow {
    pub l: usize,
    pub a: f64,
    pub trial: usize,
    pub n: usize,
    pub lambda: f64,
    pub excess_risk: Option<f64>,
    pub wall_time_ms: u64,
    pub status: String,
}

/// Per-`a` fitted slope with its standard error and the theoretical
/// exponents of the matching trade-off branch.
#[derive(Debug, Clone)]
pub struct SlopeLine {
    pub a: f64,
    pub fit: Option<(f64, f64)>,
    pub theory_risk_exponent: f64,
    pub theory_lambda_exponent: f64,
}

/// Full outcome of a rate sweep.
#[derive(Debug, Clone)]
pub struct RateReport {
    pub rows: Vec<RateRow>,
    pub slopes: Vec<SlopeLine>,
    pub config_hash: String,
    pub zero_wall_time: bool,
}

impl RateReport {
    /// Mean excess risk at one grid cell, over successful trials.
    pub fn mean_risk(&self, l: usize, a: f64) -> Option<f64> {
        let risks: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.l == l && r.a == a)
            .filter_map(|r| r.excess_risk)
            .collect();
        if risks.is_empty() {
            None
        } else {
            Some(risks.iter().sum::<f64>() / risks.len() as f64)
        }
    }

    /// Render the report as CSV with `#` metadata lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# merr {} rates config_sha256={}",
            env!("CARGO_PKG_VERSION"),
            self.config_hash
        );
        let _ = writeln!(out, "{RATES_HEADER}");
        for row in &self.rows {
            let risk = row.excess_risk.map(format_float).unwrap_or_default();
            let wall = if self.zero_wall_time { 0 } else { row.wall_time_ms };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                row.l,
                format_float(row.a),
                row.trial,
                row.n,
                format_float(row.lambda),
                risk,
                wall,
                row.status
            );
        }
        out
    }
}

/// Resolve the regularizer exponent of one cell under the theorem rules.
fn theorem_lambda(rule: &LambdaRule, a: f64, l: usize) -> Result<Option<f64>> {
    match *rule {
        LambdaRule::WellspecifiedTheorem { b, c, scale } => {
            let e = rate_exponents_wellspecified(a, b, c)?;
            Ok(Some(scale * (l as f64).powf(e.lambda)))
        }
        LambdaRule::MisspecifiedTheorem { s, scale } => {
            let e = rate_exponents_misspecified(a / 2.0, s)?;
            Ok(Some(scale * (l as f64).powf(e.lambda)))
        }
        LambdaRule::CrossValidate { .. } => Ok(None),
    }
}

/// Theoretical exponents attached to a slope line.
fn theory_exponents(rule: &LambdaRule, a: f64) -> (f64, f64) {
    match *rule {
        LambdaRule::WellspecifiedTheorem { b, c, .. } => rate_exponents_wellspecified(a, b, c)
            .map(|e| (e.risk, e.lambda))
            .unwrap_or((f64::NAN, f64::NAN)),
        LambdaRule::MisspecifiedTheorem { s, .. } => rate_exponents_misspecified(a / 2.0, s)
            .map(|e| (e.risk, e.lambda))
            .unwrap_or((f64::NAN, f64::NAN)),
        LambdaRule::CrossValidate { .. } => (f64::NAN, f64::NAN),
    }
}

/// Run the full rate sweep described by the config.
///
/// Cells run in a work pool; failures are recorded as failed rows and the
/// sweep continues. The report is identical for any thread count.
pub fn run_rate_experiment(config: &ExperimentConfig) -> Result<RateReport> {
    if config.l_grid.is_empty() || config.a_values.is_empty() {
        return Err(Error::Config("l_grid and a_values must be nonempty".into()));
    }
    if config.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    if config.n_test == 0 {
        return Err(Error::Config("n_test must be at least 1".into()));
    }
    config.functional.validate_for(&config.meta)?;
    let h = config.outer.holder_exponent();

    let mut cells = Vec::new();
    for (li, &l) in config.l_grid.iter().enumerate() {
        for (ai, &a) in config.a_values.iter().enumerate() {
            for trial in 0..config.trials {
                cells.push((li, l, ai, a, trial));
            }
        }
    }

    let run_all = || -> Vec<RateRow> {
        cells
            .par_iter()
            .map(|&(_li, l, _ai, a, trial)| run_rate_cell(config, h, l, a, trial))
            .collect()
    };
    let rows = if config.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(run_all)
    } else {
        run_all()
    };

    let mut slopes = Vec::new();
    for &a in &config.a_values {
        let points: Vec<(f64, f64)> = config
            .l_grid
            .iter()
            .filter_map(|&l| {
                let risks: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.l == l && r.a == a)
                    .filter_map(|r| r.excess_risk)
                    .collect();
                if risks.is_empty() {
                    None
                } else {
                    Some((l as f64, risks.iter().sum::<f64>() / risks.len() as f64))
                }
            })
            .collect();
        let fit = if points.len() >= 3 && points.iter().all(|&(_, r)| r > 0.0) {
            fit_loglog_slope(&points).ok()
        } else {
            None
        };
        let (tr, tl) = theory_exponents(&config.lambda_rule, a);
        slopes.push(SlopeLine { a, fit, theory_risk_exponent: tr, theory_lambda_exponent: tl });
    }

    Ok(RateReport {
        rows,
        slopes,
        config_hash: config.hash(),
        zero_wall_time: config.zero_wall_time,
    })
}

fn run_rate_cell(config: &ExperimentConfig, h: f64, l: usize, a: f64, trial: usize) -> RateRow {
    let started = Instant::now();
    let n = bag_size_schedule(l, a, h).unwrap_or(1);
    let mut row = RateRow {
        l,
        a,
        trial,
        n,
        lambda: f64::NAN,
        excess_risk: None,
        wall_time_ms: 0,
        status: "failed".into(),
    };
    let outcome = (|| -> Result<f64> {
        // Streams are keyed by the trial only: cells of one trial share
        // component means, label noise, and test sets, and bags are nested
        // across grid coordinates (bag i extends bag i of a smaller cell).
        // Risk comparisons across `l` and `a` are therefore paired, which
        // removes most of the between-cell sampling noise from the curves.
        let train_seed = derive_seed(config.seed, &[trial as u64, 0]);
        let test_seed = derive_seed(config.seed, &[trial as u64, 1]);

        let train = make_dataset(&config.meta, &config.functional, l, n, train_seed)?;
        let bandwidth = match config.bandwidth {
            BandwidthRule::Fixed(bw) => bw,
            BandwidthRule::Median => {
                median_heuristic_bandwidth(train.data.bags(), 10_000, train_seed)?
            }
        };
        let base = BaseKernel::from_name(&config.base_family, bandwidth)?;
        let geometry = embedding_gram(&base, train.data.bags())?;

        let lambda = match theorem_lambda(&config.lambda_rule, a, l)? {
            Some(lambda) => lambda,
            None => {
                let LambdaRule::CrossValidate { folds } = config.lambda_rule else {
                    unreachable!()
                };
                let gram = config.outer.gram(&geometry)?;
                let grid = default_lambda_grid(gram.trace() / l as f64);
                cross_validate_with_geometry(
                    &train.data,
                    &base,
                    &config.outer,
                    &grid,
                    folds.min(l),
                    derive_seed(train_seed, &[2]),
                    &geometry,
                )?
                .best_lambda
            }
        };
        row.lambda = lambda;

        let model = fit_with_geometry(&train.data, &base, &config.outer, lambda, &geometry)?;

        let n_test_points = if config.n_test_points == 0 { 10 * n } else { config.n_test_points };
        let test_means = sample_meta(&config.meta, config.n_test, test_seed)?;
        let test_bags =
            sample_bags(&test_means, config.meta.component_sigma, n_test_points, test_seed)?;
        let d_out = config.functional.output_dim();
        let mut bayes = nalgebra::DMatrix::zeros(config.n_test, d_out);
        for (i, mean) in test_means.iter().enumerate() {
            let value = crate::synthetic::true_regression_value(
                &config.functional,
                mean,
                config.meta.component_sigma,
            );
            for j in 0..d_out {
                bayes[(i, j)] = value[j];
            }
        }
        let predictions = predict(&model, &test_bags)?;
        excess_risk_estimate(
            &predictions,
            &bayes,
            config.functional.noise_sigma * config.functional.noise_sigma,
        )
    })();
    row.wall_time_ms = started.elapsed().as_millis() as u64;
    if let Ok(risk) = outcome {
        row.excess_risk = Some(risk);
        row.status = "ok".into();
    }
    row
}

/// Ordinary least squares of `ln(risk)` on `ln(l)`: returns the slope and
/// its standard error. Needs at least three strictly positive points.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 3 {
        return Err(Error::invalid(format!("slope fit needs >= 3 points, got {}", points.len())));
    }
    if points.iter().any(|&(l, r)| !(l > 0.0 && r > 0.0)) {
        return Err(Error::invalid("slope fit needs positive sizes and risks"));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|&(l, _)| l.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, r)| r.ln()).collect();
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean) * (x - x_mean)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("slope fit needs at least two distinct sizes"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ssr: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let stderr = (ssr / (n - 2.0) / sxx).sqrt();
    Ok((slope, stderr))
}

/// One aggregated row of a concentration run.
#[derive(Debug, Clone)]
pub struct ConcentrationRow {
    pub n: usize,
    pub alpha: f64,
    pub radius: f64,
    pub observed_freq: f64,
    pub bound: f64,
}

/// Outcome of a concentration experiment.
#[derive(Debug, Clone)]
pub struct ConcentrationReport {
    pub rows: Vec<ConcentrationRow>,
    pub config_hash: String,
}

impl ConcentrationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# merr {} concentration config_sha256={}",
            env!("CARGO_PKG_VERSION"),
            self.config_hash
        );
        let _ = writeln!(out, "{CONCENTRATION_HEADER}");
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                row.n,
                format_float(row.alpha),
                format_float(row.radius),
                format_float(row.observed_freq),
                format_float(row.bound)
            );
        }
        out
    }
}

/// Measure how often the empirical embedding of a bag strays beyond the
/// concentration radius from its population embedding.
///
/// The reference distance uses the closed-form population kernel of
/// gaussian components under a gaussian base kernel, so the config must use
/// the gaussian base family with a fixed bandwidth.
pub fn run_concentration_experiment(config: &ExperimentConfig) -> Result<ConcentrationReport> {
    if config.base_family != "gaussian" {
        return Err(Error::Config(
            "concentration experiment needs the gaussian base family (closed-form reference)"
                .into(),
        ));
    }
    let BandwidthRule::Fixed(bandwidth) = config.bandwidth else {
        return Err(Error::Config("concentration experiment needs a fixed bandwidth".into()));
    };
    if config.concentration_n_grid.is_empty() || config.concentration_trials == 0 {
        return Err(Error::Config("concentration grid and trials must be nonempty".into()));
    }
    let alpha = config.concentration_alpha;
    let base_bound = BaseKernel::from_name(&config.base_family, bandwidth)?.bound();

    let rows = config
        .concentration_n_grid
        .iter()
        .enumerate()
        .map(|(ni, &n)| -> Result<ConcentrationRow> {
            let radius = concentration_radius(base_bound, n, alpha)?;
            let exceed: u32 = (0..config.concentration_trials)
                .into_par_iter()
                .map(|trial| -> Result<u32> {
                    let cell_seed = derive_seed(config.seed, &[ni as u64, trial as u64]);
                    let mean = sample_meta(&config.meta, 1, cell_seed)?.remove(0);
                    let bag =
                        sample_bags(&[mean.clone()], config.meta.component_sigma, n, cell_seed)?
                            .remove(0);
                    let sq = population_embedding_sq_dist(
                        &bag,
                        &mean,
                        config.meta.component_sigma,
                        bandwidth,
                    )?;
                    Ok(u32::from(sq.sqrt() > radius))
                })
                .try_reduce(|| 0, |a, b| Ok(a + b))?;
            Ok(ConcentrationRow {
                n,
                alpha,
                radius,
                observed_freq: exceed as f64 / config.concentration_trials as f64,
                bound: (-alpha).exp(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ConcentrationReport { rows, config_hash: config.hash() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig::from_str(
            "meta.dim = 1\n\
             meta.mean_law = uniform\n\
             meta.lo = -1\n\
             meta.hi = 1\n\
             meta.component_sigma = 1\n\
             functional.kind = mean_norm_sq\n\
             functional.noise_sigma = 0.1\n\
             functional.clip_bound = 2\n\
             base.family = gaussian\n\
             base.bandwidth = 1\n\
             outer.family = linear\n\
             experiment.l_grid = 8,16\n\
             experiment.a_values = 0.6\n\
             experiment.trials = 2\n\
             experiment.n_test = 8\n\
             experiment.n_test_points = 32\n\
             experiment.seed = 5\n\
             lambda.rule = theorem\n\
             lambda.case = wellspecified\n\
             lambda.b = 2\n\
             lambda.c = 2\n",
        )
        .unwrap()
    }

    #[test]
    fn config_rejects_unknown_and_duplicate_keys() {
        assert!(matches!(
            ExperimentConfig::from_str("bogus.key = 1\n"),
            Err(Error::Config(_))
        ));
        let doubled = "meta.dim = 1\nmeta.dim = 2\n";
        assert!(matches!(ExperimentConfig::from_str(doubled), Err(Error::Config(_))));
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = tiny_config();
        let b = tiny_config();
        assert_eq!(a.hash(), b.hash());
        let mut c = tiny_config();
        c.seed = 6;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn single_cell_gives_single_row() {
        let mut config = tiny_config();
        config.l_grid = vec![8];
        config.trials = 1;
        let report = run_rate_experiment(&config).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].status, "ok");
    }

    #[test]
    fn n_column_follows_schedule() {
        let report = run_rate_experiment(&tiny_config()).unwrap();
        for row in &report.rows {
            assert_eq!(row.n, bag_size_schedule(row.l, row.a, 1.0).unwrap());
        }
    }

    #[test]
    fn report_is_thread_count_invariant() {
        let mut config = tiny_config();
        config.zero_wall_time = true;
        config.threads = 1;
        let a = run_rate_experiment(&config).unwrap().to_csv();
        config.threads = 8;
        let b = run_rate_experiment(&config).unwrap().to_csv();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_header_is_pinned() {
        let mut config = tiny_config();
        config.l_grid = vec![8];
        config.trials = 1;
        let report = run_rate_experiment(&config).unwrap();
        let csv = report.to_csv();
        let mut lines = csv.lines();
        let comment = lines.next().unwrap();
        assert!(comment.starts_with('#'));
        assert!(comment.contains("config_sha256="));
        assert_eq!(lines.next().unwrap(), RATES_HEADER);
    }

    #[test]
    fn cv_lambda_rule_runs() {
        let mut config = tiny_config();
        config.l_grid = vec![8];
        config.trials = 1;
        config.lambda_rule = LambdaRule::CrossValidate { folds: 4 };
        let report = run_rate_experiment(&config).unwrap();
        assert_eq!(report.rows[0].status, "ok");
        assert!(report.rows[0].lambda > 0.0);
    }

    #[test]
    fn slope_exact_power_law() {
        let pts: Vec<(f64, f64)> = [2.0, 4.0, 8.0].iter().map(|&l: &f64| (l, 1.0 / l)).collect();
        let (slope, stderr) = fit_loglog_slope(&pts).unwrap();
        assert_relative_eq!(slope, -1.0, epsilon = 1e-12);
        assert!(stderr < 1e-10);
    }

    #[test]
    fn slope_constant_risk_is_zero() {
        let pts = vec![(2.0, 0.5), (4.0, 0.5), (8.0, 0.5)];
        let (slope, stderr) = fit_loglog_slope(&pts).unwrap();
        assert!(slope.abs() < 1e-12);
        assert!(stderr < 1e-10);
    }

    #[test]
    fn slope_scaled_power_law_five_points() {
        let pts: Vec<(f64, f64)> =
            [2.0, 4.0, 8.0, 16.0, 32.0].iter().map(|&l: &f64| (l, 3.0 * l.powf(-0.8))).collect();
        let (slope, _) = fit_loglog_slope(&pts).unwrap();
        assert_relative_eq!(slope, -0.8, epsilon = 1e-10);
    }

    #[test]
    fn slope_rejects_bad_inputs() {
        assert!(fit_loglog_slope(&[(2.0, 1.0), (4.0, 0.5)]).is_err());
        assert!(fit_loglog_slope(&[(2.0, 1.0), (4.0, 0.5), (8.0, -0.1)]).is_err());
    }

    #[test]
    fn concentration_rows_use_exact_radius() {
        let mut config = tiny_config();
        config.concentration_n_grid = vec![9, 36];
        config.concentration_trials = 40;
        let report = run_concentration_experiment(&config).unwrap();
        assert_eq!(report.rows.len(), 2);
        for row in &report.rows {
            let expected = concentration_radius(1.0, row.n, config.concentration_alpha).unwrap();
            assert_eq!(row.radius.to_bits(), expected.to_bits());
            assert_eq!(row.bound, (-config.concentration_alpha).exp());
            assert!((0.0..=1.0).contains(&row.observed_freq));
        }
        let csv = report.to_csv();
        assert!(csv.lines().nth(1) == Some(CONCENTRATION_HEADER));
    }

    #[test]
    fn concentration_requires_gaussian_base() {
        let mut config = tiny_config();
        config.base_family = "laplacian".into();
        assert!(matches!(run_concentration_experiment(&config), Err(Error::Config(_))));
    }
}
