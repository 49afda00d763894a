//! The mean-embedding ridge regressor.
//!
//! Fitting solves the dual system `(K + l*lambda*I) alpha = Y` where `K` is
//! the outer kernel Gram over training embeddings; prediction evaluates
//! `k_t . alpha` with `k_t` the outer kernel row between the test bag and
//! the training bags. A scalar outer kernel times the identity covers
//! vector labels: the columns of `Y` decouple into independent solves.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::bag::PointBag;
use crate::embedding::{embedding_gram, EmbeddingGeometry};
use crate::error::{Error, Result};
use crate::kernel::BaseKernel;
use crate::outer::OuterKernel;
use crate::rng::{stream, StreamKind};
use crate::solver::solve_spd;

/// Training bags with their labels and the declared label-norm bound.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    bags: Vec<PointBag>,
    labels: DMatrix<f64>,
    label_bound: f64,
}

impl LabeledDataset {
    /// Validates shapes, finiteness, and that every label norm stays within
    /// `label_bound`. Out-of-bound labels are rejected, never clipped.
    pub fn new(bags: Vec<PointBag>, labels: DMatrix<f64>, label_bound: f64) -> Result<Self> {
        if bags.is_empty() {
            return Err(Error::invalid("dataset needs at least one bag"));
        }
        if labels.nrows() != bags.len() {
            return Err(Error::DimensionMismatch { left: bags.len(), right: labels.nrows() });
        }
        if labels.ncols() == 0 {
            return Err(Error::invalid("labels need at least one column"));
        }
        if !labels.iter().all(|v| v.is_finite()) {
            return Err(Error::non_finite("labels"));
        }
        if !(label_bound.is_finite() && label_bound >= 0.0) {
            return Err(Error::invalid(format!("label bound must be nonnegative, got {label_bound}")));
        }
        let dim = bags[0].dim();
        for bag in &bags {
            if bag.dim() != dim {
                return Err(Error::DimensionMismatch { left: dim, right: bag.dim() });
            }
        }
        for i in 0..labels.nrows() {
            let norm = labels.row(i).norm();
            if norm > label_bound {
                return Err(Error::LabelBound { index: i, norm, bound: label_bound });
            }
        }
        Ok(Self { bags, labels, label_bound })
    }

    /// Build with the bound taken as the largest observed label norm.
    pub fn with_observed_bound(bags: Vec<PointBag>, labels: DMatrix<f64>) -> Result<Self> {
        let bound = (0..labels.nrows())
            .map(|i| labels.row(i).norm())
            .fold(0.0f64, f64::max);
        Self::new(bags, labels, bound)
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn bags(&self) -> &[PointBag] {
        &self.bags
    }

    pub fn labels(&self) -> &DMatrix<f64> {
        &self.labels
    }

    pub fn label_dim(&self) -> usize {
        self.labels.ncols()
    }

    pub fn label_bound(&self) -> f64 {
        self.label_bound
    }
}

/// A fitted regressor: everything needed to evaluate the closed-form
/// predictor on new bags. Immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    base: BaseKernel,
    outer: OuterKernel,
    lambda: f64,
    train_bags: Vec<PointBag>,
    train_self_inners: Vec<f64>,
    factor: DMatrix<f64>,
    duals: DMatrix<f64>,
    jitter: f64,
}

impl TrainedModel {
    pub fn base(&self) -> &BaseKernel {
        &self.base
    }

    pub fn outer(&self) -> &OuterKernel {
        &self.outer
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn train_bags(&self) -> &[PointBag] {
        &self.train_bags
    }

    pub fn duals(&self) -> &DMatrix<f64> {
        &self.duals
    }

    /// Lower-triangular factor of the jittered dual system matrix.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn label_dim(&self) -> usize {
        self.duals.ncols()
    }

    /// Rebuild a model from persisted parts; recomputes the factorization
    /// and training self-inner products from the bags.
    pub fn from_parts(
        base: BaseKernel,
        outer: OuterKernel,
        lambda: f64,
        train_bags: Vec<PointBag>,
        duals: DMatrix<f64>,
    ) -> Result<Self> {
        if train_bags.len() != duals.nrows() {
            return Err(Error::DimensionMismatch { left: train_bags.len(), right: duals.nrows() });
        }
        let geometry = embedding_gram(&base, &train_bags)?;
        let gram = outer.gram(&geometry)?;
        let l = train_bags.len();
        let system = &gram + DMatrix::identity(l, l) * (l as f64 * lambda);
        let scale = gram.trace() / l as f64;
        let solve = solve_spd(&system, &DMatrix::zeros(l, duals.ncols()), scale)?;
        let train_self_inners = (0..l).map(|i| geometry.self_inner(i)).collect();
        Ok(Self {
            base,
            outer,
            lambda,
            train_bags,
            train_self_inners,
            factor: solve.factor,
            duals,
            jitter: solve.jitter,
        })
    }
}

/// Fit the ridge dual system on a labeled dataset.
pub fn fit(
    data: &LabeledDataset,
    base: &BaseKernel,
    outer: &OuterKernel,
    lambda: f64,
) -> Result<TrainedModel> {
    let geometry = embedding_gram(base, data.bags())?;
    fit_with_geometry(data, base, outer, lambda, &geometry)
}

/// Fit when the embedding geometry of the training bags is already known
/// (cross-validation reuses one geometry across folds).
pub fn fit_with_geometry(
    data: &LabeledDataset,
    base: &BaseKernel,
    outer: &OuterKernel,
    lambda: f64,
    geometry: &EmbeddingGeometry,
) -> Result<TrainedModel> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    let l = data.len();
    if geometry.len() != l {
        return Err(Error::DimensionMismatch { left: geometry.len(), right: l });
    }
    let gram = outer.gram(geometry)?;
    let scale = gram.trace() / l as f64;
    let system = &gram + DMatrix::identity(l, l) * (l as f64 * lambda);
    let solve = solve_spd(&system, data.labels(), scale)?;
    let train_self_inners = (0..l).map(|i| geometry.self_inner(i)).collect();
    Ok(TrainedModel {
        base: *base,
        outer: *outer,
        lambda,
        train_bags: data.bags().to_vec(),
        train_self_inners,
        factor: solve.factor,
        duals: solve.solution,
        jitter: solve.jitter,
    })
}

/// Predict labels for a batch of test bags; row `t` is the prediction for
/// `test_bags[t]`.
pub fn predict(model: &TrainedModel, test_bags: &[PointBag]) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = test_bags
        .par_iter()
        .map(|bag| -> Result<Vec<f64>> {
            let k_row = model.outer.cross_row_cached(
                &model.base,
                &model.train_bags,
                &model.train_self_inners,
                bag,
            )?;
            let d = model.duals.ncols();
            let mut out = vec![0.0; d];
            for (i, &k) in k_row.iter().enumerate() {
                for (j, slot) in out.iter_mut().enumerate() {
                    *slot += k * model.duals[(i, j)];
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let d = model.duals.ncols();
    Ok(DMatrix::from_fn(test_bags.len(), d, |r, c| rows[r][c]))
}

/// Mean squared prediction error on a labeled dataset.
pub fn empirical_risk(model: &TrainedModel, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("empirical risk needs a nonempty dataset"));
    }
    let preds = predict(model, data.bags())?;
    Ok(mean_sq_row_dist(&preds, data.labels()))
}

/// Monte-Carlo excess risk: mean squared distance between predictions and
/// the Bayes regression values on test items.
///
/// Valid as an excess-risk estimate when label noise is additive and
/// independent of the input; `noise_variance` documents that assumption and
/// does not enter the average.
pub fn excess_risk_estimate(
    predictions: &DMatrix<f64>,
    bayes_values: &DMatrix<f64>,
    noise_variance: f64,
) -> Result<f64> {
    if predictions.shape() != bayes_values.shape() {
        return Err(Error::DimensionMismatch {
            left: predictions.nrows() * predictions.ncols(),
            right: bayes_values.nrows() * bayes_values.ncols(),
        });
    }
    if predictions.nrows() == 0 {
        return Err(Error::invalid("excess risk needs at least one item"));
    }
    if !(noise_variance.is_finite() && noise_variance >= 0.0) {
        return Err(Error::invalid(format!("noise variance must be nonnegative, got {noise_variance}")));
    }
    Ok(mean_sq_row_dist(predictions, bayes_values))
}

fn mean_sq_row_dist(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let mut sq = 0.0;
        for j in 0..a.ncols() {
            let d = a[(i, j)] - b[(i, j)];
            sq += d * d;
        }
        total += sq;
    }
    total / n as f64
}

/// Result of a cross-validation sweep over a regularizer grid.
#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub best_lambda: f64,
    /// `(lambda, mean held-out risk)` in grid order.
    pub curve: Vec<(f64, f64)>,
}

/// Bag-level K-fold cross-validation over a lambda grid.
///
/// Bags are shuffled by the seed and split into `folds` contiguous groups,
/// so no bag's points ever straddle folds. Ties in mean held-out risk break
/// toward the largest lambda.
pub fn cross_validate(
    data: &LabeledDataset,
    base: &BaseKernel,
    outer: &OuterKernel,
    lambda_grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<CvOutcome> {
    let geometry = embedding_gram(base, data.bags())?;
    cross_validate_with_geometry(data, base, outer, lambda_grid, folds, seed, &geometry)
}

/// Cross-validate reusing a precomputed embedding geometry of the full
/// dataset; held-out predictions read their kernel rows straight from it.
pub fn cross_validate_with_geometry(
    data: &LabeledDataset,
    base: &BaseKernel,
    outer: &OuterKernel,
    lambda_grid: &[f64],
    folds: usize,
    seed: u64,
    geometry: &EmbeddingGeometry,
) -> Result<CvOutcome> {
    let l = data.len();
    if folds < 2 || folds > l {
        return Err(Error::invalid(format!("folds must satisfy 2 <= folds <= {l}, got {folds}")));
    }
    if lambda_grid.is_empty() {
        return Err(Error::invalid("lambda grid is empty"));
    }
    if lambda_grid.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
        return Err(Error::invalid("lambda grid entries must be positive"));
    }
    if geometry.len() != l {
        return Err(Error::DimensionMismatch { left: geometry.len(), right: l });
    }

    let mut order: Vec<usize> = (0..l).collect();
    let mut rng = stream(seed, StreamKind::Folds, 0);
    // Fisher-Yates on the bag indices; fold membership depends on the seed only.
    for i in (1..l).rev() {
        let j = rand::Rng::gen_range(&mut rng, 0..=i);
        order.swap(i, j);
    }
    let mut fold_of = vec![0usize; l];
    let base_size = l / folds;
    let extra = l % folds;
    let mut cursor = 0;
    for f in 0..folds {
        let size = base_size + usize::from(f < extra);
        for _ in 0..size {
            fold_of[order[cursor]] = f;
            cursor += 1;
        }
    }

    let mut curve = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let mut risk_sum = 0.0;
        let mut item_count = 0usize;
        for f in 0..folds {
            let train_idx: Vec<usize> = (0..l).filter(|&i| fold_of[i] != f).collect();
            let test_idx: Vec<usize> = (0..l).filter(|&i| fold_of[i] == f).collect();
            let sub_geometry = geometry.subset(&train_idx);
            let train_bags: Vec<PointBag> =
                train_idx.iter().map(|&i| data.bags()[i].clone()).collect();
            let train_labels = DMatrix::from_fn(train_idx.len(), data.label_dim(), |r, c| {
                data.labels()[(train_idx[r], c)]
            });
            let train_data =
                LabeledDataset::new(train_bags, train_labels, data.label_bound())?;
            let model = fit_with_geometry(&train_data, base, outer, lambda, &sub_geometry)?;
            // Held-out predictions reuse the precomputed geometry: the cross
            // row of bag t against the training subset is already in it.
            for &t in &test_idx {
                let mut sq = 0.0;
                for (col, _) in (0..data.label_dim()).enumerate() {
                    let mut pred = 0.0;
                    for (r, &i) in train_idx.iter().enumerate() {
                        let k = outer.eval(
                            geometry.self_inner(i),
                            geometry.self_inner(t),
                            geometry.inner(i, t),
                        )?;
                        pred += k * model.duals[(r, col)];
                    }
                    let d = pred - data.labels()[(t, col)];
                    sq += d * d;
                }
                risk_sum += sq;
                item_count += 1;
            }
        }
        curve.push((lambda, risk_sum / item_count as f64));
    }

    let mut best = curve[0];
    for &(lambda, risk) in &curve[1..] {
        if risk < best.1 || (risk == best.1 && lambda > best.0) {
            best = (lambda, risk);
        }
    }
    Ok(CvOutcome { best_lambda: best.0, curve })
}

/// Default regularizer grid: 20 log-spaced values spanning
/// `[1e-8, 1e+1]` in units of `trace(K)/l` of the outer Gram.
pub fn default_lambda_grid(trace_over_l: f64) -> Vec<f64> {
    let scale = if trace_over_l > 0.0 { trace_over_l } else { 1.0 };
    let lo = (1e-8 * scale).ln();
    let hi = (1e1 * scale).ln();
    (0..20)
        .map(|i| (lo + (hi - lo) * i as f64 / 19.0).exp())
        .collect()
}
