//! Empirical mean-embedding geometry.
//!
//! A bag `{x_1..x_N}` is embedded as the average of base-kernel sections
//! `(1/N) sum_n k(., x_n)`, so inner products between embeddings reduce to
//! averaged pairwise kernel sums over the two bags. Everything downstream
//! (outer kernels, the regressor, concentration experiments) consumes the
//! quantities computed here.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::bag::PointBag;
use crate::error::{Error, Result};
use crate::kernel::BaseKernel;
use crate::rng::{stream, StreamKind};

/// Inner product of two empirical mean embeddings:
/// `(1/(N_a N_b)) sum_n sum_m k(a_n, b_m)`.
///
/// The pair sum runs in a canonical row-major order with the content-smaller
/// bag outermost, so exchanging the arguments returns the bit-identical
/// value.
pub fn embedding_inner(kernel: &BaseKernel, a: &PointBag, b: &PointBag) -> Result<f64> {
    check_pair(a, b)?;
    Ok(pair_mean_unchecked(kernel, a, b))
}

/// Squared embedding distance `<a,a> + <b,b> - 2<a,b>`, clamped below at 0
/// to absorb floating-point cancellation.
pub fn embedding_sq_dist(kernel: &BaseKernel, a: &PointBag, b: &PointBag) -> Result<f64> {
    check_pair(a, b)?;
    let aa = pair_mean_unchecked(kernel, a, a);
    let bb = pair_mean_unchecked(kernel, b, b);
    let ab = pair_mean_unchecked(kernel, a, b);
    Ok((aa + bb - 2.0 * ab).max(0.0))
}

/// The matrix of pairwise embedding inner products for a bag collection.
///
/// Symmetric by construction; positive semidefinite up to an eigenvalue
/// tolerance of `-1e-8 * l` because each entry is an exact set-kernel value.
#[derive(Debug, Clone)]
pub struct EmbeddingGeometry {
    inner: DMatrix<f64>,
}

impl EmbeddingGeometry {
    pub fn len(&self) -> usize {
        self.inner.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.nrows() == 0
    }

    /// `<mu_i, mu_j>`.
    pub fn inner(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    /// Cached diagonal entry `<mu_i, mu_i>`.
    pub fn self_inner(&self, i: usize) -> f64 {
        self.inner[(i, i)]
    }

    /// Squared embedding distance between bags `i` and `j`, clamped at 0.
    pub fn sq_dist(&self, i: usize, j: usize) -> f64 {
        (self.inner[(i, i)] + self.inner[(j, j)] - 2.0 * self.inner[(i, j)]).max(0.0)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    /// Restrict the geometry to a subset of bag indices.
    pub fn subset(&self, indices: &[usize]) -> EmbeddingGeometry {
        let k = indices.len();
        let inner = DMatrix::from_fn(k, k, |r, c| self.inner[(indices[r], indices[c])]);
        EmbeddingGeometry { inner }
    }

    /// Wrap a precomputed symmetric inner-product matrix.
    pub fn from_matrix(inner: DMatrix<f64>) -> Result<Self> {
        if inner.nrows() != inner.ncols() {
            return Err(Error::DimensionMismatch { left: inner.nrows(), right: inner.ncols() });
        }
        if !inner.iter().all(|v| v.is_finite()) {
            return Err(Error::non_finite("embedding geometry"));
        }
        Ok(EmbeddingGeometry { inner })
    }
}

/// Assemble the full embedding Gram matrix for a bag collection.
///
/// The bag-pair index set is tiled into independent pairs; each pair sum
/// accumulates in the same fixed order as [`embedding_inner`], so the result
/// is identical for any thread count.
pub fn embedding_gram(kernel: &BaseKernel, bags: &[PointBag]) -> Result<EmbeddingGeometry> {
    if bags.is_empty() {
        return Err(Error::invalid("embedding_gram needs at least one bag"));
    }
    let dim = bags[0].dim();
    for bag in bags {
        if bag.dim() != dim {
            return Err(Error::DimensionMismatch { left: dim, right: bag.dim() });
        }
    }
    let l = bags.len();
    let pairs: Vec<(usize, usize)> =
        (0..l).flat_map(|i| (i..l).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| pair_mean_unchecked(kernel, &bags[i], &bags[j]))
        .collect();
    let mut inner = DMatrix::zeros(l, l);
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        inner[(i, j)] = v;
        inner[(j, i)] = v;
    }
    Ok(EmbeddingGeometry { inner })
}

/// Radius such that the empirical embedding of an `N`-point bag deviates
/// from its population embedding by more than it with probability at most
/// `exp(-alpha)`: `(1 + sqrt(alpha)) * sqrt(2 B_k) / sqrt(N)`.
pub fn concentration_radius(base_bound: f64, n_points: usize, alpha: f64) -> Result<f64> {
    if !(base_bound.is_finite() && base_bound > 0.0) {
        return Err(Error::invalid(format!("base kernel bound must be positive, got {base_bound}")));
    }
    if n_points == 0 {
        return Err(Error::invalid("bag size must be at least 1"));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    Ok((1.0 + alpha.sqrt()) * (2.0 * base_bound).sqrt() / (n_points as f64).sqrt())
}

/// Median of pairwise Euclidean distances over a seeded subsample of at most
/// `max_pairs` point pairs pooled from all bags. Errors when every sampled
/// pair coincides, since a zero bandwidth is unusable.
pub fn median_heuristic_bandwidth(bags: &[PointBag], max_pairs: usize, seed: u64) -> Result<f64> {
    let points: Vec<&[f64]> = bags.iter().flat_map(|b| b.points()).collect();
    let p = points.len();
    if p < 2 {
        return Err(Error::invalid("median heuristic needs at least two points"));
    }
    if max_pairs == 0 {
        return Err(Error::invalid("max_pairs must be at least 1"));
    }
    let dim = points[0].len();
    if points.iter().any(|pt| pt.len() != dim) {
        return Err(Error::DimensionMismatch { left: dim, right: 0 });
    }

    let total_pairs = p * (p - 1) / 2;
    let mut dists: Vec<f64> = Vec::new();
    if total_pairs <= max_pairs {
        for i in 0..p {
            for j in (i + 1)..p {
                dists.push(euclidean(points[i], points[j]));
            }
        }
    } else {
        let mut rng = stream(seed, StreamKind::MedianPairs, 0);
        while dists.len() < max_pairs {
            let i = rng.gen_range(0..p);
            let j = rng.gen_range(0..p);
            if i != j {
                dists.push(euclidean(points[i], points[j]));
            }
        }
    }
    dists.sort_by(|a, b| a.total_cmp(b));
    let m = dists.len();
    let median = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if median <= 0.0 {
        return Err(Error::ZeroBandwidth);
    }
    Ok(median)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn check_pair(a: &PointBag, b: &PointBag) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { left: a.dim(), right: b.dim() });
    }
    Ok(())
}

/// Averaged pairwise kernel sum with canonical operand order.
#[inline]
fn pair_mean_unchecked(kernel: &BaseKernel, a: &PointBag, b: &PointBag) -> f64 {
    let (outer, inner) = match a.content_cmp(b) {
        std::cmp::Ordering::Greater => (b, a),
        _ => (a, b),
    };
    let total = pair_sum_rows(kernel, outer, inner);
    total / (outer.n_points() as f64 * inner.n_points() as f64)
}

/// Row-major accumulation of `sum_n sum_m k(outer_n, inner_m)`.
///
/// The one-dimensional case gets a dedicated loop; it is the hot path of the
/// experiment harness.
fn pair_sum_rows(kernel: &BaseKernel, outer: &PointBag, inner: &PointBag) -> f64 {
    if outer.dim() == 1 {
        let xs = outer.raw();
        let ys = inner.raw();
        let mut total = 0.0;
        match *kernel {
            BaseKernel::Gaussian { bandwidth } => {
                let scale = 1.0 / (2.0 * bandwidth * bandwidth);
                for &x in xs {
                    let mut row = 0.0;
                    for &y in ys {
                        let d = x - y;
                        row += (-d * d * scale).exp();
                    }
                    total += row;
                }
            }
            BaseKernel::Laplacian { bandwidth } => {
                let scale = 1.0 / bandwidth;
                for &x in xs {
                    let mut row = 0.0;
                    for &y in ys {
                        row += (-(x - y).abs() * scale).exp();
                    }
                    total += row;
                }
            }
            BaseKernel::Cauchy { bandwidth } => {
                let scale = 1.0 / (bandwidth * bandwidth);
                for &x in xs {
                    let mut row = 0.0;
                    for &y in ys {
                        let d = x - y;
                        row += 1.0 / (1.0 + d * d * scale);
                    }
                    total += row;
                }
            }
        }
        total
    } else {
        let mut total = 0.0;
        for x in outer.points() {
            let mut row = 0.0;
            for y in inner.points() {
                row += kernel.eval_unchecked(x, y);
            }
            total += row;
        }
        total
    }
}
