//! Bags of sample points.

use crate::error::{Error, Result};

/// A finite sample set drawn from one distribution: the only observable
/// form of an input. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PointBag {
    data: Vec<f64>,
    n_points: usize,
    dim: usize,
}

impl PointBag {
    /// Build a bag from row-major point data (`n_points` rows of `dim` columns).
    pub fn new(data: Vec<f64>, n_points: usize, dim: usize) -> Result<Self> {
        if n_points == 0 || dim == 0 {
            return Err(Error::EmptyBag);
        }
        if data.len() != n_points * dim {
            return Err(Error::invalid(format!(
                "bag data length {} does not match {n_points} points x {dim} dims",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::non_finite("bag points"));
        }
        Ok(Self { data, n_points, dim })
    }

    /// Build a bag from a list of points.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_points = rows.len();
        if n_points == 0 {
            return Err(Error::EmptyBag);
        }
        let dim = rows[0].len();
        let mut data = Vec::with_capacity(n_points * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { left: dim, right: row.len() });
            }
            data.extend_from_slice(row);
        }
        Self::new(data, n_points, dim)
    }

    /// Convenience constructor for one-dimensional bags.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec(), values.len(), 1)
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The `i`-th point as a slice of length `dim`.
    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub(crate) fn raw(&self) -> &[f64] {
        &self.data
    }

    /// Total ordering on content, used to canonicalize pair summation order.
    pub(crate) fn content_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.n_points
            .cmp(&other.n_points)
            .then_with(|| self.dim.cmp(&other.dim))
            .then_with(|| {
                for (a, b) in self.data.iter().zip(&other.data) {
                    let ord = a.total_cmp(b);
                    if ord != std::cmp::Ordering::Equal {
                        return ord;
                    }
                }
                std::cmp::Ordering::Equal
            })
    }
}
