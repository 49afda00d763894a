//! Base kernels on the point space.
//!
//! All three families are normalized radial kernels, so the uniform bound
//! `sup_u k(u,u)` equals 1 for each of them.

use crate::error::{Error, Result};

/// Uniform bound on `k(u,u)` shared by every supported family.
pub const BASE_KERNEL_BOUND: f64 = 1.0;

/// A bounded radial kernel on points with a positive bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseKernel {
    /// `exp(-||u-v||^2 / (2 sigma^2))`
    Gaussian { bandwidth: f64 },
    /// `exp(-||u-v||_1 / sigma)`
    Laplacian { bandwidth: f64 },
    /// `1 / (1 + ||u-v||^2 / sigma^2)`
    Cauchy { bandwidth: f64 },
}

impl BaseKernel {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        Self::validated(BaseKernel::Gaussian { bandwidth })
    }

    pub fn laplacian(bandwidth: f64) -> Result<Self> {
        Self::validated(BaseKernel::Laplacian { bandwidth })
    }

    pub fn cauchy(bandwidth: f64) -> Result<Self> {
        Self::validated(BaseKernel::Cauchy { bandwidth })
    }

    pub fn from_name(name: &str, bandwidth: f64) -> Result<Self> {
        match name {
            "gaussian" => Self::gaussian(bandwidth),
            "laplacian" => Self::laplacian(bandwidth),
            "cauchy" => Self::cauchy(bandwidth),
            other => Err(Error::invalid(format!("unknown base kernel family `{other}`"))),
        }
    }

    fn validated(kernel: BaseKernel) -> Result<Self> {
        let bw = kernel.bandwidth();
        if !(bw.is_finite() && bw > 0.0) {
            return Err(Error::invalid(format!("bandwidth must be positive, got {bw}")));
        }
        Ok(kernel)
    }

    pub fn bandwidth(&self) -> f64 {
        match *self {
            BaseKernel::Gaussian { bandwidth }
            | BaseKernel::Laplacian { bandwidth }
            | BaseKernel::Cauchy { bandwidth } => bandwidth,
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            BaseKernel::Gaussian { .. } => "gaussian",
            BaseKernel::Laplacian { .. } => "laplacian",
            BaseKernel::Cauchy { .. } => "cauchy",
        }
    }

    /// Uniform bound `sup_u k(u,u)`; 1 for every supported family.
    pub fn bound(&self) -> f64 {
        BASE_KERNEL_BOUND
    }

    /// Evaluate `k(u, v)` after validating the inputs.
    pub fn eval(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        if u.len() != v.len() {
            return Err(Error::DimensionMismatch { left: u.len(), right: v.len() });
        }
        if !u.iter().chain(v.iter()).all(|x| x.is_finite()) {
            return Err(Error::non_finite("kernel arguments"));
        }
        Ok(self.eval_unchecked(u, v))
    }

    /// Evaluate `k(u, v)` assuming equal dimensions and finite entries.
    #[inline]
    pub fn eval_unchecked(&self, u: &[f64], v: &[f64]) -> f64 {
        match *self {
            BaseKernel::Gaussian { bandwidth } => {
                let sq: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                (-sq / (2.0 * bandwidth * bandwidth)).exp()
            }
            BaseKernel::Laplacian { bandwidth } => {
                let l1: f64 = u.iter().zip(v).map(|(a, b)| (a - b).abs()).sum();
                (-l1 / bandwidth).exp()
            }
            BaseKernel::Cauchy { bandwidth } => {
                let sq: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                1.0 / (1.0 + sq / (bandwidth * bandwidth))
            }
        }
    }
}
