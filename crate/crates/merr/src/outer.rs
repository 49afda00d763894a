//! Kernels on mean-embedded distributions.
//!
//! The linear family is the classical set kernel `<mu_a, mu_b>`; the five
//! nonlinear families act on the embedding distance and carry a Hölder
//! smoothness exponent `h` that the learning-rate machinery consumes.

use nalgebra::DMatrix;

use crate::bag::PointBag;
use crate::embedding::{embedding_inner, EmbeddingGeometry};
use crate::error::{Error, Result};
use crate::kernel::BaseKernel;

/// Tolerance below which an implied squared distance is treated as
/// inconsistent geometry rather than rounding noise.
const SQ_DIST_TOLERANCE: f64 = -1e-12;

/// Outer kernel family with its scale parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OuterKernel {
    /// `<mu_a, mu_b>` — the set kernel.
    Linear,
    /// `exp(-D^2 / (2 theta^2))`
    Gaussian { theta: f64 },
    /// `exp(-D / (2 theta^2))` — note the unsquared distance.
    Exponential { theta: f64 },
    /// `1 / (1 + D^2 / theta^2)`
    Cauchy { theta: f64 },
    /// `1 / (1 + D^theta)`; requires `theta <= 2` for a valid exponent.
    TStudent { theta: f64 },
    /// `1 / sqrt(D^2 + theta^2)`
    InverseMultiquadric { theta: f64 },
}

impl OuterKernel {
    pub fn linear() -> Self {
        OuterKernel::Linear
    }

    pub fn gaussian(theta: f64) -> Result<Self> {
        Self::validated(OuterKernel::Gaussian { theta })
    }

    pub fn exponential(theta: f64) -> Result<Self> {
        Self::validated(OuterKernel::Exponential { theta })
    }

    pub fn cauchy(theta: f64) -> Result<Self> {
        Self::validated(OuterKernel::Cauchy { theta })
    }

    pub fn tstudent(theta: f64) -> Result<Self> {
        Self::validated(OuterKernel::TStudent { theta })
    }

    pub fn inverse_multiquadric(theta: f64) -> Result<Self> {
        Self::validated(OuterKernel::InverseMultiquadric { theta })
    }

    pub fn from_name(name: &str, theta: f64) -> Result<Self> {
        match name {
            "linear" => Ok(OuterKernel::Linear),
            "gaussian" => Self::gaussian(theta),
            "exponential" => Self::exponential(theta),
            "cauchy" => Self::cauchy(theta),
            "tstudent" => Self::tstudent(theta),
            "invmultiquadric" => Self::inverse_multiquadric(theta),
            other => Err(Error::invalid(format!("unknown outer kernel family `{other}`"))),
        }
    }

    /// All six family names in listing order.
    pub fn family_names() -> [&'static str; 6] {
        ["linear", "gaussian", "exponential", "cauchy", "tstudent", "invmultiquadric"]
    }

    fn validated(kernel: OuterKernel) -> Result<Self> {
        if let Some(theta) = kernel.theta() {
            if !(theta.is_finite() && theta > 0.0) {
                return Err(Error::invalid(format!("theta must be positive, got {theta}")));
            }
        }
        if let OuterKernel::TStudent { theta } = kernel {
            if theta > 2.0 {
                return Err(Error::invalid(format!(
                    "tstudent requires theta <= 2 for a valid smoothness exponent, got {theta}"
                )));
            }
        }
        Ok(kernel)
    }

    pub fn theta(&self) -> Option<f64> {
        match *self {
            OuterKernel::Linear => None,
            OuterKernel::Gaussian { theta }
            | OuterKernel::Exponential { theta }
            | OuterKernel::Cauchy { theta }
            | OuterKernel::TStudent { theta }
            | OuterKernel::InverseMultiquadric { theta } => Some(theta),
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            OuterKernel::Linear => "linear",
            OuterKernel::Gaussian { .. } => "gaussian",
            OuterKernel::Exponential { .. } => "exponential",
            OuterKernel::Cauchy { .. } => "cauchy",
            OuterKernel::TStudent { .. } => "tstudent",
            OuterKernel::InverseMultiquadric { .. } => "invmultiquadric",
        }
    }

    /// Hölder exponent of the canonical feature map, in `(0, 1]`.
    pub fn holder_exponent(&self) -> f64 {
        match *self {
            OuterKernel::Linear
            | OuterKernel::Gaussian { .. }
            | OuterKernel::Cauchy { .. }
            | OuterKernel::InverseMultiquadric { .. } => 1.0,
            OuterKernel::Exponential { .. } => 0.5,
            OuterKernel::TStudent { theta } => theta / 2.0,
        }
    }

    /// `sup_a K(mu_a, mu_a)` for embeddings of bounded base kernels; a
    /// conservative default for the outer kernel bound consumed by the
    /// bound evaluators.
    pub fn sup_self_value(&self, base_bound: f64) -> f64 {
        match *self {
            OuterKernel::Linear => base_bound,
            OuterKernel::InverseMultiquadric { theta } => 1.0 / theta,
            _ => 1.0,
        }
    }

    /// Evaluate the kernel from the three embedding inner products.
    ///
    /// The implied squared distance `inner_aa + inner_bb - 2 inner_ab` must
    /// be nonnegative up to `-1e-12`; it is clamped at 0 before use.
    pub fn eval(&self, inner_aa: f64, inner_bb: f64, inner_ab: f64) -> Result<f64> {
        if let OuterKernel::Linear = self {
            return Ok(inner_ab);
        }
        let sq = inner_aa + inner_bb - 2.0 * inner_ab;
        if sq < SQ_DIST_TOLERANCE {
            return Err(Error::InconsistentGeometry { value: sq });
        }
        let sq = sq.max(0.0);
        Ok(match *self {
            OuterKernel::Linear => unreachable!(),
            OuterKernel::Gaussian { theta } => (-sq / (2.0 * theta * theta)).exp(),
            OuterKernel::Exponential { theta } => (-sq.sqrt() / (2.0 * theta * theta)).exp(),
            OuterKernel::Cauchy { theta } => 1.0 / (1.0 + sq / (theta * theta)),
            OuterKernel::TStudent { theta } => 1.0 / (1.0 + sq.sqrt().powf(theta)),
            OuterKernel::InverseMultiquadric { theta } => 1.0 / (sq + theta * theta).sqrt(),
        })
    }

    /// Entrywise outer kernel matrix over an embedding geometry.
    pub fn gram(&self, geometry: &EmbeddingGeometry) -> Result<DMatrix<f64>> {
        let l = geometry.len();
        let mut out = DMatrix::zeros(l, l);
        for i in 0..l {
            for j in i..l {
                let v = self.eval(
                    geometry.self_inner(i),
                    geometry.self_inner(j),
                    geometry.inner(i, j),
                )?;
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(out)
    }

    /// Row of outer kernel values between every training bag and one test bag.
    pub fn cross_row(
        &self,
        base: &BaseKernel,
        train_bags: &[PointBag],
        test_bag: &PointBag,
    ) -> Result<Vec<f64>> {
        let self_inners: Vec<f64> = train_bags
            .iter()
            .map(|b| embedding_inner(base, b, b))
            .collect::<Result<_>>()?;
        self.cross_row_cached(base, train_bags, &self_inners, test_bag)
    }

    /// Same as [`OuterKernel::cross_row`] with precomputed training
    /// self-inner products.
    pub fn cross_row_cached(
        &self,
        base: &BaseKernel,
        train_bags: &[PointBag],
        train_self_inners: &[f64],
        test_bag: &PointBag,
    ) -> Result<Vec<f64>> {
        let tt = embedding_inner(base, test_bag, test_bag)?;
        train_bags
            .iter()
            .zip(train_self_inners)
            .map(|(bag, &ii)| {
                let it = embedding_inner(base, bag, test_bag)?;
                self.eval(ii, tt, it)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::embedding_gram;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn holder_exponents_per_family() {
        assert_eq!(OuterKernel::linear().holder_exponent(), 1.0);
        assert_eq!(OuterKernel::gaussian(1.0).unwrap().holder_exponent(), 1.0);
        assert_eq!(OuterKernel::exponential(0.5).unwrap().holder_exponent(), 0.5);
        assert_eq!(OuterKernel::cauchy(1.0).unwrap().holder_exponent(), 1.0);
        assert_eq!(OuterKernel::tstudent(1.0).unwrap().holder_exponent(), 0.5);
        assert_eq!(
            OuterKernel::inverse_multiquadric(1.0).unwrap().holder_exponent(),
            1.0
        );
    }

    #[test]
    fn tstudent_large_theta_rejected() {
        assert!(OuterKernel::tstudent(2.5).is_err());
        assert!(OuterKernel::tstudent(2.0).is_ok());
    }

    #[test]
    fn nonpositive_theta_rejected() {
        assert!(OuterKernel::gaussian(0.0).is_err());
        assert!(OuterKernel::exponential(-1.0).is_err());
        assert!(OuterKernel::from_name("cauchy", f64::NAN).is_err());
    }

    #[test]
    fn eval_at_zero_distance() {
        assert_eq!(OuterKernel::gaussian(0.3).unwrap().eval(0.7, 0.7, 0.7).unwrap(), 1.0);
        assert_eq!(
            OuterKernel::inverse_multiquadric(1.0).unwrap().eval(0.4, 0.4, 0.4).unwrap(),
            1.0
        );
    }

    #[test]
    fn cauchy_two_bag_example() {
        // squared distance from the two-bag embedding example
        let sq = 0.354606;
        let inner_ab = 0.606531;
        let v = OuterKernel::cauchy(1.0)
            .unwrap()
            .eval(0.567668, 1.0, inner_ab)
            .unwrap();
        assert_relative_eq!(v, 1.0 / (1.0 + sq), epsilon = 1e-5);
        assert_relative_eq!(v, 0.738221, epsilon = 1e-5);
    }

    #[test]
    fn exponential_uses_unsquared_distance() {
        let theta = 0.9;
        let k = OuterKernel::exponential(theta).unwrap();
        let v = k.eval(1.0, 1.0, 0.5).unwrap(); // D^2 = 1, D = 1
        assert_relative_eq!(v, (-1.0 / (2.0 * theta * theta)).exp(), max_relative = 1e-12);
    }

    #[test]
    fn inconsistent_geometry_rejected() {
        let k = OuterKernel::gaussian(1.0).unwrap();
        assert!(matches!(
            k.eval(0.0, 0.0, 1.0),
            Err(Error::InconsistentGeometry { .. })
        ));
    }

    #[test]
    fn linear_gram_returns_geometry() {
        let bags = vec![
            PointBag::from_scalars(&[0.0, 2.0]).unwrap(),
            PointBag::from_scalars(&[1.0]).unwrap(),
        ];
        let base = BaseKernel::gaussian(1.0).unwrap();
        let g = embedding_gram(&base, &bags).unwrap();
        let k = OuterKernel::linear().gram(&g).unwrap();
        assert_eq!(k, *g.matrix());
    }

    #[test]
    fn gaussian_gram_diagonal_is_ones() {
        let bags = vec![
            PointBag::from_scalars(&[0.0, 2.0]).unwrap(),
            PointBag::from_scalars(&[1.0, -1.0, 0.5]).unwrap(),
        ];
        let base = BaseKernel::gaussian(1.0).unwrap();
        let g = embedding_gram(&base, &bags).unwrap();
        let k = OuterKernel::gaussian(0.7).unwrap().gram(&g).unwrap();
        for i in 0..2 {
            assert_eq!(k[(i, i)], 1.0);
        }
    }

    #[test]
    fn cauchy_gram_two_bag_example() {
        let bags = vec![
            PointBag::from_scalars(&[0.0, 2.0]).unwrap(),
            PointBag::from_scalars(&[1.0]).unwrap(),
        ];
        let base = BaseKernel::gaussian(1.0).unwrap();
        let g = embedding_gram(&base, &bags).unwrap();
        let k = OuterKernel::cauchy(1.0).unwrap().gram(&g).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        assert_eq!(k[(1, 1)], 1.0);
        assert_relative_eq!(k[(0, 1)], 0.738221, epsilon = 1e-5);
        assert_eq!(k[(0, 1)], k[(1, 0)]);
    }

    #[test]
    fn cross_row_on_training_bag_matches_gram() {
        let bags = vec![
            PointBag::from_scalars(&[0.0, 2.0]).unwrap(),
            PointBag::from_scalars(&[1.0]).unwrap(),
        ];
        let base = BaseKernel::gaussian(1.0).unwrap();
        let g = embedding_gram(&base, &bags).unwrap();
        for outer in [OuterKernel::linear(), OuterKernel::gaussian(1.0).unwrap()] {
            let k = outer.gram(&g).unwrap();
            for t in 0..2 {
                let row = outer.cross_row(&base, &bags, &bags[t]).unwrap();
                for i in 0..2 {
                    assert_relative_eq!(row[i], k[(i, t)], max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn gaussian_cross_on_self_is_one() {
        let bags = vec![
            PointBag::from_scalars(&[0.0, 2.0]).unwrap(),
            PointBag::from_scalars(&[1.0]).unwrap(),
        ];
        let base = BaseKernel::gaussian(1.0).unwrap();
        let row = OuterKernel::gaussian(1.0)
            .unwrap()
            .cross_row(&base, &bags, &bags[0])
            .unwrap();
        assert_eq!(row[0], 1.0);
    }

    #[test]
    fn linear_cross_on_singletons_is_base_kernel() {
        let base = BaseKernel::gaussian(1.0).unwrap();
        let u = PointBag::from_scalars(&[0.4]).unwrap();
        let v = PointBag::from_scalars(&[-1.1]).unwrap();
        let row = OuterKernel::linear().cross_row(&base, &[u], &v).unwrap();
        assert_eq!(row[0], base.eval(&[0.4], &[-1.1]).unwrap());
    }

    #[test]
    fn all_families_produce_psd_grams() {
        use crate::rng::{stream, StreamKind};
        use rand::Rng;
        let base = BaseKernel::gaussian(1.0).unwrap();
        let mut rng = stream(11, StreamKind::Cell, 0);
        let l = 20;
        let bags: Vec<PointBag> = (0..l)
            .map(|_| {
                let n = rng.gen_range(1..6);
                let pts: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                PointBag::from_scalars(&pts).unwrap()
            })
            .collect();
        let g = embedding_gram(&base, &bags).unwrap();
        let kernels = [
            OuterKernel::linear(),
            OuterKernel::gaussian(0.8).unwrap(),
            OuterKernel::exponential(0.8).unwrap(),
            OuterKernel::cauchy(0.8).unwrap(),
            OuterKernel::tstudent(1.5).unwrap(),
            OuterKernel::inverse_multiquadric(0.8).unwrap(),
        ];
        for kernel in kernels {
            let k = kernel.gram(&g).unwrap();
            let eig = nalgebra::SymmetricEigen::new(k);
            let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(
                min >= -1e-8 * l as f64,
                "{} gram has eigenvalue {min}",
                kernel.family_name()
            );
        }
    }

    #[test]
    fn local_holder_exponent_not_worse_than_declared() {
        // 500 random embedding triples realized as explicit vectors so the
        // inner products are exactly consistent; checks the local exponent
        // of K against the declared h whenever ||mu_a - mu_b|| <= 0.1.
        use crate::rng::{stream, StreamKind};
        use rand::Rng;
        let mut rng = stream(5, StreamKind::Cell, 1);
        for kernel in [OuterKernel::gaussian(1.0).unwrap(), OuterKernel::exponential(1.0).unwrap()] {
            let h = kernel.holder_exponent();
            let mut checked = 0;
            while checked < 500 {
                let dim = 4;
                let mut a = vec![0.0; dim];
                let mut c = vec![0.0; dim];
                for i in 0..dim {
                    a[i] = rng.gen_range(-0.4..0.4);
                    c[i] = rng.gen_range(-0.4..0.4);
                }
                // b is a small perturbation of a to stay inside the local regime
                let eps = rng.gen_range(1e-4..0.04f64);
                let mut b = a.clone();
                for item in b.iter_mut().take(dim) {
                    *item += rng.gen_range(-eps..eps);
                }
                let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
                let dist_ab = (dot(&a, &a) + dot(&b, &b) - 2.0 * dot(&a, &b)).max(0.0).sqrt();
                if dist_ab <= 0.0 || dist_ab > 0.1 {
                    continue;
                }
                let kac = kernel.eval(dot(&a, &a), dot(&c, &c), dot(&a, &c)).unwrap();
                let kbc = kernel.eval(dot(&b, &b), dot(&c, &c), dot(&b, &c)).unwrap();
                let diff = (kac - kbc).abs();
                if diff > 0.0 {
                    let ratio = diff.ln() / dist_ab.ln();
                    assert!(
                        ratio >= h - 0.1,
                        "{}: local exponent {ratio} below {h} - 0.1 (dist {dist_ab})",
                        kernel.family_name()
                    );
                }
                checked += 1;
            }
        }
    }

    proptest! {
        /// Nonlinear families depend on the inner products only through the
        /// squared distance: shifting all three by a constant changes
        /// nothing. Dyadic inputs keep the arithmetic exact.
        #[test]
        fn nonlinear_eval_shift_invariant(
            aa in 0..1024i32, bb in 0..1024i32, abx in 0..1024i32, t in -1024..1024i32
        ) {
            let scale = 1.0 / 1024.0;
            let (aa, bb) = (aa as f64 * scale + 2.0, bb as f64 * scale + 2.0);
            let ab = (abx as f64 * scale).min(aa.min(bb)); // keep D^2 >= 0
            let t = t as f64 * scale;
            for kernel in [
                OuterKernel::gaussian(0.9).unwrap(),
                OuterKernel::exponential(0.9).unwrap(),
                OuterKernel::cauchy(0.9).unwrap(),
                OuterKernel::tstudent(1.0).unwrap(),
                OuterKernel::inverse_multiquadric(0.9).unwrap(),
            ] {
                let v0 = kernel.eval(aa, bb, ab).unwrap();
                let v1 = kernel.eval(aa + t, bb + t, ab + t).unwrap();
                prop_assert_eq!(v0.to_bits(), v1.to_bits());
            }
        }
    }
}
