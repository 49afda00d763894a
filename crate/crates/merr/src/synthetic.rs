//! Two-stage synthetic problems with known Bayes regression values.
//!
//! Stage one draws distribution parameters (gaussian location means) from a
//! meta law; stage two draws bag points from each component. Labels are a
//! closed-form functional of the component parameters plus optional
//! independent gaussian noise, so excess risk is measurable directly.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::bag::PointBag;
use crate::error::{Error, Result};
use crate::regressor::LabeledDataset;
use crate::rng::{stream, StreamKind};

/// Law of the component means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeanLaw {
    /// Uniform on the box `[lo, hi]^d`.
    UniformBox { lo: f64, hi: f64 },
    /// Centered gaussian with standard deviation `tau` per coordinate.
    Gaussian { tau: f64 },
}

/// Meta distribution of gaussian-location components: a mean law plus a
/// shared isotropic component deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaDistribution {
    pub dim: usize,
    pub mean_law: MeanLaw,
    pub component_sigma: f64,
}

impl MetaDistribution {
    pub fn new(dim: usize, mean_law: MeanLaw, component_sigma: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("ambient dimension must be at least 1"));
        }
        if !(component_sigma.is_finite() && component_sigma > 0.0) {
            return Err(Error::invalid(format!(
                "component sigma must be positive, got {component_sigma}"
            )));
        }
        match mean_law {
            MeanLaw::UniformBox { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(Error::invalid(format!("bad mean box [{lo}, {hi}]")));
                }
            }
            MeanLaw::Gaussian { tau } => {
                if !(tau.is_finite() && tau > 0.0) {
                    return Err(Error::invalid(format!("tau must be positive, got {tau}")));
                }
            }
        }
        Ok(Self { dim, mean_law, component_sigma })
    }
}

/// Closed-form label functional applied to component means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelKind {
    /// `||m||^2`, scalar output.
    MeanNormSq,
    /// Differential entropy of the component, `(d/2) ln(2 pi e sigma^2)`;
    /// scalar output, constant across bags.
    GaussianEntropy,
    /// `A m` for a fixed seeded matrix `A`, vector output.
    LinearOfMean { map_seed: u64, output_dim: usize },
}

/// Label functional with its noise level and the declared label bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelFunctional {
    pub kind: LabelKind,
    pub noise_sigma: f64,
    pub clip_bound: f64,
}

impl LabelFunctional {
    pub fn new(kind: LabelKind, noise_sigma: f64, clip_bound: f64) -> Result<Self> {
        if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
            return Err(Error::invalid(format!("noise sigma must be nonnegative, got {noise_sigma}")));
        }
        if !(clip_bound.is_finite() && clip_bound > 0.0) {
            return Err(Error::invalid(format!("clip bound must be positive, got {clip_bound}")));
        }
        if let LabelKind::LinearOfMean { output_dim, .. } = kind {
            if output_dim == 0 {
                return Err(Error::invalid("linear functional needs output_dim >= 1"));
            }
        }
        Ok(Self { kind, noise_sigma, clip_bound })
    }

    pub fn output_dim(&self) -> usize {
        match self.kind {
            LabelKind::MeanNormSq | LabelKind::GaussianEntropy => 1,
            LabelKind::LinearOfMean { output_dim, .. } => output_dim,
        }
    }

    /// Check that noiseless labels cannot exceed the clip bound anywhere on
    /// the support of the mean law. Unbounded supports are rejected for
    /// mean-dependent functionals, since no finite bound can hold surely.
    pub fn validate_for(&self, meta: &MetaDistribution) -> Result<()> {
        let sup = match (self.kind, meta.mean_law) {
            (LabelKind::GaussianEntropy, _) => {
                gaussian_entropy(meta.dim, meta.component_sigma).abs()
            }
            (LabelKind::MeanNormSq, MeanLaw::UniformBox { lo, hi }) => {
                let per_coord = lo.abs().max(hi.abs()).powi(2);
                meta.dim as f64 * per_coord
            }
            (LabelKind::LinearOfMean { map_seed, output_dim }, MeanLaw::UniformBox { lo, hi }) => {
                let map = linear_map(map_seed, output_dim, meta.dim);
                let corner = lo.abs().max(hi.abs());
                // row-wise worst case over the box, a conservative envelope
                (0..output_dim)
                    .map(|r| {
                        (0..meta.dim).map(|c| map[(r, c)].abs() * corner).sum::<f64>().powi(2)
                    })
                    .sum::<f64>()
                    .sqrt()
            }
            (_, MeanLaw::Gaussian { .. }) => {
                return Err(Error::Config(
                    "mean-dependent labels are unbounded under a gaussian mean law; \
                     use a uniform box or the entropy functional"
                        .into(),
                ));
            }
        };
        if sup > self.clip_bound {
            return Err(Error::Config(format!(
                "noiseless labels reach {sup:.6} but clip bound is {}",
                self.clip_bound
            )));
        }
        Ok(())
    }
}

/// Draw `l` component means from the meta law. Reproducible per index:
/// mean `i` has its own stream.
pub fn sample_meta(meta: &MetaDistribution, l: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if l == 0 {
        return Err(Error::invalid("need at least one component"));
    }
    Ok((0..l)
        .map(|i| {
            let mut rng = stream(seed, StreamKind::Meta, i as u64);
            (0..meta.dim)
                .map(|_| match meta.mean_law {
                    MeanLaw::UniformBox { lo, hi } => {
                        if lo == hi {
                            lo
                        } else {
                            rng.gen_range(lo..hi)
                        }
                    }
                    MeanLaw::Gaussian { tau } => {
                        let z: f64 = rng.sample(StandardNormal);
                        tau * z
                    }
                })
                .collect()
        })
        .collect())
}

/// Draw one bag of `n_points` i.i.d. gaussian points around each mean.
/// Bag `i` is a pure function of `(seed, i)`, so batch generation and
/// single-bag regeneration agree bit for bit.
pub fn sample_bags(
    means: &[Vec<f64>],
    sigma: f64,
    n_points: usize,
    seed: u64,
) -> Result<Vec<PointBag>> {
    if n_points == 0 {
        return Err(Error::invalid("bags need at least one point"));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::invalid(format!("sigma must be nonnegative, got {sigma}")));
    }
    means
        .iter()
        .enumerate()
        .map(|(i, mean)| {
            let mut rng = stream(seed, StreamKind::Bag, i as u64);
            let dim = mean.len();
            let mut data = Vec::with_capacity(n_points * dim);
            for _ in 0..n_points {
                for &m in mean {
                    let z: f64 = rng.sample(StandardNormal);
                    data.push(m + sigma * z);
                }
            }
            PointBag::new(data, n_points, dim)
        })
        .collect()
}

/// Bayes regression value of a component under the functional.
pub fn true_regression_value(
    functional: &LabelFunctional,
    mean: &[f64],
    sigma: f64,
) -> Vec<f64> {
    match functional.kind {
        LabelKind::MeanNormSq => vec![mean.iter().map(|m| m * m).sum()],
        LabelKind::GaussianEntropy => vec![gaussian_entropy(mean.len(), sigma)],
        LabelKind::LinearOfMean { map_seed, output_dim } => {
            let map = linear_map(map_seed, output_dim, mean.len());
            (0..output_dim)
                .map(|r| (0..mean.len()).map(|c| map[(r, c)] * mean[c]).sum())
                .collect()
        }
    }
}

/// Differential entropy of an isotropic gaussian: `(d/2) ln(2 pi e sigma^2)`.
pub fn gaussian_entropy(dim: usize, sigma: f64) -> f64 {
    dim as f64 / 2.0 * (2.0 * std::f64::consts::PI * std::f64::consts::E * sigma * sigma).ln()
}

fn linear_map(map_seed: u64, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut rng = stream(map_seed, StreamKind::LinearMap, 0);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// A generated dataset together with the Bayes values of its items.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub data: LabeledDataset,
    pub bayes: DMatrix<f64>,
    pub means: Vec<Vec<f64>>,
}

/// Compose the full two-stage pipeline: means, bags, Bayes values, and
/// noisy labels. Labels exceeding the clip bound abort generation; they are
/// never clipped, since clipping would change the regression function.
pub fn make_dataset(
    meta: &MetaDistribution,
    functional: &LabelFunctional,
    l: usize,
    n_points: usize,
    seed: u64,
) -> Result<SyntheticDataset> {
    functional.validate_for(meta)?;
    let means = sample_meta(meta, l, seed)?;
    let bags = sample_bags(&means, meta.component_sigma, n_points, seed)?;
    let d_out = functional.output_dim();
    let mut bayes = DMatrix::zeros(l, d_out);
    let mut labels = DMatrix::zeros(l, d_out);
    for (i, mean) in means.iter().enumerate() {
        let value = true_regression_value(functional, mean, meta.component_sigma);
        let mut noise_rng = stream(seed, StreamKind::Noise, i as u64);
        for j in 0..d_out {
            bayes[(i, j)] = value[j];
            let noise = if functional.noise_sigma > 0.0 {
                let z: f64 = noise_rng.sample(StandardNormal);
                functional.noise_sigma * z
            } else {
                0.0
            };
            labels[(i, j)] = value[j] + noise;
        }
        let norm = labels.row(i).norm();
        if norm > functional.clip_bound {
            return Err(Error::Config(format!(
                "label {i} has norm {norm:.6}, beyond the clip bound {}; \
                 raise the bound or lower the noise",
                functional.clip_bound
            )));
        }
    }
    let data = LabeledDataset::new(bags, labels, functional.clip_bound)?;
    Ok(SyntheticDataset { data, bayes, means })
}

/// Population inner product of two gaussian-location mean embeddings under
/// a gaussian base kernel:
/// `(s^2/(s^2+2 sigma^2))^(d/2) exp(-||mi-mj||^2 / (2 (s^2+2 sigma^2)))`
/// with `s` the kernel bandwidth. Derived by gaussian convolution.
pub fn population_linear_kernel(
    mean_i: &[f64],
    mean_j: &[f64],
    component_sigma: f64,
    kernel_bandwidth: f64,
) -> f64 {
    let d = mean_i.len();
    let s2 = kernel_bandwidth * kernel_bandwidth;
    let denom = s2 + 2.0 * component_sigma * component_sigma;
    let sq: f64 = mean_i.iter().zip(mean_j).map(|(a, b)| (a - b) * (a - b)).sum();
    (s2 / denom).powf(d as f64 / 2.0) * (-sq / (2.0 * denom)).exp()
}

/// Population inner product between a point's kernel section and a
/// component embedding: `E_u k(v, u)` for `u ~ N(m, sigma^2 I)`.
pub fn population_point_embedding_inner(
    point: &[f64],
    mean: &[f64],
    component_sigma: f64,
    kernel_bandwidth: f64,
) -> f64 {
    let d = point.len();
    let s2 = kernel_bandwidth * kernel_bandwidth;
    let denom = s2 + component_sigma * component_sigma;
    let sq: f64 = point.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    (s2 / denom).powf(d as f64 / 2.0) * (-sq / (2.0 * denom)).exp()
}

/// Squared distance between the population embedding of a component and the
/// empirical embedding of one of its bags, via the closed forms above plus
/// the exact empirical pair sum.
pub fn population_embedding_sq_dist(
    bag: &PointBag,
    mean: &[f64],
    component_sigma: f64,
    kernel_bandwidth: f64,
) -> Result<f64> {
    let base = crate::kernel::BaseKernel::gaussian(kernel_bandwidth)?;
    let emp = crate::embedding::embedding_inner(&base, bag, bag)?;
    let pop = population_linear_kernel(mean, mean, component_sigma, kernel_bandwidth);
    let cross = bag
        .points()
        .map(|p| population_point_embedding_inner(p, mean, component_sigma, kernel_bandwidth))
        .sum::<f64>()
        / bag.n_points() as f64;
    Ok((emp + pop - 2.0 * cross).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn meta_box(dim: usize, lo: f64, hi: f64, sigma: f64) -> MetaDistribution {
        MetaDistribution::new(dim, MeanLaw::UniformBox { lo, hi }, sigma).unwrap()
    }

    #[test]
    fn sample_meta_is_deterministic() {
        let meta = meta_box(2, -1.0, 1.0, 1.0);
        let a = sample_meta(&meta, 5, 42).unwrap();
        let b = sample_meta(&meta, 5, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_meta(&meta, 5, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_box_gives_constant_means() {
        let meta = meta_box(3, 0.0, 0.0, 1.0);
        let means = sample_meta(&meta, 4, 1).unwrap();
        assert!(means.iter().all(|m| m.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn sample_meta_law_of_large_numbers() {
        let meta = meta_box(1, 0.0, 1.0, 1.0);
        let means = sample_meta(&meta, 100_000, 3).unwrap();
        let avg: f64 = means.iter().map(|m| m[0]).sum::<f64>() / means.len() as f64;
        assert!((avg - 0.5).abs() < 0.01, "sample mean {avg}");
    }

    #[test]
    fn zero_sigma_bags_collapse_to_means() {
        let means = vec![vec![1.5], vec![-0.25]];
        let bags = sample_bags(&means, 0.0, 4, 9).unwrap();
        for (bag, mean) in bags.iter().zip(&means) {
            assert!(bag.points().all(|p| p[0] == mean[0]));
        }
    }

    #[test]
    fn bag_means_concentrate() {
        let meta = meta_box(1, -1.0, 1.0, 1.0);
        let means = sample_meta(&meta, 1000, 5).unwrap();
        let n = 64;
        let bags = sample_bags(&means, 1.0, n, 5).unwrap();
        let tol = 4.0 / (n as f64).sqrt();
        let ok = bags
            .iter()
            .zip(&means)
            .filter(|(bag, mean)| {
                let avg: f64 = bag.points().map(|p| p[0]).sum::<f64>() / n as f64;
                (avg - mean[0]).abs() <= tol
            })
            .count();
        assert!(ok >= 950, "only {ok}/1000 bag means within 4 sigma / sqrt(N)");
    }

    #[test]
    fn single_bag_regeneration_matches_batch() {
        let means = vec![vec![0.1, 0.2], vec![-0.3, 0.4], vec![0.9, -0.9]];
        let batch = sample_bags(&means, 0.7, 5, 77).unwrap();
        let solo = sample_bags(&means[1..2], 0.7, 5, 77);
        // regenerating bag 1 alone must use its own stream index
        let alone = {
            let mut rng = stream(77, StreamKind::Bag, 1);
            let mut data = Vec::new();
            for _ in 0..5 {
                for &m in &means[1] {
                    let z: f64 = rng.sample(StandardNormal);
                    data.push(m + 0.7 * z);
                }
            }
            PointBag::new(data, 5, 2).unwrap()
        };
        assert_eq!(batch[1], alone);
        // a slice starting elsewhere uses different indices by design
        assert_ne!(batch[1], solo.unwrap()[0]);
    }

    #[test]
    fn regression_value_examples() {
        let f = LabelFunctional::new(LabelKind::MeanNormSq, 0.0, 100.0).unwrap();
        assert_eq!(true_regression_value(&f, &[0.0, 0.0], 1.0), vec![0.0]);
        assert_eq!(true_regression_value(&f, &[3.0, 4.0], 1.0), vec![25.0]);

        let e = LabelFunctional::new(LabelKind::GaussianEntropy, 0.0, 100.0).unwrap();
        let v = true_regression_value(&e, &[0.0], 1.0)[0];
        assert_relative_eq!(v, 1.41894, epsilon = 1e-5);
    }

    #[test]
    fn entropy_matches_quadrature_oracle() {
        // -integral of p ln p for the standard normal via Simpson's rule
        let sigma = 1.0f64;
        let steps = 20_000;
        let (lo, hi) = (-12.0, 12.0);
        let hstep = (hi - lo) / steps as f64;
        let pdf = |x: f64| {
            (-(x * x) / (2.0 * sigma * sigma)).exp()
                / (sigma * (2.0 * std::f64::consts::PI).sqrt())
        };
        let integrand = |x: f64| {
            let p = pdf(x);
            if p > 0.0 {
                -p * p.ln()
            } else {
                0.0
            }
        };
        let mut acc = integrand(lo) + integrand(hi);
        for i in 1..steps {
            let x = lo + i as f64 * hstep;
            acc += integrand(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let oracle = acc * hstep / 3.0;
        assert_relative_eq!(gaussian_entropy(1, sigma), oracle, epsilon = 1e-9);
    }

    #[test]
    fn linear_map_is_fixed_by_seed() {
        let f = LabelFunctional::new(
            LabelKind::LinearOfMean { map_seed: 4, output_dim: 2 },
            0.0,
            1e6,
        )
        .unwrap();
        let a = true_regression_value(&f, &[1.0, 0.5, -0.25], 1.0);
        let b = true_regression_value(&f, &[1.0, 0.5, -0.25], 1.0);
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        // linearity
        let doubled = true_regression_value(&f, &[2.0, 1.0, -0.5], 1.0);
        assert_relative_eq!(doubled[0], 2.0 * a[0], max_relative = 1e-12);
    }

    #[test]
    fn noiseless_labels_equal_bayes() {
        let meta = meta_box(1, -1.0, 1.0, 0.5);
        let f = LabelFunctional::new(LabelKind::MeanNormSq, 0.0, 2.0).unwrap();
        let out = make_dataset(&meta, &f, 20, 3, 11).unwrap();
        for i in 0..20 {
            assert_eq!(out.data.labels()[(i, 0)], out.bayes[(i, 0)]);
        }
        assert_eq!(out.data.label_bound(), 2.0);
    }

    #[test]
    fn label_variance_adds_noise_variance() {
        let meta = meta_box(1, 0.0, 1.0, 0.5);
        let noise = 0.3;
        let f = LabelFunctional::new(LabelKind::MeanNormSq, noise, 16.0).unwrap();
        let out = make_dataset(&meta, &f, 10_000, 2, 13).unwrap();
        let l = out.data.len();
        let mean_label: f64 = (0..l).map(|i| out.data.labels()[(i, 0)]).sum::<f64>() / l as f64;
        let var_label: f64 = (0..l)
            .map(|i| (out.data.labels()[(i, 0)] - mean_label).powi(2))
            .sum::<f64>()
            / l as f64;
        let mean_bayes: f64 = (0..l).map(|i| out.bayes[(i, 0)]).sum::<f64>() / l as f64;
        let var_bayes: f64 =
            (0..l).map(|i| (out.bayes[(i, 0)] - mean_bayes).powi(2)).sum::<f64>() / l as f64;
        let expected = var_bayes + noise * noise;
        assert!(
            (var_label - expected).abs() / expected < 0.05,
            "label variance {var_label} vs expected {expected}"
        );
    }

    #[test]
    fn clip_violation_is_a_config_error() {
        let meta = meta_box(1, -1.0, 1.0, 0.5);
        let f = LabelFunctional::new(LabelKind::MeanNormSq, 0.0, 0.5).unwrap();
        assert!(matches!(make_dataset(&meta, &f, 10, 2, 1), Err(Error::Config(_))));
    }

    #[test]
    fn gaussian_mean_law_rejected_for_unbounded_labels() {
        let meta =
            MetaDistribution::new(1, MeanLaw::Gaussian { tau: 1.0 }, 0.5).unwrap();
        let f = LabelFunctional::new(LabelKind::MeanNormSq, 0.0, 10.0).unwrap();
        assert!(matches!(make_dataset(&meta, &f, 10, 2, 1), Err(Error::Config(_))));
        // entropy labels are constant, hence fine
        let e = LabelFunctional::new(LabelKind::GaussianEntropy, 0.0, 10.0).unwrap();
        assert!(make_dataset(&meta, &e, 10, 2, 1).is_ok());
    }

    #[test]
    fn population_kernel_matches_monte_carlo() {
        // verify the convolution identity against a large two-sample average
        let (sigma, bandwidth) = (0.7, 1.3);
        let (mi, mj) = (0.3, -0.5);
        let closed = population_linear_kernel(&[mi], &[mj], sigma, bandwidth);
        let mut rng = stream(99, StreamKind::Cell, 0);
        let base = crate::kernel::BaseKernel::gaussian(bandwidth).unwrap();
        let samples = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..samples {
            let x: f64 = mi + sigma * rng.sample::<f64, _>(StandardNormal);
            let y: f64 = mj + sigma * rng.sample::<f64, _>(StandardNormal);
            acc += base.eval_unchecked(&[x], &[y]);
        }
        let mc = acc / samples as f64;
        assert!(
            (closed - mc).abs() < 5e-3,
            "closed form {closed} vs monte carlo {mc}"
        );
    }

    #[test]
    fn population_sq_dist_shrinks_with_bag_size() {
        let mean = vec![0.25];
        let mut last = f64::INFINITY;
        for n in [10usize, 100, 1000] {
            let bags = sample_bags(&[mean.clone()], 1.0, n, 21).unwrap();
            let d = population_embedding_sq_dist(&bags[0], &mean, 1.0, 1.0).unwrap();
            assert!(d >= 0.0 && d < last, "sq dist {d} at N={n}");
            last = d;
        }
    }
}
