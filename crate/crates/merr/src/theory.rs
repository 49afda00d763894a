//! Closed-form evaluators for the finite-sample analysis.
//!
//! These functions evaluate excess-risk upper bounds, their preconditions,
//! learning-rate exponents, and bag-size schedules from user-supplied
//! constants. Population operators have no finite representation, so they
//! enter only through norms/bounds supplied by the caller or through the
//! prior-class upper bounds of [`PriorParams`].

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::solver::solve_spd;

/// Parameters of the prior class: eigenvalue decay `b`, source smoothness
/// `c`, source norm bound `R`, and the spectrum envelope `alpha / n^b <=
/// lambda_n <= beta / n^b`.
#[derive(Debug, Clone, Copy)]
pub struct PriorParams {
    /// Eigenvalue decay exponent, `b > 1`.
    pub decay: f64,
    /// Smoothness index of the regression function, `c` in `(1, 2]`.
    pub smoothness: f64,
    /// Bound on the squared source norm.
    pub source_norm_sq: f64,
    /// Lower spectrum constant `alpha`.
    pub spectrum_lower: f64,
    /// Upper spectrum constant `beta`.
    pub spectrum_upper: f64,
}

impl PriorParams {
    pub fn new(
        decay: f64,
        smoothness: f64,
        source_norm_sq: f64,
        spectrum_lower: f64,
        spectrum_upper: f64,
    ) -> Result<Self> {
        if !(decay.is_finite() && decay > 1.0) {
            return Err(Error::invalid(format!("decay b must exceed 1, got {decay}")));
        }
        if !(smoothness.is_finite() && smoothness > 1.0 && smoothness <= 2.0) {
            return Err(Error::invalid(format!("smoothness c must lie in (1,2], got {smoothness}")));
        }
        for (name, v) in [
            ("source_norm_sq", source_norm_sq),
            ("spectrum_lower", spectrum_lower),
            ("spectrum_upper", spectrum_upper),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self { decay, smoothness, source_norm_sq, spectrum_lower, spectrum_upper })
    }

    /// The three regularizer-dependent upper bounds available inside the
    /// prior class.
    pub fn bounds_at(&self, lambda: f64) -> Result<PriorBounds> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
        }
        Ok(PriorBounds {
            approximation: self.source_norm_sq * lambda.powf(self.smoothness),
            reconstruction: self.source_norm_sq * lambda.powf(self.smoothness - 1.0),
            effective_dimension: self.spectrum_upper * self.decay / (self.decay - 1.0)
                * lambda.powf(-1.0 / self.decay),
        })
    }
}

/// Upper bounds on the approximation error, reconstruction error, and
/// effective dimension at a given regularizer.
#[derive(Debug, Clone, Copy)]
pub struct PriorBounds {
    pub approximation: f64,
    pub reconstruction: f64,
    pub effective_dimension: f64,
}

/// Problem constants consumed by the bound evaluators.
#[derive(Debug, Clone, Copy)]
pub struct BoundInputs {
    /// Uniform bound on the base kernel diagonal.
    pub base_bound: f64,
    /// Uniform bound on the outer kernel diagonal.
    pub outer_bound: f64,
    /// Hölder scale of the outer kernel feature map.
    pub holder_scale: f64,
    /// Hölder exponent in `(0, 1]`.
    pub holder_exponent: f64,
    /// Almost-sure bound on the label norm.
    pub label_bound: f64,
    /// Number of training bags.
    pub bags: usize,
    /// Points per bag.
    pub bag_size: usize,
    /// Ridge regularizer.
    pub lambda: f64,
    /// Confidence parameter in `(0, 1)`.
    pub eta: f64,
    /// Second confidence parameter, positive.
    pub delta: f64,
    /// Norm of the regression function in the hypothesis space.
    pub target_norm: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("base_bound", self.base_bound),
            ("outer_bound", self.outer_bound),
            ("lambda", self.lambda),
            ("delta", self.delta),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("holder_scale", self.holder_scale),
            ("label_bound", self.label_bound),
            ("target_norm", self.target_norm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if !(self.holder_exponent > 0.0 && self.holder_exponent <= 1.0) {
            return Err(Error::invalid(format!(
                "holder exponent must lie in (0,1], got {}",
                self.holder_exponent
            )));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::invalid(format!("eta must lie in (0,1), got {}", self.eta)));
        }
        if self.bags == 0 || self.bag_size == 0 {
            return Err(Error::invalid("bags and bag_size must be at least 1"));
        }
        Ok(())
    }

    /// Scale of the centered-label noise: `2 (C + ||f_rho|| sqrt(B_K))`.
    pub fn noise_scale(&self) -> f64 {
        2.0 * (self.label_bound + self.target_norm * self.outer_bound.sqrt())
    }

    /// Variance proxy of the centered labels: half the noise scale.
    pub fn noise_sigma(&self) -> f64 {
        self.noise_scale() / 2.0
    }

    /// Confidence factor used by the well-specified bound: `32 ln^2(6/eta)`.
    ///
    /// The misspecified bound uses the differently scaled
    /// [`bernstein_factor_misspecified`]; the two share a name in the source
    /// material but are distinct quantities.
    pub fn bernstein_factor_wellspecified(&self) -> f64 {
        32.0 * (6.0 / self.eta).ln().powi(2)
    }

    /// Confidence factor used by the misspecified bound: `ln(6/eta)`.
    pub fn bernstein_factor_misspecified(&self) -> f64 {
        (6.0 / self.eta).ln()
    }
}

/// High-probability excess-risk bound in the well-specified case, under the
/// prior class. Strictly decreasing in the bag size whenever the Hölder
/// scale is positive.
pub fn wellspecified_bound(inputs: &BoundInputs, prior: &PriorParams) -> Result<f64> {
    inputs.validate()?;
    let at = prior.bounds_at(inputs.lambda)?;
    let l = inputs.bags as f64;
    let n = inputs.bag_size as f64;
    let lam = inputs.lambda;
    let h = inputs.holder_exponent;
    let b_k = inputs.base_bound;
    let b_outer = inputs.outer_bound;
    let m = inputs.noise_scale();
    let sigma = inputs.noise_sigma();
    let log_eta_sq = (6.0 / inputs.eta).ln().powi(2);
    let c_eta = inputs.bernstein_factor_wellspecified();
    let log_term = 1.0 + (l.ln() + inputs.delta).sqrt();

    // Squared-norm bound on the sample-level minimizer; multiplies the
    // two-stage term below.
    let dual_norm_sq = log_eta_sq
        * (64.0 / lam * (m * m * b_outer / (l * l * lam) + sigma * sigma * at.effective_dimension / l)
            + 24.0 / (lam * lam)
                * (4.0 * b_outer * b_outer * at.reconstruction / (l * l)
                    + b_outer * at.approximation / l))
        + at.reconstruction
        + inputs.target_norm * inputs.target_norm;

    // Bag-sampling (two-stage) contribution: vanishes when the feature map
    // is constant (holder_scale = 0) and decays as N^{-h}.
    let two_stage = 4.0 * inputs.holder_scale.powi(2) * log_term.powf(2.0 * h)
        * (2.0 * b_k).powf(h)
        / (lam * n.powf(h))
        * (inputs.label_bound.powi(2) + 4.0 * b_outer * dual_norm_sq);

    // Distribution-sampling (one-stage) contribution.
    let one_stage = c_eta
        * (b_outer * b_outer * at.reconstruction / (l * l * lam)
            + b_outer * at.approximation / (4.0 * l * lam)
            + b_outer * m * m / (l * l * lam)
            + sigma * sigma * at.effective_dimension / l);

    let bound = 5.0 * (two_stage + at.approximation + one_stage);
    if !bound.is_finite() {
        return Err(Error::non_finite("well-specified bound"));
    }
    Ok(bound)
}

/// High-probability excess-risk bound in the misspecified case under the
/// range-space smoothness assumption with index `s`.
///
/// `t_tilde_norm` is the operator norm of the embedded covariance,
/// `f_rho_ts_norm` the norm of the pre-image of the regression function,
/// and `sigma_bern` the Bernstein variance proxy (defaults to the outer
/// kernel bound in callers). The bound controls the square root of the
/// excess risk; the returned value is its square.
pub fn misspecified_bound(
    inputs: &BoundInputs,
    s: f64,
    t_tilde_norm: f64,
    f_rho_ts_norm: f64,
    sigma_bern: f64,
) -> Result<f64> {
    inputs.validate()?;
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::invalid(format!("smoothness s must be positive, got {s}")));
    }
    for (name, v) in [
        ("t_tilde_norm", t_tilde_norm),
        ("f_rho_ts_norm", f_rho_ts_norm),
        ("sigma_bern", sigma_bern),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::invalid(format!("{name} must be nonnegative, got {v}")));
        }
    }
    let l = inputs.bags as f64;
    let n = inputs.bag_size as f64;
    let lam = inputs.lambda;
    let h = inputs.holder_exponent;
    let c = inputs.label_bound;
    let b_outer = inputs.outer_bound;
    let c_eta = inputs.bernstein_factor_misspecified();
    let log_term = 1.0 + (l.ln() + inputs.delta).sqrt();

    let two_stage = 2.0 * inputs.holder_scale * c * log_term.powf(h)
        * (2.0 * inputs.base_bound).powf(h / 2.0)
        / (lam.sqrt() * n.powf(h / 2.0))
        * (1.0 + 2.0 * b_outer.sqrt() / lam.sqrt());

    let approx_term = t_tilde_norm.powf(s - 1.0).max(1.0) * lam.powf(s.min(1.0)) * f_rho_ts_norm;
    let coupling =
        (t_tilde_norm.powf(s).max(1.0) * lam * f_rho_ts_norm * approx_term).sqrt();
    let one_stage = 2.0 * c_eta / lam.sqrt()
        * ((2.0 * c * b_outer.sqrt() / l + c * b_outer.sqrt() / l.sqrt())
            + (2.0 * b_outer / l + sigma_bern / l.sqrt()) / lam * coupling);

    let root = two_stage + one_stage + approx_term;
    let bound = root * root;
    if !bound.is_finite() {
        return Err(Error::non_finite("misspecified bound"));
    }
    Ok(bound)
}

/// Bag-size schedule `ceil(l^(a/h) * ln l)`, at least 1.
pub fn bag_size_schedule(l: usize, a: f64, h: f64) -> Result<usize> {
    if l < 2 {
        return Err(Error::invalid(format!("schedule needs l >= 2, got {l}")));
    }
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::invalid(format!("growth exponent a must be positive, got {a}")));
    }
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::invalid(format!("holder exponent must lie in (0,1], got {h}")));
    }
    let lf = l as f64;
    let n = (lf.powf(a / h) * lf.ln()).ceil();
    if !n.is_finite() || n > usize::MAX as f64 {
        return Err(Error::invalid(format!("schedule overflows at l={l}, a={a}, h={h}")));
    }
    Ok((n as usize).max(1))
}

/// Learning-rate exponents: excess risk decays as `l^risk` under the
/// regularizer schedule `lambda = l^lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateExponents {
    pub risk: f64,
    pub lambda: f64,
}

/// Saturation threshold `b(c+1)/(bc+1)` of the well-specified trade-off.
pub fn wellspecified_threshold(b: f64, c: f64) -> f64 {
    b * (c + 1.0) / (b * c + 1.0)
}

/// Rate exponents in the well-specified case for bag growth `N = l^(a/h) ln l`.
///
/// Below the threshold the rate is `-ac/(c+1)`; from the threshold on it
/// saturates at `-bc/(bc+1)`. Both branches agree at the threshold; the
/// saturated form is evaluated there.
pub fn rate_exponents_wellspecified(a: f64, b: f64, c: f64) -> Result<RateExponents> {
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::invalid(format!("a must be positive, got {a}")));
    }
    if !(b.is_finite() && b > 1.0) {
        return Err(Error::invalid(format!("b must exceed 1, got {b}")));
    }
    if !(c.is_finite() && c > 1.0 && c <= 2.0) {
        return Err(Error::invalid(format!("c must lie in (1,2], got {c}")));
    }
    Ok(if a < wellspecified_threshold(b, c) {
        RateExponents { risk: -(a * c) / (c + 1.0), lambda: -a / (c + 1.0) }
    } else {
        RateExponents { risk: -(b * c) / (b * c + 1.0), lambda: -b / (b * c + 1.0) }
    })
}

/// Saturation threshold `(s+1)/(s+2)` of the misspecified trade-off.
pub fn misspecified_threshold(s: f64) -> f64 {
    (s + 1.0) / (s + 2.0)
}

/// Rate exponents in the misspecified case for bag growth `N = l^(2a/h) ln l`.
pub fn rate_exponents_misspecified(a: f64, s: f64) -> Result<RateExponents> {
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::invalid(format!("a must be positive, got {a}")));
    }
    if !(s.is_finite() && s > 0.0 && s <= 1.0) {
        return Err(Error::invalid(format!("s must lie in (0,1], got {s}")));
    }
    Ok(if a < misspecified_threshold(s) {
        RateExponents { risk: -(2.0 * s * a) / (s + 1.0), lambda: -a / (s + 1.0) }
    } else {
        RateExponents { risk: -(2.0 * s) / (s + 2.0), lambda: -1.0 / (s + 2.0) }
    })
}

/// Saturated two-stage rate exponent `-2s/(s+2)` next to the one-stage
/// reference exponent `-2s/(2s+1)`. The one-stage exponent is never slower
/// and the two meet at `s -> 0` and `s = 1`.
pub fn saturated_rate_comparison(s: f64) -> Result<(f64, f64)> {
    if !(s.is_finite() && s > 0.0 && s <= 1.0) {
        return Err(Error::invalid(format!("s must lie in (0,1], got {s}")));
    }
    Ok((-(2.0 * s) / (s + 2.0), -(2.0 * s) / (2.0 * s + 1.0)))
}

/// One precondition check of a bound: its name, whether it holds, and by
/// what margin (positive means satisfied with room).
#[derive(Debug, Clone)]
pub struct ConditionCheck {
    pub name: &'static str,
    pub satisfied: bool,
    pub margin: f64,
}

/// Evaluate the sample-size and regularizer preconditions of both bounds.
///
/// `effective_dimension` is the (proxy or prior-bound) effective dimension
/// at the configured regularizer; `operator_norm` bounds the covariance
/// operator. Reports, never errors.
pub fn check_conditions(
    inputs: &BoundInputs,
    effective_dimension: f64,
    operator_norm: f64,
) -> Vec<ConditionCheck> {
    let l = inputs.bags as f64;
    let n = inputs.bag_size as f64;
    let lam = inputs.lambda;
    let h = inputs.holder_exponent;

    let bags_needed =
        2.0 * inputs.bernstein_factor_wellspecified() * inputs.outer_bound * effective_dimension
            / lam;
    let n_needed = (1.0 + (l.ln() + inputs.delta).sqrt()).powi(2)
        * 2.0f64.powf((h + 6.0) / h)
        * inputs.base_bound
        * inputs.outer_bound.powf(1.0 / h)
        * inputs.holder_scale.powf(2.0 / h)
        / lam.powf(2.0 / h);
    let bernstein_needed =
        (12.0 * inputs.outer_bound * inputs.bernstein_factor_misspecified() / lam).powi(2);

    vec![
        ConditionCheck {
            name: "bags_vs_effective_dimension",
            satisfied: l >= bags_needed,
            margin: l - bags_needed,
        },
        ConditionCheck {
            name: "lambda_below_operator_norm",
            satisfied: lam <= operator_norm,
            margin: operator_norm - lam,
        },
        ConditionCheck {
            name: "bag_size_lower_bound",
            satisfied: n >= n_needed,
            margin: n - n_needed,
        },
        ConditionCheck {
            name: "bags_vs_bernstein",
            satisfied: l >= bernstein_needed,
            margin: l - bernstein_needed,
        },
    ]
}

/// Empirical proxy for the effective dimension:
/// `trace(K (K + l lambda I)^{-1})`, always in `[0, l]` and decreasing in
/// `lambda`. This is a proxy computed from the Gram matrix; the population
/// quantity it stands in for is not computable.
pub fn empirical_effective_dimension(gram: &DMatrix<f64>, lambda: f64, l: usize) -> Result<f64> {
    if gram.nrows() != l || gram.ncols() != l {
        return Err(Error::DimensionMismatch { left: gram.nrows(), right: l });
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    if !gram.iter().all(|v| v.is_finite()) {
        return Err(Error::non_finite("gram matrix"));
    }
    let system = gram + DMatrix::identity(l, l) * (l as f64 * lambda);
    let scale = gram.trace() / l as f64;
    let solve = solve_spd(&system, gram, scale)?;
    Ok(solve.solution.trace().clamp(0.0, l as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn prior() -> PriorParams {
        PriorParams::new(2.0, 2.0, 1.0, 0.5, 1.0).unwrap()
    }

    fn inputs() -> BoundInputs {
        BoundInputs {
            base_bound: 1.0,
            outer_bound: 1.0,
            holder_scale: 1.0,
            holder_exponent: 1.0,
            label_bound: 1.0,
            bags: 100,
            bag_size: 1000,
            lambda: 0.1,
            eta: 0.1,
            delta: 1.0,
            target_norm: 1.0,
        }
    }

    #[test]
    fn prior_bounds_examples() {
        let p = PriorParams::new(2.0, 2.0, 1.0, 0.5, 1.0).unwrap();
        let at = p.bounds_at(0.1).unwrap();
        assert_relative_eq!(at.approximation, 0.01, max_relative = 1e-12);
        let at1 = p.bounds_at(1.0).unwrap();
        assert_relative_eq!(at1.reconstruction, 1.0, max_relative = 1e-12);
        let at25 = p.bounds_at(0.25).unwrap();
        assert_relative_eq!(at25.effective_dimension, 4.0, max_relative = 1e-12);
    }

    #[test]
    fn prior_rejects_bad_domain() {
        assert!(PriorParams::new(1.0, 2.0, 1.0, 1.0, 1.0).is_err());
        assert!(PriorParams::new(2.0, 2.5, 1.0, 1.0, 1.0).is_err());
        assert!(PriorParams::new(2.0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(prior().bounds_at(0.0).is_err());
    }

    #[test]
    fn wellspecified_bound_decreasing_in_bag_size() {
        let mut last = f64::INFINITY;
        for n in [10usize, 100, 1000, 10_000] {
            let mut input = inputs();
            input.bag_size = n;
            let v = wellspecified_bound(&input, &prior()).unwrap();
            assert!(v > 0.0 && v < last, "bound {v} not below {last} at N={n}");
            last = v;
        }
    }

    #[test]
    fn zero_holder_scale_removes_two_stage_term() {
        let mut input = inputs();
        input.holder_scale = 0.0;
        let v = wellspecified_bound(&input, &prior()).unwrap();
        // with L = 0 only the approximation and one-stage terms remain
        let at = prior().bounds_at(input.lambda).unwrap();
        let l = input.bags as f64;
        let lam = input.lambda;
        let m = input.noise_scale();
        let sigma = input.noise_sigma();
        let expected = 5.0
            * (at.approximation
                + input.bernstein_factor_wellspecified()
                    * (at.reconstruction / (l * l * lam)
                        + at.approximation / (4.0 * l * lam)
                        + m * m / (l * l * lam)
                        + sigma * sigma * at.effective_dimension / l));
        assert_relative_eq!(v, expected, max_relative = 1e-12);
    }

    #[test]
    fn misspecified_bound_decreasing_in_bag_size() {
        let mut last = f64::INFINITY;
        for n in [10usize, 100, 1000] {
            let mut input = inputs();
            input.bag_size = n;
            let v = misspecified_bound(&input, 1.0, 1.0, 1.0, 1.0).unwrap();
            assert!(v > 0.0 && v < last);
            last = v;
        }
    }

    #[test]
    fn misspecified_approx_term_at_unit_operator_norm() {
        // with s = 1 and unit operator norm the approximation term is
        // lambda * ||T^-1 f||; verified through the s-dependence of the bound
        let input = inputs();
        let f_norm = 0.7;
        let v_small = misspecified_bound(&input, 1.0, 1.0, f_norm, 0.0).unwrap();
        // strip the two-stage and coupling parts by zeroing the constants
        let mut bare = input;
        bare.holder_scale = 0.0;
        bare.label_bound = 0.0;
        let v = misspecified_bound(&bare, 1.0, 1.0, f_norm, 0.0).unwrap();
        let lam = input.lambda;
        let expected_root = lam * f_norm;
        assert!(v >= expected_root * expected_root * (1.0 - 1e-12));
        assert!(v <= v_small);
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(bag_size_schedule(8, 1.0, 1.0).unwrap(), 17);
        assert_eq!(bag_size_schedule(8, 1.0, 0.5).unwrap(), 134);
        // a -> 0+ leaves only the log factor
        assert_eq!(bag_size_schedule(8, 1e-12, 1.0).unwrap(), 3);
        assert!(bag_size_schedule(1, 1.0, 1.0).is_err());
        assert!(bag_size_schedule(8, 0.0, 1.0).is_err());
        assert!(bag_size_schedule(8, 1.0, 1.5).is_err());
    }

    #[test]
    fn wellspecified_exponents_at_threshold_are_exact() {
        let e = rate_exponents_wellspecified(6.0 / 5.0, 2.0, 2.0).unwrap();
        assert_eq!(e.risk, -4.0 / 5.0);
        assert_eq!(e.lambda, -2.0 / 5.0);
    }

    #[test]
    fn wellspecified_exponents_saturate() {
        let e = rate_exponents_wellspecified(1.9, 2.0, 2.0).unwrap();
        assert_eq!(e.risk, -4.0 / 5.0);
        let e2 = rate_exponents_wellspecified(10.0, 2.0, 2.0).unwrap();
        assert_eq!(e, e2);
    }

    #[test]
    fn wellspecified_exponents_vanish_as_a_vanishes() {
        let e = rate_exponents_wellspecified(1e-12, 2.0, 2.0).unwrap();
        assert!(e.risk.abs() < 1e-11 && e.risk < 0.0);
    }

    #[test]
    fn misspecified_exponents_at_threshold_are_exact() {
        let e = rate_exponents_misspecified(2.0 / 3.0, 1.0).unwrap();
        assert_eq!(e.risk, -2.0 / 3.0);
        assert_eq!(e.lambda, -1.0 / 3.0);
        // saturated for any larger a
        let e2 = rate_exponents_misspecified(0.9, 1.0).unwrap();
        assert_eq!(e2.risk, -2.0 / 3.0);
    }

    #[test]
    fn rate_domain_violations_rejected() {
        assert!(rate_exponents_wellspecified(-1.0, 2.0, 2.0).is_err());
        assert!(rate_exponents_wellspecified(1.0, 0.5, 2.0).is_err());
        assert!(rate_exponents_misspecified(1.0, 1.5).is_err());
        assert!(saturated_rate_comparison(0.0).is_err());
    }

    #[test]
    fn rate_comparison_examples() {
        let (two, one) = saturated_rate_comparison(1.0).unwrap();
        assert_eq!(two, -2.0 / 3.0);
        assert_eq!(one, -2.0 / 3.0);
        let (two, one) = saturated_rate_comparison(0.5).unwrap();
        assert_eq!(two, -0.4);
        assert_eq!(one, -0.5);
        let (two, one) = saturated_rate_comparison(1e-9).unwrap();
        assert!(two.abs() < 1e-8 && one.abs() < 1e-8);
    }

    #[test]
    fn one_stage_rate_never_slower() {
        for i in 1..=100 {
            let s = i as f64 / 100.0;
            let (two, one) = saturated_rate_comparison(s).unwrap();
            assert!(one.abs() >= two.abs() - 1e-15);
        }
    }

    #[test]
    fn conditions_report_lambda_check() {
        let mut input = inputs();
        input.lambda = 2.0;
        let checks = check_conditions(&input, 1.0, 1.0);
        let lam_check = checks.iter().find(|c| c.name == "lambda_below_operator_norm").unwrap();
        assert!(!lam_check.satisfied);
        assert!(lam_check.margin < 0.0);
    }

    #[test]
    fn conditions_huge_bag_size_satisfied() {
        let mut input = inputs();
        input.bag_size = usize::MAX / 2;
        let checks = check_conditions(&input, 1.0, 1.0);
        let n_check = checks.iter().find(|c| c.name == "bag_size_lower_bound").unwrap();
        assert!(n_check.satisfied && n_check.margin > 0.0);
    }

    #[test]
    fn effective_dimension_identity_gram() {
        let gram = DMatrix::identity(2, 2);
        let v = empirical_effective_dimension(&gram, 0.5, 2).unwrap();
        assert_relative_eq!(v, 1.0, max_relative = 1e-10);
        // lambda -> infinity drives the proxy to 0
        let v = empirical_effective_dimension(&gram, 1e12, 2).unwrap();
        assert!(v < 1e-10);
        // tiny lambda drives it to l
        let v = empirical_effective_dimension(&gram, 1e-12, 2).unwrap();
        assert_relative_eq!(v, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn effective_dimension_decreasing_in_lambda() {
        let gram = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.5, 0.2, 0.1, 0.2, 1.0]);
        let mut last = f64::INFINITY;
        for lambda in [1e-4, 1e-2, 1.0, 100.0] {
            let v = empirical_effective_dimension(&gram, lambda, 3).unwrap();
            assert!(v <= last && (0.0..=3.0).contains(&v));
            last = v;
        }
    }

    proptest! {
        /// Both rate formulas stay continuous where the branches meet.
        #[test]
        fn thresholds_are_continuous(bx in 1.01..8.0f64, cx in 1.01..2.0f64, sx in 0.01..1.0f64) {
            let t = wellspecified_threshold(bx, cx);
            let unsaturated = -(t * cx) / (cx + 1.0);
            let saturated = -(bx * cx) / (bx * cx + 1.0);
            prop_assert!((unsaturated - saturated).abs() <= 1e-12);
            let unsaturated_lambda = -t / (cx + 1.0);
            let saturated_lambda = -bx / (bx * cx + 1.0);
            prop_assert!((unsaturated_lambda - saturated_lambda).abs() <= 1e-12);

            let tm = misspecified_threshold(sx);
            let u = -(2.0 * sx * tm) / (sx + 1.0);
            let v = -(2.0 * sx) / (sx + 2.0);
            prop_assert!((u - v).abs() <= 1e-12);
        }

        /// The effective-dimension proxy stays in [0, l].
        #[test]
        fn effective_dimension_in_range(
            diag in prop::collection::vec(0.0..5.0f64, 1..8),
            lambda in 1e-6..10.0f64,
        ) {
            let l = diag.len();
            let gram = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag));
            let v = empirical_effective_dimension(&gram, lambda, l).unwrap();
            prop_assert!((0.0..=l as f64).contains(&v));
        }
    }
}
