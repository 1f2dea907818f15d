//! Stochastic models of the physical sampling outcomes: localization
//! error, tissue detachment, core length, transport, and deposition.
//!
//! Every distribution here is calibrated offline (see
//! [`crate::harness::calibrate`]) against the measured cell statistics;
//! the calibrated constants ship in the default configuration. Sites far
//! from the tuber's image centroid (large radial offset `r`) see inflated
//! error scales through the quadratic radial terms, which is how the
//! surface-curvature effect enters the model.
//!
//! The depth-error model is asymmetric by construction: overestimates
//! (punch commanded deeper than the surface truly is) draw from one scale
//! and occur with a fixed probability, underestimates from another. A
//! single symmetric family cannot reproduce the observed combination of
//! a ~21% overshoot rate, a 1.79 mm mean shortfall and a ~5% tail beyond
//! the 4 mm hub threshold.

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::Real;

/// Signed localization error of one sampling attempt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationError {
    /// Error magnitude along the tuber surface, mm (nonnegative).
    pub lateral_mm: Real,
    /// Signed depth error, mm; positive means the target was computed
    /// deeper than the true surface.
    pub depth_mm: Real,
}

/// Calibrated localization-error distributions as functions of the site's
/// radial offset `r` in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizationErrorModel {
    /// Lateral folded-normal location at r = 0, mm.
    pub lateral_bias0: Real,
    /// Quadratic radial gain on the lateral location, mm.
    pub lateral_bias1: Real,
    /// Lateral folded-normal scale at r = 0, mm.
    pub lateral_sigma0: Real,
    /// Quadratic radial gain on the lateral scale, mm.
    pub lateral_sigma1: Real,
    /// Probability that the depth is overestimated (positive error).
    pub depth_over_prob: Real,
    /// Overestimate half-normal scale at r = 0, mm.
    pub depth_over_sigma0: Real,
    /// Quadratic radial gain on the overestimate scale, mm.
    pub depth_over_sigma1: Real,
    /// Underestimate half-normal scale at r = 0, mm.
    pub depth_under_sigma0: Real,
    /// Quadratic radial gain on the underestimate scale, mm.
    pub depth_under_sigma1: Real,
}

impl LocalizationErrorModel {
    /// Lateral (location, scale) at a given radial offset.
    pub fn lateral_params(&self, r: Real) -> (Real, Real) {
        let r2 = r * r;
        (
            self.lateral_bias0 + self.lateral_bias1 * r2,
            self.lateral_sigma0 + self.lateral_sigma1 * r2,
        )
    }

    pub fn depth_over_sigma(&self, r: Real) -> Real {
        self.depth_over_sigma0 + self.depth_over_sigma1 * r * r
    }

    pub fn depth_under_sigma(&self, r: Real) -> Real {
        self.depth_under_sigma0 + self.depth_under_sigma1 * r * r
    }

    /// All-zero model: no localization error at all.
    pub fn zeroed() -> Self {
        Self {
            lateral_bias0: 0.0,
            lateral_bias1: 0.0,
            lateral_sigma0: 0.0,
            lateral_sigma1: 0.0,
            depth_over_prob: 0.0,
            depth_over_sigma0: 0.0,
            depth_over_sigma1: 0.0,
            depth_under_sigma0: 0.0,
            depth_under_sigma1: 0.0,
        }
    }
}

fn half_normal(rng: &mut impl Rng, sigma: Real) -> Real {
    if sigma <= 0.0 {
        return 0.0;
    }
    let n = Normal::new(0.0, sigma).expect("valid sigma");
    n.sample(rng).abs()
}

fn folded_normal(rng: &mut impl Rng, location: Real, sigma: Real) -> Real {
    if sigma <= 0.0 {
        return location.abs();
    }
    let n = Normal::new(location, sigma).expect("valid sigma");
    n.sample(rng).abs()
}

/// Draws one (lateral, depth) localization error for a site at radial
/// offset `r`.
pub fn sample_localization_error(
    model: &LocalizationErrorModel,
    r: Real,
    rng: &mut impl Rng,
) -> LocalizationError {
    debug_assert!((0.0..=1.0).contains(&r));
    let (loc, scale) = model.lateral_params(r);
    let lateral_mm = folded_normal(rng, loc, scale);
    let depth_mm =
        if model.depth_over_prob > 0.0 && rng.random_range(0.0..1.0) < model.depth_over_prob {
            half_normal(rng, model.depth_over_sigma(r))
        } else {
            -half_normal(rng, model.depth_under_sigma(r))
        };
    LocalizationError {
        lateral_mm,
        depth_mm,
    }
}

/// Failure probabilities and physical thresholds of the sampling chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeProbabilities {
    /// Probability that the ejected core sticks to the piston.
    pub p_adhesion: Real,
    /// Probability that vibration dislodges the core in transit.
    pub p_carry: Real,
    /// Residual detachment-failure probability once the depth and tilt
    /// preconditions are met.
    pub q_detach: Real,
    /// Minimum penetration for the blade to hold enough tissue, mm.
    pub depth_fail_threshold_mm: Real,
    /// Depth overestimate beyond which the hub stalls on the tuber, mm.
    pub hub_error_threshold_mm: Real,
    /// Minimum punch pitch for reliable detachment, degrees.
    pub min_tilt_deg: Real,
}

impl OutcomeProbabilities {
    pub fn zeroed() -> Self {
        Self {
            p_adhesion: 0.0,
            p_carry: 0.0,
            q_detach: 0.0,
            depth_fail_threshold_mm: 3.0,
            hub_error_threshold_mm: 4.0,
            min_tilt_deg: 40.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.p_adhesion)
            && (0.0..=1.0).contains(&self.p_carry)
            && (0.0..=1.0).contains(&self.q_detach)
            && self.depth_fail_threshold_mm >= 0.0
            && self.hub_error_threshold_mm >= 0.0
    }
}

/// Whether the tilted punch detaches the core: too shallow a penetration
/// or an insufficient tilt fails deterministically, anything else fails
/// with the residual calibrated probability.
pub fn detachment(
    achieved_depth_mm: Real,
    tilt_angle_deg: Real,
    probs: &OutcomeProbabilities,
    rng: &mut impl Rng,
) -> bool {
    if tilt_angle_deg < probs.min_tilt_deg || achieved_depth_mm < probs.depth_fail_threshold_mm {
        return false;
    }
    probs.q_detach <= 0.0 || rng.random_range(0.0..1.0) >= probs.q_detach
}

/// Core-length distribution given the achieved penetration: a Beta over
/// the observed nominal-depth range, rescaled proportionally when the
/// penetration falls short of nominal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoreLengthModel {
    /// Shortest core observed at nominal depth, mm.
    pub min_mm: Real,
    /// Longest core observed at nominal depth, mm.
    pub max_mm: Real,
    /// Nominal penetration the range was measured at, mm.
    pub nominal_depth_mm: Real,
    /// Beta shape parameters over [min, max].
    pub alpha: Real,
    pub beta: Real,
    /// Quadratic radial shrink on the drawn fraction (0 disables).
    pub radial_shrink: Real,
}

impl CoreLengthModel {
    pub fn is_valid(&self) -> bool {
        self.min_mm > 0.0
            && self.min_mm < self.max_mm
            && self.max_mm <= self.nominal_depth_mm
            && self.alpha > 0.0
            && self.beta > 0.0
            && (0.0..1.0).contains(&self.radial_shrink)
    }
}

/// Draws a core length for a successful detachment. The draw lives in
/// `[min, max] * achieved / nominal`, so it never exceeds the achieved
/// penetration.
pub fn core_length(
    model: &CoreLengthModel,
    achieved_depth_mm: Real,
    r: Real,
    rng: &mut impl Rng,
) -> Real {
    debug_assert!(model.is_valid());
    let beta = Beta::new(model.alpha, model.beta).expect("valid shape");
    let mut b = beta.sample(rng);
    if model.radial_shrink > 0.0 {
        b *= 1.0 - model.radial_shrink * r * r;
    }
    let at_nominal = model.min_mm + (model.max_mm - model.min_mm) * b;
    at_nominal * achieved_depth_mm / model.nominal_depth_mm
}

/// Terminal fate of an extracted core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepositionOutcome {
    Deposited,
    /// Vibration dislodged the core before the deposition site.
    DroppedInTransit,
    /// The core stuck to the ejecting piston and was pulled back in.
    AdheredToPiston,
    /// Corrupted z steps placed the punch against the card; the core
    /// could not release into its circle.
    HubMisplacement,
}

/// Resolves transport and deposition. A nonzero step-ledger error (the
/// aftermath of a depth overestimate beyond the hub threshold) misplaces
/// the deposit deterministically; transport drop and piston adhesion are
/// the calibrated random failures.
pub fn deposition(
    depth_error_mm: Real,
    step_ledger_error_mm: Real,
    probs: &OutcomeProbabilities,
    rng: &mut impl Rng,
) -> DepositionOutcome {
    let _ = depth_error_mm; // the ledger error is the physical mechanism
    if probs.p_carry > 0.0 && rng.random_range(0.0..1.0) < probs.p_carry {
        return DepositionOutcome::DroppedInTransit;
    }
    if step_ledger_error_mm.abs() > 1e-9 {
        return DepositionOutcome::HubMisplacement;
    }
    if probs.p_adhesion > 0.0 && rng.random_range(0.0..1.0) < probs.p_adhesion {
        return DepositionOutcome::AdheredToPiston;
    }
    DepositionOutcome::Deposited
}

/// The full calibrated outcome-model block, versioned as stored in the
/// configuration file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeParams {
    pub schema_version: u32,
    pub localization: LocalizationErrorModel,
    pub probabilities: OutcomeProbabilities,
    pub core_length: CoreLengthModel,
}

impl OutcomeParams {
    /// Degenerate-perfect world: no errors, no failures.
    pub fn zeroed() -> Self {
        Self {
            schema_version: OUTCOME_SCHEMA_VERSION,
            localization: LocalizationErrorModel::zeroed(),
            probabilities: OutcomeProbabilities::zeroed(),
            core_length: CoreLengthModel {
                min_mm: 2.81,
                max_mm: 6.92,
                nominal_depth_mm: 7.0,
                alpha: 0.685,
                beta: 0.241,
                radial_shrink: 0.0,
            },
        }
    }
}

pub const OUTCOME_SCHEMA_VERSION: u32 = 1;

// --- Closed-form helpers used by the calibration search -----------------

/// Standard normal CDF.
pub fn normal_cdf(x: Real) -> Real {
    use statrs::distribution::{ContinuousCDF, Normal as StatNormal};
    StatNormal::new(0.0, 1.0).expect("unit normal").cdf(x)
}

/// Mean of |N(location, sigma)|.
pub fn folded_normal_mean(location: Real, sigma: Real) -> Real {
    if sigma <= 0.0 {
        return location.abs();
    }
    let ratio = location / sigma;
    sigma * (2.0 / std::f64::consts::PI).sqrt() * (-0.5 * ratio * ratio).exp()
        + location * (1.0 - 2.0 * normal_cdf(-ratio))
}

/// P(|N(location, sigma)| < x) for x >= 0.
pub fn folded_normal_cdf(x: Real, location: Real, sigma: Real) -> Real {
    if sigma <= 0.0 {
        return if location.abs() < x { 1.0 } else { 0.0 };
    }
    normal_cdf((x - location) / sigma) - normal_cdf((-x - location) / sigma)
}

/// P(|N(0, sigma)| > x) for x >= 0.
pub fn half_normal_tail(x: Real, sigma: Real) -> Real {
    if sigma <= 0.0 {
        return 0.0;
    }
    2.0 * (1.0 - normal_cdf(x / sigma))
}

/// Mean of |N(0, sigma)|.
pub fn half_normal_mean(sigma: Real) -> Real {
    sigma * (2.0 / std::f64::consts::PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat_model(sigma: Real) -> LocalizationErrorModel {
        LocalizationErrorModel {
            lateral_bias0: 0.0,
            lateral_bias1: 0.0,
            lateral_sigma0: sigma,
            lateral_sigma1: 0.0,
            depth_over_prob: 0.25,
            depth_over_sigma0: 2.0,
            depth_over_sigma1: 0.0,
            depth_under_sigma0: 2.0,
            depth_under_sigma1: 0.0,
        }
    }

    #[test]
    fn zero_curvature_gain_makes_error_independent_of_r() {
        // Degenerate curvature term: identical rng stream, different r,
        // identical draws.
        let model = flat_model(1.5);
        let a: Vec<LocalizationError> = {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            (0..50)
                .map(|i| sample_localization_error(&model, (i % 10) as Real / 10.0, &mut rng))
                .collect()
        };
        let b: Vec<LocalizationError> = {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            (0..50)
                .map(|_| sample_localization_error(&model, 0.0, &mut rng))
                .collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn zeroed_model_is_errorless() {
        let model = LocalizationErrorModel::zeroed();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let e = sample_localization_error(&model, 0.7, &mut rng);
            assert_eq!(e.lateral_mm, 0.0);
            assert_eq!(e.depth_mm, 0.0);
        }
    }

    #[test]
    fn lateral_is_nonnegative_and_scales_with_r() {
        let mut model = flat_model(1.0);
        model.lateral_sigma1 = 4.0;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mean_at = |r: Real, rng: &mut ChaCha8Rng| {
            let n = 20_000;
            (0..n)
                .map(|_| sample_localization_error(&model, r, rng).lateral_mm)
                .inspect(|l| assert!(*l >= 0.0))
                .sum::<Real>()
                / n as Real
        };
        let near = mean_at(0.1, &mut rng);
        let far = mean_at(0.9, &mut rng);
        assert!(far > near * 2.0, "near {near}, far {far}");
    }

    #[test]
    fn depth_overshoot_rate_matches_over_prob() {
        let model = flat_model(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40_000;
        let over = (0..n)
            .filter(|_| sample_localization_error(&model, 0.3, &mut rng).depth_mm > 0.0)
            .count();
        let rate = over as Real / n as Real;
        assert!((rate - 0.25).abs() < 0.01, "overshoot rate = {rate}");
    }

    #[test]
    fn detachment_thresholds_are_deterministic() {
        let probs = OutcomeProbabilities {
            q_detach: 0.0,
            ..OutcomeProbabilities::zeroed()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // Nominal: well inside the envelope.
        assert!(detachment(6.5, 40.0, &probs, &mut rng));
        // Too shallow.
        assert!(!detachment(2.4, 40.0, &probs, &mut rng));
        // Insufficient tilt.
        assert!(!detachment(6.5, 30.0, &probs, &mut rng));
        // Boundary: the 3 mm threshold itself holds.
        assert!(detachment(3.0, 40.0, &probs, &mut rng));
    }

    #[test]
    fn detachment_residual_rate() {
        let probs = OutcomeProbabilities {
            q_detach: 0.1,
            ..OutcomeProbabilities::zeroed()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 20_000;
        let fails = (0..n)
            .filter(|_| !detachment(7.0, 40.0, &probs, &mut rng))
            .count();
        let rate = fails as Real / n as Real;
        assert!((rate - 0.1).abs() < 0.01, "residual fail rate = {rate}");
    }

    #[test]
    fn core_length_respects_achieved_cap() {
        let model = OutcomeParams::zeroed().core_length;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5_000 {
            let l = core_length(&model, 3.0, 0.2, &mut rng);
            assert!(l > 0.0 && l <= 3.0, "length {l}");
        }
        for _ in 0..5_000 {
            let l = core_length(&model, 7.0, 0.2, &mut rng);
            assert!(l >= model.min_mm - 1e-9 && l <= model.max_mm + 1e-9);
        }
    }

    #[test]
    fn deposition_zero_probabilities_deposits() {
        let probs = OutcomeProbabilities::zeroed();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(
            deposition(0.0, 0.0, &probs, &mut rng),
            DepositionOutcome::Deposited
        );
    }

    #[test]
    fn deposition_ledger_error_forces_hub_misplacement() {
        // An uncorrected 4.5 mm depth overshoot corrupts the ledger and
        // misplaces the deposit later in the same cycle.
        let probs = OutcomeProbabilities::zeroed();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        assert_eq!(
            deposition(4.5, 4.5, &probs, &mut rng),
            DepositionOutcome::HubMisplacement
        );
    }

    #[test]
    fn deposition_rates_converge() {
        let probs = OutcomeProbabilities {
            p_carry: 0.1,
            p_adhesion: 0.2,
            ..OutcomeProbabilities::zeroed()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 30_000;
        let mut dropped = 0;
        let mut adhered = 0;
        for _ in 0..n {
            match deposition(0.0, 0.0, &probs, &mut rng) {
                DepositionOutcome::DroppedInTransit => dropped += 1,
                DepositionOutcome::AdheredToPiston => adhered += 1,
                _ => {}
            }
        }
        let p_drop = dropped as Real / n as Real;
        // Adhesion is only reached when the drop roll passes.
        let p_adh = adhered as Real / n as Real;
        assert!((p_drop - 0.1).abs() < 0.01, "drop rate {p_drop}");
        assert!((p_adh - 0.9 * 0.2).abs() < 0.01, "adhesion rate {p_adh}");
    }

    #[test]
    fn closed_forms_match_sampling() {
        // Cross-check the analytic helpers against empirical draws.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (loc, sigma): (Real, Real) = (1.7, 1.4);
        let n = 200_000;
        let normal = Normal::new(loc, sigma).unwrap();
        let draws: Vec<Real> = (0..n).map(|_| normal.sample(&mut rng).abs()).collect();
        let mean = draws.iter().sum::<Real>() / n as Real;
        assert_abs_diff_eq!(mean, folded_normal_mean(loc, sigma), epsilon = 0.01);
        let below1 = draws.iter().filter(|&&x| x < 1.0).count() as Real / n as Real;
        assert_abs_diff_eq!(below1, folded_normal_cdf(1.0, loc, sigma), epsilon = 0.01);
        let above3 = draws.iter().filter(|&&x| x > 3.0).count() as Real / n as Real;
        assert_abs_diff_eq!(
            above3,
            1.0 - folded_normal_cdf(3.0, loc, sigma),
            epsilon = 0.01
        );
    }
}
