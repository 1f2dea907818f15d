//! Kinematic and timing models of the cell's actuators: the conveyor, the
//! one-axis grasp arm with its spring and force sensor, the three Cartesian
//! axes with step counters and limit switches, and the two end-effector
//! servos.
//!
//! Machine coordinates measure each axis from its datum with `z` upward
//! (z = 0 is the card plane, z = 100 the top of the effective stroke), so
//! the home pose (120, 330, 100) sits at the highest point of the
//! workspace. Motion targets arrive as [`EffectorPoint`]s — offsets from
//! home with `z` increasing downward — and the manipulator owns the mapping
//! between the two.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::TuberInstance;
use crate::{EffectorPoint, Real};

pub mod trace;

/// Blade length of the biopsy punch, mm. The tool's wider hub physically
/// prevents deeper insertion.
pub const BLADE_LENGTH_MM: Real = 7.0;

#[derive(Debug, Error, PartialEq)]
pub enum ActuationError {
    /// Motion refused: a target lies outside the axis travel. State is
    /// unchanged.
    #[error("axis {axis} target {target_mm} mm outside [{min_mm}, {max_mm}] mm")]
    LimitViolation {
        axis: char,
        target_mm: Real,
        min_mm: Real,
        max_mm: Real,
    },
    /// Step recalibration invoked away from home: a controller
    /// sequencing bug.
    #[error("recalibration requires the manipulator at home (at ({0}, {1}, {2}) mm)")]
    NotAtHome(Real, Real, Real),
    /// Grasp arm commanded beyond its stroke.
    #[error("grasp arm stroke exceeded: {0} mm > {1} mm")]
    StrokeExceeded(Real, Real),
}

/// Roll-away during clamping: the tuber escaped the grasp workspace.
/// The controller logs it and requests operator intervention.
#[derive(Debug, Error, PartialEq)]
#[error("tuber rolled away after {displacement_mm} mm of arm travel")]
pub struct GraspRollAway {
    pub displacement_mm: Real,
    pub duration_s: Real,
}

/// One stepper-driven linear axis under open-loop step counting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisState {
    /// Believed position, mm from the axis datum; always equals
    /// `step_count / steps_per_mm`.
    pub position_mm: Real,
    pub step_count: i64,
    pub steps_per_mm: Real,
    pub limits_mm: (Real, Real),
    pub velocity_mm_s: Real,
}

impl AxisState {
    pub fn new(
        position_mm: Real,
        limits_mm: (Real, Real),
        steps_per_mm: Real,
        velocity_mm_s: Real,
    ) -> Self {
        let step_count = (position_mm * steps_per_mm).round() as i64;
        Self {
            position_mm: step_count as Real / steps_per_mm,
            step_count,
            steps_per_mm,
            limits_mm,
            velocity_mm_s,
        }
    }

    fn quantize(&self, target_mm: Real) -> (i64, Real) {
        let steps = (target_mm * self.steps_per_mm).round() as i64;
        (steps, steps as Real / self.steps_per_mm)
    }

    fn check(&self, axis: char, target_mm: Real) -> Result<(), ActuationError> {
        let (min, max) = self.limits_mm;
        // Quantization may not push a legal command outside the travel.
        let (_, q) = self.quantize(target_mm);
        if q < min || q > max {
            return Err(ActuationError::LimitViolation {
                axis,
                target_mm,
                min_mm: min,
                max_mm: max,
            });
        }
        Ok(())
    }

    fn move_to(&mut self, target_mm: Real) -> Real {
        let (steps, q) = self.quantize(target_mm);
        let dist = (q - self.position_mm).abs();
        self.step_count = steps;
        self.position_mm = q;
        dist
    }
}

/// Machine-frame home pose: the highest point of the Cartesian workspace,
/// directly above the midpoint of the conveyor belt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomePose {
    pub x_mm: Real,
    pub y_mm: Real,
    pub z_mm: Real,
}

impl Default for HomePose {
    fn default() -> Self {
        Self {
            x_mm: 120.0,
            y_mm: 330.0,
            z_mm: 100.0,
        }
    }
}

/// The 3-axis Cartesian manipulator.
///
/// Besides the believed (step-counted) position, the struct tracks the
/// true-minus-believed offset the z axis accumulates when the punch hub
/// stalls against a tuber: steps keep being issued but the carriage does
/// not move, and the discrepancy persists until the step counters are
/// recalibrated at home.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manipulator {
    pub x: AxisState,
    pub y: AxisState,
    pub z: AxisState,
    pub home: HomePose,
    /// True z = believed z + this offset, mm.
    z_true_offset_mm: Real,
}

/// Geometry and drive parameters for building a manipulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManipulatorParams {
    /// Effective travel per axis, mm from each datum.
    pub x_travel_mm: (Real, Real),
    pub y_travel_mm: (Real, Real),
    pub z_travel_mm: (Real, Real),
    pub velocity_mm_s: Real,
    pub steps_per_mm: Real,
    pub home: HomePose,
}

impl Default for ManipulatorParams {
    fn default() -> Self {
        Self {
            x_travel_mm: (0.0, 380.0),
            y_travel_mm: (0.0, 460.0),
            z_travel_mm: (0.0, 100.0),
            velocity_mm_s: 50.0,
            steps_per_mm: 400.0,
            home: HomePose::default(),
        }
    }
}

impl Manipulator {
    pub fn new(params: &ManipulatorParams) -> Self {
        let h = params.home;
        Self {
            x: AxisState::new(
                h.x_mm,
                params.x_travel_mm,
                params.steps_per_mm,
                params.velocity_mm_s,
            ),
            y: AxisState::new(
                h.y_mm,
                params.y_travel_mm,
                params.steps_per_mm,
                params.velocity_mm_s,
            ),
            z: AxisState::new(
                h.z_mm,
                params.z_travel_mm,
                params.steps_per_mm,
                params.velocity_mm_s,
            ),
            home: h,
            z_true_offset_mm: 0.0,
        }
    }

    /// Machine coordinates of an effector-frame target (offsets from home,
    /// z downward).
    pub fn machine_from_effector(&self, e: &EffectorPoint) -> (Real, Real, Real) {
        (
            self.home.x_mm + e.x,
            self.home.y_mm + e.y,
            self.home.z_mm - e.z,
        )
    }

    /// Effector-frame coordinates of the current believed position.
    pub fn effector_position(&self) -> EffectorPoint {
        EffectorPoint::new(
            self.x.position_mm - self.home.x_mm,
            self.y.position_mm - self.home.y_mm,
            self.home.z_mm - self.z.position_mm,
        )
    }

    /// Whether an effector-frame target lies inside the axis travels.
    pub fn in_workspace(&self, e: &EffectorPoint) -> bool {
        let (mx, my, mz) = self.machine_from_effector(e);
        self.x.check('x', mx).is_ok()
            && self.y.check('y', my).is_ok()
            && self.z.check('z', mz).is_ok()
    }

    /// Moves all three axes simultaneously at the constant velocity
    /// profile; the elapsed time is the largest axis distance over the
    /// velocity. Refuses the whole motion (state unchanged) if any target
    /// violates a limit.
    pub fn move_axes(&mut self, target: EffectorPoint) -> Result<Real, ActuationError> {
        let (mx, my, mz) = self.machine_from_effector(&target);
        self.x.check('x', mx)?;
        self.y.check('y', my)?;
        self.z.check('z', mz)?;
        let dx = self.x.move_to(mx);
        let dy = self.y.move_to(my);
        let dz = self.z.move_to(mz);
        Ok(dx.max(dy).max(dz) / self.x.velocity_mm_s)
    }

    /// Believed position equals the home pose exactly.
    pub fn at_home(&self) -> bool {
        self.x.position_mm == self.home.x_mm
            && self.y.position_mm == self.home.y_mm
            && self.z.position_mm == self.home.z_mm
    }

    /// Records lost z steps: the hub stalled against the tuber while the
    /// driver kept stepping, so the carriage truly sits `overshoot_mm`
    /// higher than the ledger believes.
    pub fn inject_z_step_error(&mut self, overshoot_mm: Real) {
        self.z_true_offset_mm += overshoot_mm;
    }

    /// True z position, mm (believed plus the accumulated stall offset).
    pub fn true_z_mm(&self) -> Real {
        self.z.position_mm + self.z_true_offset_mm
    }

    pub fn z_step_error_mm(&self) -> Real {
        self.z_true_offset_mm
    }

    /// Re-homes the step counters against the limit switches. Only valid
    /// at home; zeroes the accumulated step error.
    pub fn recalibrate_steps(&mut self) -> Result<(), ActuationError> {
        if !self.at_home() {
            return Err(ActuationError::NotAtHome(
                self.x.position_mm,
                self.y.position_mm,
                self.z.position_mm,
            ));
        }
        for (axis, home) in [
            (&mut self.x, self.home.x_mm),
            (&mut self.y, self.home.y_mm),
            (&mut self.z, self.home.z_mm),
        ] {
            axis.step_count = (home * axis.steps_per_mm).round() as i64;
            axis.position_mm = axis.step_count as Real / axis.steps_per_mm;
        }
        self.z_true_offset_mm = 0.0;
        Ok(())
    }
}

/// Achieved punch penetration: the hub cap is physical, not an error.
pub fn achieved_penetration(commanded_mm: Real, blade_length_mm: Real) -> Real {
    commanded_mm.min(blade_length_mm).max(0.0)
}

/// Parameters of the spring-loaded grasp arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspArmParams {
    pub stroke_mm: Real,
    pub velocity_mm_s: Real,
    pub spring_k_n_per_m: Real,
    pub force_threshold_n: Real,
    /// Distance from the arm's parked pad to the guided tuber surface, mm.
    pub approach_gap_mm: Real,
    /// Uniform surface-contact jitter half-range, mm.
    pub contact_jitter_mm: Real,
    /// Roll-away probability per unit irregularity.
    pub roll_away_gain: Real,
    /// Control-loop period: one actuation quantum is velocity * tick.
    pub tick_s: Real,
}

impl Default for GraspArmParams {
    fn default() -> Self {
        Self {
            stroke_mm: 140.0,
            velocity_mm_s: 4.0,
            spring_k_n_per_m: 100.0,
            force_threshold_n: 0.8,
            approach_gap_mm: 2.4,
            contact_jitter_mm: 0.8,
            roll_away_gain: 0.198,
            tick_s: 0.01,
        }
    }
}

/// Result of a successful clamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspResult {
    pub displacement_mm: Real,
    pub compression_mm: Real,
    pub duration_s: Real,
    pub force_n: Real,
}

/// The 1-DoF grasp arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspArm {
    pub params: GraspArmParams,
    pub extension_mm: Real,
    pub engaged: bool,
}

impl GraspArm {
    pub fn new(params: GraspArmParams) -> Self {
        Self {
            params,
            extension_mm: 0.0,
            engaged: false,
        }
    }

    /// Spring force at a given compression (Hooke's law; compression in mm,
    /// spring constant in N/m).
    pub fn sensed_force_n(&self, compression_mm: Real) -> Real {
        self.params.spring_k_n_per_m * compression_mm / 1000.0
    }

    /// Extends at constant velocity until contact, then compresses the
    /// spring tick by tick until the force sensor crosses the threshold.
    /// Irregular tubers may roll away at contact instead.
    pub fn clamp(
        &mut self,
        tuber: &TuberInstance,
        rng: &mut impl Rng,
    ) -> Result<GraspResult, GraspRollAway> {
        let p = self.params;
        let jitter = if p.contact_jitter_mm > 0.0 {
            rng.random_range(-p.contact_jitter_mm..=p.contact_jitter_mm)
        } else {
            0.0
        };
        let travel = (p.approach_gap_mm + jitter).max(0.0);

        let p_roll = (tuber.irregularity * p.roll_away_gain).clamp(0.0, 1.0);
        if p_roll > 0.0 && rng.random_range(0.0..1.0) < p_roll {
            self.extension_mm = 0.0;
            self.engaged = false;
            return Err(GraspRollAway {
                displacement_mm: travel,
                duration_s: travel / p.velocity_mm_s,
            });
        }

        // Compression advances one actuation quantum per control tick and
        // stops at the first reading at or above the threshold.
        let quantum = p.velocity_mm_s * p.tick_s;
        let mut compression = 0.0;
        while self.sensed_force_n(compression) < p.force_threshold_n {
            compression += quantum;
        }

        let displacement = travel + compression;
        debug_assert!(displacement <= p.stroke_mm);
        self.extension_mm = displacement;
        self.engaged = true;
        Ok(GraspResult {
            displacement_mm: displacement,
            compression_mm: compression,
            duration_s: displacement / p.velocity_mm_s,
            force_n: self.sensed_force_n(compression),
        })
    }

    pub fn release(&mut self) {
        self.extension_mm = 0.0;
        self.engaged = false;
    }
}

/// Servo timing parameters for the end-effector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServoParams {
    /// Pitch angle used for tissue detachment, degrees.
    pub tilt_detach_deg: Real,
    /// Horn rotation that fully extends the ejection piston, degrees.
    pub piston_throw_deg: Real,
    pub tilt_time_s: Real,
    pub piston_time_s: Real,
}

impl Default for ServoParams {
    fn default() -> Self {
        Self {
            tilt_detach_deg: 40.0,
            piston_throw_deg: 74.0,
            tilt_time_s: 0.4,
            piston_time_s: 0.6,
        }
    }
}

/// The two end-effector servos: punch pitch (tilt) and ejection piston.
/// Commands are open-loop: the fixed duration elapses whether or not the
/// target differs from the current state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoPair {
    pub params: ServoParams,
    pub tilt_angle_deg: Real,
    pub piston_angle_deg: Real,
}

impl ServoPair {
    pub fn new(params: ServoParams) -> Self {
        Self {
            params,
            tilt_angle_deg: 0.0,
            piston_angle_deg: 0.0,
        }
    }

    /// Tilts the punch to the given pitch angle; returns the elapsed time.
    pub fn tilt_to(&mut self, angle_deg: Real) -> Real {
        debug_assert!((0.0..=180.0).contains(&angle_deg));
        self.tilt_angle_deg = angle_deg;
        self.params.tilt_time_s
    }

    /// Extends or retracts the ejection piston; returns the elapsed time.
    pub fn actuate_piston(&mut self, extend: bool) -> Real {
        self.piston_angle_deg = if extend {
            self.params.piston_throw_deg
        } else {
            0.0
        };
        self.params.piston_time_s
    }
}

/// The conveyor belt. Tuber positions advance by `speed * dt` only while
/// running; the cumulative run time makes the displacement integral exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conveyor {
    pub speed_mm_s: Real,
    pub running: bool,
    pub belt_length_mm: Real,
    pub belt_width_mm: Real,
    cumulative_run_s: Real,
}

impl Default for Conveyor {
    fn default() -> Self {
        Self {
            speed_mm_s: 20.0,
            running: true,
            belt_length_mm: 2100.0,
            belt_width_mm: 253.0,
            cumulative_run_s: 0.0,
        }
    }
}

impl Conveyor {
    /// Advances the belt clock by `dt`; returns the belt displacement.
    pub fn advance(&mut self, dt_s: Real) -> Real {
        if !self.running {
            return 0.0;
        }
        self.cumulative_run_s += dt_s;
        self.speed_mm_s * dt_s
    }

    pub fn halt(&mut self) {
        self.running = false;
    }

    pub fn run(&mut self) {
        self.running = true;
    }

    pub fn cumulative_run_s(&self) -> Real {
        self.cumulative_run_s
    }

    /// Total belt displacement since construction.
    pub fn total_displacement_mm(&self) -> Real {
        self.speed_mm_s * self.cumulative_run_s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn manipulator() -> Manipulator {
        Manipulator::new(&ManipulatorParams::default())
    }

    fn test_tuber(irregularity: Real) -> TuberInstance {
        TuberInstance {
            id: 0,
            semi_axes: [23.75, 16.625, 16.625],
            irregularity,
            belt_position: 0.0,
            lateral_offset: 0.0,
            sites: vec![],
        }
    }

    #[test]
    fn single_axis_move_timing() {
        let mut m = manipulator();
        let t = m.move_axes(EffectorPoint::new(100.0, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(t, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn null_move_is_free_and_stateless() {
        let mut m = manipulator();
        let before = m.clone();
        let t = m.move_axes(EffectorPoint::new(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(t, 0.0);
        assert_eq!(m, before);
    }

    #[test]
    fn simultaneous_move_takes_slowest_axis() {
        let mut m = manipulator();
        // Max-norm timing oracle: max(95, 110, 40) / 50 = 2.2 s.
        let t = m.move_axes(EffectorPoint::new(95.0, 110.0, 40.0)).unwrap();
        let oracle = [95.0, 110.0, 40.0].iter().fold(0.0, |a: Real, b| a.max(*b)) / 50.0;
        assert_abs_diff_eq!(t, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(t, 2.2, epsilon = 1e-12);
    }

    #[test]
    fn limit_violation_refuses_motion() {
        let mut m = manipulator();
        let before = m.clone();
        // x beyond the 380 mm travel (home 120 + 300).
        let err = m
            .move_axes(EffectorPoint::new(300.0, 0.0, 0.0))
            .unwrap_err();
        assert!(matches!(
            err,
            ActuationError::LimitViolation { axis: 'x', .. }
        ));
        assert_eq!(m, before);
        // z below the card plane.
        assert!(m.move_axes(EffectorPoint::new(0.0, 0.0, 101.0)).is_err());
        assert_eq!(m, before);
    }

    #[test]
    fn position_tracks_step_count() {
        let mut m = manipulator();
        m.move_axes(EffectorPoint::new(33.3337, -12.77, 41.009))
            .unwrap();
        for axis in [&m.x, &m.y, &m.z] {
            assert_abs_diff_eq!(
                axis.position_mm,
                axis.step_count as Real / axis.steps_per_mm,
                epsilon = 1e-12
            );
        }
        // Quantization keeps the believed position within one step of the
        // commanded target.
        assert!((m.x.position_mm - (120.0 + 33.3337)).abs() <= 1.0 / 400.0);
    }

    #[test]
    fn recalibrate_requires_home() {
        let mut m = manipulator();
        m.move_axes(EffectorPoint::new(10.0, 0.0, 5.0)).unwrap();
        assert!(matches!(
            m.recalibrate_steps(),
            Err(ActuationError::NotAtHome(..))
        ));
        m.move_axes(EffectorPoint::new(0.0, 0.0, 0.0)).unwrap();
        m.recalibrate_steps().unwrap();
    }

    #[test]
    fn step_ledger_error_and_recalibration() {
        let mut m = manipulator();
        // Step-ledger oracle: believed vs true positions diverge by the
        // injected overshoot and reconcile after recalibration at home.
        m.move_axes(EffectorPoint::new(0.0, 0.0, 60.0)).unwrap();
        m.inject_z_step_error(4.5);
        assert_abs_diff_eq!(m.true_z_mm() - m.z.position_mm, 4.5, epsilon = 1e-12);
        m.move_axes(EffectorPoint::new(0.0, 0.0, 20.0)).unwrap();
        assert_abs_diff_eq!(m.z_step_error_mm(), 4.5, epsilon = 1e-12);
        m.move_axes(EffectorPoint::new(0.0, 0.0, 0.0)).unwrap();
        m.recalibrate_steps().unwrap();
        assert!(m.z_step_error_mm().abs() < 1.0 / 400.0);
        assert!(m.at_home());
    }

    #[test]
    fn spring_compression_at_threshold() {
        // Hooke's-law oracle: 0.8 N / 100 N/m = 8 mm.
        let mut arm = GraspArm::new(GraspArmParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let result = arm.clamp(&test_tuber(0.0), &mut rng).unwrap();
        let quantum = arm.params.velocity_mm_s * arm.params.tick_s;
        assert!(
            (result.compression_mm - 8.0).abs() <= quantum,
            "compression = {}",
            result.compression_mm
        );
        assert!(result.force_n >= 0.8);
        assert!(arm.engaged);
    }

    #[test]
    fn zero_irregularity_always_secured() {
        let mut arm = GraspArm::new(GraspArmParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            arm.release();
            assert!(arm.clamp(&test_tuber(0.0), &mut rng).is_ok());
        }
    }

    #[test]
    fn population_grasp_rate_matches_calibration() {
        // Irregularity uniform in [0, 1] with gain 0.198 gives a 9.9%
        // roll-away rate.
        let mut arm = GraspArm::new(GraspArmParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let mut secured = 0;
        for _ in 0..n {
            arm.release();
            let irr = rng.random_range(0.0..=1.0);
            if arm.clamp(&test_tuber(irr), &mut rng).is_ok() {
                secured += 1;
            }
        }
        let rate = secured as Real / n as Real;
        assert!((rate - 0.901).abs() < 0.01, "secured rate = {rate}");
    }

    #[test]
    fn grasp_duration_matches_displacement() {
        let mut arm = GraspArm::new(GraspArmParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let result = arm.clamp(&test_tuber(0.0), &mut rng).unwrap();
        assert_abs_diff_eq!(
            result.duration_s,
            result.displacement_mm / 4.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn servo_cycle_times() {
        let mut servos = ServoPair::new(ServoParams::default());
        // Tilt to the detach angle and back: 2 x 0.4 s.
        let t = servos.tilt_to(40.0) + servos.tilt_to(0.0);
        assert_abs_diff_eq!(t, 0.8, epsilon = 1e-12);
        // Piston close then open: 2 x 0.6 s.
        let t = servos.actuate_piston(true) + servos.actuate_piston(false);
        assert_abs_diff_eq!(t, 1.2, epsilon = 1e-12);
        // Open-loop: a no-op command still takes the full duration.
        let angle = servos.tilt_angle_deg;
        let t = servos.tilt_to(angle);
        assert_abs_diff_eq!(t, 0.4, epsilon = 1e-12);
    }

    #[test]
    fn penetration_hub_cap() {
        assert_abs_diff_eq!(
            achieved_penetration(9.1, BLADE_LENGTH_MM),
            7.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            achieved_penetration(7.0, BLADE_LENGTH_MM),
            7.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            achieved_penetration(5.21, BLADE_LENGTH_MM),
            5.21,
            epsilon = 1e-12
        );
        assert_eq!(achieved_penetration(-1.0, BLADE_LENGTH_MM), 0.0);
    }

    #[test]
    fn conveyor_displacement_integrates_exactly() {
        let mut belt = Conveyor::default();
        let mut moved = 0.0;
        for i in 0..1000 {
            if i % 3 == 0 {
                belt.halt();
            } else {
                belt.run();
            }
            moved += belt.advance(1.0 / 6.0);
        }
        assert_abs_diff_eq!(moved, belt.total_displacement_mm(), epsilon = 1e-9);
        assert_abs_diff_eq!(
            belt.total_displacement_mm(),
            20.0 * belt.cumulative_run_s(),
            epsilon = 1e-12
        );
    }

    proptest! {
        /// Random command sequences never leave an axis outside its
        /// travel; a refused move leaves the state unchanged.
        #[test]
        fn axis_positions_never_exit_limits(
            targets in prop::collection::vec(
                (-250.0f64..450.0, -400.0f64..250.0, -40.0f64..140.0),
                1..40,
            )
        ) {
            let mut m = manipulator();
            for (x, y, z) in targets {
                let before = m.clone();
                match m.move_axes(EffectorPoint::new(x, y, z)) {
                    Ok(_) => {}
                    Err(ActuationError::LimitViolation { .. }) => prop_assert_eq!(&m, &before),
                    Err(e) => return Err(TestCaseError::fail(format!("unexpected {e:?}"))),
                }
                for axis in [&m.x, &m.y, &m.z] {
                    prop_assert!(axis.position_mm >= axis.limits_mm.0);
                    prop_assert!(axis.position_mm <= axis.limits_mm.1);
                }
            }
        }

        /// Elapsed time equals the max axis distance over the velocity.
        #[test]
        fn move_time_is_max_norm(
            x in -100.0f64..200.0,
            y in -300.0f64..100.0,
            z in 0.0f64..100.0,
        ) {
            let mut m = manipulator();
            let before = m.effector_position();
            if let Ok(t) = m.move_axes(EffectorPoint::new(x, y, z)) {
                let after = m.effector_position();
                let d = (after.x - before.x)
                    .abs()
                    .max((after.y - before.y).abs())
                    .max((after.z - before.z).abs());
                prop_assert!((t - d / 50.0).abs() < 1e-12);
            }
        }
    }
}
