//! Experiment configuration: a single versioned TOML document with
//! explicit defaults for every parameter the simulation consumes.
//!
//! Unknown keys are rejected so typos cannot silently fall back to
//! defaults. `ExperimentConfig::default()` is the calibrated baseline
//! whose outcome-model constants come from `tubersim calibrate`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuation::{GraspArmParams, ManipulatorParams, ServoParams};
use crate::controller::{CardLayout, PunchPlanParams};

use crate::outcome::{
    CoreLengthModel, LocalizationErrorModel, OutcomeParams, OutcomeProbabilities,
    OUTCOME_SCHEMA_VERSION,
};
use crate::perception::{DetectorProfile, GraspGate};
use crate::scene::ShapeProfile;
use crate::{CameraIntrinsics, Real, RigidTransform};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config")]
    Io(#[from] std::io::Error),
    #[error("config malformed")]
    Parse(#[from] toml::de::Error),
    #[error("config field `{field}`: {reason}")]
    Field { field: &'static str, reason: String },
}

fn field_err(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field,
        reason: reason.into(),
    }
}

/// Cell geometry and timing that is not part of an actuator's own block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    /// Height of the camera optical center above the belt plane, mm.
    pub camera_height_mm: Real,
    /// Camera-frame y of a tuber at belt position zero, mm.
    pub spawn_y_mm: Real,
    /// Camera-to-effector transform, 16 row-major homogeneous values.
    /// The rotation block matches the bench calibration; the translation
    /// is the simulation's cell layout (see the configuration notes in
    /// the README).
    pub t_ce: [Real; 16],
    pub gate: GraspGate,
    /// Camera frame rate, Hz.
    pub fps: Real,
    /// Frames collected per site localization.
    pub vision_frames: usize,
    /// Fixed compute overhead added to the vision window, s.
    pub vision_overhead_s: Real,
    /// Delay before tuber detection is re-enabled after resume, s.
    pub resume_delay_s: Real,
    /// Probability of a depth hole at the probed pixel per frame.
    pub depth_hole_prob: Real,
    /// Whether the harness purges the punch after an adhesion failure.
    pub auto_purge: bool,
    pub manipulator: ManipulatorParams,
    pub grasp: GraspArmParams,
    pub servos: ServoParams,
    pub punch: PunchPlanParams,
    pub card: CardLayout,
}

impl Default for CellConfig {
    fn default() -> Self {
        let t = RigidTransform {
            r: RigidTransform::default_hand_eye().r,
            // Bench translation adapted to the synthetic cell layout so
            // that belt-plane sites land inside the z travel.
            t: [-20.9, 18.095, -170.0],
        };
        Self {
            camera_height_mm: 260.0,
            spawn_y_mm: 120.0,
            t_ce: t.to_row_major(),
            gate: GraspGate::default(),
            fps: 6.0,
            vision_frames: 10,
            vision_overhead_s: 0.433_333_333_333_333_4,
            resume_delay_s: 1.0,
            depth_hole_prob: 0.0,
            auto_purge: true,
            manipulator: ManipulatorParams::default(),
            grasp: GraspArmParams::default(),
            servos: ServoParams::default(),
            punch: PunchPlanParams::default(),
            card: CardLayout::default(),
        }
    }
}

impl CellConfig {
    pub fn hand_eye(&self) -> RigidTransform {
        RigidTransform::from_row_major(&self.t_ce)
    }
}

/// The two detector operating points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorsConfig {
    pub tuber: DetectorProfile,
    pub site: DetectorProfile,
}

impl Default for DetectorsConfig {
    fn default() -> Self {
        Self {
            tuber: DetectorProfile::tuber_default(),
            site: DetectorProfile::site_default(),
        }
    }
}

/// Top-level experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Schema version; must equal [`CONFIG_VERSION`].
    pub version: u32,
    pub seed: u64,
    /// Tubers per batch.
    pub batch_size: usize,
    /// Independent batch replicates.
    pub replicates: usize,
    pub camera: CameraIntrinsics,
    pub cell: CellConfig,
    pub tubers: ShapeProfile,
    pub detectors: DetectorsConfig,
    pub outcome_model: OutcomeParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 42,
            batch_size: 81,
            replicates: 1,
            camera: CameraIntrinsics::default_synthetic(),
            cell: CellConfig::default(),
            tubers: ShapeProfile::default(),
            detectors: DetectorsConfig::default(),
            outcome_model: default_calibrated_outcome(),
        }
    }
}

/// Outcome-model constants produced by `tubersim calibrate` against the
/// measured cell statistics (see the README's calibration notes).
pub fn default_calibrated_outcome() -> OutcomeParams {
    OutcomeParams {
        schema_version: OUTCOME_SCHEMA_VERSION,
        localization: LocalizationErrorModel {
            lateral_bias0: 1.41399416909621,
            lateral_bias1: 1.131195335276968,
            lateral_sigma0: 1.0232142857142859,
            lateral_sigma1: 0.8185714285714287,
            depth_over_prob: 0.20987654320987653,
            depth_over_sigma0: 2.2528348713672495,
            depth_over_sigma1: 3.6045357941875995,
            depth_under_sigma0: 2.0323365551904593,
            depth_under_sigma1: 0.6097009665571378,
        },
        probabilities: OutcomeProbabilities {
            p_adhesion: 0.05714285714285714,
            p_carry: 0.02631578947368421,
            q_detach: 0.0022730873485438774,
            depth_fail_threshold_mm: 3.0,
            hub_error_threshold_mm: 4.0,
            min_tilt_deg: 40.0,
        },
        core_length: CoreLengthModel {
            min_mm: 2.81,
            max_mm: 6.92,
            nominal_depth_mm: 7.0,
            alpha: 0.6833819241982507,
            beta: 0.24187317784256557,
            radial_shrink: 0.0,
        },
    }
}

impl ExperimentConfig {
    /// The degenerate-perfect world: nominal tuber shapes, ideal
    /// detectors, and zeroed outcome models. Every cycle succeeds with
    /// zero positional error.
    pub fn degenerate_perfect() -> Self {
        let mut cfg = Self::default();
        cfg.tubers = ShapeProfile::nominal();
        cfg.detectors = DetectorsConfig {
            tuber: DetectorProfile::perfect(),
            site: DetectorProfile::perfect(),
        };
        cfg.cell.grasp.contact_jitter_mm = 0.0;
        cfg.cell.grasp.roll_away_gain = 0.0;
        cfg.outcome_model = OutcomeParams::zeroed();
        cfg
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)?;
        let cfg: Self = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let text = toml::to_string_pretty(self).expect("config serializes");
        fs::write(path, text)?;
        Ok(())
    }

    /// Field-level validation of every block.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(field_err(
                "version",
                format!(
                    "unsupported version {} (expected {CONFIG_VERSION})",
                    self.version
                ),
            ));
        }
        if self.batch_size == 0 {
            return Err(field_err("batch_size", "must be >= 1"));
        }
        if self.replicates == 0 {
            return Err(field_err("replicates", "must be >= 1"));
        }
        if !self.camera.is_valid() {
            return Err(field_err(
                "camera",
                "focal lengths must be positive and the optical center inside the image",
            ));
        }
        let cell = &self.cell;
        if cell.camera_height_mm <= 0.0 {
            return Err(field_err(
                "cell.camera_height_mm",
                "camera must sit above the belt",
            ));
        }
        cell.hand_eye()
            .validate()
            .map_err(|e| field_err("cell.t_ce", e.to_string()))?;
        if !cell.gate.is_valid(self.camera.height) {
            return Err(field_err(
                "cell.gate",
                "need 0 <= v_low < v_high <= image height",
            ));
        }
        if cell.fps <= 0.0 {
            return Err(field_err("cell.fps", "must be positive"));
        }
        if cell.vision_frames == 0 {
            return Err(field_err("cell.vision_frames", "must be >= 1"));
        }
        if cell.vision_overhead_s < 0.0 || cell.resume_delay_s < 0.0 {
            return Err(field_err("cell", "times must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&cell.depth_hole_prob) {
            return Err(field_err("cell.depth_hole_prob", "must lie in [0, 1]"));
        }
        let m = &cell.manipulator;
        for (name, (lo, hi)) in [
            ("cell.manipulator.x_travel_mm", m.x_travel_mm),
            ("cell.manipulator.y_travel_mm", m.y_travel_mm),
            ("cell.manipulator.z_travel_mm", m.z_travel_mm),
        ] {
            if lo >= hi {
                return Err(field_err(name, "min must be below max"));
            }
        }
        if m.velocity_mm_s <= 0.0 || m.steps_per_mm <= 0.0 {
            return Err(field_err(
                "cell.manipulator",
                "velocity and steps_per_mm must be positive",
            ));
        }
        let h = m.home;
        if h.x_mm < m.x_travel_mm.0
            || h.x_mm > m.x_travel_mm.1
            || h.y_mm < m.y_travel_mm.0
            || h.y_mm > m.y_travel_mm.1
            || h.z_mm < m.z_travel_mm.0
            || h.z_mm > m.z_travel_mm.1
        {
            return Err(field_err(
                "cell.manipulator.home",
                "home must lie within the travels",
            ));
        }
        let g = &cell.grasp;
        if g.velocity_mm_s <= 0.0 || g.tick_s <= 0.0 {
            return Err(field_err(
                "cell.grasp",
                "velocity and tick must be positive",
            ));
        }
        if g.spring_k_n_per_m <= 0.0 || g.force_threshold_n <= 0.0 {
            return Err(field_err(
                "cell.grasp",
                "spring constant and threshold must be positive",
            ));
        }
        if g.force_threshold_n / g.spring_k_n_per_m * 1000.0 + g.approach_gap_mm > g.stroke_mm {
            return Err(field_err(
                "cell.grasp",
                "threshold compression exceeds the stroke",
            ));
        }
        if g.roll_away_gain < 0.0 {
            return Err(field_err(
                "cell.grasp.roll_away_gain",
                "must be nonnegative",
            ));
        }
        if cell.punch.insert_offset_mm < 0.0
            || cell.punch.retract_mm <= 0.0
            || cell.punch.blade_length_mm <= 0.0
        {
            return Err(field_err("cell.punch", "offsets must be positive"));
        }
        if cell.card.pitch_mm <= 0.0 || cell.card.deposit_clearance_mm < 0.0 {
            return Err(field_err("cell.card", "pitch must be positive"));
        }
        let t = &self.tubers;
        if t.length_range.0 <= 0.0 || t.length_range.0 > t.length_range.1 {
            return Err(field_err("tubers.length_range", "need 0 < min <= max"));
        }
        if t.width_ratio_range.0 <= 0.0
            || t.width_ratio_range.0 > t.width_ratio_range.1
            || t.width_ratio_range.1 > 1.0
        {
            return Err(field_err(
                "tubers.width_ratio_range",
                "need 0 < min <= max <= 1",
            ));
        }
        if t.eyes_range.0 > t.eyes_range.1 {
            return Err(field_err("tubers.eyes_range", "need min <= max"));
        }
        if !(0.0..=1.0).contains(&t.scar_probability) {
            return Err(field_err("tubers.scar_probability", "must lie in [0, 1]"));
        }
        if t.gap_mm < 0.0 {
            return Err(field_err("tubers.gap_mm", "must be nonnegative"));
        }
        if !self.detectors.tuber.is_valid() {
            return Err(field_err(
                "detectors.tuber",
                "precision/recall must lie in [0, 1]",
            ));
        }
        if !self.detectors.site.is_valid() {
            return Err(field_err(
                "detectors.site",
                "precision/recall must lie in [0, 1]",
            ));
        }
        let o = &self.outcome_model;
        if o.schema_version != OUTCOME_SCHEMA_VERSION {
            return Err(field_err(
                "outcome_model.schema_version",
                format!(
                    "unsupported version {} (expected {OUTCOME_SCHEMA_VERSION})",
                    o.schema_version
                ),
            ));
        }
        if !o.probabilities.is_valid() {
            return Err(field_err(
                "outcome_model.probabilities",
                "probabilities must lie in [0, 1]",
            ));
        }
        if !(0.0..=1.0).contains(&o.localization.depth_over_prob) {
            return Err(field_err(
                "outcome_model.localization.depth_over_prob",
                "must lie in [0, 1]",
            ));
        }
        let l = &o.localization;
        if l.lateral_sigma0 < 0.0
            || l.lateral_sigma1 < 0.0
            || l.depth_over_sigma0 < 0.0
            || l.depth_over_sigma1 < 0.0
            || l.depth_under_sigma0 < 0.0
            || l.depth_under_sigma1 < 0.0
        {
            return Err(field_err(
                "outcome_model.localization",
                "scale parameters must be nonnegative",
            ));
        }
        if !o.core_length.is_valid() {
            return Err(field_err(
                "outcome_model.core_length",
                "need 0 < min < max <= nominal and positive shape parameters",
            ));
        }
        Ok(())
    }
}
