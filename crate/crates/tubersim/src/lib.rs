//! Deterministic, seedable simulator of an inline robotic tuber
//! tissue-sampling cell.
//!
//! The crate models the full cell end to end: RGB-D perception geometry
//! (pinhole projection, lens undistortion, depth back-projection, hand-eye
//! transform), a synthetic conveyor scene with ellipsoidal tubers, statistical
//! stand-ins for the two object detectors, the Cartesian manipulator and
//! grasp-arm kinematics, calibrated stochastic outcome models for every
//! observed failure mode, and the cycle controller that sequences one
//! sampling cycle from conveyor gating to conveyor resume.
//!
//! The building blocks are organised bottom-up:
//!
//! * [`geometry`] — pure coordinate-frame math, generic over the scalar type
//! * [`scene`] — synthetic tubers, sampling sites, and depth rendering
//! * [`perception`] — detector simulation, gating, site selection, localization
//! * [`actuation`] — conveyor, grasp arm, Cartesian axes, end-effector servos
//! * [`outcome`] — calibrated stochastic models of sampling outcomes
//! * [`controller`] — the per-cycle finite-state machine and waypoint planner
//! * [`harness`] — batch experiment runner, calibration search, replay
//!
//! Everything is a pure function of `(config, seed)`: identical inputs
//! produce byte-identical record files.

pub mod actuation;
pub mod config;
pub mod controller;
pub mod geometry;
pub mod harness;
pub mod num;
pub mod outcome;
pub mod perception;
pub mod report;
pub mod scene;

/// Scalar type used by the simulation layers (geometry stays generic).
pub type Real = f64;

/// Camera intrinsics at the simulation scalar type.
pub type CameraIntrinsics = geometry::CameraIntrinsics<Real>;
/// Image-plane point at the simulation scalar type.
pub type PixelPoint = geometry::PixelPoint<Real>;
/// Camera-frame point at the simulation scalar type.
pub type CameraPoint = geometry::CameraPoint<Real>;
/// End-effector-frame point at the simulation scalar type.
pub type EffectorPoint = geometry::EffectorPoint<Real>;
/// Rigid camera-to-effector transform at the simulation scalar type.
pub type RigidTransform = geometry::RigidTransform<Real>;
