//! Pure coordinate-frame mathematics: pinhole projection, lens-distortion
//! correction, depth back-projection, and rigid-transform application
//! between the camera frame `C` and the end-effector frame `E`.
//!
//! All operations are pure functions of their inputs and generic over the
//! scalar type; the simulation layers use the `f64` aliases exported from
//! the crate root.
//!
//! Frame conventions: the camera looks down its `+z` axis, image `u` grows
//! along camera `+x` and `v` along camera `+y`. The effector frame has its
//! origin at the manipulator's home pose with `z` increasing downward,
//! toward the conveyor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Float;

pub mod calibration;

/// Iteration cap for the fixed-point distortion inversion.
const UNDISTORT_MAX_ITERS: usize = 50;
/// Convergence residual for the inversion, in pixels.
const UNDISTORT_RESIDUAL_PX: f64 = 1e-8;
/// Tolerance on the rotation-block determinant and orthonormality residual.
/// The shipped hand-eye matrix is printed rounded to four decimals, so its
/// rotation block is accepted as-is rather than re-orthonormalized.
const ROTATION_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    /// Distortion inversion failed to reach the residual inside the
    /// iteration cap; signals pathological coefficients.
    #[error("distortion inversion did not converge after {0} iterations")]
    NonConvergence(usize),
    /// Back-projection requires a strictly positive depth; zero or negative
    /// values signal a depth-sensor hole.
    #[error("invalid depth {0} mm (must be > 0)")]
    InvalidDepth(f64),
    /// Projection of a point at or behind the camera plane.
    #[error("point behind camera (z = {0} mm)")]
    BehindCamera(f64),
    /// Rotation block fails the determinant/orthonormality tolerance.
    #[error("rotation block invalid (det = {det}, orthonormality residual = {residual})")]
    InvalidRotation { det: f64, residual: f64 },
}

/// Pinhole intrinsics plus Brown-Conrady distortion coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics<T> {
    /// Focal length along `u`, px.
    pub fx: T,
    /// Focal length along `v`, px.
    pub fy: T,
    /// Optical center column, px.
    pub cx: T,
    /// Optical center row, px.
    pub cy: T,
    /// Radial distortion coefficients.
    pub k1: T,
    pub k2: T,
    pub k3: T,
    /// Tangential distortion coefficients.
    pub p1: T,
    pub p2: T,
    /// Image width, px.
    pub width: u32,
    /// Image height, px.
    pub height: u32,
}

impl<T: Float> CameraIntrinsics<T> {
    /// Distortion-free synthetic defaults for the simulated sensor:
    /// 640x480 at fx = fy = 610 px with the optical center at mid-frame.
    /// The physical rig's intrinsics were never published, so these are
    /// configuration, not ground truth.
    pub fn default_synthetic() -> Self {
        Self {
            fx: T::from_f64_const(610.0),
            fy: T::from_f64_const(610.0),
            cx: T::from_f64_const(320.0),
            cy: T::from_f64_const(240.0),
            k1: T::zero(),
            k2: T::zero(),
            k3: T::zero(),
            p1: T::zero(),
            p2: T::zero(),
            width: 640,
            height: 480,
        }
    }

    /// Checks fx, fy > 0 and that the optical center lies inside the image.
    pub fn is_valid(&self) -> bool {
        self.fx > T::zero()
            && self.fy > T::zero()
            && self.cx > T::zero()
            && self.cx < T::from_f64_const(f64::from(self.width))
            && self.cy > T::zero()
            && self.cy < T::from_f64_const(f64::from(self.height))
    }

    fn normalize(&self, p: PixelPoint<T>) -> (T, T) {
        ((p.u - self.cx) / self.fx, (p.v - self.cy) / self.fy)
    }

    fn denormalize(&self, x: T, y: T) -> PixelPoint<T> {
        PixelPoint {
            u: x * self.fx + self.cx,
            v: y * self.fy + self.cy,
        }
    }

    /// Applies the radial + tangential model to normalized coordinates.
    fn distort_normalized(&self, x: T, y: T) -> (T, T) {
        let two = T::from_f64_const(2.0);
        let r2 = x * x + y * y;
        let radial = T::one() + self.k1 * r2 + self.k2 * r2 * r2 + self.k3 * r2 * r2 * r2;
        let dx = two * self.p1 * x * y + self.p2 * (r2 + two * x * x);
        let dy = self.p1 * (r2 + two * y * y) + two * self.p2 * x * y;
        (x * radial + dx, y * radial + dy)
    }
}

/// Real-valued image-plane point. May lie outside the image bounds after
/// undistortion; callers clamp where that matters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint<T> {
    pub u: T,
    pub v: T,
}

impl<T: Float> PixelPoint<T> {
    pub fn new(u: T, v: T) -> Self {
        Self { u, v }
    }

    pub fn distance_to(&self, other: &Self) -> T {
        let du = self.u - other.u;
        let dv = self.v - other.v;
        (du * du + dv * dv).sqrt()
    }
}

/// Point in the camera frame `C`, mm. `z` is depth along the optical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPoint<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Float> CameraPoint<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }
}

/// Point in the end-effector frame `E`, mm, expressed as an offset from the
/// home pose. `z` increases downward, toward the conveyor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectorPoint<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Float> EffectorPoint<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }
}

/// Rigid transform between the camera and end-effector frames: a 3x3
/// rotation block and a translation, applied as `r * q + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform<T> {
    /// Rotation block, row-major.
    pub r: [[T; 3]; 3],
    /// Translation, mm.
    pub t: [T; 3],
}

impl<T: Float> RigidTransform<T> {
    pub fn identity() -> Self {
        let o = T::zero();
        let i = T::one();
        Self {
            r: [[i, o, o], [o, i, o], [o, o, i]],
            t: [o, o, o],
        }
    }

    /// The hand-eye calibration result shipped with the rig, exactly as
    /// printed (rounded to four decimals, hence a slightly non-orthonormal
    /// rotation block within the 1e-3 tolerance).
    pub fn default_hand_eye() -> Self {
        let c = |v: f64| T::from_f64_const(v);
        Self {
            r: [
                [c(0.0003), c(0.9998), c(0.0)],
                [c(-0.9998), c(0.0003), c(0.0)],
                [c(0.0), c(0.0), c(1.0)],
            ],
            t: [c(-51.447), c(18.095), c(179.142)],
        }
    }

    /// Builds a transform from 16 row-major values of the homogeneous 4x4
    /// matrix. The bottom row must be (0, 0, 0, 1).
    pub fn from_row_major(m: &[T; 16]) -> Self {
        Self {
            r: [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]],
            t: [m[3], m[7], m[11]],
        }
    }

    /// Serializes to 16 row-major homogeneous values.
    pub fn to_row_major(&self) -> [T; 16] {
        let o = T::zero();
        [
            self.r[0][0],
            self.r[0][1],
            self.r[0][2],
            self.t[0],
            self.r[1][0],
            self.r[1][1],
            self.r[1][2],
            self.t[1],
            self.r[2][0],
            self.r[2][1],
            self.r[2][2],
            self.t[2],
            o,
            o,
            o,
            T::one(),
        ]
    }

    pub fn det_r(&self) -> T {
        let r = &self.r;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    /// Max-norm deviation of `r^T r` from the identity.
    pub fn orthonormality_residual(&self) -> T {
        let r = &self.r;
        let mut worst = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = T::zero();
                for (row, _) in r.iter().enumerate() {
                    dot = dot + r[row][i] * r[row][j];
                }
                let expect = if i == j { T::one() } else { T::zero() };
                let dev = (dot - expect).abs();
                if dev > worst {
                    worst = dev;
                }
            }
        }
        worst
    }

    /// Verifies `|det(r) - 1| <= 1e-3` and the orthonormality residual.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let det = self.det_r();
        let residual = self.orthonormality_residual();
        let tol = T::from_f64_const(ROTATION_TOLERANCE);
        if (det - T::one()).abs() > tol || residual > tol {
            return Err(GeometryError::InvalidRotation {
                det: det.to_f64().unwrap_or(f64::NAN),
                residual: residual.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(())
    }
}

/// Returns the ideal (distortion-free) pixel whose distorted image is `p`,
/// inverting the radial + tangential model by fixed-point iteration to a
/// forward residual below 1e-8 px.
pub fn undistort_pixel<T: Float>(
    p: PixelPoint<T>,
    k: &CameraIntrinsics<T>,
) -> Result<PixelPoint<T>, GeometryError> {
    let (xd, yd) = k.normalize(p);
    let mut x = xd;
    let mut y = yd;
    let two = T::from_f64_const(2.0);
    let tol = T::from_f64_const(UNDISTORT_RESIDUAL_PX);
    for _ in 0..UNDISTORT_MAX_ITERS {
        let r2 = x * x + y * y;
        let radial = T::one() + k.k1 * r2 + k.k2 * r2 * r2 + k.k3 * r2 * r2 * r2;
        let dx = two * k.p1 * x * y + k.p2 * (r2 + two * x * x);
        let dy = k.p1 * (r2 + two * y * y) + two * k.p2 * x * y;
        x = (xd - dx) / radial;
        y = (yd - dy) / radial;
        let (fx_, fy_) = k.distort_normalized(x, y);
        let residual = ((fx_ - xd) * k.fx).abs().max(((fy_ - yd) * k.fy).abs());
        if residual < tol {
            return Ok(k.denormalize(x, y));
        }
    }
    Err(GeometryError::NonConvergence(UNDISTORT_MAX_ITERS))
}

/// Forward distortion model: maps an ideal pixel to its distorted image.
/// The synthetic camera and the round-trip tests use this as the generative
/// counterpart of [`undistort_pixel`].
pub fn distort_pixel<T: Float>(p: PixelPoint<T>, k: &CameraIntrinsics<T>) -> PixelPoint<T> {
    let (x, y) = k.normalize(p);
    let (xd, yd) = k.distort_normalized(x, y);
    k.denormalize(xd, yd)
}

/// Back-projects an (already undistorted) pixel plus depth into the camera
/// frame: `X = (u - cx) Z / fx`, `Y = (v - cy) Z / fy`, `Z = depth`.
pub fn back_project<T: Float>(
    p: PixelPoint<T>,
    depth: T,
    k: &CameraIntrinsics<T>,
) -> Result<CameraPoint<T>, GeometryError> {
    if depth <= T::zero() {
        return Err(GeometryError::InvalidDepth(
            depth.to_f64().unwrap_or(f64::NAN),
        ));
    }
    Ok(CameraPoint {
        x: (p.u - k.cx) * depth / k.fx,
        y: (p.v - k.cy) * depth / k.fy,
        z: depth,
    })
}

/// Pinhole projection of a camera-frame point; returns the ideal pixel and
/// the depth along the optical axis.
pub fn project<T: Float>(
    q: CameraPoint<T>,
    k: &CameraIntrinsics<T>,
) -> Result<(PixelPoint<T>, T), GeometryError> {
    if q.z <= T::zero() {
        return Err(GeometryError::BehindCamera(
            q.z.to_f64().unwrap_or(f64::NAN),
        ));
    }
    Ok((
        PixelPoint {
            u: k.fx * q.x / q.z + k.cx,
            v: k.fy * q.y / q.z + k.cy,
        },
        q.z,
    ))
}

/// Applies the camera-to-effector transform as a homogeneous multiplication:
/// `e = r * q + t`.
pub fn transform_point<T: Float>(t: &RigidTransform<T>, q: CameraPoint<T>) -> EffectorPoint<T> {
    let v = [q.x, q.y, q.z];
    let mut out = [T::zero(); 3];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = t.r[i][0] * v[0] + t.r[i][1] * v[1] + t.r[i][2] * v[2] + t.t[i];
    }
    EffectorPoint {
        x: out[0],
        y: out[1],
        z: out[2],
    }
}
