//! Noiseless ground-truth depth rendering for the simulated camera.
//!
//! Rays are cast from the camera origin through each pixel and intersected
//! analytically with every tuber ellipsoid; pixels that miss all tubers
//! carry the belt-plane depth.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::num::Float;
use crate::scene::Scene;
use crate::{CameraIntrinsics, PixelPoint, Real};

/// Downward-looking camera pose over the belt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    /// Height of the optical center above the belt plane, mm.
    pub height_mm: Real,
}

/// Per-pixel nearest-surface depth (mm) plus the id of the tuber that owns
/// each pixel, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub width: u32,
    pub height: u32,
    pub depth: Vec<Real>,
    pub owner: Vec<Option<u32>>,
}

impl DepthFrame {
    pub fn depth_at(&self, u: u32, v: u32) -> Real {
        self.depth[(v * self.width + u) as usize]
    }

    /// Nearest-pixel depth lookup for a real-valued pixel; `None` outside
    /// the image.
    pub fn sample(&self, p: &PixelPoint) -> Option<Real> {
        let u = p.u.round();
        let v = p.v.round();
        if u < 0.0 || v < 0.0 || u >= Real::from(self.width) || v >= Real::from(self.height) {
            return None;
        }
        Some(self.depth_at(u as u32, v as u32))
    }

    /// Writes the frame as a 16-bit binary PGM (P5, maxval 65535) with
    /// depths rounded to whole millimetres, big-endian sample order.
    pub fn write_pgm(&self, path: &Path) -> std::io::Result<()> {
        let mut out = Vec::with_capacity(self.depth.len() * 2 + 32);
        write!(out, "P5\n{} {}\n65535\n", self.width, self.height)?;
        for d in &self.depth {
            let q = d.round().clamp(0.0, 65535.0) as u16;
            out.extend_from_slice(&q.to_be_bytes());
        }
        std::fs::write(path, out)
    }
}

/// Depth (distance along the optical axis) at which a ray through a unit-z
/// direction `dir` first hits an axis-aligned ellipsoid, if it does.
///
/// `semi` holds the (x, y, z) semi-axes of the ellipsoid centered at
/// `center`; the ray starts at the origin. Because `dir.z == 1`, the ray
/// parameter equals the depth.
pub fn ray_ellipsoid_depth<T: Float>(dir: [T; 3], center: [T; 3], semi: [T; 3]) -> Option<T> {
    let mut a = T::zero();
    let mut b = T::zero();
    let mut c = T::zero();
    for i in 0..3 {
        let dn = dir[i] / semi[i];
        let mn = center[i] / semi[i];
        a = a + dn * dn;
        b = b - (dn * mn + dn * mn);
        c = c + mn * mn;
    }
    c = c - T::one();
    let disc = b * b - T::from_f64_const(4.0) * a * c;
    if disc < T::zero() {
        return None;
    }
    let sqrt_disc = disc.sqrt();
    let two_a = a + a;
    let t0 = (-b - sqrt_disc) / two_a;
    let t1 = (-b + sqrt_disc) / two_a;
    let t = if t0 > T::zero() {
        t0
    } else if t1 > T::zero() {
        t1
    } else {
        return None;
    };
    Some(t)
}

fn pixel_direction(k: &CameraIntrinsics, p: &PixelPoint) -> [Real; 3] {
    [(p.u - k.cx) / k.fx, (p.v - k.cy) / k.fy, 1.0]
}

/// Nearest-surface depth along the ray through one pixel: the closest tuber
/// hit, or the belt plane.
pub fn depth_at_pixel(scene: &Scene, k: &CameraIntrinsics, p: &PixelPoint) -> Real {
    hit_at_pixel(scene, k, p).0
}

fn hit_at_pixel(scene: &Scene, k: &CameraIntrinsics, p: &PixelPoint) -> (Real, Option<u32>) {
    let dir = pixel_direction(k, p);
    let mut best = scene.camera.height_mm;
    let mut owner = None;
    for tuber in &scene.tubers {
        let m = tuber.center(scene);
        let [a, b, c] = tuber.semi_axes;
        // Semi-axes in camera order: b across (x), a along (y), c vertical.
        if let Some(t) = ray_ellipsoid_depth(dir, [m.x, m.y, m.z], [b, a, c]) {
            if t < best {
                best = t;
                owner = Some(tuber.id);
            }
        }
    }
    (best, owner)
}

/// Renders the whole frame. Deterministic: identical scene, pose and
/// intrinsics produce an identical frame.
pub fn render_depth(scene: &Scene, pose: &CameraPose, k: &CameraIntrinsics) -> DepthFrame {
    debug_assert!(pose.height_mm > 0.0, "camera must sit above the belt");
    let mut scene = scene.clone();
    scene.camera = *pose;
    let (w, h) = (k.width, k.height);
    let mut depth = Vec::with_capacity((w * h) as usize);
    let mut owner = Vec::with_capacity((w * h) as usize);
    for v in 0..h {
        for u in 0..w {
            let p = PixelPoint::new(Real::from(u), Real::from(v));
            let (d, o) = hit_at_pixel(&scene, k, &p);
            depth.push(d);
            owner.push(o);
        }
    }
    DepthFrame {
        width: w,
        height: h,
        depth,
        owner,
    }
}
