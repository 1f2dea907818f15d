//! Synthetic conveyor scene: ellipsoidal tubers with sampling sites,
//! single-file placement on the belt, and the analytic projections the
//! simulated camera sees.
//!
//! Tubers are axis-aligned ellipsoids resting on the belt plane: semi-axis
//! `a` lies along the belt (camera `y`), `b` across it (camera `x`), and
//! `c` vertical (camera `z`). Curvature, the dominant localization-error
//! driver, is therefore available analytically without meshes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project, CameraIntrinsics, CameraPoint, PixelPoint};
use crate::Real;

pub mod render;
pub mod snapshot;

pub use render::{render_depth, CameraPose, DepthFrame};

/// Fraction of the across-belt semi-axis within which the gripper pads
/// contact the tuber; sites are rejection-sampled away from these zones.
const GRASP_ZONE_FRACTION: Real = 0.82;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    /// The site faces away from the camera and cannot be observed.
    #[error("site occluded (faces away from the camera)")]
    Occluded,
    #[error("no tuber with id {0} in scene")]
    UnknownTuber(u32),
}

/// Kind of sampling site on the tuber surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteKind {
    Eye,
    StolonScar,
}

/// A sampling site, stored as a parametric surface position so its world
/// point follows the tuber as the belt advances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingSite {
    pub kind: SiteKind,
    /// Parametric position: azimuth `u` in [0, 2pi), elevation `v` in
    /// [-pi/2, pi/2] with positive `v` toward the camera.
    pub surface_uv: (Real, Real),
}

impl SamplingSite {
    /// Body-frame surface point, mm. Axes: `x` across belt, `y` along belt,
    /// `z` down (camera convention).
    pub fn local_point(&self, semi_axes: [Real; 3]) -> [Real; 3] {
        let [a, b, c] = semi_axes;
        let (u, v) = self.surface_uv;
        [b * v.cos() * u.sin(), a * v.cos() * u.cos(), -c * v.sin()]
    }
}

/// One synthetic tuber on the belt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuberInstance {
    pub id: u32,
    /// Ellipsoid semi-axes (a, b, c), mm; `2a` is the tuber length.
    pub semi_axes: [Real; 3],
    /// Roll-away propensity in [0, 1].
    pub irregularity: Real,
    /// Distance advanced along the belt, mm.
    pub belt_position: Real,
    /// Offset across the belt, mm.
    pub lateral_offset: Real,
    pub sites: Vec<SamplingSite>,
}

impl TuberInstance {
    pub fn length(&self) -> Real {
        2.0 * self.semi_axes[0]
    }

    /// Camera-frame center given the scene's camera geometry. The tuber
    /// rests on the belt, so the center sits one `c` semi-axis above it.
    pub fn center(&self, scene: &Scene) -> CameraPoint<Real> {
        CameraPoint::new(
            self.lateral_offset,
            scene.spawn_y_mm - self.belt_position,
            scene.camera.height_mm - self.semi_axes[2],
        )
    }

    /// Camera-frame position of one of this tuber's sites.
    pub fn site_point(&self, scene: &Scene, site: &SamplingSite) -> CameraPoint<Real> {
        let m = self.center(scene);
        let p = site.local_point(self.semi_axes);
        CameraPoint::new(m.x + p[0], m.y + p[1], m.z + p[2])
    }

    /// Whether the site's surface normal faces the camera.
    pub fn site_visible(&self, scene: &Scene, site: &SamplingSite) -> bool {
        let m = self.center(scene);
        let p = site.local_point(self.semi_axes);
        let [a, b, c] = self.semi_axes;
        // Outward normal of (x/b)^2 + (y/a)^2 + (z/c)^2 = 1 at the point.
        let n = [p[0] / (b * b), p[1] / (a * a), p[2] / (c * c)];
        let w = [m.x + p[0], m.y + p[1], m.z + p[2]];
        n[0] * w[0] + n[1] * w[1] + n[2] * w[2] < 0.0
    }
}

/// Shape statistics for batch generation. The physical test population's
/// shape distribution was never published; everything here is configuration
/// calibrated only through the aggregate grasp statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeProfile {
    /// Tuber length 2a, mm (uniform).
    pub length_range: (Real, Real),
    /// b = c = ratio * a (uniform ratio).
    pub width_ratio_range: (Real, Real),
    /// Eyes per tuber (uniform inclusive).
    pub eyes_range: (u8, u8),
    /// Probability of a stolon scar.
    pub scar_probability: Real,
    /// Clear distance between consecutive tubers on the belt, mm.
    pub gap_mm: Real,
    /// Max lateral offset magnitude, mm (uniform).
    pub lateral_jitter_mm: Real,
    /// Roll-away propensity (uniform).
    pub irregularity_range: (Real, Real),
    /// Where sites are placed.
    pub site_placement: SitePlacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SitePlacement {
    /// Rejection-sampled over the surface, away from the gripper contact
    /// zones; scar near one of the belt-axis ends.
    Random,
    /// A single eye at the apex; used by the nominal reference scenario.
    Apex,
}

impl Default for ShapeProfile {
    fn default() -> Self {
        Self {
            length_range: (35.0, 60.0),
            width_ratio_range: (0.55, 0.8),
            eyes_range: (2, 6),
            scar_probability: 0.9,
            gap_mm: 40.0,
            lateral_jitter_mm: 10.0,
            irregularity_range: (0.0, 1.0),
            site_placement: SitePlacement::Random,
        }
    }
}

impl ShapeProfile {
    /// Fixed mid-range tuber with one apex eye: the deterministic reference
    /// used for timing budgets and degenerate-perfect runs.
    pub fn nominal() -> Self {
        Self {
            length_range: (47.5, 47.5),
            width_ratio_range: (0.7, 0.7),
            eyes_range: (1, 1),
            scar_probability: 0.0,
            gap_mm: 40.0,
            lateral_jitter_mm: 0.0,
            irregularity_range: (0.0, 0.0),
            site_placement: SitePlacement::Apex,
        }
    }
}

/// The camera plus every tuber currently on the belt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub camera: CameraPose,
    /// Camera-frame `y` of a tuber at `belt_position = 0`.
    pub spawn_y_mm: Real,
    pub tubers: Vec<TuberInstance>,
}

impl Scene {
    pub fn new(camera: CameraPose, spawn_y_mm: Real, tubers: Vec<TuberInstance>) -> Self {
        Self {
            camera,
            spawn_y_mm,
            tubers,
        }
    }

    pub fn tuber(&self, id: u32) -> Result<&TuberInstance, SceneError> {
        self.tubers
            .iter()
            .find(|t| t.id == id)
            .ok_or(SceneError::UnknownTuber(id))
    }

    pub fn tuber_mut(&mut self, id: u32) -> Result<&mut TuberInstance, SceneError> {
        self.tubers
            .iter_mut()
            .find(|t| t.id == id)
            .ok_or(SceneError::UnknownTuber(id))
    }

    /// Advances every tuber along the belt.
    pub fn advance_mm(&mut self, mm: Real) {
        for t in &mut self.tubers {
            t.belt_position += mm;
        }
    }
}

/// Projected image-plane footprint of a tuber.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub u_min: Real,
    pub v_min: Real,
    pub u_max: Real,
    pub v_max: Real,
}

impl BoundingBox {
    pub fn center(&self) -> PixelPoint<Real> {
        PixelPoint::new(
            0.5 * (self.u_min + self.u_max),
            0.5 * (self.v_min + self.v_max),
        )
    }

    pub fn contains(&self, p: &PixelPoint<Real>) -> bool {
        p.u >= self.u_min && p.u <= self.u_max && p.v >= self.v_min && p.v <= self.v_max
    }

    pub fn width(&self) -> Real {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> Real {
        self.v_max - self.v_min
    }

    fn intersects_image(&self, k: &CameraIntrinsics<Real>) -> bool {
        self.u_max >= 0.0
            && self.u_min <= Real::from(k.width)
            && self.v_max >= 0.0
            && self.v_min <= Real::from(k.height)
    }
}

/// Analytic image bounding box of a tuber: the projected center plus the
/// semi-axis extents scaled by the center depth. A first-order silhouette,
/// used identically for ground truth and simulated detections.
pub fn tuber_bbox(
    scene: &Scene,
    tuber: &TuberInstance,
    k: &CameraIntrinsics<Real>,
) -> Option<BoundingBox> {
    let m = tuber.center(scene);
    let (center_px, depth) = project(m, k).ok()?;
    let [a, b, _] = tuber.semi_axes;
    let du = k.fx * b / depth;
    let dv = k.fy * a / depth;
    Some(BoundingBox {
        u_min: center_px.u - du,
        v_min: center_px.v - dv,
        u_max: center_px.u + du,
        v_max: center_px.v + dv,
    })
}

/// Ground-truth view of one site: exact projected pixel, camera point and
/// per-frame radial offset from the tuber's image centroid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteView {
    pub site_index: usize,
    pub kind: SiteKind,
    pub pixel: PixelPoint<Real>,
    pub point: CameraPoint<Real>,
    pub radial_offset: Real,
}

/// Ground-truth view of one tuber in the current frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TuberView {
    pub tuber_id: u32,
    pub bbox: BoundingBox,
    pub centroid: PixelPoint<Real>,
    /// Visible (camera-facing) sites only.
    pub sites: Vec<SiteView>,
}

/// Everything the simulated detectors can observe in one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruthFrame {
    pub tubers: Vec<TuberView>,
}

/// Normalized distance of a pixel from a bounding box's center: 0 at the
/// center, 1 at the box edge (elliptic norm), clamped to [0, 1].
pub fn radial_offset(bbox: &BoundingBox, pixel: &PixelPoint<Real>) -> Real {
    let c = bbox.center();
    let hw = 0.5 * bbox.width();
    let hh = 0.5 * bbox.height();
    if hw <= 0.0 || hh <= 0.0 {
        return 0.0;
    }
    let ru = (pixel.u - c.u) / hw;
    let rv = (pixel.v - c.v) / hh;
    (ru * ru + rv * rv).sqrt().min(1.0)
}

/// Exact projected pixel and camera-frame coordinates of a site. Errors if
/// the site faces away from the camera.
pub fn ground_truth_site(
    scene: &Scene,
    tuber: &TuberInstance,
    site: &SamplingSite,
    k: &CameraIntrinsics<Real>,
) -> Result<(PixelPoint<Real>, CameraPoint<Real>), SceneError> {
    if !tuber.site_visible(scene, site) {
        return Err(SceneError::Occluded);
    }
    let point = tuber.site_point(scene, site);
    let (pixel, _) = project(point, k).map_err(|_| SceneError::Occluded)?;
    Ok((pixel, point))
}

/// Projects the whole scene into the ground truth a detector consumes.
pub fn project_scene(scene: &Scene, k: &CameraIntrinsics<Real>) -> GroundTruthFrame {
    let mut frame = GroundTruthFrame::default();
    for tuber in &scene.tubers {
        let Some(bbox) = tuber_bbox(scene, tuber, k) else {
            continue;
        };
        if !bbox.intersects_image(k) {
            continue;
        }
        let centroid = bbox.center();
        let mut sites = Vec::new();
        for (i, site) in tuber.sites.iter().enumerate() {
            if let Ok((pixel, point)) = ground_truth_site(scene, tuber, site, k) {
                sites.push(SiteView {
                    site_index: i,
                    kind: site.kind,
                    pixel,
                    point,
                    radial_offset: radial_offset(&bbox, &pixel),
                });
            }
        }
        frame.tubers.push(TuberView {
            tuber_id: tuber.id,
            bbox,
            centroid,
            sites,
        });
    }
    frame
}

// Eyes are placed on the camera-facing hemisphere: the 2..6 eye counts
// describe sites the imaging system can observe at all, matching how the
// detector's ground truth was annotated from top-down frames. A small
// elevation floor keeps sites off the exact silhouette.
fn sample_surface_uv(rng: &mut impl Rng) -> (Real, Real) {
    let u = rng.random_range(0.0..std::f64::consts::TAU);
    let sin_v: Real = rng.random_range(0.05..=1.0);
    (u, sin_v.asin())
}

fn in_grasp_zone(site: &SamplingSite, semi_axes: [Real; 3]) -> bool {
    let p = site.local_point(semi_axes);
    (p[0] / semi_axes[1]).abs() > GRASP_ZONE_FRACTION
}

/// Generates `n` tubers in single file with the profile's shape statistics.
/// Identical seeds produce bitwise-identical batches.
pub fn spawn_batch(seed: u64, n: usize, profile: &ShapeProfile) -> Vec<TuberInstance> {
    assert!(n >= 1, "batch needs at least one tuber");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tubers = Vec::with_capacity(n);
    let mut rear_edge = 0.0; // belt coordinate of the previous tuber's tail
    for id in 0..n {
        let length = sample_range(&mut rng, profile.length_range);
        let a = 0.5 * length;
        let ratio = sample_range(&mut rng, profile.width_ratio_range);
        let b = ratio * a;
        let c = b;
        let irregularity = sample_range(&mut rng, profile.irregularity_range);
        let lateral = if profile.lateral_jitter_mm > 0.0 {
            rng.random_range(-profile.lateral_jitter_mm..=profile.lateral_jitter_mm)
        } else {
            0.0
        };
        // Single file: each tuber starts one gap behind the previous tail.
        let belt_position = rear_edge - profile.gap_mm - a;
        rear_edge = belt_position - a;

        let semi_axes = [a, b, c];
        let mut sites = Vec::new();
        match profile.site_placement {
            SitePlacement::Apex => {
                sites.push(SamplingSite {
                    kind: SiteKind::Eye,
                    surface_uv: (0.0, std::f64::consts::FRAC_PI_2),
                });
            }
            SitePlacement::Random => {
                let n_eyes = rng.random_range(profile.eyes_range.0..=profile.eyes_range.1);
                for _ in 0..n_eyes {
                    sites.push(reject_sample_site(&mut rng, SiteKind::Eye, semi_axes));
                }
                if rng.random_range(0.0..1.0) < profile.scar_probability {
                    // The scar sits where the tuber detached from its
                    // stolon: near one of the ends along the belt axis,
                    // on the observable side.
                    let end = if rng.random_range(0.0..1.0) < 0.5 {
                        0.0
                    } else {
                        std::f64::consts::PI
                    };
                    let u = end + rng.random_range(-0.35..0.35);
                    let v = rng.random_range(0.08..0.4);
                    sites.push(SamplingSite {
                        kind: SiteKind::StolonScar,
                        surface_uv: (u, v),
                    });
                }
            }
        }

        tubers.push(TuberInstance {
            id: id as u32,
            semi_axes,
            irregularity,
            belt_position,
            lateral_offset: lateral,
            sites,
        });
    }
    tubers
}

fn reject_sample_site(rng: &mut impl Rng, kind: SiteKind, semi_axes: [Real; 3]) -> SamplingSite {
    loop {
        let site = SamplingSite {
            kind,
            surface_uv: sample_surface_uv(rng),
        };
        if !in_grasp_zone(&site, semi_axes) {
            return site;
        }
    }
}

fn sample_range(rng: &mut impl Rng, range: (Real, Real)) -> Real {
    if range.0 >= range.1 {
        range.0
    } else {
        rng.random_range(range.0..=range.1)
    }
}
