//! Statistical stand-ins for the two detection models, conveyor gating,
//! sampling-site selection, and median-of-frames localization.
//!
//! No network runs here: detections are generated from scene ground truth
//! so that detection frequencies converge to the measured precision/recall
//! of the real models, with optional Gaussian centroid jitter. A recorded
//! detection log can substitute for the simulated detector (see [`log`]).

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{back_project, undistort_pixel};
use crate::scene::{BoundingBox, GroundTruthFrame, SiteKind};
use crate::{CameraIntrinsics, CameraPoint, PixelPoint, Real};

pub mod log;

/// Half-extent of the synthetic bounding box drawn around a site detection.
const SITE_BBOX_HALF_PX: Real = 4.0;

#[derive(Debug, Error, PartialEq)]
pub enum PerceptionError {
    /// No sampling site was detected; the controller releases the tuber
    /// and logs a no-site skip.
    #[error("no sampling site detected")]
    NoSiteDetected,
    /// Too many depth holes at the pixel across the frame window.
    #[error("insufficient depth: {valid} of {total} frames valid (need total - 4)")]
    InsufficientDepth { valid: usize, total: usize },
}

/// Object class carried by a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionClass {
    Tuber,
    Eye,
    StolonScar,
}

impl From<SiteKind> for DetectionClass {
    fn from(kind: SiteKind) -> Self {
        match kind {
            SiteKind::Eye => DetectionClass::Eye,
            SiteKind::StolonScar => DetectionClass::StolonScar,
        }
    }
}

/// Which of the two detection models runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    /// Conveyor-side tuber detector.
    Tuber,
    /// Eyes-and-stolon-scar detector on the grasped tuber.
    Site,
}

/// Link back to the scene object that generated a detection; `None` for an
/// injected false positive. Simulation bookkeeping only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionSource {
    pub tuber_id: u32,
    pub site_index: Option<usize>,
}

/// Class-labelled pixel bounding box with confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: DetectionClass,
    pub bbox: BoundingBox,
    pub centroid: PixelPoint,
    pub confidence: Real,
    pub source: Option<DetectionSource>,
}

impl Detection {
    fn from_center(
        class: DetectionClass,
        center: PixelPoint,
        half_u: Real,
        half_v: Real,
        confidence: Real,
        source: Option<DetectionSource>,
    ) -> Self {
        Self {
            class,
            bbox: BoundingBox {
                u_min: center.u - half_u,
                v_min: center.v - half_v,
                u_max: center.u + half_u,
                v_max: center.v + half_v,
            },
            centroid: center,
            confidence,
            source,
        }
    }
}

/// Measured operating point of one detection model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorProfile {
    pub precision: Real,
    pub recall: Real,
    pub inference_ms: Real,
    pub centroid_jitter_px: Real,
}

impl DetectorProfile {
    /// The conveyor-side tuber model: perfect detection at 37 ms.
    pub fn tuber_default() -> Self {
        Self {
            precision: 1.0,
            recall: 1.0,
            inference_ms: 37.0,
            centroid_jitter_px: 0.0,
        }
    }

    /// The eyes-and-stolon-scar model: precision 0.911, recall 0.889,
    /// 92 ms. Centroid jitter defaults to zero because the calibrated
    /// outcome models already absorb the end-to-end localization error.
    pub fn site_default() -> Self {
        Self {
            precision: 0.911,
            recall: 0.889,
            inference_ms: 92.0,
            centroid_jitter_px: 0.0,
        }
    }

    /// Ideal detector: used by degenerate-perfect configurations.
    pub fn perfect() -> Self {
        Self {
            precision: 1.0,
            recall: 1.0,
            inference_ms: 0.0,
            centroid_jitter_px: 0.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.precision)
            && (0.0..=1.0).contains(&self.recall)
            && self.inference_ms >= 0.0
            && self.centroid_jitter_px >= 0.0
    }
}

/// Image-row band that defines the grasping workspace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspGate {
    pub v_low: Real,
    pub v_high: Real,
}

impl Default for GraspGate {
    fn default() -> Self {
        Self {
            v_low: 165.0,
            v_high: 195.0,
        }
    }
}

impl GraspGate {
    pub fn is_valid(&self, image_height: u32) -> bool {
        self.v_low >= 0.0 && self.v_low < self.v_high && self.v_high <= Real::from(image_height)
    }

    /// Closed-interval test on the centroid row.
    pub fn admits(&self, centroid: &PixelPoint) -> bool {
        centroid.v >= self.v_low && centroid.v <= self.v_high
    }
}

fn jitter(rng: &mut impl Rng, sigma: Real) -> (Real, Real) {
    if sigma <= 0.0 {
        return (0.0, 0.0);
    }
    let n = Normal::new(0.0, sigma).expect("valid sigma");
    (n.sample(rng), n.sample(rng))
}

fn false_positive_count(rng: &mut impl Rng, true_positives: usize, precision: Real) -> usize {
    if precision >= 1.0 || true_positives == 0 {
        return 0;
    }
    let lambda = true_positives as Real * (1.0 - precision) / precision;
    Poisson::new(lambda).map_or(0, |p| p.sample(rng) as usize)
}

/// Runs one simulated detector over the frame's ground truth: each visible
/// object of the detector's classes is emitted with probability `recall`,
/// centroids carry Gaussian jitter, and false positives are injected so the
/// long-run precision matches the profile. Deterministic given the rng
/// state.
pub fn detect(
    frame: &GroundTruthFrame,
    profile: &DetectorProfile,
    kind: DetectorKind,
    rng: &mut impl Rng,
) -> Vec<Detection> {
    debug_assert!(profile.is_valid());
    let mut out = Vec::new();
    match kind {
        DetectorKind::Tuber => {
            for view in &frame.tubers {
                if rng.random_range(0.0..1.0) >= profile.recall {
                    continue;
                }
                let (ju, jv) = jitter(rng, profile.centroid_jitter_px);
                let center = PixelPoint::new(view.centroid.u + ju, view.centroid.v + jv);
                let conf = rng.random_range(0.5..1.0);
                out.push(Detection::from_center(
                    DetectionClass::Tuber,
                    center,
                    0.5 * view.bbox.width(),
                    0.5 * view.bbox.height(),
                    conf,
                    Some(DetectionSource {
                        tuber_id: view.tuber_id,
                        site_index: None,
                    }),
                ));
            }
            let fp = false_positive_count(rng, out.len(), profile.precision);
            for _ in 0..fp {
                let center =
                    PixelPoint::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
                let half_u = rng.random_range(15.0..40.0);
                let half_v = rng.random_range(15.0..40.0);
                let conf = rng.random_range(0.25..0.9);
                out.push(Detection::from_center(
                    DetectionClass::Tuber,
                    center,
                    half_u,
                    half_v,
                    conf,
                    None,
                ));
            }
        }
        DetectorKind::Site => {
            for view in &frame.tubers {
                for site in &view.sites {
                    if rng.random_range(0.0..1.0) >= profile.recall {
                        continue;
                    }
                    let (ju, jv) = jitter(rng, profile.centroid_jitter_px);
                    let center = PixelPoint::new(site.pixel.u + ju, site.pixel.v + jv);
                    let conf = rng.random_range(0.5..1.0);
                    out.push(Detection::from_center(
                        site.kind.into(),
                        center,
                        SITE_BBOX_HALF_PX,
                        SITE_BBOX_HALF_PX,
                        conf,
                        Some(DetectionSource {
                            tuber_id: view.tuber_id,
                            site_index: Some(site.site_index),
                        }),
                    ));
                }
            }
            // Mud and dust mimic eyes on or near the tubers, so site false
            // positives land inside a tuber bbox.
            let fp = false_positive_count(rng, out.len(), profile.precision);
            if !frame.tubers.is_empty() {
                for _ in 0..fp {
                    let view = &frame.tubers[rng.random_range(0..frame.tubers.len())];
                    let center = PixelPoint::new(
                        rng.random_range(view.bbox.u_min..=view.bbox.u_max),
                        rng.random_range(view.bbox.v_min..=view.bbox.v_max),
                    );
                    let conf = rng.random_range(0.25..0.9);
                    out.push(Detection::from_center(
                        DetectionClass::Eye,
                        center,
                        SITE_BBOX_HALF_PX,
                        SITE_BBOX_HALF_PX,
                        conf,
                        None,
                    ));
                }
            }
        }
    }
    out
}

/// Returns the tuber detection whose centroid row lies inside the gate
/// band (closed interval). When several qualify the one with the smallest
/// `v` — furthest along the belt — wins; ties break on smallest `u`.
pub fn gate_conveyor(detections: &[Detection], gate: &GraspGate) -> Option<Detection> {
    detections
        .iter()
        .filter(|d| d.class == DetectionClass::Tuber && gate.admits(&d.centroid))
        .min_by(|a, b| {
            (a.centroid.v, a.centroid.u)
                .partial_cmp(&(b.centroid.v, b.centroid.u))
                .expect("finite centroids")
        })
        .cloned()
}

/// Keeps only the site detections whose centroids lie inside the grasped
/// tuber's bounding box (isolating its region in the image).
pub fn crop_to_tuber(detections: &[Detection], tuber_bbox: &BoundingBox) -> Vec<Detection> {
    detections
        .iter()
        .filter(|d| d.class != DetectionClass::Tuber && tuber_bbox.contains(&d.centroid))
        .cloned()
        .collect()
}

/// Selects the most reliable sampling location: the detection whose
/// centroid minimizes the Euclidean pixel distance to the tuber centroid.
/// Ties break on lowest (v, u) of the site centroid, which makes the
/// result independent of input order.
pub fn select_site(
    detections: &[Detection],
    tuber_centroid: &PixelPoint,
) -> Result<Detection, PerceptionError> {
    detections
        .iter()
        .min_by(|a, b| {
            let da = a.centroid.distance_to(tuber_centroid);
            let db = b.centroid.distance_to(tuber_centroid);
            (da, a.centroid.v, a.centroid.u)
                .partial_cmp(&(db, b.centroid.v, b.centroid.u))
                .expect("finite distances")
        })
        .cloned()
        .ok_or(PerceptionError::NoSiteDetected)
}

fn median(values: &mut [Real]) -> Real {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Localizes a site from its pixel and the depth observed at that pixel in
/// consecutive frames: the pixel is undistorted once, back-projected per
/// valid frame, and the result is the componentwise median. Frames with a
/// depth hole (`None` or non-positive) are skipped; more than four holes
/// abort the localization.
pub fn localize_site(
    pixel: PixelPoint,
    frame_depths: &[Option<Real>],
    k: &CameraIntrinsics,
) -> Result<CameraPoint, PerceptionError> {
    let undistorted = undistort_pixel(pixel, k).map_err(|_| PerceptionError::NoSiteDetected)?;
    let total = frame_depths.len();
    let mut xs = Vec::with_capacity(total);
    let mut ys = Vec::with_capacity(total);
    let mut zs = Vec::with_capacity(total);
    for depth in frame_depths.iter().flatten() {
        if let Ok(p) = back_project(undistorted, *depth, k) {
            xs.push(p.x);
            ys.push(p.y);
            zs.push(p.z);
        }
    }
    let valid = zs.len();
    if total.saturating_sub(valid) > 4 || valid == 0 {
        return Err(PerceptionError::InsufficientDepth { valid, total });
    }
    Ok(CameraPoint::new(
        median(&mut xs),
        median(&mut ys),
        median(&mut zs),
    ))
}
