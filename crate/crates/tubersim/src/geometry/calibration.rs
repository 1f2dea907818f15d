//! Calibration-file I/O.
//!
//! Intrinsics and the camera-to-effector transform load from a small TOML
//! file with the keys below. All values are `f64`; `t_ce` holds the 16
//! row-major entries of the homogeneous 4x4 matrix.
//!
//! ```toml
//! fx = 610.0
//! fy = 610.0
//! cx = 320.0
//! cy = 240.0
//! k1 = 0.0
//! k2 = 0.0
//! k3 = 0.0
//! p1 = 0.0
//! p2 = 0.0
//! width = 640
//! height = 480
//! t_ce = [0.0003, 0.9998, 0.0, -51.447,
//!         -0.9998, 0.0003, 0.0, 18.095,
//!         0.0, 0.0, 1.0, 179.142,
//!         0.0, 0.0, 0.0, 1.0]
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CameraIntrinsics, GeometryError, RigidTransform};

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("cannot read calibration file")]
    Io(#[from] std::io::Error),
    #[error("calibration file malformed")]
    Parse(#[from] toml::de::Error),
    #[error("intrinsics invalid: focal lengths must be positive and the optical center inside the image")]
    InvalidIntrinsics,
    #[error("t_ce invalid: {0}")]
    InvalidTransform(GeometryError),
}

/// On-disk calibration record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub p1: f64,
    pub p2: f64,
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default = "default_height")]
    pub height: u32,
    /// Homogeneous camera-to-effector matrix, 16 row-major values.
    pub t_ce: Vec<f64>,
}

fn default_width() -> u32 {
    640
}

fn default_height() -> u32 {
    480
}

impl CalibrationFile {
    pub fn from_parts(k: &CameraIntrinsics<f64>, t: &RigidTransform<f64>) -> Self {
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            k1: k.k1,
            k2: k.k2,
            k3: k.k3,
            p1: k.p1,
            p2: k.p2,
            width: k.width,
            height: k.height,
            t_ce: t.to_row_major().to_vec(),
        }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics<f64>, CalibrationError> {
        let k = CameraIntrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            k1: self.k1,
            k2: self.k2,
            k3: self.k3,
            p1: self.p1,
            p2: self.p2,
            width: self.width,
            height: self.height,
        };
        if !k.is_valid() {
            return Err(CalibrationError::InvalidIntrinsics);
        }
        Ok(k)
    }

    pub fn hand_eye(&self) -> Result<RigidTransform<f64>, CalibrationError> {
        if self.t_ce.len() != 16 {
            return Err(CalibrationError::InvalidTransform(
                GeometryError::InvalidRotation {
                    det: f64::NAN,
                    residual: f64::NAN,
                },
            ));
        }
        let mut m = [0.0; 16];
        m.copy_from_slice(&self.t_ce);
        let t = RigidTransform::from_row_major(&m);
        t.validate().map_err(CalibrationError::InvalidTransform)?;
        Ok(t)
    }
}

/// Loads intrinsics plus the hand-eye transform from a calibration file.
pub fn load_calibration(
    path: &Path,
) -> Result<(CameraIntrinsics<f64>, RigidTransform<f64>), CalibrationError> {
    let text = fs::read_to_string(path)?;
    let file: CalibrationFile = toml::from_str(&text)?;
    Ok((file.intrinsics()?, file.hand_eye()?))
}

/// Writes a calibration file.
pub fn save_calibration(
    path: &Path,
    k: &CameraIntrinsics<f64>,
    t: &RigidTransform<f64>,
) -> Result<(), CalibrationError> {
    let file = CalibrationFile::from_parts(k, t);
    let text = toml::to_string(&file).expect("calibration serializes");
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cal.toml");
        let k = CameraIntrinsics::default_synthetic();
        let t = RigidTransform::default_hand_eye();
        save_calibration(&path, &k, &t).unwrap();
        let (k2, t2) = load_calibration(&path).unwrap();
        assert_eq!(k, k2);
        assert_eq!(t, t2);
    }

    #[test]
    fn rejects_bad_rotation_block() {
        let mut file = CalibrationFile::from_parts(
            &CameraIntrinsics::default_synthetic(),
            &RigidTransform::identity(),
        );
        file.t_ce[0] = 2.0;
        assert!(matches!(
            file.hand_eye(),
            Err(CalibrationError::InvalidTransform(_))
        ));
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = "fx = 610.0\nfy = 610.0\ncx = 320.0\ncy = 240.0\nk1 = 0.0\nk2 = 0.0\nk3 = 0.0\np1 = 0.0\np2 = 0.0\nt_ce = []\nbogus = 1\n";
        assert!(toml::from_str::<CalibrationFile>(text).is_err());
    }

    #[test]
    fn rejects_wrong_matrix_length() {
        let mut file = CalibrationFile::from_parts(
            &CameraIntrinsics::default_synthetic(),
            &RigidTransform::identity(),
        );
        file.t_ce.pop();
        assert!(file.hand_eye().is_err());
    }
}
