//! Camera-frame normalization and camera-to-display projection.
//!
//! Camera pixels are normalized against the recorded swimming-region
//! corners. Display positions come from a 2×3 affine map fitted by least
//! squares to reference spots seen by the camera.

use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Vec2;

/// Pixel pair in either camera or display space.
pub type Pixel = [f64; 2];

/// Normal-equation matrices with a larger condition number are refused.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("degenerate camera region: corners share a coordinate")]
    DegenerateRegion,
    #[error("calibration needs at least 3 point pairs, got {0}")]
    TooFewPoints(usize),
    #[error("calibration sets differ in length: {display} display spots vs {camera} camera points")]
    LengthMismatch { display: usize, camera: usize },
    #[error("calibration degenerate: camera points are collinear or repeated (condition number {0:.3e})")]
    Degenerate(f64),
    #[error("calibration file: {0}")]
    File(String),
}

/// Swimming-region corners in camera pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRegion {
    pub top_left: Pixel,
    pub bottom_right: Pixel,
}

impl CameraRegion {
    pub fn new(top_left: Pixel, bottom_right: Pixel) -> Result<Self, CalibError> {
        let r = CameraRegion {
            top_left,
            bottom_right,
        };
        r.check()?;
        Ok(r)
    }

    fn check(&self) -> Result<(), CalibError> {
        let du = self.bottom_right[0] - self.top_left[0];
        let dv = self.bottom_right[1] - self.top_left[1];
        if du == 0.0 || dv == 0.0 || !du.is_finite() || !dv.is_finite() {
            Err(CalibError::DegenerateRegion)
        } else {
            Ok(())
        }
    }
}

/// Map a camera pixel into the normalized arena frame. No clamping: a
/// detection outside the region lands outside the unit square.
pub fn normalize_camera_point(point: Pixel, region: &CameraRegion) -> Result<Vec2, CalibError> {
    region.check()?;
    let [u0, v0] = region.top_left;
    let [u1, v1] = region.bottom_right;
    Ok(Vec2::new(
        (point[0] - u0) / (u1 - u0),
        (point[1] - v0) / (v1 - v0),
    ))
}

/// Inverse of [`normalize_camera_point`].
pub fn denormalize_camera_point(pos: Vec2, region: &CameraRegion) -> Pixel {
    let [u0, v0] = region.top_left;
    let [u1, v1] = region.bottom_right;
    [pos.x * (u1 - u0) + u0, pos.y * (v1 - v0) + v0]
}

/// Row-major 2×3 affine map acting on homogeneous camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub a: [[f64; 3]; 2],
}

impl AffineMap {
    pub const IDENTITY: AffineMap = AffineMap {
        a: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
    };

    pub fn apply(&self, p: Pixel) -> Pixel {
        apply_affine(self, p)
    }
}

pub fn apply_affine(map: &AffineMap, p: Pixel) -> Pixel {
    let [r0, r1] = map.a;
    [
        r0[0] * p[0] + r0[1] * p[1] + r0[2],
        r1[0] * p[0] + r1[1] * p[1] + r1[2],
    ]
}

/// Paired reference spots: display pixels and where the camera saw them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub display_spots: Vec<Pixel>,
    pub camera_points: Vec<Pixel>,
}

/// Least-squares fit of `display ≈ A · (u, v, 1)ᵀ`, solved through the
/// normal equations `A = S Fᵀ (F Fᵀ)⁻¹`.
pub fn fit_affine(calib: &CalibrationSet) -> Result<AffineMap, CalibError> {
    let n = calib.camera_points.len();
    if calib.display_spots.len() != n {
        return Err(CalibError::LengthMismatch {
            display: calib.display_spots.len(),
            camera: n,
        });
    }
    if n < 3 {
        return Err(CalibError::TooFewPoints(n));
    }

    let mut fft = Matrix3::<f64>::zeros();
    let mut sft = nalgebra::Matrix2x3::<f64>::zeros();
    for (cam, disp) in calib.camera_points.iter().zip(&calib.display_spots) {
        let f = nalgebra::Vector3::new(cam[0], cam[1], 1.0);
        let s = nalgebra::Vector2::new(disp[0], disp[1]);
        fft += f * f.transpose();
        sft += s * f.transpose();
    }

    let eig = SymmetricEigen::new(fft);
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(CalibError::Degenerate(cond));
    }
    let inv = fft.try_inverse().ok_or(CalibError::Degenerate(cond))?;
    let a = sft * inv;
    Ok(AffineMap {
        a: [
            [a[(0, 0)], a[(0, 1)], a[(0, 2)]],
            [a[(1, 0)], a[(1, 1)], a[(1, 2)]],
        ],
    })
}

/// Sum of squared display-space residuals of `map` over `calib`.
pub fn residual_sum_sq(map: &AffineMap, calib: &CalibrationSet) -> f64 {
    calib
        .camera_points
        .iter()
        .zip(&calib.display_spots)
        .map(|(c, d)| {
            let p = apply_affine(map, *c);
            (p[0] - d[0]).powi(2) + (p[1] - d[1]).powi(2)
        })
        .sum()
}

/// Project a normalized agent position to display pixels given the display
/// positions of the two region corners.
pub fn virtual_to_display(pos: Vec2, d0: Pixel, d1: Pixel) -> Pixel {
    [
        pos.x * (d1[0] - d0[0]) + d0[0],
        pos.y * (d1[1] - d0[1]) + d0[1],
    ]
}

/// On-disk calibration input: point pairs plus an optional region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<CameraRegion>,
    pub pairs: Vec<CalibrationPair>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationPair {
    pub display: Pixel,
    pub camera: Pixel,
}

impl CalibrationFile {
    pub fn read(path: &Path) -> Result<Self, CalibError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CalibError::File(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CalibError::File(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<(), CalibError> {
        let text = toml::to_string(self).map_err(|e| CalibError::File(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| CalibError::File(format!("{}: {e}", path.display())))
    }

    pub fn to_set(&self) -> CalibrationSet {
        CalibrationSet {
            display_spots: self.pairs.iter().map(|p| p.display).collect(),
            camera_points: self.pairs.iter().map(|p| p.camera).collect(),
        }
    }
}

/// Fitted map plus, when a region was supplied, the display corners used by
/// [`virtual_to_display`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub affine: AffineMap,
    pub residual_sum_sq: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub display_corners: Option<[Pixel; 2]>,
}

pub fn calibrate(file: &CalibrationFile) -> Result<CalibrationResult, CalibError> {
    let set = file.to_set();
    let affine = fit_affine(&set)?;
    let display_corners = match &file.region {
        Some(r) => {
            r.check()?;
            Some([affine.apply(r.top_left), affine.apply(r.bottom_right)])
        }
        None => None,
    };
    Ok(CalibrationResult {
        residual_sum_sq: residual_sum_sq(&affine, &set),
        affine,
        display_corners,
    })
}
