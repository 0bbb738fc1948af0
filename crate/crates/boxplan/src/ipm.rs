//! Inverse perspective mapping: synthesize the canonical top view from
//! tilted camera views via the ground-plane homography, merging overlapping
//! coverage by averaging.
//!
//! The world frame is the table plane: z = 0, x right, y down (matching
//! image coordinates of the top view), z up toward the cameras. A camera is
//! given by pinhole intrinsics and a world-to-camera rigid transform.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Mask, Rgb};

#[derive(Debug, Error)]
pub enum IpmError {
    #[error("camera model invalid: {0}")]
    InvalidCamera(String),
    #[error("degenerate pose: ground plane maps to a singular homography")]
    DegeneratePose,
    #[error("no camera covers any top-view pixel")]
    NoCoverage,
    #[error("calibration parse error: {0}")]
    Parse(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Row-major 3x3 matrix, just enough linear algebra for homographies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub fn identity() -> Self {
        Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn mul(&self, other: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[i][k] * other.0[k][j]).sum();
            }
        }
        Mat3(out)
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn inverse(&self) -> Option<Mat3> {
        let d = self.det();
        if d.abs() < 1e-12 {
            return None;
        }
        let m = &self.0;
        let c = |r0: usize, r1: usize, c0: usize, c1: usize| {
            m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]
        };
        let adj = [
            [c(1, 2, 1, 2), -c(0, 2, 1, 2), c(0, 1, 1, 2)],
            [-c(1, 2, 0, 2), c(0, 2, 0, 2), -c(0, 1, 0, 2)],
            [c(1, 2, 0, 1), -c(0, 2, 0, 1), c(0, 1, 0, 1)],
        ];
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = adj[i][j] / d;
            }
        }
        Some(Mat3(out))
    }

    /// Apply to a 2D point in homogeneous form; None when the point maps to
    /// infinity.
    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let m = &self.0;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        if w.abs() < 1e-12 {
            return None;
        }
        Some((
            (m[0][0] * x + m[0][1] * y + m[0][2]) / w,
            (m[1][0] * x + m[1][1] * y + m[1][2]) / w,
        ))
    }
}

/// Pinhole camera with a rigid world-to-camera transform: Xc = R * Xw + t.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), IpmError> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(IpmError::InvalidCamera("focal lengths must be positive".into()));
        }
        // R^T R = I within 1e-9.
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-9 {
                    return Err(IpmError::InvalidCamera(format!(
                        "rotation not orthonormal (entry {i}{j} off by {})",
                        (dot - expect).abs()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Camera looking at `look_at` from `position`, with the world +x axis
    /// used to resolve roll. Both in world (table) coordinates, z up.
    pub fn look_at(
        position: [f64; 3],
        look_at: [f64; 3],
        fx: f64,
        fy: f64,
        width: u32,
        height: u32,
    ) -> CameraModel {
        let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        let norm = |v: [f64; 3]| {
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            [v[0] / n, v[1] / n, v[2] / n]
        };
        let cross = |a: [f64; 3], b: [f64; 3]| {
            [
                a[1] * b[2] - a[2] * b[1],
                a[2] * b[0] - a[0] * b[2],
                a[0] * b[1] - a[1] * b[0],
            ]
        };
        // Camera z looks forward; world -z is "up" toward the cameras in
        // this y-down frame, so use it to stabilize the camera x axis.
        let forward = norm(sub(look_at, position));
        let up_hint = if forward[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let right = norm(cross(up_hint, forward));
        let down = cross(forward, right);
        let rotation = [
            [right[0], right[1], right[2]],
            [down[0], down[1], down[2]],
            [forward[0], forward[1], forward[2]],
        ];
        // t = -R * C
        let translation = [
            -(rotation[0][0] * position[0] + rotation[0][1] * position[1] + rotation[0][2] * position[2]),
            -(rotation[1][0] * position[0] + rotation[1][1] * position[1] + rotation[1][2] * position[2]),
            -(rotation[2][0] * position[0] + rotation[2][1] * position[1] + rotation[2][2] * position[2]),
        ];
        CameraModel {
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rotation,
            translation,
            width,
            height,
        }
    }
}

/// Top-view window: centered on the world origin, x right, y down.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TopViewSpec {
    pub meters_per_pixel: f64,
    pub width: u32,
    pub height: u32,
}

impl TopViewSpec {
    /// World coordinates of a top-view pixel center.
    pub fn world_of(&self, u: f64, v: f64) -> (f64, f64) {
        (
            (u - self.width as f64 / 2.0) * self.meters_per_pixel,
            (v - self.height as f64 / 2.0) * self.meters_per_pixel,
        )
    }
}

/// Homography mapping top-view pixels to source-image pixels through the
/// ground plane: H = K [r1 r2 t] S, with S the top-view pixel-to-world map.
pub fn ground_homography(cam: &CameraModel, spec: &TopViewSpec) -> Result<Mat3, IpmError> {
    cam.validate()?;
    let k = Mat3([[cam.fx, 0.0, cam.cx], [0.0, cam.fy, cam.cy], [0.0, 0.0, 1.0]]);
    let r = &cam.rotation;
    let rt = Mat3([
        [r[0][0], r[0][1], cam.translation[0]],
        [r[1][0], r[1][1], cam.translation[1]],
        [r[2][0], r[2][1], cam.translation[2]],
    ]);
    let m = spec.meters_per_pixel;
    let s = Mat3([
        [m, 0.0, -m * spec.width as f64 / 2.0],
        [0.0, m, -m * spec.height as f64 / 2.0],
        [0.0, 0.0, 1.0],
    ]);
    let h = k.mul(&rt).mul(&s);
    if h.det().abs() < 1e-12 {
        return Err(IpmError::DegeneratePose);
    }
    Ok(h)
}

/// Warp every camera image onto the ground plane and average overlapping
/// coverage. Pixels outside all source images stay invalid in the coverage
/// mask rather than being filled black. The per-pixel sample lists are
/// sorted before summation so merging is independent of the camera order.
pub fn remap_and_merge(
    views: &[(Rgb, CameraModel)],
    spec: &TopViewSpec,
) -> Result<(Rgb, Mask), IpmError> {
    if views.is_empty() {
        return Err(IpmError::NoCoverage);
    }
    let mut homographies = Vec::new();
    for (_, cam) in views {
        homographies.push(ground_homography(cam, spec)?);
    }
    let mut out = Rgb::new(spec.width, spec.height, [0, 0, 0]);
    let mut coverage = Mask::new(spec.width, spec.height);
    let mut covered_any = false;
    for v in 0..spec.height {
        for u in 0..spec.width {
            let mut samples: Vec<[f64; 3]> = Vec::new();
            for ((image, cam), h) in views.iter().zip(&homographies) {
                let Some((sx, sy)) = h.apply(u as f64 + 0.5, v as f64 + 0.5) else { continue };
                // Behind the camera: the homogeneous depth must be positive.
                let w = h.0[2][0] * (u as f64 + 0.5) + h.0[2][1] * (v as f64 + 0.5) + h.0[2][2];
                if w <= 0.0 {
                    continue;
                }
                if sx < 0.5 || sy < 0.5 || sx > cam.width as f64 - 0.5 || sy > cam.height as f64 - 0.5
                {
                    continue;
                }
                let px = image.sample_bilinear(sx, sy);
                samples.push([px[0] as f64, px[1] as f64, px[2] as f64]);
            }
            if samples.is_empty() {
                continue;
            }
            covered_any = true;
            coverage.set(u, v, true);
            let mut acc = [0.0f64; 3];
            for c in 0..3 {
                let mut vals: Vec<f64> = samples.iter().map(|s| s[c]).collect();
                vals.sort_by(f64::total_cmp);
                acc[c] = vals.iter().sum::<f64>() / vals.len() as f64;
            }
            out.set(u, v, [
                acc[0].round().clamp(0.0, 255.0) as u8,
                acc[1].round().clamp(0.0, 255.0) as u8,
                acc[2].round().clamp(0.0, 255.0) as u8,
            ]);
        }
    }
    if !covered_any {
        return Err(IpmError::NoCoverage);
    }
    Ok((out, coverage))
}

/// Calibration file: a top-view spec plus one or more camera blocks with
/// image paths.
#[derive(Serialize, Deserialize)]
pub struct CalibrationFile {
    pub topview: TopViewSpec,
    pub camera: Vec<CameraEntry>,
}

#[derive(Serialize, Deserialize)]
pub struct CameraEntry {
    pub image: String,
    #[serde(flatten)]
    pub model: CameraModel,
}

pub fn load_calibration(path: &Path) -> Result<CalibrationFile, IpmError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| IpmError::Io { path: path.to_path_buf(), source })?;
    toml::from_str(&text).map_err(|e| IpmError::Parse(e.to_string()))
}

/// Render what a camera sees of a ground-plane image: the inverse warp used
/// to synthesize test views and demo inputs.
pub fn render_plane_view(plane: &Rgb, spec: &TopViewSpec, cam: &CameraModel) -> Result<Rgb, IpmError> {
    let h = ground_homography(cam, spec)?;
    let inv = h.inverse().ok_or(IpmError::DegeneratePose)?;
    let mut out = Rgb::new(cam.width, cam.height, [0, 0, 0]);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let Some((u, v)) = inv.apply(x as f64 + 0.5, y as f64 + 0.5) else { continue };
            if u < 0.0 || v < 0.0 || u >= spec.width as f64 || v >= spec.height as f64 {
                continue;
            }
            // The forward map must actually see this plane point.
            let w = h.0[2][0] * u + h.0[2][1] * v + h.0[2][2];
            if w <= 0.0 {
                continue;
            }
            out.set(x, y, plane.sample_bilinear(u, v));
        }
    }
    Ok(out)
}
