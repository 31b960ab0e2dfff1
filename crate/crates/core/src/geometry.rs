//! Pinhole projective-geometry kernel.
//!
//! Camera convention: `x` right, `y` down, `z` forward (optical axis). A pixel
//! `(u, v)` with integer coordinates sits at the centre of column `u`, row `v`.
//! Poses map world to camera: `p_cam = R * p_world + t`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interchange::{CameraIntrinsics, Mask, PointmapSequence};

pub type Point3 = nalgebra::Point3<f64>;

/// Real-valued image position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &Pixel) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("non-positive depth {0}")]
    NonPositiveDepth(f64),
    #[error("invalid pointmap sample at frame {frame}, row {row}, column {col}")]
    InvalidSample { frame: usize, row: usize, col: usize },
    #[error("direction is transverse to the optical axis; vanishing point at infinity")]
    TransverseMotion,
}

/// World-to-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn world_to_camera(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Camera centre in world coordinates, `-R^T t`.
    pub fn camera_center(&self) -> Point3 {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    /// Pose of a camera at `eye` looking at `target`, with world `-y` as up.
    pub fn look_at(eye: &Point3, target: &Point3) -> Self {
        let forward = (target - eye).normalize();
        let down_hint = Vector3::new(0.0, 1.0, 0.0);
        let mut right = down_hint.cross(&forward);
        if right.norm() < 1e-12 {
            right = Vector3::new(1.0, 0.0, 0.0);
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye.coords);
        Self { rotation, translation }
    }
}

pub fn project(p: &Point3, k: &CameraIntrinsics) -> Result<Pixel, GeometryError> {
    if !(p.z > 0.0) {
        return Err(GeometryError::NonPositiveDepth(p.z));
    }
    Ok(Pixel::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// Projected pixel height `f * H / Z` of an upright object.
pub fn projected_height(focal: f64, height: f64, depth: f64) -> Result<f64, GeometryError> {
    if !(depth > 0.0) {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    Ok(focal * height / depth)
}

/// Change of projected height when an object moves from depth `z1` to `z2`:
/// `-f H (z2 - z1) / (z1 z2)`.
///
/// Since `h = f H / Z` exactly, this is the exact difference, not a first
/// order approximation.
pub fn predict_height_delta(focal: f64, height: f64, z1: f64, z2: f64) -> Result<f64, GeometryError> {
    for z in [z1, z2] {
        if !(z > 0.0) {
            return Err(GeometryError::NonPositiveDepth(z));
        }
    }
    Ok(-focal * height * (z2 - z1) / (z1 * z2))
}

/// Horizontal pixel displacement of a point at `(x, _, z)` displaced by
/// `(dx, _, dz)`: `fx (z dx - x dz) / (z (z + dz))`.
pub fn predict_pixel_delta(fx: f64, x: f64, z: f64, dx: f64, dz: f64) -> Result<f64, GeometryError> {
    for depth in [z, z + dz] {
        if !(depth > 0.0) {
            return Err(GeometryError::NonPositiveDepth(depth));
        }
    }
    Ok(fx * (z * dx - x * dz) / (z * (z + dz)))
}

/// Integer pixel index under nearest-pixel rounding (half away from zero).
pub fn nearest_index(px: &Pixel, width: usize, height: usize) -> Option<(usize, usize)> {
    if !px.is_finite() {
        return None;
    }
    let col = px.u.round();
    let row = px.v.round();
    if col < 0.0 || row < 0.0 || col >= width as f64 || row >= height as f64 {
        return None;
    }
    Some((row as usize, col as usize))
}

/// Nearest-pixel lookup of a world point. Out-of-bounds pixels and pixels
/// flagged invalid both report `InvalidSample`.
pub fn sample_pointmap(pm: &PointmapSequence, frame: usize, px: &Pixel) -> Result<Point3, GeometryError> {
    let (row, col) = nearest_index(px, pm.width, pm.height).ok_or(GeometryError::InvalidSample {
        frame,
        row: px.v.round().max(0.0) as usize,
        col: px.u.round().max(0.0) as usize,
    })?;
    if frame >= pm.frames || !pm.is_valid(frame, row, col) {
        return Err(GeometryError::InvalidSample { frame, row, col });
    }
    let p = pm.point(frame, row, col);
    Ok(Point3::new(p[0] as f64, p[1] as f64, p[2] as f64))
}

/// Row-major `H x W` scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ScalarMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// Sobel magnitude of the Z channel.
pub type DepthGradientMap = ScalarMap;
/// Euclidean distance (pixels) from each foreground pixel to the nearest
/// background pixel.
pub type BoundaryDistanceMap = ScalarMap;

/// 3x3 Sobel gradient magnitude of the pointmap Z channel at `frame`, with
/// edge replication at the border.
pub fn depth_gradient_map(pm: &PointmapSequence, frame: usize) -> DepthGradientMap {
    let (w, h) = (pm.width, pm.height);
    let z = |r: isize, c: isize| -> f64 {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        pm.point(frame, r, c)[2] as f64
    };
    let mut data = vec![0.0; w * h];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let gx = (z(r - 1, c + 1) + 2.0 * z(r, c + 1) + z(r + 1, c + 1))
                - (z(r - 1, c - 1) + 2.0 * z(r, c - 1) + z(r + 1, c - 1));
            let gy = (z(r + 1, c - 1) + 2.0 * z(r + 1, c) + z(r + 1, c + 1))
                - (z(r - 1, c - 1) + 2.0 * z(r - 1, c) + z(r - 1, c + 1));
            data[r as usize * w + c as usize] = gx.hypot(gy);
        }
    }
    ScalarMap { width: w, height: h, data }
}

/// Exact Euclidean distance transform of the foreground. Pixels outside the
/// image count as background, so an isolated foreground pixel scores 1.
///
/// Two-pass separable lower-envelope algorithm (Felzenszwalb and
/// Huttenlocher) on a one-pixel background-padded grid.
pub fn boundary_distance_map(mask: &Mask) -> BoundaryDistanceMap {
    let (w, h) = (mask.width, mask.height);
    let (pw, ph) = (w + 2, h + 2);
    let inf = ((pw * pw + ph * ph) as f64) * 4.0;
    let mut grid = vec![inf; pw * ph];
    for r in 0..ph {
        for c in 0..pw {
            let fg = r >= 1 && r <= h && c >= 1 && c <= w && mask.get(r - 1, c - 1);
            if !fg {
                grid[r * pw + c] = 0.0;
            }
        }
    }
    let mut col_buf = vec![0.0; ph];
    let mut out_buf = vec![0.0; ph.max(pw)];
    for c in 0..pw {
        for r in 0..ph {
            col_buf[r] = grid[r * pw + c];
        }
        squared_distance_1d(&col_buf, &mut out_buf[..ph]);
        for r in 0..ph {
            grid[r * pw + c] = out_buf[r];
        }
    }
    let mut row_buf = vec![0.0; pw];
    for r in 0..ph {
        row_buf.copy_from_slice(&grid[r * pw..(r + 1) * pw]);
        squared_distance_1d(&row_buf, &mut out_buf[..pw]);
        grid[r * pw..(r + 1) * pw].copy_from_slice(&out_buf[..pw]);
    }
    let mut data = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            data[r * w + c] = grid[(r + 1) * pw + (c + 1)].sqrt();
        }
    }
    ScalarMap { width: w, height: h, data }
}

/// 1D squared distance transform of a sampled function `f`.
fn squared_distance_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                if k == 0 {
                    // Cannot happen: z[0] is -inf.
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, slot) in out.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *slot = d * d + f[v[k]];
    }
}

/// Image of the point at infinity along camera-frame direction `d`.
pub fn vanishing_point_of_direction(d: &Vector3<f64>, k: &CameraIntrinsics) -> Result<Pixel, GeometryError> {
    if !(d.z.abs() > 1e-9 * d.norm()) {
        return Err(GeometryError::TransverseMotion);
    }
    Ok(Pixel::new(k.fx * d.x / d.z + k.cx, k.fy * d.y / d.z + k.cy))
}
