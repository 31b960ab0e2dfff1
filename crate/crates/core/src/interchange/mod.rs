//! Canonical in-memory and on-disk representation of one video's perception
//! evidence.
//!
//! A [`PerceptionBundle`] always carries metadata, masks and tracks. Pointmaps,
//! intrinsics, poses and RGB frames are optional; an absent member is `None`,
//! never a zero-filled tensor, so downstream fallbacks can dispatch on it.
//!
//! On-disk layout of a bundle directory:
//!
//! ```text
//! meta.json            T, W, H, fps, category, source_model, optional vp_bg
//! masks/%06d.png       8-bit grayscale, 0 = background, nonzero = foreground
//! pointmap.bin         "PDIBPMAP", u32 LE T,H,W,3, then f32 LE row-major
//! pointmap_valid.bin   "PDIBPMAP", u32 LE T,H,W,1, then bytes 0/1
//! tracks.csv           track_id,frame,u,v,confidence
//! camera.json          fx, fy, cx, cy, optional per-frame poses
//! frames/%06d.png      optional 8-bit RGB frames
//! ```

mod io;
mod manifest;
mod tracks;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::geometry::Pose;
use crate::geometry::Pixel;

pub use io::{load_bundle, write_bundle, POINTMAP_MAGIC};
pub use manifest::{load_manifest, write_manifest, Manifest, ManifestEntry};
pub use tracks::{sanitize_tracks, DEFAULT_CONF_THRESHOLD, DEFAULT_JUMP_FRACTION};

#[derive(Debug, Error)]
pub enum InterchangeError {
    #[error("missing meta file {0}")]
    MissingMeta(String),
    #[error("dimension mismatch in {file}: {detail}")]
    DimensionMismatch { file: String, detail: String },
    #[error("corrupt tensor {file}: {detail}")]
    CorruptTensor { file: String, detail: String },
    #[error("invalid value in {file}: {detail}")]
    InvalidValue { file: String, detail: String },
    #[error("i/o error on {file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
}

impl InterchangeError {
    fn invalid(file: &str, detail: impl Into<String>) -> Self {
        Self::InvalidValue { file: file.to_string(), detail: detail.into() }
    }

    fn mismatch(file: &str, detail: impl Into<String>) -> Self {
        Self::DimensionMismatch { file: file.to_string(), detail: detail.into() }
    }
}

/// Scenario label of a video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    LongitudinalConvergence,
    DynamicTracking,
    BiologicalMotion,
    CurvedMotion,
    PartialOcclusion,
    #[default]
    Uncategorized,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::LongitudinalConvergence,
        Category::DynamicTracking,
        Category::BiologicalMotion,
        Category::CurvedMotion,
        Category::PartialOcclusion,
        Category::Uncategorized,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Category::LongitudinalConvergence => "Longitudinal Convergence",
            Category::DynamicTracking => "Dynamic Tracking",
            Category::BiologicalMotion => "Biological Motion",
            Category::CurvedMotion => "Curved Motion",
            Category::PartialOcclusion => "Partial Occlusion",
            Category::Uncategorized => "Uncategorized",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    #[serde(rename = "T")]
    pub frame_count: usize,
    #[serde(rename = "W")]
    pub width: usize,
    #[serde(rename = "H")]
    pub height: usize,
    pub fps: f64,
    #[serde(default)]
    pub category: Category,
    #[serde(default)]
    pub source_model: String,
    /// Background vanishing point, supplied by an external line detector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vp_bg: Option<Pixel>,
}

impl VideoMeta {
    pub fn validate(&self) -> Result<(), InterchangeError> {
        if self.frame_count < 2 {
            return Err(InterchangeError::invalid("meta.json", format!("T = {} < 2", self.frame_count)));
        }
        if self.width < 8 || self.height < 8 {
            return Err(InterchangeError::invalid(
                "meta.json",
                format!("image {}x{} smaller than 8x8", self.width, self.height),
            ));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(InterchangeError::invalid("meta.json", format!("fps = {} must be > 0", self.fps)));
        }
        if let Some(vp) = self.vp_bg {
            if !vp.is_finite() {
                return Err(InterchangeError::invalid("meta.json", "vp_bg is not finite"));
            }
        }
        Ok(())
    }

    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }
}

/// Binary `H x W` mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![false; width * height] }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, fg: bool) {
        self.data[row * self.width + col] = fg;
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// A mask is valid when it has at least one foreground pixel.
    pub fn is_valid(&self) -> bool {
        self.data.iter().any(|&b| b)
    }

    /// Inclusive foreground row range.
    pub fn row_extent(&self) -> Option<(usize, usize)> {
        let first = (0..self.height).find(|&r| self.data[r * self.width..(r + 1) * self.width].iter().any(|&b| b))?;
        let last = (0..self.height)
            .rev()
            .find(|&r| self.data[r * self.width..(r + 1) * self.width].iter().any(|&b| b))?;
        Some((first, last))
    }

    /// Mean foreground pixel position.
    pub fn centroid(&self) -> Option<Pixel> {
        let (mut su, mut sv, mut n) = (0.0, 0.0, 0usize);
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    su += c as f64;
                    sv += r as f64;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| Pixel::new(su / n as f64, sv / n as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSequence {
    pub masks: Vec<Mask>,
}

impl MaskSequence {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn validity(&self) -> Vec<bool> {
        self.masks.iter().map(Mask::is_valid).collect()
    }
}

/// World-space pointmaps `T x H x W x 3` plus a per-pixel validity channel.
#[derive(Debug, Clone, PartialEq)]
pub struct PointmapSequence {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub points: Vec<f32>,
    pub valid: Vec<bool>,
}

impl PointmapSequence {
    /// All-zero, all-invalid pointmaps.
    pub fn new(frames: usize, height: usize, width: usize) -> Self {
        let n = frames * height * width;
        Self { frames, height, width, points: vec![0.0; n * 3], valid: vec![false; n] }
    }

    fn index(&self, frame: usize, row: usize, col: usize) -> usize {
        (frame * self.height + row) * self.width + col
    }

    pub fn point(&self, frame: usize, row: usize, col: usize) -> [f32; 3] {
        let i = self.index(frame, row, col) * 3;
        [self.points[i], self.points[i + 1], self.points[i + 2]]
    }

    pub fn is_valid(&self, frame: usize, row: usize, col: usize) -> bool {
        self.valid[self.index(frame, row, col)]
    }

    pub fn set(&mut self, frame: usize, row: usize, col: usize, p: [f32; 3], valid: bool) {
        let i = self.index(frame, row, col);
        self.points[i * 3..i * 3 + 3].copy_from_slice(&p);
        self.valid[i] = valid;
    }

    pub fn set_valid(&mut self, frame: usize, row: usize, col: usize, valid: bool) {
        let i = self.index(frame, row, col);
        self.valid[i] = valid;
    }

    pub fn frame_points(&self, frame: usize) -> &[f32] {
        let n = self.height * self.width * 3;
        &self.points[frame * n..(frame + 1) * n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self, width: usize, height: usize) -> Result<(), InterchangeError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(InterchangeError::invalid("camera.json", "focal lengths must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < width as f64 && self.cy >= 0.0 && self.cy < height as f64) {
            return Err(InterchangeError::invalid(
                "camera.json",
                format!("principal point ({}, {}) outside the image", self.cx, self.cy),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraPoseSequence {
    pub poses: Vec<Pose>,
}

impl CameraPoseSequence {
    pub fn validate(&self) -> Result<(), InterchangeError> {
        for (t, pose) in self.poses.iter().enumerate() {
            let r: &Matrix3<f64> = &pose.rotation;
            let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
            let det = r.determinant();
            if !(ortho <= 1e-6 && (det - 1.0).abs() <= 1e-6) || !pose.translation.iter().all(|x| x.is_finite()) {
                return Err(InterchangeError::invalid(
                    "camera.json",
                    format!("pose {t} is not a proper rotation (orthogonality error {ortho:.3e}, det {det})"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub u: f64,
    pub v: f64,
    pub confidence: f64,
}

impl TrackPoint {
    pub fn pixel(&self) -> Pixel {
        Pixel::new(self.u, self.v)
    }
}

/// A point track. Confidence 0 means the tracker reports the point as not
/// observed at that frame (occluded or out of view).
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u32,
    pub points: Vec<TrackPoint>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackSet {
    pub tracks: Vec<Track>,
}

impl TrackSet {
    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }
}

/// Optional 8-bit RGB frames, interleaved row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrames {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<Vec<u8>>,
}

impl RgbFrames {
    pub fn pixel(&self, frame: usize, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        let f = &self.frames[frame];
        [f[i], f[i + 1], f[i + 2]]
    }
}

/// All evidence for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionBundle {
    pub meta: VideoMeta,
    pub masks: MaskSequence,
    pub tracks: TrackSet,
    pub pointmaps: Option<PointmapSequence>,
    pub intrinsics: Option<CameraIntrinsics>,
    pub poses: Option<CameraPoseSequence>,
    pub frames: Option<RgbFrames>,
}

impl PerceptionBundle {
    /// Checks every member invariant and mutual dimension consistency.
    pub fn validate(&self) -> Result<(), InterchangeError> {
        let meta = &self.meta;
        meta.validate()?;
        let (t, w, h) = (meta.frame_count, meta.width, meta.height);

        if self.masks.len() != t {
            return Err(InterchangeError::mismatch("masks/", format!("{} masks for T = {t}", self.masks.len())));
        }
        for (i, m) in self.masks.masks.iter().enumerate() {
            if m.width != w || m.height != h || m.data.len() != w * h {
                return Err(InterchangeError::mismatch(
                    &format!("masks/{i:06}.png"),
                    format!("mask is {}x{}, expected {w}x{h}", m.width, m.height),
                ));
            }
        }

        if let Some(pm) = &self.pointmaps {
            if pm.frames != t || pm.height != h || pm.width != w {
                return Err(InterchangeError::mismatch(
                    "pointmap.bin",
                    format!("pointmap is {}x{}x{}, expected {t}x{h}x{w}", pm.frames, pm.height, pm.width),
                ));
            }
            if pm.points.len() != t * h * w * 3 || pm.valid.len() != t * h * w {
                return Err(InterchangeError::CorruptTensor {
                    file: "pointmap.bin".into(),
                    detail: "payload length disagrees with header".into(),
                });
            }
            for (i, ok) in pm.valid.iter().enumerate() {
                if *ok && !pm.points[i * 3..i * 3 + 3].iter().all(|x| x.is_finite()) {
                    return Err(InterchangeError::CorruptTensor {
                        file: "pointmap.bin".into(),
                        detail: format!("non-finite value at valid element {i}"),
                    });
                }
            }
        }

        if let Some(k) = &self.intrinsics {
            k.validate(w, h)?;
        }
        if let Some(poses) = &self.poses {
            if poses.poses.len() != t {
                return Err(InterchangeError::mismatch(
                    "camera.json",
                    format!("{} poses for T = {t}", poses.poses.len()),
                ));
            }
            poses.validate()?;
        }

        for track in &self.tracks.tracks {
            if track.points.len() != t {
                return Err(InterchangeError::mismatch(
                    "tracks.csv",
                    format!("track {} has {} frames, expected {t}", track.id, track.points.len()),
                ));
            }
            for (f, p) in track.points.iter().enumerate() {
                if !(0.0..=1.0).contains(&p.confidence) {
                    return Err(InterchangeError::invalid(
                        "tracks.csv",
                        format!("track {} frame {f}: confidence {} outside [0, 1]", track.id, p.confidence),
                    ));
                }
                let inside = p.u >= 0.0 && p.u < w as f64 && p.v >= 0.0 && p.v < h as f64;
                if p.confidence > 0.0 && !inside {
                    return Err(InterchangeError::invalid(
                        "tracks.csv",
                        format!("track {} frame {f}: ({}, {}) outside the image", track.id, p.u, p.v),
                    ));
                }
            }
        }
        let mut ids: Vec<u32> = self.tracks.tracks.iter().map(|t| t.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|p| p[0] == p[1]) {
            return Err(InterchangeError::invalid("tracks.csv", "duplicate track ids"));
        }

        if let Some(fr) = &self.frames {
            if fr.frames.len() != t || fr.width != w || fr.height != h {
                return Err(InterchangeError::mismatch(
                    "frames/",
                    format!("{} frames of {}x{}, expected {t} of {w}x{h}", fr.frames.len(), fr.width, fr.height),
                ));
            }
            if fr.frames.iter().any(|f| f.len() != w * h * 3) {
                return Err(InterchangeError::CorruptTensor { file: "frames/".into(), detail: "bad RGB payload".into() });
            }
        }
        Ok(())
    }
}

pub(crate) fn rotation_from_row_major(r: &[f64]) -> Matrix3<f64> {
    Matrix3::from_row_slice(r)
}

pub(crate) fn rotation_to_row_major(m: &Matrix3<f64>) -> Vec<f64> {
    (0..3).flat_map(|i| (0..3).map(move |j| m[(i, j)])).collect()
}

pub(crate) fn vec3(v: &[f64]) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn tiny_bundle() -> PerceptionBundle {
        let meta = VideoMeta {
            frame_count: 3,
            width: 10,
            height: 8,
            fps: 24.0,
            category: Category::Uncategorized,
            source_model: "GT".into(),
            vp_bg: None,
        };
        let mut m = Mask::new(10, 8);
        m.set(2, 3, true);
        PerceptionBundle {
            meta,
            masks: MaskSequence { masks: vec![m.clone(), m.clone(), m] },
            tracks: TrackSet::default(),
            pointmaps: None,
            intrinsics: None,
            poses: None,
            frames: None,
        }
    }

    #[test]
    fn valid_minimal_bundle() {
        tiny_bundle().validate().unwrap();
    }

    #[test]
    fn mask_of_wrong_size_is_rejected() {
        let mut b = tiny_bundle();
        b.masks.masks[1] = Mask::new(9, 8);
        let err = b.validate().unwrap_err();
        assert!(matches!(err, InterchangeError::DimensionMismatch { ref file, .. } if file == "masks/000001.png"));
    }

    #[test]
    fn meta_invariants() {
        let mut b = tiny_bundle();
        b.meta.fps = 0.0;
        assert!(b.validate().is_err());
        let mut b = tiny_bundle();
        b.meta.frame_count = 1;
        assert!(b.validate().is_err());
    }

    #[test]
    fn improper_rotation_is_rejected() {
        let mut b = tiny_bundle();
        let mut flip = Pose::identity();
        flip.rotation[(0, 0)] = -1.0;
        b.poses = Some(CameraPoseSequence { poses: vec![Pose::identity(), flip, Pose::identity()] });
        assert!(b.validate().is_err());
    }

    #[test]
    fn mask_extent_and_centroid() {
        let mut m = Mask::new(40, 40);
        for r in 10..30 {
            m.set(r, 5, true);
        }
        assert_eq!(m.row_extent(), Some((10, 29)));
        assert_eq!(m.centroid(), Some(Pixel::new(5.0, 19.5)));
        assert!(Mask::new(4, 4).row_extent().is_none());
    }

    #[test]
    fn sample_rounds_half_away_from_zero() {
        let mut pm = PointmapSequence::new(1, 16, 16);
        pm.set(0, 11, 10, [1.0, 2.0, 3.0], true);
        let p = crate::geometry::sample_pointmap(&pm, 0, &Pixel::new(10.4, 10.6)).unwrap();
        assert_eq!(p, crate::geometry::Point3::new(1.0, 2.0, 3.0));
        let p = crate::geometry::sample_pointmap(&pm, 0, &Pixel::new(10.0, 11.0)).unwrap();
        assert_eq!(p.z, 3.0);
        assert!(crate::geometry::sample_pointmap(&pm, 0, &Pixel::new(3.0, 3.0)).is_err());
        assert!(crate::geometry::sample_pointmap(&pm, 0, &Pixel::new(15.7, 3.0)).is_err());
    }
}
