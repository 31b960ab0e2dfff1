//! Synthetic pinhole scenes with exact perception evidence.
//!
//! A rigid object (axis-aligned box or point cloud) moves through a static
//! world of a textured ground plane and back wall while a camera follows a
//! static, linear or orbit path. Every frame is ray-cast at pixel centres;
//! anchors are a grid on one box face (or the cloud points) and are splatted
//! into the pointmap with their exact world coordinates.
//!
//! Violations alter the per-frame object state before rendering, so an
//! injected bundle is a re-render of the same scene.

mod render;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pixel, Point3, Pose};
use crate::interchange::{CameraIntrinsics, Category};

pub use render::{render_bundle, write_scene, RenderedScene, Sidecar, SidecarFrame};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    SpecInvalid(String),
    #[error("object footprint below 4x4 px at frame {0}")]
    ObjectOutOfView(usize),
    #[error("incompatible violation: {0}")]
    IncompatibleViolation(String),
}

fn invalid(msg: impl Into<String>) -> SynthError {
    SynthError::SpecInvalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Face {
    #[serde(rename = "-x")]
    NegX,
    #[serde(rename = "+x")]
    PosX,
    #[serde(rename = "-y")]
    NegY,
    #[serde(rename = "+y")]
    PosY,
    #[serde(rename = "-z")]
    NegZ,
    #[serde(rename = "+z")]
    PosZ,
}

impl Face {
    /// `(normal axis, sign)`.
    fn axis(self) -> (usize, f64) {
        match self {
            Face::NegX => (0, -1.0),
            Face::PosX => (0, 1.0),
            Face::NegY => (1, -1.0),
            Face::PosY => (1, 1.0),
            Face::NegZ => (2, -1.0),
            Face::PosZ => (2, 1.0),
        }
    }

    pub fn normal(self) -> Vector3<f64> {
        let (axis, sign) = self.axis();
        let mut n = Vector3::zeros();
        n[axis] = sign;
        n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ObjectShape {
    /// Full extents along x, y, z (world units).
    Box { size: [f64; 3] },
    /// Points relative to the object position; they are also the anchors.
    PointCloud { points: Vec<[f64; 3]> },
}

/// Which object pixels carry valid pointmap samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceMode {
    /// Only anchor splat pixels are valid; the world centroid is then the
    /// anchor centroid under every camera.
    #[default]
    Anchors,
    /// Every object pixel is valid.
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorSpec {
    /// Anchors per side of the square grid.
    pub grid: usize,
    /// Fraction of the face the grid spans.
    pub extent: f64,
    pub face: Face,
}

impl Default for AnchorSpec {
    fn default() -> Self {
        Self { grid: 9, extent: 0.8, face: Face::NegZ }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    #[serde(flatten)]
    pub shape: ObjectShape,
    /// Object centre at frame 0.
    pub position: [f64; 3],
    #[serde(default)]
    pub anchors: AnchorSpec,
    #[serde(default)]
    pub surface: SurfaceMode,
    #[serde(default = "default_object_color")]
    pub color: [u8; 3],
}

fn default_object_color() -> [u8; 3] {
    [200, 60, 40]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionSegment {
    ConstantVelocity {
        frames: usize,
    },
    /// Velocity rotates about `axis` at `angular_velocity` rad/s.
    CircularArc {
        frames: usize,
        angular_velocity: f64,
        #[serde(default = "default_arc_axis")]
        axis: [f64; 3],
    },
    /// At rest for `frames`, then the previous velocity resumes.
    Stop {
        frames: usize,
    },
    /// Instantaneous displacement, kept afterwards.
    Teleport {
        offset: [f64; 3],
    },
    /// Instantaneous velocity negation.
    Reversal,
}

fn default_arc_axis() -> [f64; 3] {
    [0.0, -1.0, 0.0]
}

/// Piecewise object motion; after the last segment the current velocity
/// continues unchanged.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MotionSpec {
    /// World units per second.
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default)]
    pub segments: Vec<MotionSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CameraPath {
    Static {
        #[serde(default)]
        eye: [f64; 3],
        #[serde(default = "default_target")]
        target: [f64; 3],
    },
    /// Eye and target translate together.
    Linear {
        #[serde(default)]
        eye: [f64; 3],
        #[serde(default = "default_target")]
        target: [f64; 3],
        velocity: [f64; 3],
    },
    /// Circles `center` in the horizontal plane at `height` (world Y), always
    /// looking at `center`.
    Orbit {
        center: [f64; 3],
        radius: f64,
        #[serde(default)]
        height: f64,
        /// Angle from the -Z direction, degrees.
        #[serde(default)]
        start_deg: f64,
        /// Degrees per second.
        rate_deg: f64,
    },
}

fn default_target() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

impl Default for CameraPath {
    fn default() -> Self {
        CameraPath::Static { eye: [0.0; 3], target: default_target() }
    }
}

impl CameraPath {
    pub fn pose_at(&self, time: f64) -> Pose {
        let p = |a: [f64; 3]| Point3::new(a[0], a[1], a[2]);
        match self {
            CameraPath::Static { eye, target } => Pose::look_at(&p(*eye), &p(*target)),
            CameraPath::Linear { eye, target, velocity } => {
                let d = Vector3::from(*velocity) * time;
                Pose::look_at(&(p(*eye) + d), &(p(*target) + d))
            }
            CameraPath::Orbit { center, radius, height, start_deg, rate_deg } => {
                let a = (start_deg + rate_deg * time).to_radians();
                let c = p(*center);
                let eye = Point3::new(c.x + radius * a.sin(), *height, c.z - radius * a.cos());
                Pose::look_at(&eye, &c)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    /// World Y of the ground plane (Y points down).
    pub ground_y: f64,
    /// World Z of the back wall.
    pub wall_z: f64,
    /// Period of the soft checker texture (world units).
    pub period: f64,
    /// Texture amplitude in 8-bit intensity.
    pub amplitude: f64,
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        Self { ground_y: 1.5, wall_z: 30.0, period: 1.0, amplitude: 60.0 }
    }
}

/// Static axis-aligned slab in front of the object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccluderSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
    /// `[start, end)` frames during which the slab exists; always if absent.
    #[serde(default)]
    pub frames: Option<[usize; 2]>,
}

impl OccluderSpec {
    pub fn active(&self, t: usize) -> bool {
        self.frames.map_or(true, |[s, e]| (s..e).contains(&t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationSpec {
    /// Geometry scaled by `1 + amplitude * sin(2 pi t / period)` about the centre.
    VolumeBreathing { amplitude: f64, period: f64 },
    /// Displacement by `offset` from `frame` onward.
    Teleport { frame: usize, offset: [f64; 3] },
    /// Remaining path mirrored about the position at `frame`.
    Reversal { frame: usize },
    /// A seeded `fraction` of anchors moves along the anchor-face normal by
    /// `amplitude * object size`, with sign alternating each frame; frame 0
    /// is unperturbed.
    Jello { fraction: f64, amplitude: f64 },
    /// From `from` (until `to`, exclusive) the geometry is rescaled so the
    /// anchor face keeps its projected size while its depth keeps changing.
    ScaleFreeze {
        from: usize,
        #[serde(default)]
        to: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub frames: usize,
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    /// Defaults to `f = width` and the image centre.
    #[serde(default)]
    pub intrinsics: Option<CameraIntrinsics>,
    pub object: ObjectSpec,
    #[serde(default)]
    pub motion: MotionSpec,
    #[serde(default)]
    pub camera: CameraPath,
    #[serde(default)]
    pub background: BackgroundSpec,
    #[serde(default)]
    pub occluder: Option<OccluderSpec>,
    #[serde(default)]
    pub violations: Vec<ViolationSpec>,
    #[serde(default)]
    pub category: Category,
    #[serde(default = "default_source_model")]
    pub source_model: String,
    /// Optional scene VP passed through to the bundle meta.
    #[serde(default)]
    pub vp_bg: Option<Pixel>,
}

fn default_source_model() -> String {
    "synthetic".to_string()
}

impl SyntheticSceneSpec {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        self.intrinsics.unwrap_or(CameraIntrinsics {
            fx: self.width as f64,
            fy: self.width as f64,
            cx: (self.width as f64 - 1.0) / 2.0,
            cy: (self.height as f64 - 1.0) / 2.0,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        serde_json::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    /// Structural checks that do not need the motion to be evaluated.
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.frames < 2 {
            return Err(invalid(format!("need at least 2 frames, got {}", self.frames)));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(invalid(format!("fps must be positive, got {}", self.fps)));
        }
        if self.width < 8 || self.height < 8 {
            return Err(invalid(format!("image {}x{} too small", self.width, self.height)));
        }
        self.intrinsics().validate(self.width, self.height).map_err(|e| invalid(e.to_string()))?;
        match &self.object.shape {
            ObjectShape::Box { size } => {
                if size.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                    return Err(invalid(format!("box size must be positive, got {size:?}")));
                }
                let a = &self.object.anchors;
                if a.grid < 2 || !(a.extent > 0.0 && a.extent <= 1.0) {
                    return Err(invalid("anchor grid needs >= 2 points per side and extent in (0, 1]"));
                }
            }
            ObjectShape::PointCloud { points } => {
                if points.len() < 3 {
                    return Err(invalid("point cloud needs at least 3 points"));
                }
            }
        }
        for seg in &self.motion.segments {
            if let MotionSegment::CircularArc { axis, .. } = seg {
                if Vector3::from(*axis).norm() < 1e-12 {
                    return Err(invalid("circular arc axis must be non-zero"));
                }
            }
        }
        if let CameraPath::Orbit { radius, .. } = &self.camera {
            if !(*radius > 0.0) {
                return Err(invalid("orbit radius must be positive"));
            }
        }
        let bg = &self.background;
        if !(bg.period > 0.0) || !(0.0..=127.0).contains(&bg.amplitude) {
            return Err(invalid("background period must be positive and amplitude in [0, 127]"));
        }
        for v in &self.violations {
            check_violation(self, v)?;
        }
        Ok(())
    }
}

fn check_violation(spec: &SyntheticSceneSpec, v: &ViolationSpec) -> Result<(), SynthError> {
    let bad = |m: String| Err(SynthError::IncompatibleViolation(m));
    let t = spec.frames;
    match *v {
        ViolationSpec::VolumeBreathing { amplitude, period } => {
            if !(0.0..1.0).contains(&amplitude) || !(period > 0.0) {
                return bad(format!("volume_breathing needs amplitude in [0, 1) and period > 0, got {amplitude}, {period}"));
            }
        }
        ViolationSpec::Teleport { frame, offset } => {
            if frame >= t || offset.iter().any(|x| !x.is_finite()) {
                return bad(format!("teleport frame {frame} outside [0, {t})"));
            }
        }
        ViolationSpec::Reversal { frame } => {
            if frame >= t {
                return bad(format!("reversal frame {frame} outside [0, {t})"));
            }
        }
        ViolationSpec::Jello { fraction, amplitude } => {
            if !(0.0..=1.0).contains(&fraction) || !(amplitude >= 0.0) {
                return bad(format!("jello needs fraction in [0, 1] and amplitude >= 0, got {fraction}, {amplitude}"));
            }
        }
        ViolationSpec::ScaleFreeze { from, to } => {
            if from >= t || to.is_some_and(|e| e <= from || e > t) {
                return bad(format!("scale_freeze range {from}..{to:?} outside [0, {t})"));
            }
        }
    }
    Ok(())
}

/// Adds `v` to a copy of `spec` after checking it against the scene.
pub fn with_violation(spec: &SyntheticSceneSpec, v: ViolationSpec) -> Result<SyntheticSceneSpec, SynthError> {
    check_violation(spec, &v)?;
    let mut out = spec.clone();
    out.violations.push(v);
    Ok(out)
}

/// Re-renders a scene with one more violation.
pub fn inject_violation(scene: &RenderedScene, v: &ViolationSpec) -> Result<RenderedScene, SynthError> {
    render_bundle(&with_violation(&scene.spec, v.clone())?, scene.seed)
}

/// Object state of one frame.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ObjectState {
    pub center: Point3,
    pub scale: f64,
    /// World positions of all anchors.
    pub anchors: Vec<Point3>,
}

/// Unit-scale anchor offsets from the object centre.
pub(crate) fn anchor_offsets(object: &ObjectSpec) -> Vec<Vector3<f64>> {
    match &object.shape {
        ObjectShape::PointCloud { points } => points.iter().map(|p| Vector3::from(*p)).collect(),
        ObjectShape::Box { size } => {
            let a = &object.anchors;
            let (axis, sign) = a.face.axis();
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            let n = a.grid;
            let mut out = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    let mut o = Vector3::zeros();
                    o[axis] = sign * size[axis] / 2.0;
                    o[u] = (i as f64 / (n - 1) as f64 - 0.5) * a.extent * size[u];
                    o[v] = (j as f64 / (n - 1) as f64 - 0.5) * a.extent * size[v];
                    out.push(o);
                }
            }
            out
        }
    }
}

pub(crate) fn object_size(object: &ObjectSpec) -> f64 {
    match &object.shape {
        ObjectShape::Box { size } => size.iter().cloned().fold(0.0, f64::max),
        ObjectShape::PointCloud { points } => {
            let mut span: f64 = 0.0;
            for a in points {
                for b in points {
                    span = span.max((Vector3::from(*a) - Vector3::from(*b)).norm());
                }
            }
            span
        }
    }
}

/// `integral_0^tau R(w s) ds` for rotation about unit `axis` (Rodrigues).
fn rotation_integral(axis: &Vector3<f64>, w: f64, tau: f64) -> Matrix3<f64> {
    let k = axis.cross_matrix();
    if w.abs() < 1e-12 {
        return Matrix3::identity() * tau;
    }
    let th = w * tau;
    Matrix3::identity() * tau + k * ((1.0 - th.cos()) / w) + k * k * (tau - th.sin() / w)
}

fn rotation(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = axis.cross_matrix();
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

/// Object centre per frame from the motion profile alone.
pub(crate) fn motion_path(spec: &SyntheticSceneSpec) -> Vec<Point3> {
    let dt = 1.0 / spec.fps;
    let mut pos = Point3::from(spec.object.position);
    let mut vel = Vector3::from(spec.motion.velocity);
    let mut out = vec![pos];
    let mut segments = spec.motion.segments.iter();
    // Steps of the active segment remaining, with its kind.
    let mut active: Option<(&MotionSegment, usize)> = None;
    let mut resume: Option<Vector3<f64>> = None;
    while out.len() < spec.frames {
        if active.map_or(true, |(_, left)| left == 0) {
            if let Some(v) = resume.take() {
                vel = v;
            }
            active = None;
            for seg in segments.by_ref() {
                match seg {
                    MotionSegment::Teleport { offset } => pos += Vector3::from(*offset),
                    MotionSegment::Reversal => vel = -vel,
                    MotionSegment::ConstantVelocity { frames }
                    | MotionSegment::CircularArc { frames, .. }
                    | MotionSegment::Stop { frames } => {
                        if *frames > 0 {
                            if matches!(seg, MotionSegment::Stop { .. }) {
                                resume = Some(vel);
                            }
                            active = Some((seg, *frames));
                            break;
                        }
                    }
                }
            }
        }
        match active {
            Some((MotionSegment::CircularArc { angular_velocity, axis, .. }, _)) => {
                let axis = Vector3::from(*axis).normalize();
                pos += rotation_integral(&axis, *angular_velocity, dt) * vel;
                vel = rotation(&axis, angular_velocity * dt) * vel;
            }
            Some((MotionSegment::Stop { .. }, _)) => {}
            _ => pos += vel * dt,
        }
        if let Some((_, left)) = active.as_mut() {
            *left -= 1;
        }
        out.push(pos);
    }
    out
}

/// Per-frame object states with all violations applied, plus the poses.
pub(crate) fn object_states(spec: &SyntheticSceneSpec, seed: u64) -> (Vec<ObjectState>, Vec<Pose>) {
    let n = spec.frames;
    let poses: Vec<Pose> = (0..n).map(|t| spec.camera.pose_at(t as f64 / spec.fps)).collect();
    let mut centers = motion_path(spec);
    let mut scales = vec![1.0; n];
    let offsets = anchor_offsets(&spec.object);
    let mut jello: Vec<Vector3<f64>> = vec![Vector3::zeros(); offsets.len()];
    let normal = match spec.object.shape {
        ObjectShape::Box { .. } => spec.object.anchors.face.normal(),
        ObjectShape::PointCloud { .. } => Vector3::new(0.0, 0.0, -1.0),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x006a_656c_6c6f);
    let mut freeze: Option<(usize, usize)> = None;
    for v in &spec.violations {
        match *v {
            ViolationSpec::VolumeBreathing { amplitude, period } => {
                for (t, s) in scales.iter_mut().enumerate() {
                    *s *= 1.0 + amplitude * (2.0 * std::f64::consts::PI * t as f64 / period).sin();
                }
            }
            ViolationSpec::Teleport { frame, offset } => {
                for c in &mut centers[frame..] {
                    *c += Vector3::from(offset);
                }
            }
            ViolationSpec::Reversal { frame } => {
                let pivot = centers[frame];
                for c in &mut centers[frame..] {
                    *c = pivot - (*c - pivot);
                }
            }
            ViolationSpec::Jello { fraction, amplitude } => {
                let count = (fraction * offsets.len() as f64).round() as usize;
                let mut idx: Vec<usize> = (0..offsets.len()).collect();
                for i in 0..count.min(idx.len()) {
                    let j = rng.random_range(i..idx.len());
                    idx.swap(i, j);
                }
                let step = normal * amplitude * object_size(&spec.object);
                for &i in &idx[..count.min(idx.len())] {
                    jello[i] += step;
                }
            }
            ViolationSpec::ScaleFreeze { from, to } => freeze = Some((from, to.unwrap_or(n))),
        }
    }
    if let Some((from, to)) = freeze {
        let mean_offset = offsets.iter().sum::<Vector3<f64>>() / offsets.len() as f64;
        let depth = |t: usize, s: f64| poses[t].world_to_camera(&(centers[t] + mean_offset * s)).z;
        let q = scales[from] / depth(from, scales[from]);
        for t in from..to {
            let zc = poses[t].world_to_camera(&centers[t]).z;
            let a = (poses[t].rotation * mean_offset).z;
            scales[t] = q * zc / (1.0 - q * a);
        }
    }
    let states = (0..n)
        .map(|t| {
            let sign = if t == 0 { 0.0 } else if t % 2 == 1 { 1.0 } else { -1.0 };
            let anchors =
                offsets.iter().zip(&jello).map(|(o, j)| centers[t] + o * scales[t] + j * sign).collect();
            ObjectState { center: centers[t], scale: scales[t], anchors }
        })
        .collect();
    (states, poses)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn base_spec() -> SyntheticSceneSpec {
        SyntheticSceneSpec::from_json(
            r#"{
                "frames": 12, "fps": 24, "width": 128, "height": 96,
                "object": {"shape": "box", "size": [1.25, 1.25, 0.125], "position": [0, 0, 4]},
                "motion": {"velocity": [0.75, 0, 0]}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_and_parse() {
        let s = base_spec();
        assert_eq!(s.object.anchors, AnchorSpec::default());
        assert_eq!(s.camera, CameraPath::default());
        assert_eq!(s.intrinsics(), CameraIntrinsics { fx: 128.0, fy: 128.0, cx: 63.5, cy: 47.5 });
        s.validate().unwrap();
        assert!(SyntheticSceneSpec::from_json(r#"{"frames": 3}"#).is_err());
    }

    #[test]
    fn static_camera_is_identity() {
        assert_eq!(CameraPath::default().pose_at(3.0), Pose::identity());
    }

    #[test]
    fn orbit_keeps_center_in_view() {
        let c = CameraPath::Orbit { center: [0.0, 0.0, 5.0], radius: 5.0, height: 0.0, start_deg: 0.0, rate_deg: 30.0 };
        for t in 0..10 {
            let pose = c.pose_at(t as f64 * 0.1);
            let p = pose.world_to_camera(&Point3::new(0.0, 0.0, 5.0));
            assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12 && (p.z - 5.0).abs() < 1e-12);
        }
        assert!((c.pose_at(0.0).camera_center() - Point3::origin()).norm() < 1e-12);
    }

    #[test]
    fn motion_segments() {
        let mut s = base_spec();
        s.frames = 9;
        s.motion.segments = vec![
            MotionSegment::ConstantVelocity { frames: 2 },
            MotionSegment::Stop { frames: 2 },
            MotionSegment::Teleport { offset: [0.0, 1.0, 0.0] },
            MotionSegment::Reversal,
            MotionSegment::ConstantVelocity { frames: 1 },
        ];
        let p = motion_path(&s);
        let x: Vec<f64> = p.iter().map(|c| c.x * 32.0).collect();
        // 0.75 / 24 = 1/32 per frame.
        assert_eq!(x, vec![0.0, 1.0, 2.0, 2.0, 2.0, 1.0, 0.0, -1.0, -2.0]);
        assert_eq!(p[4].y, 0.0);
        assert_eq!(p[5].y, 1.0);
    }

    #[test]
    fn circular_arc_stays_on_circle() {
        let mut s = base_spec();
        s.frames = 40;
        s.motion = MotionSpec {
            velocity: [1.0, 0.0, 0.0],
            segments: vec![MotionSegment::CircularArc { frames: 39, angular_velocity: 2.0, axis: [0.0, -1.0, 0.0] }],
        };
        let p = motion_path(&s);
        // Speed 1, rate 2 -> radius 0.5.
        let center = {
            let a = p[0].coords;
            let b = p[10].coords;
            let c = p[20].coords;
            // Circumcentre in the XZ plane.
            let (ax, az, bx, bz, cx, cz) = (a.x, a.z, b.x, b.z, c.x, c.z);
            let d = 2.0 * (ax * (bz - cz) + bx * (cz - az) + cx * (az - bz));
            let ux = ((ax * ax + az * az) * (bz - cz) + (bx * bx + bz * bz) * (cz - az) + (cx * cx + cz * cz) * (az - bz)) / d;
            let uz = ((ax * ax + az * az) * (cx - bx) + (bx * bx + bz * bz) * (ax - cx) + (cx * cx + cz * cz) * (bx - ax)) / d;
            (ux, uz)
        };
        for c in &p {
            assert!(((c.x - center.0).hypot(c.z - center.1) - 0.5).abs() < 1e-9);
            assert_eq!(c.y, 0.0);
        }
    }

    #[test]
    fn violation_states() {
        let s = base_spec();
        let (base, _) = object_states(&s, 1);
        let zero = with_violation(&s, ViolationSpec::VolumeBreathing { amplitude: 0.0, period: 8.0 }).unwrap();
        assert_eq!(object_states(&zero, 1).0, base);

        let tele = with_violation(&s, ViolationSpec::Teleport { frame: 5, offset: [0.0, 0.5, 0.0] }).unwrap();
        let (st, _) = object_states(&tele, 1);
        assert_eq!(st[4].center, base[4].center);
        assert_eq!(st[5].center.y, 0.5);
        assert_eq!(st[11].center.y, 0.5);

        let rev = with_violation(&s, ViolationSpec::Reversal { frame: 6 }).unwrap();
        let (st, _) = object_states(&rev, 1);
        assert_eq!(st[7].center, base[5].center);

        let jello = with_violation(&s, ViolationSpec::Jello { fraction: 0.5, amplitude: 0.1 }).unwrap();
        let (st, _) = object_states(&jello, 1);
        assert_eq!(st[0].anchors, base[0].anchors);
        let moved = st[1].anchors.iter().zip(&base[1].anchors).filter(|(a, b)| a != b).count();
        assert_eq!(moved, 41);

        assert!(matches!(
            with_violation(&s, ViolationSpec::Teleport { frame: 12, offset: [0.0; 3] }),
            Err(SynthError::IncompatibleViolation(_))
        ));
        assert!(with_violation(&s, ViolationSpec::ScaleFreeze { from: 3, to: Some(3) }).is_err());
    }

    #[test]
    fn scale_freeze_keeps_face_projection() {
        let mut s = base_spec();
        s.motion.velocity = [0.0, 0.0, 2.4];
        let frozen = with_violation(&s, ViolationSpec::ScaleFreeze { from: 2, to: None }).unwrap();
        let (st, poses) = object_states(&frozen, 0);
        let face_depth = |t: usize| {
            let c = st[t].anchors.iter().map(|p| p.coords).sum::<Vector3<f64>>() / st[t].anchors.len() as f64;
            poses[t].world_to_camera(&Point3::from(c)).z
        };
        let r0 = st[2].scale / face_depth(2);
        for t in 2..12 {
            assert!((st[t].scale / face_depth(t) - r0).abs() < 1e-12);
        }
        assert_eq!(st[1].scale, 1.0);
    }
}
