use std::f64::consts::TAU;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{object_states, CameraPath, ObjectShape, ObjectState, SurfaceMode, SynthError, SyntheticSceneSpec};
use crate::geometry::{nearest_index, project, vanishing_point_of_direction, Pixel, Point3, Pose};
use crate::interchange::{
    write_bundle, CameraIntrinsics, CameraPoseSequence, InterchangeError, Mask, MaskSequence, PerceptionBundle,
    PointmapSequence, RgbFrames, Track, TrackPoint, TrackSet, VideoMeta,
};

const MIN_DEPTH: f64 = 0.1;
const MIN_FOOTPRINT: f64 = 4.0;
const HIT_EPS: f64 = 1e-9;

/// Analytic per-frame quantities of the unoccluded object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarFrame {
    /// Vertical extent (px) of the projected geometry; absent when part of
    /// it is behind the camera.
    pub height: Option<f64>,
    /// Camera depth of `centroid`.
    pub depth: f64,
    /// Mean of all anchor world points.
    pub centroid: [f64; 3],
    pub centroid_pixel: Option<Pixel>,
    pub object_center: [f64; 3],
    pub scale: f64,
    pub visible_anchors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub seed: u64,
    pub anchors: usize,
    /// Vanishing point of the initial object velocity (static cameras only).
    pub motion_vp: Option<Pixel>,
    pub frames: Vec<SidecarFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedScene {
    pub spec: SyntheticSceneSpec,
    pub seed: u64,
    pub bundle: PerceptionBundle,
    pub sidecar: Sidecar,
}

/// Deterministic texture parameters.
struct Palette {
    phase: [f64; 4],
    ground: [f64; 3],
    wall: [f64; 3],
    occluder: [f64; 3],
}

impl Palette {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut base = |lo: f64| -> [f64; 3] { std::array::from_fn(|_| lo + rng.random_range(0.0..40.0)) };
        let ground = base(90.0);
        let wall = base(120.0);
        let occluder = base(60.0);
        let phase = std::array::from_fn(|_| rng.random_range(0.0..TAU));
        Self { phase, ground, wall, occluder }
    }
}

#[derive(Clone, Copy)]
enum Surface {
    Object { axis: usize },
    Occluder,
    Ground,
    Wall,
}

struct Hit {
    t: f64,
    point: Point3,
    surface: Surface,
}

/// Slab test; the hit coordinate on the entry axis is snapped onto the face.
fn ray_box(o: &Point3, d: &Vector3<f64>, min: &Point3, max: &Point3) -> Option<(f64, Point3, usize)> {
    let (mut t_in, mut t_out, mut axis, mut face) = (f64::NEG_INFINITY, f64::INFINITY, 0, 0.0);
    for i in 0..3 {
        if d[i].abs() < 1e-300 {
            if o[i] < min[i] || o[i] > max[i] {
                return None;
            }
            continue;
        }
        let (a, b) = ((min[i] - o[i]) / d[i], (max[i] - o[i]) / d[i]);
        let (near, near_face) = if a < b { (a, min[i]) } else { (b, max[i]) };
        if near > t_in {
            t_in = near;
            axis = i;
            face = near_face;
        }
        t_out = t_out.min(a.max(b));
    }
    if t_in > t_out || t_in <= HIT_EPS {
        return None;
    }
    let mut p = o + d * t_in;
    p[axis] = face;
    Some((t_in, p, axis))
}

fn nearest(a: Option<Hit>, b: Option<Hit>) -> Option<Hit> {
    match (a, b) {
        (Some(a), Some(b)) => Some(if b.t < a.t { b } else { a }),
        (a, b) => a.or(b),
    }
}

struct Frame<'a> {
    spec: &'a SyntheticSceneSpec,
    k: CameraIntrinsics,
    pose: Pose,
    state: &'a ObjectState,
    t: usize,
    palette: &'a Palette,
}

impl Frame<'_> {
    fn ray(&self, u: f64, v: f64) -> (Point3, Vector3<f64>) {
        let dir_cam = Vector3::new((u - self.k.cx) / self.k.fx, (v - self.k.cy) / self.k.fy, 1.0);
        (self.pose.camera_center(), self.pose.rotation.transpose() * dir_cam)
    }

    fn object_box(&self) -> Option<(Point3, Point3)> {
        match &self.spec.object.shape {
            ObjectShape::Box { size } => {
                let half = Vector3::from(*size) * (self.state.scale / 2.0);
                Some((self.state.center - half, self.state.center + half))
            }
            ObjectShape::PointCloud { .. } => None,
        }
    }

    fn occluder(&self) -> Option<(Point3, Point3)> {
        self.spec.occluder.filter(|o| o.active(self.t)).map(|o| (Point3::from(o.min), Point3::from(o.max)))
    }

    /// Nearest static surface: occluder, ground or wall.
    fn scene_hit(&self, o: &Point3, d: &Vector3<f64>) -> Option<Hit> {
        let bg = &self.spec.background;
        let occ = self.occluder().and_then(|(lo, hi)| ray_box(o, d, &lo, &hi)).map(|(t, point, _)| Hit {
            t,
            point,
            surface: Surface::Occluder,
        });
        let plane = |axis: usize, value: f64, surface: Surface| {
            if d[axis].abs() < 1e-300 {
                return None;
            }
            let t = (value - o[axis]) / d[axis];
            (t > HIT_EPS).then(|| {
                let mut point = o + d * t;
                point[axis] = value;
                Hit { t, point, surface }
            })
        };
        nearest(nearest(occ, plane(1, bg.ground_y, Surface::Ground)), plane(2, bg.wall_z, Surface::Wall))
    }

    fn texture(&self, a: f64, b: f64, pa: usize, pb: usize) -> f64 {
        let bg = &self.spec.background;
        bg.amplitude * (TAU * a / bg.period + self.palette.phase[pa]).sin() * (TAU * b / bg.period + self.palette.phase[pb]).sin()
    }

    fn shade(&self, hit: &Hit) -> [u8; 3] {
        let p = &hit.point;
        let (base, f): ([f64; 3], f64) = match hit.surface {
            Surface::Object { axis } => {
                let k = [0.8, 0.6, 1.0][axis];
                let c = self.spec.object.color;
                return [c[0], c[1], c[2]].map(|x| (x as f64 * k).round() as u8);
            }
            Surface::Ground => (self.palette.ground, self.texture(p.x, p.z, 0, 1)),
            Surface::Wall => (self.palette.wall, self.texture(p.x, p.y, 2, 3)),
            Surface::Occluder => (self.palette.occluder, self.texture(p.x, p.y, 0, 3)),
        };
        base.map(|b| (b + f).round().clamp(0.0, 255.0) as u8)
    }
}

struct FrameOutput {
    mask: Mask,
    points: Vec<f32>,
    valid: Vec<bool>,
    rgb: Vec<u8>,
    tracks: Vec<TrackPoint>,
    visible: usize,
}

/// Andrew monotone chain; counter-clockwise in image coordinates.
fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn inside_hull(hull: &[(f64, f64)], p: (f64, f64)) -> bool {
    if hull.len() < 3 {
        return false;
    }
    (0..hull.len()).all(|i| {
        let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
        (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0) >= 0.0
    })
}

fn render_frame(f: &Frame) -> FrameOutput {
    let (w, h) = (f.spec.width, f.spec.height);
    let mut mask = Mask::new(w, h);
    let mut points = vec![0f32; w * h * 3];
    let mut valid = vec![false; w * h];
    let mut rgb = vec![0u8; w * h * 3];
    let dense = f.spec.object.surface == SurfaceMode::Dense;
    let object_box = f.object_box();

    // Point clouds: projected hull with the nearest anchor standing in for
    // the surface.
    let cloud: Vec<(Pixel, Point3, f64)> = match object_box {
        Some(_) => Vec::new(),
        None => f
            .state
            .anchors
            .iter()
            .filter_map(|a| {
                let cam = f.pose.world_to_camera(a);
                project(&cam, &f.k).ok().map(|px| (px, *a, cam.z))
            })
            .collect(),
    };
    let hull = convex_hull(cloud.iter().map(|(px, _, _)| (px.u, px.v)).collect());

    for r in 0..h {
        for c in 0..w {
            let (o, d) = f.ray(c as f64, r as f64);
            let background = f.scene_hit(&o, &d);
            let object = match object_box {
                Some((lo, hi)) => ray_box(&o, &d, &lo, &hi).map(|(t, point, axis)| Hit {
                    t,
                    point,
                    surface: Surface::Object { axis },
                }),
                None if inside_hull(&hull, (c as f64, r as f64)) => cloud
                    .iter()
                    .min_by(|a, b| {
                        let da = (a.0.u - c as f64).hypot(a.0.v - r as f64);
                        let db = (b.0.u - c as f64).hypot(b.0.v - r as f64);
                        da.total_cmp(&db)
                    })
                    .map(|(_, p, z)| Hit { t: *z, point: *p, surface: Surface::Object { axis: 2 } }),
                None => None,
            };
            let idx = r * w + c;
            let is_object = matches!((&object, &background), (Some(o), Some(b)) if o.t < b.t) || (object.is_some() && background.is_none());
            let hit = if is_object { object } else { background };
            let Some(hit) = hit else { continue };
            mask.set(r, c, is_object);
            let p = [hit.point.x as f32, hit.point.y as f32, hit.point.z as f32];
            points[idx * 3..idx * 3 + 3].copy_from_slice(&p);
            valid[idx] = !is_object || dense;
            rgb[idx * 3..idx * 3 + 3].copy_from_slice(&f.shade(&hit));
        }
    }

    let cam_center = f.pose.camera_center();
    let normal = match &f.spec.object.shape {
        ObjectShape::Box { .. } => Some(f.spec.object.anchors.face.normal()),
        ObjectShape::PointCloud { .. } => None,
    };
    let mut visible = 0;
    let tracks = f
        .state
        .anchors
        .iter()
        .map(|a| {
            let cam = f.pose.world_to_camera(a);
            let px = project(&cam, &f.k).ok();
            let in_frame = px.is_some_and(|p| p.u >= 0.0 && p.v >= 0.0 && p.u < w as f64 - 0.5 && p.v < h as f64 - 0.5);
            let facing = normal.map_or(true, |n| n.dot(&(cam_center - a)) > 0.0);
            let occluded = f.occluder().is_some_and(|(lo, hi)| {
                ray_box(&cam_center, &(a - cam_center), &lo, &hi).is_some_and(|(t, _, _)| t < 1.0 - 1e-9)
            });
            let cell = px.and_then(|p| nearest_index(&p, w, h));
            let on_mask = cell.is_some_and(|(r, c)| mask.get(r, c));
            match (px, cell) {
                (Some(p), Some((r, c))) if in_frame && facing && !occluded && on_mask => {
                    let idx = r * w + c;
                    points[idx * 3..idx * 3 + 3].copy_from_slice(&[a.x as f32, a.y as f32, a.z as f32]);
                    valid[idx] = true;
                    visible += 1;
                    TrackPoint { u: p.u, v: p.v, confidence: 1.0 }
                }
                _ => {
                    let (u, v) = px.filter(|p| p.is_finite()).map_or((0.0, 0.0), |p| (p.u, p.v));
                    TrackPoint { u: u.clamp(0.0, w as f64 - 1.0), v: v.clamp(0.0, h as f64 - 1.0), confidence: 0.0 }
                }
            }
        })
        .collect();
    FrameOutput { mask, points, valid, rgb, tracks, visible }
}

/// Corners of the box or the cloud points, in world coordinates.
fn geometry_points(spec: &SyntheticSceneSpec, state: &ObjectState) -> Vec<Point3> {
    match &spec.object.shape {
        ObjectShape::Box { size } => {
            let half = Vector3::from(*size) * (state.scale / 2.0);
            (0..8)
                .map(|i| {
                    let s = Vector3::new(
                        if i & 1 == 0 { -1.0 } else { 1.0 },
                        if i & 2 == 0 { -1.0 } else { 1.0 },
                        if i & 4 == 0 { -1.0 } else { 1.0 },
                    );
                    state.center + half.component_mul(&s)
                })
                .collect()
        }
        ObjectShape::PointCloud { .. } => state.anchors.clone(),
    }
}

pub fn render_bundle(spec: &SyntheticSceneSpec, seed: u64) -> Result<RenderedScene, SynthError> {
    spec.validate()?;
    let k = spec.intrinsics();
    let (states, poses) = object_states(spec, seed);
    let (w, h) = (spec.width as f64, spec.height as f64);

    let mut in_front = 0;
    let mut heights = Vec::with_capacity(spec.frames);
    for (t, (state, pose)) in states.iter().zip(&poses).enumerate() {
        let cam: Vec<Point3> = geometry_points(spec, state).iter().map(|p| pose.world_to_camera(p)).collect();
        if cam.iter().any(|p| p.z <= MIN_DEPTH) {
            heights.push(None);
            continue;
        }
        in_front += 1;
        let px: Vec<Pixel> = cam.iter().map(|p| project(p, &k).expect("positive depth")).collect();
        let (umin, umax) = px.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.u), b.max(p.u)));
        let (vmin, vmax) = px.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.v), b.max(p.v)));
        let clipped_w = umax.min(w - 0.5) - umin.max(-0.5);
        let clipped_h = vmax.min(h - 0.5) - vmin.max(-0.5);
        if clipped_w < MIN_FOOTPRINT || clipped_h < MIN_FOOTPRINT {
            return Err(SynthError::ObjectOutOfView(t));
        }
        heights.push(Some(vmax - vmin));
    }
    if (in_front as f64) < 0.9 * spec.frames as f64 {
        return Err(SynthError::SpecInvalid(format!(
            "object is in front of the camera in only {in_front} of {} frames",
            spec.frames
        )));
    }

    let palette = Palette::new(seed);
    let outputs: Vec<FrameOutput> = (0..spec.frames)
        .into_par_iter()
        .map(|t| render_frame(&Frame { spec, k, pose: poses[t], state: &states[t], t, palette: &palette }))
        .collect();

    let mut pm = PointmapSequence::new(spec.frames, spec.height, spec.width);
    let per = spec.width * spec.height;
    let mut masks = Vec::with_capacity(spec.frames);
    let mut rgb = Vec::with_capacity(spec.frames);
    let anchors = states[0].anchors.len();
    let mut tracks: Vec<Track> = (0..anchors).map(|i| Track { id: i as u32, points: Vec::with_capacity(spec.frames) }).collect();
    let mut frames = Vec::with_capacity(spec.frames);
    for (t, out) in outputs.into_iter().enumerate() {
        pm.points[t * per * 3..(t + 1) * per * 3].copy_from_slice(&out.points);
        pm.valid[t * per..(t + 1) * per].copy_from_slice(&out.valid);
        for (track, p) in tracks.iter_mut().zip(out.tracks) {
            track.points.push(p);
        }
        let state = &states[t];
        let centroid = Point3::from(state.anchors.iter().map(|a| a.coords).sum::<Vector3<f64>>() / anchors as f64);
        let cam = poses[t].world_to_camera(&centroid);
        frames.push(SidecarFrame {
            height: heights[t],
            depth: cam.z,
            centroid: centroid.coords.into(),
            centroid_pixel: project(&cam, &k).ok(),
            object_center: state.center.coords.into(),
            scale: state.scale,
            visible_anchors: out.visible,
        });
        masks.push(out.mask);
        rgb.push(out.rgb);
    }

    let motion_vp = match spec.camera {
        CameraPath::Static { .. } => {
            let d = poses[0].rotation * Vector3::from(spec.motion.velocity);
            vanishing_point_of_direction(&d, &k).ok()
        }
        _ => None,
    };
    let bundle = PerceptionBundle {
        meta: VideoMeta {
            frame_count: spec.frames,
            width: spec.width,
            height: spec.height,
            fps: spec.fps,
            category: spec.category,
            source_model: spec.source_model.clone(),
            vp_bg: spec.vp_bg,
        },
        masks: MaskSequence { masks },
        tracks: TrackSet { tracks },
        pointmaps: Some(pm),
        intrinsics: Some(k),
        poses: Some(CameraPoseSequence { poses }),
        frames: Some(RgbFrames { width: spec.width, height: spec.height, frames: rgb }),
    };
    Ok(RenderedScene {
        spec: spec.clone(),
        seed,
        bundle,
        sidecar: Sidecar { seed, anchors, motion_vp, frames },
    })
}

/// Writes the bundle plus `sidecar.json` and the effective `scene.json`.
pub fn write_scene(scene: &RenderedScene, dir: &Path) -> Result<(), InterchangeError> {
    write_bundle(&scene.bundle, dir)?;
    let write_json = |name: &str, text: String| {
        let path = dir.join(name);
        std::fs::write(&path, text + "\n").map_err(|source| InterchangeError::Io { file: path.display().to_string(), source })
    };
    write_json("sidecar.json", serde_json::to_string_pretty(&scene.sidecar).expect("sidecar serializes"))?;
    write_json("scene.json", serde_json::to_string_pretty(&scene.spec).expect("scene serializes"))
}
