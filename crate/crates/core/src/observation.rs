//! Per-frame audited quantities of the single subject: pixel height `h_t`,
//! median camera depth `Z_t` and the robust world-space centroid `C_t`.

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::Point3;
use crate::interchange::PerceptionBundle;
use crate::stats;

pub const DEFAULT_MIN_FG_POINTS: usize = 25;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ObservationError {
    #[error("no frame has at least {0} valid foreground points")]
    NoValidFrames(usize),
}

/// Per-frame observations; all vectors have one entry per frame.
///
/// `depths` and `centroids` are `None` when the bundle has no pointmaps.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectObservationSeries {
    pub heights: Vec<f64>,
    pub depths: Option<Vec<f64>>,
    pub centroids: Option<Vec<Point3>>,
    /// Frame had enough evidence on its own.
    pub valid: Vec<bool>,
    /// Values were carried over from the nearest earlier valid frame (or the
    /// first valid frame, for leading gaps).
    pub inherited: Vec<bool>,
}

impl ObjectObservationSeries {
    pub fn len(&self) -> usize {
        self.heights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heights.is_empty()
    }

    pub fn has_3d(&self) -> bool {
        self.depths.is_some() && self.centroids.is_some()
    }
}

struct FrameEvidence {
    height: Option<f64>,
    depth: Option<f64>,
    centroid: Option<Point3>,
    valid: bool,
}

fn frame_evidence(bundle: &PerceptionBundle, t: usize, min_fg_points: usize) -> FrameEvidence {
    let mask = &bundle.masks.masks[t];
    let height = mask.row_extent().map(|(lo, hi)| (hi - lo + 1) as f64);
    let Some(pm) = &bundle.pointmaps else {
        let valid = height.is_some() && mask.foreground_count() >= min_fg_points;
        return FrameEvidence { height, depth: None, centroid: None, valid };
    };
    let pose = bundle.poses.as_ref().map(|p| p.poses[t]);
    let (mut xs, mut ys, mut zs, mut depths) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for row in 0..mask.height {
        for col in 0..mask.width {
            if !mask.get(row, col) || !pm.is_valid(t, row, col) {
                continue;
            }
            let p = pm.point(t, row, col);
            let world = Point3::new(p[0] as f64, p[1] as f64, p[2] as f64);
            xs.push(world.x);
            ys.push(world.y);
            zs.push(world.z);
            depths.push(match &pose {
                Some(pose) => pose.world_to_camera(&world).z,
                None => world.z,
            });
        }
    }
    if xs.len() < min_fg_points || height.is_none() {
        return FrameEvidence { height, depth: None, centroid: None, valid: false };
    }
    let centroid = Point3::new(
        stats::median(&xs).expect("non-empty"),
        stats::median(&ys).expect("non-empty"),
        stats::median(&zs).expect("non-empty"),
    );
    let depth = stats::median(&depths).expect("non-empty");
    let valid = depth > 0.0 && depth.is_finite();
    FrameEvidence { height, depth: Some(depth), centroid: Some(centroid), valid }
}

/// Derives `h_t`, `Z_t` and `C_t` for every frame.
///
/// `Z_t` is the median optical-axis depth of the masked valid points after
/// transforming them with the frame's pose, or their world Z when the bundle
/// has no poses. Frames with fewer than `min_fg_points` valid foreground
/// points inherit the previous valid frame.
pub fn extract_observations(
    bundle: &PerceptionBundle,
    min_fg_points: usize,
) -> Result<ObjectObservationSeries, ObservationError> {
    let n = bundle.meta.frame_count;
    let evidence: Vec<FrameEvidence> =
        (0..n).into_par_iter().map(|t| frame_evidence(bundle, t, min_fg_points)).collect();
    let first_valid = evidence.iter().position(|e| e.valid).ok_or(ObservationError::NoValidFrames(min_fg_points))?;

    let has_3d = bundle.pointmaps.is_some();
    let mut heights = Vec::with_capacity(n);
    let mut depths = Vec::with_capacity(n);
    let mut centroids = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    let mut inherited = Vec::with_capacity(n);
    let mut last = first_valid;
    for (t, e) in evidence.iter().enumerate() {
        if e.valid {
            last = t;
        }
        let src = &evidence[last];
        heights.push(src.height.expect("valid frames have a height"));
        if has_3d {
            depths.push(src.depth.expect("valid 3D frames have depth"));
            centroids.push(src.centroid.expect("valid 3D frames have a centroid"));
        }
        valid.push(e.valid);
        inherited.push(!e.valid);
    }
    Ok(ObjectObservationSeries {
        heights,
        depths: has_3d.then_some(depths),
        centroids: has_3d.then_some(centroids),
        valid,
        inherited,
    })
}

/// Per-coordinate running median of the centroids with an odd window `k`.
///
/// Near the sequence ends the window shrinks symmetrically (radius
/// `min(k/2, t, T-1-t)`), so linear trajectories pass through unchanged.
/// Heights and depths are untouched.
pub fn smooth_centroids(series: &ObjectObservationSeries, k: usize) -> ObjectObservationSeries {
    assert!(k % 2 == 1, "median window must be odd, got {k}");
    let mut out = series.clone();
    let Some(cs) = &series.centroids else {
        return out;
    };
    let n = cs.len();
    let half = k / 2;
    let smoothed = (0..n)
        .map(|t| {
            let r = half.min(t).min(n - 1 - t);
            let window = &cs[t - r..=t + r];
            let coord = |f: fn(&Point3) -> f64| stats::median(&window.iter().map(f).collect::<Vec<_>>()).expect("non-empty");
            Point3::new(coord(|p| p.x), coord(|p| p.y), coord(|p| p.z))
        })
        .collect();
    out.centroids = Some(smoothed);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interchange::{Category, Mask, MaskSequence, PointmapSequence, TrackSet, VideoMeta};

    fn bundle_with(masks: Vec<Mask>, pm: Option<PointmapSequence>) -> PerceptionBundle {
        let (w, h) = (masks[0].width, masks[0].height);
        PerceptionBundle {
            meta: VideoMeta {
                frame_count: masks.len(),
                width: w,
                height: h,
                fps: 24.0,
                category: Category::Uncategorized,
                source_model: "GT".into(),
                vp_bg: None,
            },
            masks: MaskSequence { masks },
            tracks: TrackSet::default(),
            pointmaps: pm,
            intrinsics: None,
            poses: None,
            frames: None,
        }
    }

    fn column_mask(rows: std::ops::Range<usize>) -> Mask {
        let mut m = Mask::new(8, 40);
        for r in rows {
            m.set(r, 2, true);
        }
        m
    }

    #[test]
    fn height_is_row_extent() {
        let b = bundle_with(vec![column_mask(10..30), column_mask(10..30)], None);
        let obs = extract_observations(&b, 1).unwrap();
        assert_eq!(obs.heights, vec![20.0, 20.0]);
        assert!(!obs.has_3d());
    }

    #[test]
    fn depth_is_median_of_masked_points() {
        let mut m = Mask::new(8, 8);
        let mut pm = PointmapSequence::new(2, 8, 8);
        for (i, z) in [9.0, 10.0, 11.0, 10.0, 12.0].iter().enumerate() {
            m.set(1, i, true);
            pm.set(0, 1, i, [i as f32, 0.0, *z], true);
            pm.set(1, 1, i, [i as f32, 0.0, *z], true);
        }
        // Unmasked valid point must not count.
        pm.set(0, 5, 5, [0.0, 0.0, 100.0], true);
        let b = bundle_with(vec![m.clone(), m], Some(pm));
        let obs = extract_observations(&b, 5).unwrap();
        assert_eq!(obs.depths.as_ref().unwrap()[0], 10.0);
        assert_eq!(obs.centroids.as_ref().unwrap()[0], Point3::new(2.0, 0.0, 10.0));
    }

    #[test]
    fn empty_frames_inherit() {
        let b = bundle_with(vec![Mask::new(8, 40), column_mask(5..15), Mask::new(8, 40), column_mask(0..30)], None);
        let obs = extract_observations(&b, 1).unwrap();
        assert_eq!(obs.heights, vec![10.0, 10.0, 10.0, 30.0]);
        assert_eq!(obs.inherited, vec![true, false, true, false]);
        assert!(obs.heights.iter().all(|h| h.is_finite()));
    }

    #[test]
    fn no_valid_frames() {
        let b = bundle_with(vec![Mask::new(8, 40), Mask::new(8, 40)], None);
        assert_eq!(extract_observations(&b, 1), Err(ObservationError::NoValidFrames(1)));
    }

    fn series(cs: Vec<Point3>) -> ObjectObservationSeries {
        let n = cs.len();
        ObjectObservationSeries {
            heights: vec![1.0; n],
            depths: Some(vec![1.0; n]),
            centroids: Some(cs),
            valid: vec![true; n],
            inherited: vec![false; n],
        }
    }

    #[test]
    fn smoothing_examples() {
        let line: Vec<Point3> = (0..7).map(|t| Point3::new(t as f64, 2.0 * t as f64, -1.0)).collect();
        assert_eq!(smooth_centroids(&series(line.clone()), 1), series(line.clone()));
        assert_eq!(smooth_centroids(&series(line.clone()), 3), series(line.clone()));
        let constant = vec![Point3::new(1.0, 2.0, 3.0); 5];
        assert_eq!(smooth_centroids(&series(constant.clone()), 3), series(constant));

        let mut spiked = line.clone();
        spiked[3].x += 10.0;
        let out = smooth_centroids(&series(spiked), 3).centroids.unwrap();
        // Hand-computed windows: {2, 13, 4} -> 4, {1, 2, 13} -> 2, {13, 4, 5} -> 5.
        assert_eq!(out[3], Point3::new(4.0, 6.0, -1.0));
        assert_eq!(out[2].x, 2.0);
        assert_eq!(out[4].x, 5.0);
        assert!(out.iter().all(|p| p.x <= 6.0));
    }
}
