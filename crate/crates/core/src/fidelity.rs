//! Cross-frame reprojection audit of the 3D reconstruction.
//!
//! Frame A's valid world points are moved into frame B's camera, projected
//! and splatted as single pixels carrying frame A's colour (nearest depth
//! wins). The render is compared against frame B's RGB over covered pixels.
//! The tracked subject moves independently of the scene, so foreground
//! pixels are neither splatted from A nor scored in B.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{nearest_index, project, Point3, Pose};
use crate::interchange::{CameraIntrinsics, Mask, PerceptionBundle, PointmapSequence, RgbFrames};

pub const DEFAULT_PAIR_COUNT: usize = 8;
pub const MIN_GAP: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FidelityError {
    #[error("missing evidence: {0}")]
    MissingEvidence(&'static str),
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuardThresholds {
    pub cov_min: f64,
    pub mae_max: f64,
    pub l2_max: f64,
}

impl Default for GuardThresholds {
    fn default() -> Self {
        Self { cov_min: 0.60, mae_max: 12.0 / 255.0, l2_max: 25.0 / 255.0 }
    }
}

/// Photometric agreement of one frame pair. Intensities are in `[0, 1]`.
///
/// Each pair is rendered in both directions; the stored numbers are the worse
/// of the two (lower coverage, higher errors), so `pass` follows from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReprojectionAudit {
    pub frame_a: usize,
    pub frame_b: usize,
    pub coverage: f64,
    pub mae: f64,
    pub l2: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardReport {
    pub audits: Vec<ReprojectionAudit>,
    pub pairs_passed: usize,
    /// Strict majority of pairs passed.
    pub pass: bool,
    pub thresholds: GuardThresholds,
}

/// Splatted render in the target view.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[u8; 3]>,
    pub covered: Vec<bool>,
    /// Pixels of the target view that take part in scoring.
    pub region: Vec<bool>,
}

impl Rendered {
    /// Covered share of the scored region.
    pub fn coverage(&self) -> f64 {
        let region = self.region.iter().filter(|&&r| r).count();
        if region == 0 {
            return 0.0;
        }
        self.scored().count() as f64 / region as f64
    }

    fn scored(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.covered.len()).filter(|&i| self.covered[i] && self.region[i])
    }
}

/// Foreground masks of the source and target frames, both optional.
#[derive(Debug, Clone, Copy, Default)]
pub struct Exclusion<'a> {
    pub source: Option<&'a Mask>,
    pub target: Option<&'a Mask>,
}

pub fn reproject(
    pm: &PointmapSequence,
    frame_a: usize,
    rgb: &RgbFrames,
    pose_b: &Pose,
    k: &CameraIntrinsics,
    exclude: Exclusion,
) -> Rendered {
    let (w, h) = (rgb.width, rgb.height);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut out = vec![[0u8; 3]; w * h];
    for r in 0..pm.height {
        for c in 0..pm.width {
            if !pm.is_valid(frame_a, r, c) || exclude.source.is_some_and(|m| m.get(r, c)) {
                continue;
            }
            let p = pm.point(frame_a, r, c);
            let cam = pose_b.world_to_camera(&Point3::new(p[0] as f64, p[1] as f64, p[2] as f64));
            let Ok(px) = project(&cam, k) else { continue };
            let Some((rr, cc)) = nearest_index(&px, w, h) else { continue };
            let idx = rr * w + cc;
            if cam.z < zbuf[idx] {
                zbuf[idx] = cam.z;
                out[idx] = rgb.pixel(frame_a, r, c);
            }
        }
    }
    let region = (0..w * h).map(|i| !exclude.target.is_some_and(|m| m.get(i / w, i % w))).collect();
    Rendered { width: w, height: h, rgb: out, covered: zbuf.iter().map(|z| z.is_finite()).collect(), region }
}

/// `(MAE, L2)` over covered pixels of the region: per-channel mean absolute error and RMS
/// error on `[0, 1]` intensities, each averaged over the three channels.
pub fn photometric_error(render: &Rendered, rgb: &RgbFrames, frame_b: usize) -> (f64, f64) {
    let mut abs = [0.0f64; 3];
    let mut sq = [0.0f64; 3];
    let mut n = 0usize;
    for idx in render.scored() {
        n += 1;
        let target = rgb.pixel(frame_b, idx / render.width, idx % render.width);
        for ch in 0..3 {
            let d = (render.rgb[idx][ch] as f64 - target[ch] as f64) / 255.0;
            abs[ch] += d.abs();
            sq[ch] += d * d;
        }
    }
    if n == 0 {
        return (0.0, 0.0);
    }
    let n = n as f64;
    let mae = abs.iter().map(|a| a / n).sum::<f64>() / 3.0;
    let l2 = sq.iter().map(|s| (s / n).sqrt()).sum::<f64>() / 3.0;
    (mae, l2)
}

/// Everything the audit reads from a bundle.
#[derive(Debug, Clone, Copy)]
pub struct AuditInputs<'a> {
    pub pointmaps: &'a PointmapSequence,
    pub rgb: &'a RgbFrames,
    pub poses: &'a [Pose],
    pub intrinsics: &'a CameraIntrinsics,
    /// Per-frame foreground masks to exclude; empty to score everything.
    pub masks: &'a [Mask],
}

fn audit_direction(inp: &AuditInputs, a: usize, b: usize) -> (f64, f64, f64) {
    let exclude = Exclusion { source: inp.masks.get(a), target: inp.masks.get(b) };
    let (pm, rgb, k) = (inp.pointmaps, inp.rgb, inp.intrinsics);
    let render = reproject(pm, a, rgb, &inp.poses[b], k, exclude);
    let (mae, l2) = photometric_error(&render, rgb, b);
    (render.coverage(), mae, l2)
}

pub fn audit_pair(inp: &AuditInputs, a: usize, b: usize, thresholds: &GuardThresholds) -> ReprojectionAudit {
    let fwd = audit_direction(inp, a, b);
    let bwd = audit_direction(inp, b, a);
    let coverage = fwd.0.min(bwd.0);
    let mae = fwd.1.max(bwd.1);
    let l2 = fwd.2.max(bwd.2);
    let pass = coverage >= thresholds.cov_min && mae <= thresholds.mae_max && l2 <= thresholds.l2_max;
    ReprojectionAudit { frame_a: a, frame_b: b, coverage, mae, l2, pass }
}

/// Up to `count` distinct pairs `(a, a + gap)` with `gap` drawn uniformly from
/// `[3, T/4]`, or `[1, T-1]` when that range is empty. Sorted.
pub fn sample_pairs(frames: usize, count: usize, seed: u64) -> Vec<(usize, usize)> {
    if frames < 2 || count == 0 {
        return Vec::new();
    }
    let (lo, hi) = if frames / 4 >= MIN_GAP { (MIN_GAP, frames / 4) } else { (1, frames - 1) };
    let available: usize = (lo..=hi).map(|g| frames - g).sum();
    let mut pairs = BTreeSet::new();
    if available <= count {
        for g in lo..=hi {
            for a in 0..frames - g {
                pairs.insert((a, a + g));
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        while pairs.len() < count {
            let gap = rng.random_range(lo..=hi);
            let a = rng.random_range(0..frames - gap);
            pairs.insert((a, a + gap));
        }
    }
    pairs.into_iter().collect()
}

pub fn audit_reconstruction(
    bundle: &PerceptionBundle,
    pair_count: usize,
    thresholds: &GuardThresholds,
    seed: u64,
) -> Result<GuardReport, FidelityError> {
    let pm = bundle.pointmaps.as_ref().ok_or(FidelityError::MissingEvidence("pointmaps"))?;
    let rgb = bundle.frames.as_ref().ok_or(FidelityError::MissingEvidence("RGB frames"))?;
    let poses = bundle.poses.as_ref().ok_or(FidelityError::MissingEvidence("camera poses"))?;
    let k = bundle.intrinsics.as_ref().ok_or(FidelityError::MissingEvidence("intrinsics"))?;
    let frames = rgb.frames.len();
    if frames < 2 {
        return Err(FidelityError::TooFewFrames(frames));
    }
    let inputs = AuditInputs { pointmaps: pm, rgb, poses: &poses.poses, intrinsics: k, masks: &bundle.masks.masks };
    let audits: Vec<ReprojectionAudit> = sample_pairs(frames, pair_count, seed)
        .into_par_iter()
        .map(|(a, b)| audit_pair(&inputs, a, b, thresholds))
        .collect();
    let pairs_passed = audits.iter().filter(|a| a.pass).count();
    let pass = 2 * pairs_passed > audits.len();
    Ok(GuardReport { audits, pairs_passed, pass, thresholds: *thresholds })
}

#[cfg(test)]
mod tests {
    use super::*;

    const K: CameraIntrinsics = CameraIntrinsics { fx: 20.0, fy: 20.0, cx: 7.5, cy: 7.5 };

    /// Fronto-parallel plane at depth 4 seen by an identity camera, with a
    /// per-pixel colour ramp.
    fn plane_scene(frames: usize) -> (PointmapSequence, RgbFrames) {
        let n = 16;
        let mut pm = PointmapSequence::new(frames, n, n);
        let mut data = Vec::new();
        for t in 0..frames {
            let mut img = Vec::with_capacity(n * n * 3);
            for r in 0..n {
                for c in 0..n {
                    let z = 4.0;
                    let x = (c as f64 - K.cx) * z / K.fx;
                    let y = (r as f64 - K.cy) * z / K.fy;
                    pm.set(t, r, c, [x as f32, y as f32, z as f32], true);
                    img.extend_from_slice(&[(c * 10) as u8, (r * 10) as u8, 128]);
                }
            }
            data.push(img);
        }
        (pm, RgbFrames { width: n, height: n, frames: data })
    }

    #[test]
    fn identity_reprojection_is_exact() {
        let (pm, rgb) = plane_scene(1);
        let render = reproject(&pm, 0, &rgb, &Pose::identity(), &K, Exclusion::default());
        assert_eq!(render.coverage(), 1.0);
        assert_eq!(photometric_error(&render, &rgb, 0), (0.0, 0.0));
    }

    #[test]
    fn points_behind_camera_cover_nothing() {
        let (pm, rgb) = plane_scene(1);
        let mut behind = Pose::identity();
        behind.translation.z = -10.0;
        let render = reproject(&pm, 0, &rgb, &behind, &K, Exclusion::default());
        assert_eq!(render.coverage(), 0.0);
    }

    #[test]
    fn coverage_shrinks_with_validity() {
        let (mut pm, rgb) = plane_scene(1);
        let mut last = 1.0;
        for r in 0..16 {
            for c in 0..16 {
                pm.set_valid(0, r, c, false);
            }
            let cov = reproject(&pm, 0, &rgb, &Pose::identity(), &K, Exclusion::default()).coverage();
            assert!(cov <= last);
            last = cov;
        }
        assert_eq!(last, 0.0);
    }

    #[test]
    fn error_metrics_match_brute_force() {
        let (pm, mut rgb) = plane_scene(2);
        // Frame 1 differs by +30 on red and -15 on blue everywhere.
        for px in rgb.frames[1].chunks_mut(3) {
            px[0] = px[0].saturating_add(30);
            px[2] -= 15;
        }
        let render = reproject(&pm, 0, &rgb, &Pose::identity(), &K, Exclusion::default());
        let (mae, l2) = photometric_error(&render, &rgb, 1);
        let red: Vec<f64> = (0..256)
            .map(|i| ((((i % 16) * 10) as f64 + 30.0).min(255.0) - ((i % 16) * 10) as f64) / 255.0)
            .collect();
        let red_mae = red.iter().sum::<f64>() / 256.0;
        let red_rms = (red.iter().map(|d| d * d).sum::<f64>() / 256.0).sqrt();
        let blue = 15.0 / 255.0;
        assert!((mae - (red_mae + blue) / 3.0).abs() < 1e-12);
        assert!((l2 - (red_rms + blue) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn foreground_is_excluded() {
        let (pm, mut rgb) = plane_scene(2);
        let mut fg = Mask::new(16, 16);
        for r in 4..8 {
            for c in 4..8 {
                fg.set(r, c, true);
                rgb.frames[1][(r * 16 + c) * 3] = 255;
            }
        }
        let all = reproject(&pm, 0, &rgb, &Pose::identity(), &K, Exclusion::default());
        assert!(photometric_error(&all, &rgb, 1).0 > 0.0);
        let empty = Mask::new(16, 16);
        let ex = Exclusion { source: Some(&empty), target: Some(&fg) };
        let render = reproject(&pm, 0, &rgb, &Pose::identity(), &K, ex);
        assert_eq!(render.coverage(), 1.0);
        assert_eq!(photometric_error(&render, &rgb, 1), (0.0, 0.0));
        // Source foreground is not splatted.
        let ex = Exclusion { source: Some(&fg), target: None };
        let render = reproject(&pm, 0, &rgb, &Pose::identity(), &K, ex);
        assert_eq!(render.coverage(), 240.0 / 256.0);
    }

    #[test]
    fn pair_sampling() {
        assert_eq!(sample_pairs(2, 8, 0), vec![(0, 1)]);
        let pairs = sample_pairs(48, 8, 7);
        assert_eq!(pairs.len(), 8);
        assert!(pairs.iter().all(|&(a, b)| (3..=12).contains(&(b - a)) && b < 48));
        assert_eq!(pairs, sample_pairs(48, 8, 7));
        // Few frames: every admissible pair, no repeats.
        assert_eq!(sample_pairs(4, 20, 1).len(), 6);
    }

    #[test]
    fn missing_evidence() {
        let mut b = crate::interchange::tests::tiny_bundle();
        b.frames = None;
        assert!(matches!(
            audit_reconstruction(&b, 4, &GuardThresholds::default(), 0),
            Err(FidelityError::MissingEvidence(_))
        ));
    }
}
