//! Vanishing-point diagnostics for longitudinal motion.
//!
//! A subject translating along a straight 3D line projects onto a straight
//! image line through the vanishing point of its direction, and its distance
//! to that point shrinks like `1 / Z_t`, the same law as its pixel height. The
//! H-VP residual checks `h_1 / h_t = Dist(p_1, VP) / Dist(p_t, VP)`; the
//! angular form compares the directions of a motion VP and a scene VP from the
//! principal point. Both are report-only.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project, Pixel};
use crate::interchange::{CameraIntrinsics, PerceptionBundle};
use crate::observation::ObjectObservationSeries;

/// Minimum relative variation of the scale signal for a VP to be defined.
pub const MIN_SCALE_VARIATION: f64 = 0.02;
/// Line-fit RMS (px) below which the foreground VP counts as stable.
pub const STABLE_LINE_RMS: f64 = 2.0;
pub const MIN_DISPLACEMENT: f64 = 2.0;
pub const MIN_VP_DISTANCE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VpError {
    #[error("need at least 3 frames, got {0}")]
    TooFewFrames(usize),
    #[error("centroid track moves {0:.3} px, too little to fit a line")]
    DegenerateTrack(f64),
    #[error("scale varies by {0:.4}, below the 2% needed to locate a VP")]
    TransverseMotion(f64),
    #[error("centroid at frame {0} lies within 1 px of the VP")]
    VpTooClose(usize),
    #[error("VP direction shorter than 1 px from the principal point")]
    DegenerateVp,
}

/// Line fit and extrapolated VP for a centroid track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForegroundVp {
    pub vp: Pixel,
    /// RMS perpendicular distance of the track to the fitted line (px).
    pub line_rms: f64,
    /// `(max - min) / max` of the scale signal.
    pub scale_variation: f64,
}

impl ForegroundVp {
    pub fn is_stable(&self) -> bool {
        self.line_rms < STABLE_LINE_RMS && self.scale_variation >= MIN_SCALE_VARIATION
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VpCouplingResult {
    pub vp_fg: Option<Pixel>,
    pub vp_bg: Option<Pixel>,
    pub delta_theta: Option<f64>,
    pub homogeneity: Option<Vec<f64>>,
    pub applicable: bool,
    pub reason: Option<String>,
}

/// Fits a total-least-squares line through `centroids` and extrapolates it to
/// the point where `scale` reaches 0.
///
/// `scale` must be proportional to `1 / Z_t` (pixel height or inverse depth).
/// The signed position along the line is regressed on `scale`; the intercept
/// is the VP.
pub fn estimate_foreground_vp(centroids: &[Pixel], scale: &[f64]) -> Result<ForegroundVp, VpError> {
    let n = centroids.len().min(scale.len());
    if n < 3 {
        return Err(VpError::TooFewFrames(n));
    }
    let (cs, ss) = (&centroids[..n], &scale[..n]);
    let nf = n as f64;
    let mu = (cs.iter().map(|p| p.u).sum::<f64>() / nf, cs.iter().map(|p| p.v).sum::<f64>() / nf);
    let (mut suu, mut suv, mut svv) = (0.0, 0.0, 0.0);
    for p in cs {
        let (du, dv) = (p.u - mu.0, p.v - mu.1);
        suu += du * du;
        suv += du * dv;
        svv += dv * dv;
    }
    // Principal axis of the 2x2 scatter matrix.
    let angle = 0.5 * (2.0 * suv).atan2(suu - svv);
    let dir = (angle.cos(), angle.sin());
    let along: Vec<f64> = cs.iter().map(|p| (p.u - mu.0) * dir.0 + (p.v - mu.1) * dir.1).collect();
    let extent = along.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - along.iter().cloned().fold(f64::INFINITY, f64::min);
    if extent <= MIN_DISPLACEMENT {
        return Err(VpError::DegenerateTrack(extent));
    }
    let (smin, smax) = ss.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let scale_variation = if smax > 0.0 { (smax - smin) / smax } else { 0.0 };
    if scale_variation < MIN_SCALE_VARIATION {
        return Err(VpError::TransverseMotion(scale_variation));
    }
    let perp_sq: f64 =
        cs.iter().map(|p| ((p.u - mu.0) * -dir.1 + (p.v - mu.1) * dir.0).powi(2)).sum::<f64>();
    let line_rms = (perp_sq / nf).sqrt();

    let s_mean = ss.iter().sum::<f64>() / nf;
    let a_mean = along.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (s, a) in ss.iter().zip(&along) {
        sxy += (s - s_mean) * (a - a_mean);
        sxx += (s - s_mean) * (s - s_mean);
    }
    let intercept = a_mean - sxy / sxx * s_mean;
    let vp = Pixel::new(mu.0 + intercept * dir.0, mu.1 + intercept * dir.1);
    Ok(ForegroundVp { vp, line_rms, scale_variation })
}

/// `|ln((h_1 / h_t) * Dist(p_t, VP) / Dist(p_1, VP))|` per frame.
pub fn hvp_homogeneity_residuals(heights: &[f64], centroids: &[Pixel], vp: &Pixel) -> Result<Vec<f64>, VpError> {
    let n = heights.len().min(centroids.len());
    let dist: Vec<f64> = centroids[..n].iter().map(|p| p.distance(vp)).collect();
    if let Some(t) = dist.iter().position(|&d| d <= MIN_VP_DISTANCE) {
        return Err(VpError::VpTooClose(t));
    }
    let (h1, d1) = (heights[0], dist[0]);
    Ok((0..n).map(|t| ((h1 / heights[t]) * (dist[t] / d1)).ln().abs()).collect())
}

/// `(1 - cos angle(d_fg, d_bg)) / 2` with `d = VP - (cx, cy)`.
pub fn angular_coupling(vp_fg: &Pixel, vp_bg: &Pixel, k: &CameraIntrinsics) -> Result<f64, VpError> {
    let d = |p: &Pixel| (p.u - k.cx, p.v - k.cy);
    let (a, b) = (d(vp_fg), d(vp_bg));
    let (na, nb) = (a.0.hypot(a.1), b.0.hypot(b.1));
    if !(na >= MIN_VP_DISTANCE && nb >= MIN_VP_DISTANCE) {
        return Err(VpError::DegenerateVp);
    }
    let cos = ((a.0 * b.0 + a.1 * b.1) / (na * nb)).clamp(-1.0, 1.0);
    Ok((1.0 - cos) / 2.0)
}

/// Per-frame image position of the subject: the projection of the world
/// centroid when intrinsics and poses exist, else the mask centroid.
pub fn centroid_pixels(bundle: &PerceptionBundle, obs: &ObjectObservationSeries) -> Option<Vec<Pixel>> {
    if let (Some(k), Some(poses), Some(cs)) = (&bundle.intrinsics, &bundle.poses, &obs.centroids) {
        return cs
            .iter()
            .zip(&poses.poses)
            .map(|(c, pose)| project(&pose.world_to_camera(c), k).ok())
            .collect();
    }
    let mut last = None;
    let mut out = Vec::with_capacity(bundle.masks.len());
    for m in &bundle.masks.masks {
        last = m.centroid().or(last);
        out.push(last?);
    }
    Some(out)
}

/// Full diagnostic: stable VP, H-VP residuals and, when a scene VP is given,
/// the angular coupling. The scale signal is `1 / Z_t` when depths exist,
/// else `h_t`.
pub fn vp_diagnostics(bundle: &PerceptionBundle, obs: &ObjectObservationSeries) -> VpCouplingResult {
    let vp_bg = bundle.meta.vp_bg;
    let mut result =
        VpCouplingResult { vp_fg: None, vp_bg, delta_theta: None, homogeneity: None, applicable: false, reason: None };
    let Some(pixels) = centroid_pixels(bundle, obs) else {
        result.reason = Some("centroid track unavailable".into());
        return result;
    };
    let scale: Vec<f64> = match &obs.depths {
        Some(z) => z.iter().map(|z| 1.0 / z).collect(),
        None => obs.heights.clone(),
    };
    let fit = match estimate_foreground_vp(&pixels, &scale) {
        Ok(fit) => fit,
        Err(e) => {
            result.reason = Some(e.to_string());
            return result;
        }
    };
    result.vp_fg = Some(fit.vp);
    if !fit.is_stable() {
        result.reason = Some(format!("foreground VP unstable (line rms {:.3} px)", fit.line_rms));
    } else {
        match hvp_homogeneity_residuals(&obs.heights, &pixels, &fit.vp) {
            Ok(r) => {
                result.homogeneity = Some(r);
                result.applicable = true;
            }
            Err(e) => result.reason = Some(e.to_string()),
        }
    }
    if let (Some(bg), Some(k)) = (vp_bg, &bundle.intrinsics) {
        match angular_coupling(&fit.vp, &bg, k) {
            Ok(d) => {
                result.delta_theta = Some(d);
                result.applicable = true;
            }
            Err(e) => result.reason = Some(e.to_string()),
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{vanishing_point_of_direction, Point3};
    use nalgebra::Vector3;
    use proptest::prelude::*;

    const K: CameraIntrinsics = CameraIntrinsics { fx: 500.0, fy: 500.0, cx: 256.0, cy: 256.0 };

    fn linear_track(start: Point3, d: Vector3<f64>, n: usize) -> (Vec<Pixel>, Vec<f64>) {
        (0..n)
            .map(|t| {
                let p = start + d * t as f64;
                (project(&p, &K).unwrap(), 1.0 / p.z)
            })
            .unzip()
    }

    #[test]
    fn recession_along_axis_and_oblique() {
        let (px, s) = linear_track(Point3::new(1.0, 0.5, 5.0), Vector3::new(0.0, 0.0, 0.1), 30);
        let fit = estimate_foreground_vp(&px, &s).unwrap();
        assert!(fit.vp.distance(&Pixel::new(256.0, 256.0)) < 1e-6);
        assert!(fit.is_stable());

        let d = Vector3::new(1.0, 0.0, 1.0) * 0.1;
        let (px, s) = linear_track(Point3::new(-2.0, 0.5, 5.0), d, 30);
        let fit = estimate_foreground_vp(&px, &s).unwrap();
        let expect = vanishing_point_of_direction(&d, &K).unwrap();
        assert!(fit.vp.distance(&Pixel::new(756.0, 256.0)) < 1e-6);
        assert!(fit.vp.distance(&expect) < 1e-6);
    }

    #[test]
    fn lateral_motion_and_stationary() {
        let (px, _) = linear_track(Point3::new(-1.0, 0.0, 5.0), Vector3::new(0.1, 0.0, 0.0), 10);
        assert!(matches!(estimate_foreground_vp(&px, &[100.0; 10]), Err(VpError::TransverseMotion(_))));
        let still = vec![Pixel::new(10.0, 10.0); 5];
        assert!(matches!(estimate_foreground_vp(&still, &[1.0, 2.0, 3.0, 4.0, 5.0]), Err(VpError::DegenerateTrack(_))));
        assert_eq!(estimate_foreground_vp(&still[..2], &[1.0, 2.0]), Err(VpError::TooFewFrames(2)));
    }

    #[test]
    fn homogeneity_exact_and_skating() {
        let (px, s) = linear_track(Point3::new(1.0, 0.0, 5.0), Vector3::new(0.0, 0.0, 0.1), 20);
        let h: Vec<f64> = s.iter().map(|inv_z| 500.0 * 2.0 * inv_z).collect();
        let vp = Pixel::new(256.0, 256.0);
        let r = hvp_homogeneity_residuals(&h, &px, &vp).unwrap();
        assert_eq!(r[0], 0.0);
        assert!(r.iter().all(|x| *x < 1e-12));

        let frozen = vec![h[0]; 20];
        let r = hvp_homogeneity_residuals(&frozen, &px, &vp).unwrap();
        for t in 1..20 {
            let z = |t: usize| 5.0 + 0.1 * t as f64;
            assert!((r[t] - (z(0) / z(t)).ln().abs()).abs() < 1e-12);
            assert!(r[t] > r[t - 1]);
        }
        assert_eq!(hvp_homogeneity_residuals(&h, &px, &px[3]), Err(VpError::VpTooClose(3)));
    }

    #[test]
    fn coupling_examples() {
        let a = Pixel::new(356.0, 256.0);
        assert_eq!(angular_coupling(&a, &a, &K).unwrap(), 0.0);
        assert_eq!(angular_coupling(&a, &Pixel::new(156.0, 256.0), &K).unwrap(), 1.0);
        assert!((angular_coupling(&a, &Pixel::new(256.0, 300.0), &K).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(angular_coupling(&a, &Pixel::new(256.5, 256.0), &K), Err(VpError::DegenerateVp));
    }

    proptest! {
        #[test]
        fn coupling_symmetric_and_scale_invariant(
            a in (-400.0f64..400.0, -400.0f64..400.0),
            b in (-400.0f64..400.0, -400.0f64..400.0),
            c in 0.1f64..10.0,
        ) {
            prop_assume!(a.0.hypot(a.1) > 2.0 && b.0.hypot(b.1) > 2.0);
            let at = |d: (f64, f64), k: f64| Pixel::new(K.cx + d.0 * k, K.cy + d.1 * k);
            let ab = angular_coupling(&at(a, 1.0), &at(b, 1.0), &K).unwrap();
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - angular_coupling(&at(b, 1.0), &at(a, 1.0), &K).unwrap()).abs() < 1e-15);
            let scaled = angular_coupling(&at(a, c), &at(b, c), &K).unwrap();
            prop_assert!((ab - scaled).abs() < 1e-9);
        }

        #[test]
        fn height_distance_ratio_constant(
            x in -3.0f64..3.0, y in -2.0f64..2.0, dx in -0.2f64..0.2, dy in -0.2f64..0.2, dz in 0.05f64..0.3,
        ) {
            let d = Vector3::new(dx, dy, dz);
            let (px, s) = linear_track(Point3::new(x, y, 4.0), d, 15);
            let vp = vanishing_point_of_direction(&d, &K).unwrap();
            // Unit-height subject: h = f / Z.
            let ratios: Vec<f64> = px.iter().zip(&s).map(|(p, inv_z)| p.distance(&vp) / (500.0 * inv_z)).collect();
            for r in &ratios {
                prop_assert!((r - ratios[0]).abs() <= 1e-9 * ratios[0].max(1.0));
            }
        }
    }
}
