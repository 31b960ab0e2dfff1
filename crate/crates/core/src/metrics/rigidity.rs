//! Structural rigidity with a prioritized strategy hierarchy.
//!
//! 1. `pairwise3d`: world-space distance ratios of filtered anchor pairs,
//!    scored per frame by `MAD / (median + eps)`.
//! 2. `height3d`: coefficient of variation of the per-frame world-Y span
//!    (`P95 - P5`) of the masked points.
//! 3. `pairwise2d`: image-space distance ratios of sanitized tracks, scored
//!    by `std / (mean + eps)`.
//!
//! When nothing applies the component is 0 with strategy `none`.

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::geometry::{boundary_distance_map, depth_gradient_map, sample_pointmap, Point3};
use crate::interchange::{Mask, PerceptionBundle, PointmapSequence, TrackSet};
use crate::stats;

pub const RIGIDITY_EPS: f64 = 1e-6;
/// Anchors must be tracked with confidence strictly above this.
pub const VISIBILITY_THRESHOLD: f64 = 0.5;
/// Anchors whose depth gradient exceeds this percentile of the masked
/// gradients are discarded.
pub const GRADIENT_PERCENTILE: f64 = 75.0;
pub const DEFAULT_MAX_PAIRS: usize = 64;
/// A frame needs at least this many usable pairs to be scored.
pub const MIN_USABLE_PAIRS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RigidityStrategy {
    Pairwise3d,
    Height3d,
    Pairwise2d,
    None,
}

impl RigidityStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Pairwise3d => "pairwise3d",
            Self::Height3d => "height3d",
            Self::Pairwise2d => "pairwise2d",
            Self::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorPair {
    /// Indices into `TrackSet::tracks`, `i < j`.
    pub i: usize,
    pub j: usize,
    /// Frame-0 world distance.
    pub baseline: f64,
    /// `baseline * min(D_mask_i, D_mask_j)`.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnchorPairSet {
    pub pairs: Vec<AnchorPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidityResult {
    pub strategy: RigidityStrategy,
    /// Per-frame score (`rho_t`) where the strategy defines one.
    pub per_frame: Vec<f64>,
    pub value: f64,
    /// Why higher-priority strategies were skipped, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_reason: Option<String>,
}

/// Triple-filtered anchor pair selection at frame 0.
///
/// Visibility (confidence > 0.5 and a valid pointmap sample), depth
/// smoothness (Sobel magnitude not above the 75th percentile over the masked
/// pixels), then the top `max_pairs` pairs by
/// `|q_i - q_j| * min(D_mask_i, D_mask_j)`, ties broken by `(i, j)`.
pub fn select_anchor_pairs(
    tracks: &TrackSet,
    pm: &PointmapSequence,
    mask0: &Mask,
    max_pairs: usize,
) -> Result<AnchorPairSet, MetricError> {
    let visible: Vec<(usize, Point3)> = tracks
        .tracks
        .iter()
        .enumerate()
        .filter_map(|(idx, track)| {
            let p0 = track.points.first()?;
            if p0.confidence <= VISIBILITY_THRESHOLD {
                return None;
            }
            sample_pointmap(pm, 0, &p0.pixel()).ok().map(|q| (idx, q))
        })
        .collect();

    let gradient = depth_gradient_map(pm, 0);
    let masked: Vec<f64> = (0..mask0.height)
        .flat_map(|r| (0..mask0.width).map(move |c| (r, c)))
        .filter(|&(r, c)| mask0.get(r, c))
        .map(|(r, c)| gradient.get(r, c))
        .collect();
    let cutoff = stats::percentile(&masked, GRADIENT_PERCENTILE).unwrap_or(f64::INFINITY);

    let pixel_of = |idx: usize| {
        let p = tracks.tracks[idx].points[0];
        (p.v.round() as usize, p.u.round() as usize)
    };
    let anchors: Vec<(usize, Point3)> = visible
        .into_iter()
        .filter(|&(idx, _)| {
            let (r, c) = pixel_of(idx);
            gradient.get(r, c) <= cutoff
        })
        .collect();
    if anchors.len() < 2 {
        return Err(MetricError::InsufficientAnchors(anchors.len()));
    }

    let dmask = boundary_distance_map(mask0);
    let inland = |idx: usize| {
        let (r, c) = pixel_of(idx);
        dmask.get(r, c)
    };
    let mut pairs = Vec::with_capacity(anchors.len() * (anchors.len() - 1) / 2);
    for (a, &(i, qi)) in anchors.iter().enumerate() {
        for &(j, qj) in &anchors[a + 1..] {
            let baseline = (qi - qj).norm();
            if baseline <= 1e-9 {
                continue;
            }
            pairs.push(AnchorPair { i, j, baseline, score: baseline * inland(i).min(inland(j)) });
        }
    }
    if pairs.is_empty() {
        return Err(MetricError::InsufficientAnchors(anchors.len()));
    }
    pairs.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.i.cmp(&b.i)).then(a.j.cmp(&b.j)));
    pairs.truncate(max_pairs);
    Ok(AnchorPairSet { pairs })
}

/// World point of track `idx` at `frame` if it is visible and samples validly.
fn anchor_point(tracks: &TrackSet, pm: &PointmapSequence, idx: usize, frame: usize) -> Option<Point3> {
    let p = tracks.tracks[idx].points[frame];
    if p.confidence <= VISIBILITY_THRESHOLD {
        return None;
    }
    sample_pointmap(pm, frame, &p.pixel()).ok()
}

/// Strategy 1. Frame 0 scores zero by construction and is excluded from the
/// mean; frames with fewer than two usable pairs inherit the previous score.
pub fn rigidity_pairwise3d(
    pairs: &AnchorPairSet,
    tracks: &TrackSet,
    pm: &PointmapSequence,
) -> Result<RigidityResult, MetricError> {
    let frames = pm.frames;
    if frames < 2 {
        return Err(MetricError::InsufficientFrames { needed: 2, got: frames });
    }
    let mut per_frame = vec![0.0; frames];
    let mut scored_any = false;
    for t in 1..frames {
        let ratios: Vec<f64> = pairs
            .pairs
            .iter()
            .filter_map(|pair| {
                let qi = anchor_point(tracks, pm, pair.i, t)?;
                let qj = anchor_point(tracks, pm, pair.j, t)?;
                Some((qi - qj).norm() / pair.baseline)
            })
            .collect();
        per_frame[t] = if ratios.len() >= MIN_USABLE_PAIRS {
            scored_any = true;
            let med = stats::median(&ratios).expect("non-empty");
            stats::mad(&ratios).expect("non-empty") / (med + RIGIDITY_EPS)
        } else {
            per_frame[t - 1]
        };
    }
    if !scored_any {
        return Err(MetricError::NoUsableFrames);
    }
    let value = stats::mean(&per_frame[1..]).expect("T >= 2");
    Ok(RigidityResult { strategy: RigidityStrategy::Pairwise3d, per_frame, value, fallback_reason: None })
}

/// Per-frame `P95 - P5` of world Y over masked valid points; `None` for frames
/// without such points.
pub fn height3d_spans(bundle: &PerceptionBundle) -> Option<Vec<Option<f64>>> {
    let pm = bundle.pointmaps.as_ref()?;
    let spans = bundle
        .masks
        .masks
        .iter()
        .enumerate()
        .map(|(t, mask)| {
            let ys: Vec<f64> = (0..mask.height)
                .flat_map(|r| (0..mask.width).map(move |c| (r, c)))
                .filter(|&(r, c)| mask.get(r, c) && pm.is_valid(t, r, c))
                .map(|(r, c)| pm.point(t, r, c)[1] as f64)
                .collect();
            if ys.is_empty() {
                return None;
            }
            Some(stats::percentile(&ys, 95.0)? - stats::percentile(&ys, 5.0)?)
        })
        .collect();
    Some(spans)
}

/// Strategy 2: coefficient of variation (population std) of the 3D heights.
pub fn rigidity_height3d(heights: &[f64]) -> Result<RigidityResult, MetricError> {
    if heights.is_empty() {
        return Err(MetricError::NoValidFrames);
    }
    let mean = stats::mean(heights).expect("non-empty");
    let value = stats::std_population(heights).expect("non-empty") / (mean + RIGIDITY_EPS);
    Ok(RigidityResult {
        strategy: RigidityStrategy::Height3d,
        per_frame: heights.to_vec(),
        value,
        fallback_reason: None,
    })
}

/// Strategy 3 over all pairs of (sanitized) tracks observed at frame 0. The
/// mean runs over every frame, frame 0 included. Frames where no pair is
/// observed inherit the previous score.
pub fn rigidity_pairwise2d(tracks: &TrackSet) -> Result<RigidityResult, MetricError> {
    let observed: Vec<usize> =
        (0..tracks.len()).filter(|&i| tracks.tracks[i].points.first().is_some_and(|p| p.confidence > 0.0)).collect();
    if observed.len() < 2 {
        return Err(MetricError::InsufficientAnchors(observed.len()));
    }
    let dist = |i: usize, j: usize, t: usize| {
        let (a, b) = (tracks.tracks[i].points[t], tracks.tracks[j].points[t]);
        (a.u - b.u).hypot(a.v - b.v)
    };
    let mut pairs = Vec::new();
    for (a, &i) in observed.iter().enumerate() {
        for &j in &observed[a + 1..] {
            let d0 = dist(i, j, 0);
            if d0 > 1e-9 {
                pairs.push((i, j, d0));
            }
        }
    }
    if pairs.is_empty() {
        return Err(MetricError::InsufficientAnchors(observed.len()));
    }
    let frames = tracks.tracks[0].points.len();
    let mut per_frame = vec![0.0; frames];
    for t in 0..frames {
        let ratios: Vec<f64> = pairs
            .iter()
            .filter(|&&(i, j, _)| tracks.tracks[i].points[t].confidence > 0.0 && tracks.tracks[j].points[t].confidence > 0.0)
            .map(|&(i, j, d0)| dist(i, j, t) / d0)
            .collect();
        per_frame[t] = if ratios.is_empty() {
            if t > 0 {
                per_frame[t - 1]
            } else {
                0.0
            }
        } else {
            stats::std_population(&ratios).expect("non-empty") / (stats::mean(&ratios).expect("non-empty") + RIGIDITY_EPS)
        };
    }
    let value = stats::mean(&per_frame).expect("non-empty");
    Ok(RigidityResult { strategy: RigidityStrategy::Pairwise2d, per_frame, value, fallback_reason: None })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidityOptions {
    pub max_pairs: usize,
}

impl Default for RigidityOptions {
    fn default() -> Self {
        Self { max_pairs: DEFAULT_MAX_PAIRS }
    }
}

/// Picks the highest-priority strategy the evidence supports. Never fails:
/// missing evidence only degrades the strategy.
///
/// `allow_3d` is false when the reconstruction did not pass the fidelity
/// guard; the 3D strategies are then skipped even if pointmaps exist.
pub fn rigidity_dispatch(
    bundle: &PerceptionBundle,
    tracks: &TrackSet,
    options: &RigidityOptions,
    allow_3d: bool,
) -> RigidityResult {
    let mut reasons: Vec<String> = Vec::new();
    match (&bundle.pointmaps, allow_3d) {
        (Some(pm), true) => {
            let first = select_anchor_pairs(tracks, pm, &bundle.masks.masks[0], options.max_pairs)
                .and_then(|pairs| rigidity_pairwise3d(&pairs, tracks, pm));
            match first {
                Ok(r) => return r,
                Err(e) => reasons.push(format!("pairwise3d unavailable: {e}")),
            }
            let heights: Vec<f64> =
                height3d_spans(bundle).into_iter().flatten().flatten().collect();
            match rigidity_height3d(&heights) {
                Ok(mut r) => {
                    r.fallback_reason = Some(reasons.join("; "));
                    return r;
                }
                Err(e) => reasons.push(format!("height3d unavailable: {e}")),
            }
        }
        (Some(_), false) => reasons.push("3D strategies disabled: reconstruction failed the fidelity guard".into()),
        (None, _) => reasons.push("3D strategies unavailable: no pointmaps".into()),
    }
    match rigidity_pairwise2d(tracks) {
        Ok(mut r) => {
            r.fallback_reason = Some(reasons.join("; "));
            r
        }
        Err(e) => {
            reasons.push(format!("pairwise2d unavailable: {e}"));
            RigidityResult {
                strategy: RigidityStrategy::None,
                per_frame: Vec::new(),
                value: 0.0,
                fallback_reason: Some(reasons.join("; ")),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interchange::{Track, TrackPoint};

    fn track(id: u32, pts: Vec<(f64, f64)>) -> Track {
        Track { id, points: pts.into_iter().map(|(u, v)| TrackPoint { u, v, confidence: 1.0 }).collect() }
    }

    /// Flat plane pointmap where pixel (r, c) maps to world (c, r, 5) scaled by
    /// the per-frame `scale`.
    fn plane(frames: usize, size: usize, scale: impl Fn(usize) -> f32) -> PointmapSequence {
        let mut pm = PointmapSequence::new(frames, size, size);
        for t in 0..frames {
            for r in 0..size {
                for c in 0..size {
                    pm.set(t, r, c, [c as f32 * scale(t), r as f32 * scale(t), 5.0], true);
                }
            }
        }
        pm
    }

    fn full_mask(size: usize, margin: usize) -> Mask {
        let mut m = Mask::new(size, size);
        for r in margin..size - margin {
            for c in margin..size - margin {
                m.set(r, c, true);
            }
        }
        m
    }

    #[test]
    fn two_anchors_one_pair_and_low_confidence_excluded() {
        let pm = plane(2, 20, |_| 1.0);
        let mut set = TrackSet { tracks: vec![track(0, vec![(5.0, 5.0); 2]), track(1, vec![(12.0, 9.0); 2])] };
        let pairs = select_anchor_pairs(&set, &pm, &full_mask(20, 2), 64).unwrap();
        assert_eq!(pairs.pairs.len(), 1);
        assert_eq!((pairs.pairs[0].i, pairs.pairs[0].j), (0, 1));

        set.tracks.push(track(2, vec![(9.0, 14.0); 2]));
        set.tracks[2].points[0].confidence = 0.3;
        let pairs = select_anchor_pairs(&set, &pm, &full_mask(20, 2), 64).unwrap();
        assert!(pairs.pairs.iter().all(|p| p.i != 2 && p.j != 2));

        set.tracks[1].points[0].confidence = 0.5;
        assert_eq!(
            select_anchor_pairs(&set, &pm, &full_mask(20, 2), 64),
            Err(MetricError::InsufficientAnchors(1))
        );
    }

    #[test]
    fn interior_pair_beats_edge_pair_at_equal_separation() {
        let pm = plane(1, 30, |_| 1.0);
        let mask = full_mask(30, 3);
        // Pair (0, 1) hugs the mask edge; pair (2, 3) sits inland; both 8 px apart.
        let set = TrackSet {
            tracks: vec![
                track(0, vec![(3.0, 4.0)]),
                track(1, vec![(11.0, 4.0)]),
                track(2, vec![(11.0, 15.0)]),
                track(3, vec![(19.0, 15.0)]),
            ],
        };
        let pairs = select_anchor_pairs(&set, &pm, &mask, 64).unwrap();
        // Brute-force the scores independently.
        let d = boundary_distance_map(&mask);
        let brute = |a: usize, b: usize| {
            let (pa, pb) = (set.tracks[a].points[0], set.tracks[b].points[0]);
            let sep = (pa.u - pb.u).hypot(pa.v - pb.v);
            sep * d.get(pa.v as usize, pa.u as usize).min(d.get(pb.v as usize, pb.u as usize))
        };
        assert!(brute(2, 3) > brute(0, 1));
        let rank = |i, j| pairs.pairs.iter().position(|p| p.i == i && p.j == j).unwrap();
        assert!(rank(2, 3) < rank(0, 1));
        for p in &pairs.pairs {
            assert!((p.score - brute(p.i, p.j)).abs() < 1e-9);
        }
        let top1 = select_anchor_pairs(&set, &pm, &mask, 1).unwrap();
        assert_eq!(top1.pairs.len(), 1);
    }

    #[test]
    fn uniform_scaling_is_immune() {
        let pm = plane(3, 20, |t| 1.0 + 0.5 * t as f32);
        let set = TrackSet {
            tracks: vec![track(0, vec![(4.0, 4.0); 3]), track(1, vec![(14.0, 6.0); 3]), track(2, vec![(7.0, 15.0); 3])],
        };
        let pairs = select_anchor_pairs(&set, &pm, &full_mask(20, 1), 64).unwrap();
        let r = rigidity_pairwise3d(&pairs, &set, &pm).unwrap();
        assert!(r.value < 1e-6, "{}", r.value);
    }

    #[test]
    fn ratio_spread_score() {
        // Three pairs whose ratios at frame 1 are {0.9, 1.0, 1.1}.
        let mut pm = PointmapSequence::new(2, 10, 10);
        let place = |pm: &mut PointmapSequence, t: usize, col: usize, x: f32| pm.set(t, 0, col, [x, 0.0, 1.0], true);
        // Anchors at columns 0..6 form disjoint pairs (0,1), (2,3), (4,5).
        for (k, ratio) in [0.9f32, 1.0, 1.1].iter().enumerate() {
            let (a, b) = (2 * k, 2 * k + 1);
            let base = 10.0 * k as f32;
            place(&mut pm, 0, a, base);
            place(&mut pm, 0, b, base + 1.0);
            place(&mut pm, 1, a, base);
            place(&mut pm, 1, b, base + ratio);
        }
        let set = TrackSet { tracks: (0..6).map(|c| track(c as u32, vec![(c as f64, 0.0); 2])).collect() };
        let pairs = AnchorPairSet {
            pairs: (0..3).map(|k| AnchorPair { i: 2 * k, j: 2 * k + 1, baseline: 1.0, score: 1.0 }).collect(),
        };
        let r = rigidity_pairwise3d(&pairs, &set, &pm).unwrap();
        // median 1.0, MAD 0.1 -> 0.1 / (1 + 1e-6)
        assert!((r.per_frame[1] - 0.1 / (1.0 + 1e-6)).abs() < 1e-6);
        assert!((r.value - r.per_frame[1]).abs() < 1e-15);
    }

    #[test]
    fn insufficient_pairs_inherit_previous_score() {
        let pm = plane(4, 20, |_| 1.0);
        let mut set = TrackSet {
            tracks: vec![track(0, vec![(4.0, 4.0); 4]), track(1, vec![(14.0, 6.0); 4]), track(2, vec![(7.0, 15.0); 4])],
        };
        for i in 0..3 {
            set.tracks[i].points[2].confidence = 0.0;
        }
        let pairs = select_anchor_pairs(&set, &pm, &full_mask(20, 1), 64).unwrap();
        let r = rigidity_pairwise3d(&pairs, &set, &pm).unwrap();
        assert_eq!(r.per_frame[2], r.per_frame[1]);
        for t in 1..4 {
            set.tracks[0].points[t].confidence = 0.0;
        }
        assert_eq!(rigidity_pairwise3d(&pairs, &set, &pm), Err(MetricError::NoUsableFrames));
    }

    #[test]
    fn height3d_examples() {
        assert_eq!(rigidity_height3d(&[2.0, 2.0, 2.0]).unwrap().value, 0.0);
        let r = rigidity_height3d(&[1.0, 1.0, 2.0]).unwrap();
        // population std 0.471404..., mean 4/3
        let expect = 0.471_404_520_791_031_7 / (4.0 / 3.0 + 1e-6);
        assert!((r.value - expect).abs() < 1e-12);
        assert!((r.value - 0.3536).abs() < 1e-4);
        let scaled = rigidity_height3d(&[3.0, 3.0, 6.0]).unwrap();
        assert!((scaled.value - r.value).abs() < 1e-6);
        assert_eq!(rigidity_height3d(&[]), Err(MetricError::NoValidFrames));
    }

    #[test]
    fn pairwise2d_examples() {
        let translate = |dx: f64| vec![(10.0, 10.0), (10.0 + dx, 12.0 + dx), (10.0 + 2.0 * dx, 14.0)];
        let rigid = TrackSet {
            tracks: vec![
                track(0, translate(0.0).iter().map(|&(u, _)| (u, 5.0)).collect()),
                track(1, translate(0.0).iter().map(|&(u, _)| (u + 20.0, 5.0)).collect()),
                track(2, translate(0.0).iter().map(|&(u, _)| (u, 30.0)).collect()),
            ],
        };
        assert!(rigidity_pairwise2d(&rigid).unwrap().value < 1e-12);

        let single = TrackSet { tracks: vec![track(0, vec![(0.0, 0.0), (0.0, 0.0)]), track(1, vec![(3.0, 4.0), (6.0, 8.0)])] };
        assert_eq!(rigidity_pairwise2d(&single).unwrap().value, 0.0);

        // Track 2 stretched x2 away from track 0 at frame 1 (tracks 0, 1 fixed).
        let stretched = TrackSet {
            tracks: vec![
                track(0, vec![(0.0, 0.0), (0.0, 0.0)]),
                track(1, vec![(10.0, 0.0), (10.0, 0.0)]),
                track(2, vec![(0.0, 10.0), (0.0, 20.0)]),
            ],
        };
        // Brute force over the three pair ratios at frame 1.
        let d = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).hypot(a.1 - b.1);
        let ratios = [
            d((0.0, 0.0), (10.0, 0.0)) / d((0.0, 0.0), (10.0, 0.0)),
            d((0.0, 0.0), (0.0, 20.0)) / d((0.0, 0.0), (0.0, 10.0)),
            d((10.0, 0.0), (0.0, 20.0)) / d((10.0, 0.0), (0.0, 10.0)),
        ];
        let m = ratios.iter().sum::<f64>() / 3.0;
        let sd = (ratios.iter().map(|r| (r - m).powi(2)).sum::<f64>() / 3.0).sqrt();
        let rho1 = sd / (m + 1e-6);
        let r = rigidity_pairwise2d(&stretched).unwrap();
        assert!((r.per_frame[1] - rho1).abs() < 1e-12);
        assert!((r.value - rho1 / 2.0).abs() < 1e-12);

        assert!(rigidity_pairwise2d(&TrackSet { tracks: vec![track(0, vec![(1.0, 1.0)])] }).is_err());
    }
}
