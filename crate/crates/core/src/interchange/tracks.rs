use super::{TrackSet, VideoMeta};

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.5;
/// Largest plausible single-frame displacement as a fraction of the image
/// diagonal.
pub const DEFAULT_JUMP_FRACTION: f64 = 0.2;

/// Drops unreliable tracks; survivors are returned untouched.
///
/// A track is used at every frame where its confidence is nonzero (zero is
/// the tracker's "not observed" marker). It is dropped if any used frame has
/// confidence `<= conf_threshold`, or if it moves more than
/// `jump_fraction * diagonal` between two consecutive used frames.
pub fn sanitize_tracks(tracks: &TrackSet, meta: &VideoMeta, conf_threshold: f64, jump_fraction: f64) -> TrackSet {
    let max_jump = jump_fraction * meta.diagonal();
    let kept = tracks
        .tracks
        .iter()
        .filter(|track| {
            let used: Vec<_> = track.points.iter().filter(|p| p.confidence > 0.0).collect();
            let confident = used.iter().all(|p| p.confidence > conf_threshold);
            let smooth = used.windows(2).all(|w| (w[1].u - w[0].u).hypot(w[1].v - w[0].v) <= max_jump);
            confident && smooth
        })
        .cloned()
        .collect();
    TrackSet { tracks: kept }
}
