//! Scale-depth alignment residual.
//!
//! For a rigid subject `h_t * Z_t` is constant. Working in log space,
//! `s_t = ln(max(h_t, eps)) + ln(max(Z_t, eps))` is compared against the median
//! of the first `min(5, T)` frames; the residual is symmetric in expansions and
//! contractions.

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::observation::ObjectObservationSeries;
use crate::stats;

/// Floor inside the logarithms.
pub const LOG_FLOOR: f64 = 1e-6;
/// Number of leading frames forming the baseline.
pub const BASELINE_FRAMES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleResidualSeries {
    /// `|s_t - s_ref|` for frames `1..T` (frame 0 excluded).
    pub residuals: Vec<f64>,
    pub baseline: f64,
    pub rmse: f64,
}

pub fn log_scale(h: f64, z: f64) -> f64 {
    h.max(LOG_FLOOR).ln() + z.max(LOG_FLOOR).ln()
}

pub fn compute_scale_residuals(obs: &ObjectObservationSeries) -> Result<ScaleResidualSeries, MetricError> {
    let depths = obs.depths.as_ref().ok_or(MetricError::Missing3d)?;
    scale_residuals_from(&obs.heights, depths)
}

/// Scale residuals from raw `h_t` and `Z_t` series.
pub fn scale_residuals_from(heights: &[f64], depths: &[f64]) -> Result<ScaleResidualSeries, MetricError> {
    let n = heights.len().min(depths.len());
    if n < 2 {
        return Err(MetricError::InsufficientFrames { needed: 2, got: n });
    }
    let s: Vec<f64> = heights.iter().zip(depths).map(|(&h, &z)| log_scale(h, z)).collect();
    let baseline = stats::median(&s[..BASELINE_FRAMES.min(n)]).expect("non-empty");
    let residuals: Vec<f64> = s[1..].iter().map(|v| (v - baseline).abs()).collect();
    let rmse = stats::rms(&residuals).expect("non-empty");
    Ok(ScaleResidualSeries { residuals, baseline, rmse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn invariant_product_gives_zero() {
        let z = [5.0, 6.0, 7.5, 10.0, 12.0, 20.0];
        let h: Vec<f64> = z.iter().map(|z| 1000.0 / z).collect();
        let r = scale_residuals_from(&h, &z).unwrap();
        assert_eq!(r.residuals.len(), 5);
        assert!(r.rmse < 1e-12);
    }

    #[test]
    fn doubled_and_halved_product() {
        let z = vec![1.0; 8];
        let mut h = vec![1.0; 8];
        h[6] = 2.0;
        let r = scale_residuals_from(&h, &z).unwrap();
        assert!((r.residuals[5] - LN2).abs() < 1e-15);
        h[6] = 0.5;
        let r2 = scale_residuals_from(&h, &z).unwrap();
        assert!((r2.residuals[5] - r.residuals[5]).abs() < 1e-15);
    }

    #[test]
    fn short_sequences() {
        assert!(matches!(scale_residuals_from(&[1.0], &[1.0]), Err(MetricError::InsufficientFrames { .. })));
        // T = 3 < 5: baseline is the median of all three.
        let r = scale_residuals_from(&[1.0, 2.0, 4.0], &[1.0, 1.0, 1.0]).unwrap();
        assert!((r.baseline - LN2).abs() < 1e-15);
        assert!((r.residuals[0]).abs() < 1e-15 && (r.residuals[1] - LN2).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn depth_scale_invariance(z in prop::collection::vec(0.5f64..50.0, 2..20), c in 0.01f64..100.0) {
            let h: Vec<f64> = z.iter().enumerate().map(|(i, z)| 300.0 / z * (1.0 + 0.05 * (i as f64).sin())).collect();
            let a = scale_residuals_from(&h, &z).unwrap();
            let zc: Vec<f64> = z.iter().map(|z| z * c).collect();
            let b = scale_residuals_from(&h, &zc).unwrap();
            for (x, y) in a.residuals.iter().zip(&b.residuals) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn symmetric_and_monotone(k1 in 1.01f64..10.0, k2 in 1.01f64..10.0) {
            let run = |k: f64| {
                let mut h = vec![100.0; 10];
                h[7] *= k;
                scale_residuals_from(&h, &[3.0; 10]).unwrap().residuals[6]
            };
            prop_assert!((run(k1) - run(1.0 / k1)).abs() < 1e-12);
            if k1 < k2 {
                prop_assert!(run(k1) < run(k2));
            }
        }
    }
}
