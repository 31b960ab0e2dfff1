//! PDI synthesis, GT-anchored normalization, bootstrap intervals and the
//! per-model / per-category report tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{derive_seed, PdiWeights, ReportConfig};
use crate::interchange::Category;
use crate::pipeline::VideoRecord;
use crate::stats;

/// Consistency constant turning an unscaled MAD into a normal-sigma estimate.
pub const MAD_TO_SIGMA: f64 = 1.4826;
pub const OUTLIER_FENCE: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AggregateError {
    #[error("need at least 2 ground-truth videos, got {0}")]
    InsufficientGt(usize),
    #[error("need at least 4 values, got {0}")]
    TooFewValues(usize),
    #[error("no evaluated videos")]
    EmptyResults,
}

/// `w_scale * e_s + w_traj * e_t + w_rigidity * e_r`.
pub fn synthesize_pdi(components: [f64; 3], weights: &PdiWeights) -> f64 {
    let w = weights.as_array();
    w[0] * components[0] + w[1] * components[1] + w[2] * components[2]
}

/// Weighted sum over the available components with the weights renormalized
/// over them. Returns the score and the weights actually applied.
pub fn synthesize_available(components: [Option<f64>; 3], weights: &PdiWeights) -> (f64, [f64; 3]) {
    let w = weights.renormalized(components.map(|c| c.is_some()));
    let score = (0..3).map(|i| w[i] * components[i].unwrap_or(0.0)).sum();
    (score, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustAnchor {
    pub median: f64,
    /// Unscaled median absolute deviation.
    pub mad: f64,
}

impl RobustAnchor {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        Some(Self { median: stats::median(values)?, mad: stats::mad(values)? })
    }
}

/// Robust location and spread of the GT subset, per component and for PDI.
/// A component is `None` when fewer than two GT videos have it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtAnchor {
    pub scale: Option<RobustAnchor>,
    pub traj: Option<RobustAnchor>,
    pub rigidity: Option<RobustAnchor>,
    pub pdi: RobustAnchor,
    pub videos: usize,
}

/// `gt` holds `[scale, traj, rigidity]` and PDI per GT video.
pub fn gt_anchor(gt: &[([Option<f64>; 3], f64)]) -> Result<GtAnchor, AggregateError> {
    if gt.len() < 2 {
        return Err(AggregateError::InsufficientGt(gt.len()));
    }
    let component = |i: usize| {
        let v: Vec<f64> = gt.iter().filter_map(|(c, _)| c[i]).collect();
        if v.len() < 2 {
            None
        } else {
            RobustAnchor::from_values(&v)
        }
    };
    let pdi: Vec<f64> = gt.iter().map(|(_, p)| *p).collect();
    Ok(GtAnchor {
        scale: component(0),
        traj: component(1),
        rigidity: component(2),
        pdi: RobustAnchor::from_values(&pdi).expect("non-empty"),
        videos: gt.len(),
    })
}

/// One-sided robust z-score mapped through a scaled half-logistic onto
/// `[0, 100]`; anything at or below the anchor median scores 100.
pub fn normalize_score(raw: f64, anchor: &RobustAnchor, tau: f64) -> f64 {
    let z = ((raw - anchor.median) / (MAD_TO_SIGMA * anchor.mad + 1e-9)).max(0.0);
    let half_logistic = 2.0 / (1.0 + (-z / tau).exp()) - 1.0;
    100.0 * (1.0 - half_logistic)
}

/// Percentile bootstrap interval of the mean. `None` for empty input.
pub fn bootstrap_ci(values: &[f64], resamples: usize, level: f64, seed: u64) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples.max(1))
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0 * 100.0;
    Some((stats::percentile_of_sorted(&means, tail), stats::percentile_of_sorted(&means, 100.0 - tail)))
}

/// Fraction of values above the Tukey fence `Q3 + 1.5 IQR`.
pub fn outlier_ratio(values: &[f64]) -> Result<f64, AggregateError> {
    if values.len() < 4 {
        return Err(AggregateError::TooFewValues(values.len()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = stats::percentile_of_sorted(&sorted, 25.0);
    let q3 = stats::percentile_of_sorted(&sorted, 75.0);
    let fence = q3 + OUTLIER_FENCE * (q3 - q1);
    Ok(sorted.iter().filter(|&&v| v > fence).count() as f64 / sorted.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub videos: usize,
    pub degraded: usize,
    pub mean_pdi: f64,
    pub median_pdi: f64,
    pub ci95: (f64, f64),
    /// Sample standard deviation of per-video PDI.
    pub std: f64,
    /// `None` with fewer than four videos.
    pub outlier_ratio: Option<f64>,
    pub scale_mean: Option<f64>,
    pub traj_mean: Option<f64>,
    pub rigidity_mean: Option<f64>,
    /// `None` without a GT anchor.
    pub normalized_score: Option<f64>,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub model: String,
    pub videos: usize,
    pub scale_mean: Option<f64>,
    pub traj_mean: Option<f64>,
    pub rigidity_mean: Option<f64>,
    pub pdi_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryTable {
    pub category: Category,
    pub rows: Vec<CategoryRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdiReport {
    pub config: ReportConfig,
    /// Models ordered by rank (ascending mean PDI).
    pub models: Vec<ModelSummary>,
    pub categories: Vec<CategoryTable>,
    pub gt_anchor: Option<GtAnchor>,
    pub videos: Vec<VideoRecord>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    stats::mean(&v)
}

fn components(r: &VideoRecord) -> [Option<f64>; 3] {
    [r.scale_rmse, r.traj_rmse, r.rigidity_component()]
}

pub fn build_report(videos: &[VideoRecord], config: &ReportConfig) -> Result<PdiReport, AggregateError> {
    if videos.is_empty() {
        return Err(AggregateError::EmptyResults);
    }
    let mut videos = videos.to_vec();
    videos.sort_by(|a, b| a.video_id.cmp(&b.video_id));

    let gt: Vec<([Option<f64>; 3], f64)> =
        videos.iter().filter(|r| r.is_ground_truth).map(|r| (components(r), r.pdi)).collect();
    let gt_anchor = gt_anchor(&gt).ok();

    let mut by_model: BTreeMap<&str, Vec<&VideoRecord>> = BTreeMap::new();
    for r in &videos {
        by_model.entry(r.source_model.as_str()).or_default().push(r);
    }
    let mut models: Vec<ModelSummary> = by_model
        .iter()
        .map(|(model, rows)| {
            let pdi: Vec<f64> = rows.iter().map(|r| r.pdi).collect();
            let mean_pdi = stats::mean(&pdi).expect("non-empty group");
            ModelSummary {
                model: model.to_string(),
                videos: rows.len(),
                degraded: rows.iter().filter(|r| r.degraded).count(),
                mean_pdi,
                median_pdi: stats::median(&pdi).expect("non-empty group"),
                ci95: bootstrap_ci(&pdi, config.resamples, config.level, derive_seed(config.seed, model))
                    .expect("non-empty group"),
                std: stats::std_sample(&pdi).expect("non-empty group"),
                outlier_ratio: outlier_ratio(&pdi).ok(),
                scale_mean: mean_of(rows.iter().map(|r| r.scale_rmse)),
                traj_mean: mean_of(rows.iter().map(|r| r.traj_rmse)),
                rigidity_mean: mean_of(rows.iter().map(|r| r.rigidity_component())),
                normalized_score: gt_anchor.as_ref().map(|a| normalize_score(mean_pdi, &a.pdi, config.tau)),
                rank: 0,
            }
        })
        .collect();
    models.sort_by(|a, b| a.mean_pdi.total_cmp(&b.mean_pdi).then_with(|| a.model.cmp(&b.model)));
    for (i, m) in models.iter_mut().enumerate() {
        m.rank = i + 1;
    }

    let mut by_category: BTreeMap<Category, BTreeMap<&str, Vec<&VideoRecord>>> = BTreeMap::new();
    for r in &videos {
        by_category.entry(r.category).or_default().entry(r.source_model.as_str()).or_default().push(r);
    }
    let categories = by_category
        .into_iter()
        .map(|(category, groups)| {
            let mut rows: Vec<CategoryRow> = groups
                .into_iter()
                .map(|(model, rs)| CategoryRow {
                    model: model.to_string(),
                    videos: rs.len(),
                    scale_mean: mean_of(rs.iter().map(|r| r.scale_rmse)),
                    traj_mean: mean_of(rs.iter().map(|r| r.traj_rmse)),
                    rigidity_mean: mean_of(rs.iter().map(|r| r.rigidity_component())),
                    pdi_mean: stats::mean(&rs.iter().map(|r| r.pdi).collect::<Vec<_>>()).expect("non-empty"),
                })
                .collect();
            rows.sort_by(|a, b| a.pdi_mean.total_cmp(&b.pdi_mean).then_with(|| a.model.cmp(&b.model)));
            CategoryTable { category, rows }
        })
        .collect();

    Ok(PdiReport { config: *config, models, categories, gt_anchor, videos })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

pub fn report_markdown(report: &PdiReport) -> String {
    let mut s = String::new();
    let level = (report.config.level * 100.0).round();
    writeln!(s, "# PDI report\n").unwrap();
    writeln!(
        s,
        "| Rank | Model | Videos | Scale | Traj | Rigidity | PDI (mean) | PDI (median) | CI{level} | Std | Outlier | Score |"
    )
    .unwrap();
    writeln!(s, "|---:|---|---:|---:|---:|---:|---:|---:|---|---:|---:|---:|").unwrap();
    for m in &report.models {
        writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {:.4} | {:.4} | [{:.4}, {:.4}] | {:.4} | {} | {} |",
            m.rank,
            m.model,
            m.videos,
            opt(m.scale_mean),
            opt(m.traj_mean),
            opt(m.rigidity_mean),
            m.mean_pdi,
            m.median_pdi,
            m.ci95.0,
            m.ci95.1,
            m.std,
            m.outlier_ratio.map_or_else(|| "n/a".into(), |r| format!("{:.1}%", 100.0 * r)),
            m.normalized_score.map_or_else(|| "n/a".into(), |x| format!("{x:.1}")),
        )
        .unwrap();
    }
    for table in &report.categories {
        writeln!(s, "\n## {}\n", table.category.label()).unwrap();
        writeln!(s, "| Model | Videos | Scale | Traj | Rigidity | PDI |").unwrap();
        writeln!(s, "|---|---:|---:|---:|---:|---:|").unwrap();
        for r in &table.rows {
            writeln!(
                s,
                "| {} | {} | {} | {} | {} | {:.4} |",
                r.model,
                r.videos,
                opt(r.scale_mean),
                opt(r.traj_mean),
                opt(r.rigidity_mean),
                r.pdi_mean
            )
            .unwrap();
        }
    }
    let flagged: Vec<&VideoRecord> =
        report.videos.iter().filter(|v| v.degraded || v.rigidity_strategy.as_str() == "none").collect();
    if !flagged.is_empty() {
        writeln!(s, "\n## Flagged videos\n").unwrap();
        writeln!(s, "| Video | Model | Degraded | Rigidity strategy | Weights used |").unwrap();
        writeln!(s, "|---|---|---|---|---|").unwrap();
        for v in flagged {
            let w = v.weights_used;
            writeln!(
                s,
                "| {} | {} | {} | {} | ({:.3}, {:.3}, {:.3}) |",
                v.video_id,
                v.source_model,
                v.degraded,
                v.rigidity_strategy.as_str(),
                w[0],
                w[1],
                w[2]
            )
            .unwrap();
        }
    }
    s
}

pub fn report_csv(report: &PdiReport) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "rank",
        "model",
        "videos",
        "degraded",
        "scale_mean",
        "traj_mean",
        "rigidity_mean",
        "pdi_mean",
        "pdi_median",
        "ci_lo",
        "ci_hi",
        "std",
        "outlier_ratio",
        "normalized_score",
    ])?;
    let o = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for m in &report.models {
        w.write_record([
            m.rank.to_string(),
            m.model.clone(),
            m.videos.to_string(),
            m.degraded.to_string(),
            o(m.scale_mean),
            o(m.traj_mean),
            o(m.rigidity_mean),
            m.mean_pdi.to_string(),
            m.median_pdi.to_string(),
            m.ci95.0.to_string(),
            m.ci95.1.to_string(),
            m.std.to_string(),
            o(m.outlier_ratio),
            o(m.normalized_score),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pdi_examples() {
        let w = PdiWeights::default();
        assert!((synthesize_pdi([0.0660, 0.1764, 0.1182], &w) - 0.1206).abs() < 5e-4);
        assert!((synthesize_pdi([0.2295, 0.2064, 0.3392], &w) - 0.2422).abs() < 5e-4);
        assert_eq!(synthesize_pdi([0.0; 3], &w), 0.0);
        let (score, used) = synthesize_available([None, Some(0.3), Some(0.6)], &w);
        assert!((score - (2.0 / 3.0 * 0.3 + 1.0 / 3.0 * 0.6)).abs() < 1e-15);
        assert_eq!(used[0], 0.0);
    }

    #[test]
    fn anchor_examples() {
        let gt = |v: &[f64]| v.iter().map(|&x| ([Some(x), None, Some(x)], x)).collect::<Vec<_>>();
        let a = gt_anchor(&gt(&[0.05, 0.07, 0.09])).unwrap();
        assert!((a.pdi.median - 0.07).abs() < 1e-15 && (a.pdi.mad - 0.02).abs() < 1e-12);
        assert!(a.traj.is_none());
        assert_eq!(gt_anchor(&gt(&[0.1, 0.1, 0.1])).unwrap().pdi.mad, 0.0);
        assert_eq!(gt_anchor(&gt(&[0.1])), Err(AggregateError::InsufficientGt(1)));
    }

    #[test]
    fn normalize_examples() {
        let a = RobustAnchor { median: 0.1, mad: 0.02 };
        assert_eq!(normalize_score(0.1, &a, 1.0), 100.0);
        assert_eq!(normalize_score(0.0, &a, 1.0), 100.0);
        assert!(normalize_score(1e6, &a, 1.0) < 1e-9);
        // Raw value placing z exactly at tau = 2.
        let raw = 0.1 + 2.0 * (MAD_TO_SIGMA * 0.02 + 1e-9);
        let expect = 100.0 * (1.0 - (2.0 / (1.0 + (-1f64).exp()) - 1.0));
        assert!((normalize_score(raw, &a, 2.0) - expect).abs() < 1e-9);
        assert!((expect - 53.788).abs() < 1e-3);
    }

    #[test]
    fn bootstrap_examples() {
        assert_eq!(bootstrap_ci(&[0.5; 3], 1000, 0.95, 1), Some((0.5, 0.5)));
        let (lo, hi) = bootstrap_ci(&[0.0, 1.0], 5000, 0.95, 2).unwrap();
        assert!(lo < 0.5 && 0.5 < hi);
        assert_eq!(bootstrap_ci(&[], 1000, 0.95, 0), None);
        let v = [0.1, 0.4, 0.35, 0.8, 0.2];
        assert_eq!(bootstrap_ci(&v, 1000, 0.95, 9), bootstrap_ci(&v, 1000, 0.95, 9));
    }

    #[test]
    fn outlier_examples() {
        assert_eq!(outlier_ratio(&[3.0; 6]).unwrap(), 0.0);
        let mut v = vec![1.0; 7];
        v.push(100.0);
        assert_eq!(outlier_ratio(&v).unwrap(), 0.125);
        let uniform: Vec<f64> = (0..20).map(|i| i as f64).collect();
        // Brute-force fence: Q1 4.75, Q3 14.25, fence 28.5.
        assert!(uniform.iter().all(|&x| x <= 28.5));
        assert_eq!(outlier_ratio(&uniform).unwrap(), 0.0);
        assert_eq!(outlier_ratio(&[1.0, 2.0, 3.0]), Err(AggregateError::TooFewValues(3)));
    }

    proptest! {
        #[test]
        fn normalize_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0, med in 0.0f64..0.5, mad in 0.0f64..0.2, tau in 0.1f64..5.0) {
            let anchor = RobustAnchor { median: med, mad };
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let (s_lo, s_hi) = (normalize_score(lo, &anchor, tau), normalize_score(hi, &anchor, tau));
            prop_assert!(s_hi <= s_lo);
            prop_assert!((0.0..=100.0).contains(&s_hi));
            if lo <= med {
                prop_assert_eq!(s_lo, 100.0);
            }
        }

        #[test]
        fn bootstrap_widens_with_level(v in prop::collection::vec(0.0f64..1.0, 2..30), seed in any::<u64>()) {
            let (lo90, hi90) = bootstrap_ci(&v, 1000, 0.90, seed).unwrap();
            let (lo95, hi95) = bootstrap_ci(&v, 1000, 0.95, seed).unwrap();
            prop_assert!(lo95 <= lo90 && hi90 <= hi95);
        }

        #[test]
        fn ranking_invariant_to_weight_rescaling(
            comps in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 2..8),
            c in 0.1f64..10.0,
        ) {
            let w = PdiWeights::default();
            let raw = w.as_array().map(|x| x * c);
            let sum: f64 = raw.iter().sum();
            let w2 = PdiWeights::new(raw[0] / sum, raw[1] / sum, raw[2] / sum).unwrap();
            let order = |w: &PdiWeights| {
                let mut idx: Vec<usize> = (0..comps.len()).collect();
                let score = |i: usize| synthesize_pdi([comps[i].0, comps[i].1, comps[i].2], w);
                idx.sort_by(|&a, &b| score(a).total_cmp(&score(b)).then(a.cmp(&b)));
                idx
            };
            let (a, b) = (order(&w), order(&w2));
            for (i, j) in a.iter().zip(&b) {
                if i != j {
                    let s = |k: usize, w: &PdiWeights| synthesize_pdi([comps[k].0, comps[k].1, comps[k].2], w);
                    prop_assert!((s(*i, &w) - s(*j, &w)).abs() < 1e-12);
                }
            }
        }
    }
}
