//! Per-video evaluation and the batch runner over a manifest.
//!
//! Per video: load and sanitize tracks, run the reconstruction guard when its
//! evidence exists, extract observations, then compute the three components
//! and the VP diagnostics. Scale needs trusted 3D evidence; trajectory needs
//! world centroids; rigidity degrades through its strategy hierarchy.

use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{build_report, synthesize_available, ModelSummary};
use crate::config::{derive_seed, EvalConfig, ReportConfig};
use crate::fidelity::{audit_reconstruction, FidelityError, GuardReport};
use crate::interchange::{load_bundle, sanitize_tracks, Category, InterchangeError, Manifest, ManifestEntry, PerceptionBundle};
use crate::metrics::rigidity::RigidityOptions;
use crate::metrics::{compute_kinematics, compute_scale_residuals, compute_traj_residuals, rigidity_dispatch, RigidityStrategy};
use crate::observation::{extract_observations, smooth_centroids, ObservationError};
use crate::vp::{vp_diagnostics, VpCouplingResult};

pub const RESULTS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Interchange(#[from] InterchangeError),
    #[error(transparent)]
    Observation(#[from] ObservationError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// Outcome of the reconstruction guard for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum GuardStatus {
    Passed { report: GuardReport },
    Failed { report: GuardReport },
    /// Evidence for the audit is missing; the reconstruction is used as is.
    Skipped { reason: String },
    /// No pointmaps, nothing to audit.
    NotApplicable,
}

/// Everything computed for one video. Component values are `None` when the
/// evidence does not support them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub source_model: String,
    pub category: Category,
    pub is_ground_truth: bool,
    pub frame_count: usize,
    pub scale_rmse: Option<f64>,
    pub traj_rmse: Option<f64>,
    /// `0` with strategy `none`.
    pub rigidity: f64,
    pub rigidity_strategy: RigidityStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rigidity_fallback: Option<String>,
    pub pdi: f64,
    /// Weights applied after dropping unavailable components.
    pub weights_used: [f64; 3],
    pub degraded: bool,
    pub notes: Vec<String>,
    pub guard: GuardStatus,
    pub vp: VpCouplingResult,
    pub tracks_total: usize,
    pub tracks_kept: usize,
    pub frames_inherited: usize,
}

impl VideoRecord {
    /// Rigidity as a PDI component: unavailable when no strategy applied.
    pub fn rigidity_component(&self) -> Option<f64> {
        (self.rigidity_strategy != RigidityStrategy::None).then_some(self.rigidity)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub video_id: String,
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub schema_version: u32,
    pub config: EvalConfig,
    pub videos: Vec<VideoRecord>,
    pub failures: Vec<FailureRecord>,
    /// Per-model aggregates with default report settings and the run seed.
    pub models: Vec<ModelSummary>,
}

/// Identification of a video independent of where its bundle lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoLabel {
    pub video_id: String,
    pub source_model: String,
    pub category: Category,
    pub is_ground_truth: bool,
}

impl VideoLabel {
    pub fn from_bundle(video_id: &str, bundle: &PerceptionBundle) -> Self {
        Self {
            video_id: video_id.to_string(),
            source_model: bundle.meta.source_model.clone(),
            category: bundle.meta.category,
            is_ground_truth: bundle.meta.source_model.eq_ignore_ascii_case("gt"),
        }
    }

    fn from_entry(entry: &ManifestEntry, bundle: &PerceptionBundle) -> Self {
        Self {
            video_id: entry.video_id.clone(),
            source_model: entry.source_model.clone().unwrap_or_else(|| bundle.meta.source_model.clone()),
            category: entry.category.unwrap_or(bundle.meta.category),
            is_ground_truth: entry.is_ground_truth,
        }
    }
}

pub fn evaluate_bundle(
    bundle: &PerceptionBundle,
    label: VideoLabel,
    config: &EvalConfig,
) -> Result<VideoRecord, PipelineError> {
    config.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    bundle.validate()?;
    let mut notes = Vec::new();
    let tracks = sanitize_tracks(&bundle.tracks, &bundle.meta, config.conf_threshold, config.jump_fraction);
    debug!("{}: kept {} of {} tracks", label.video_id, tracks.len(), bundle.tracks.len());

    let guard = match &bundle.pointmaps {
        None => GuardStatus::NotApplicable,
        Some(_) => {
            let seed = derive_seed(config.seed, &label.video_id);
            match audit_reconstruction(bundle, config.guard_pairs, &config.thresholds, seed) {
                Ok(report) if report.pass => GuardStatus::Passed { report },
                Ok(report) => GuardStatus::Failed { report },
                Err(FidelityError::MissingEvidence(what)) => {
                    GuardStatus::Skipped { reason: format!("missing {what}") }
                }
                Err(e) => GuardStatus::Skipped { reason: e.to_string() },
            }
        }
    };
    let trusted_3d = matches!(guard, GuardStatus::Passed { .. } | GuardStatus::Skipped { .. });
    let degraded = !trusted_3d;
    match &guard {
        GuardStatus::Failed { .. } => {
            warn!("{}: reconstruction failed the fidelity guard, degraded mode", label.video_id);
            notes.push("reconstruction failed the fidelity guard".to_string());
        }
        GuardStatus::NotApplicable => notes.push("no pointmaps: 2D-only evaluation".to_string()),
        GuardStatus::Skipped { reason } => notes.push(format!("fidelity guard skipped: {reason}")),
        GuardStatus::Passed { .. } => {}
    }

    let raw_obs = extract_observations(bundle, config.min_fg_points)?;
    let frames_inherited = raw_obs.inherited.iter().filter(|&&i| i).count();
    let obs = smooth_centroids(&raw_obs, config.smoothing_window);

    let scale_rmse = if trusted_3d {
        match compute_scale_residuals(&obs) {
            Ok(s) => Some(s.rmse),
            Err(e) => {
                notes.push(format!("scale unavailable: {e}"));
                None
            }
        }
    } else {
        notes.push("scale unavailable without trusted 3D evidence".to_string());
        None
    };

    let traj_rmse = match &obs.centroids {
        Some(cs) => match compute_kinematics(cs, bundle.meta.fps) {
            Ok(k) => Some(compute_traj_residuals(&k).rmse),
            Err(e) => {
                notes.push(format!("trajectory unavailable: {e}"));
                None
            }
        },
        None => {
            notes.push("trajectory unavailable without world centroids".to_string());
            None
        }
    };

    let rigidity = rigidity_dispatch(
        bundle,
        &tracks,
        &RigidityOptions { max_pairs: config.max_anchor_pairs },
        trusted_3d,
    );
    let vp = vp_diagnostics(bundle, &obs);

    let rigidity_component = (rigidity.strategy != RigidityStrategy::None).then_some(rigidity.value);
    let (pdi, weights_used) = synthesize_available([scale_rmse, traj_rmse, rigidity_component], &config.weights);
    info!(
        "{}: pdi {:.4} (scale {:?}, traj {:?}, rigidity {:.4} via {})",
        label.video_id,
        pdi,
        scale_rmse,
        traj_rmse,
        rigidity.value,
        rigidity.strategy.as_str()
    );
    Ok(VideoRecord {
        video_id: label.video_id,
        source_model: label.source_model,
        category: label.category,
        is_ground_truth: label.is_ground_truth,
        frame_count: bundle.meta.frame_count,
        scale_rmse,
        traj_rmse,
        rigidity: rigidity.value,
        rigidity_strategy: rigidity.strategy,
        rigidity_fallback: rigidity.fallback_reason,
        pdi,
        weights_used,
        degraded,
        notes,
        guard,
        vp,
        tracks_total: bundle.tracks.len(),
        tracks_kept: tracks.len(),
        frames_inherited,
    })
}

fn evaluate_entry(entry: &ManifestEntry, config: &EvalConfig) -> Result<VideoRecord, PipelineError> {
    let bundle = load_bundle(&entry.path)?;
    evaluate_bundle(&bundle, VideoLabel::from_entry(entry, &bundle), config)
}

/// Evaluates every manifest entry on `jobs` worker threads. Failures are
/// collected, never fatal; output order is by `video_id`.
pub fn evaluate_manifest(manifest: &Manifest, config: &EvalConfig, jobs: usize) -> Result<ResultsFile, PipelineError> {
    config.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| PipelineError::ThreadPool(e.to_string()))?;
    let outcomes: Vec<(&ManifestEntry, Result<VideoRecord, PipelineError>)> =
        pool.install(|| manifest.videos.par_iter().map(|e| (e, evaluate_entry(e, config))).collect());

    let mut videos = Vec::new();
    let mut failures = Vec::new();
    for (entry, outcome) in outcomes {
        match outcome {
            Ok(r) => videos.push(r),
            Err(e) => {
                warn!("{}: {e}", entry.video_id);
                failures.push(FailureRecord { video_id: entry.video_id.clone(), path: entry.path.clone(), reason: e.to_string() });
            }
        }
    }
    videos.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    failures.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    let report_config = ReportConfig { seed: config.seed, ..ReportConfig::default() };
    let models = build_report(&videos, &report_config).map(|r| r.models).unwrap_or_default();
    Ok(ResultsFile { schema_version: RESULTS_SCHEMA_VERSION, config: config.clone(), videos, failures, models })
}

pub fn write_results(results: &ResultsFile, path: &Path) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(results).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

pub fn read_results(path: &Path) -> std::io::Result<ResultsFile> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
