use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use pdi_core::aggregate::{build_report, report_csv, report_markdown};
use pdi_core::config::{EvalConfig, PdiWeights, ReportConfig};
use pdi_core::fidelity::{audit_reconstruction, FidelityError, GuardThresholds, DEFAULT_PAIR_COUNT};
use pdi_core::interchange::{load_bundle, load_manifest};
use pdi_core::pipeline::{evaluate_manifest, read_results, write_results};
use pdi_core::synth::{render_bundle, write_scene, SyntheticSceneSpec};

const EXIT_FAIL: u8 = 1;
const EXIT_PARTIAL: u8 = 2;
const EXIT_MISSING_EVIDENCE: u8 = 3;

/// Geometric auditing of generated video.
#[derive(Debug, Parser)]
#[command(name = "pdi", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate every bundle of a manifest into `results.json`.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Component weights `scale,traj,rigidity`.
        #[arg(long, default_value = "0.4,0.4,0.2")]
        weights: PdiWeights,
        /// Worker threads; defaults to the number of CPUs.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Aggregate `results.json` into ranking and category tables.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long, default_value_t = 2000)]
        resamples: usize,
        /// Bootstrap seed; defaults to the seed of the evaluation run.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render a synthetic scene into a bundle plus `sidecar.json`.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Reprojection audit of a bundle's reconstruction.
    Audit {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = GuardThresholds::default().cov_min)]
        cov_min: f64,
        #[arg(long, default_value_t = GuardThresholds::default().mae_max)]
        mae_max: f64,
        #[arg(long, default_value_t = GuardThresholds::default().l2_max)]
        l2_max: f64,
        #[arg(long, default_value_t = DEFAULT_PAIR_COUNT)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Schema check of a bundle.
    Validate {
        #[arg(long)]
        bundle: PathBuf,
    },
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn evaluate(manifest: &Path, out: &Path, weights: PdiWeights, jobs: Option<usize>, seed: u64) -> Result<ExitCode> {
    let manifest = load_manifest(manifest)?;
    let config = EvalConfig { weights, seed, ..EvalConfig::default() };
    let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let results = evaluate_manifest(&manifest, &config, jobs)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join("results.json");
    write_results(&results, &path).with_context(|| format!("writing {}", path.display()))?;
    println!("{} videos evaluated, {} failed -> {}", results.videos.len(), results.failures.len(), path.display());
    for f in &results.failures {
        eprintln!("failed {}: {}", f.video_id, f.reason);
    }
    Ok(if results.failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(EXIT_PARTIAL) })
}

fn report(results: &Path, out: &Path, tau: f64, resamples: usize, seed: Option<u64>) -> Result<ExitCode> {
    let results = read_results(results).with_context(|| format!("reading {}", results.display()))?;
    let config = ReportConfig { tau, resamples, seed: seed.unwrap_or(results.config.seed), ..ReportConfig::default() };
    config.validate()?;
    let report = build_report(&results.videos, &config)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let markdown = report_markdown(&report);
    write_text(&out.join("report.md"), &markdown)?;
    write_text(&out.join("report.csv"), &report_csv(&report)?)?;
    write_text(&out.join("report.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    print!("{markdown}");
    Ok(ExitCode::SUCCESS)
}

fn synth(spec: &Path, out: &Path, seed: u64) -> Result<ExitCode> {
    let text = std::fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let spec = SyntheticSceneSpec::from_json(&text)?;
    let scene = render_bundle(&spec, seed)?;
    write_scene(&scene, out)?;
    info!("rendered {} frames of {}x{}", spec.frames, spec.width, spec.height);
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn audit(bundle: &Path, thresholds: GuardThresholds, pairs: usize, seed: u64) -> Result<ExitCode> {
    let bundle = match load_bundle(bundle) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(EXIT_MISSING_EVIDENCE));
        }
    };
    let report = match audit_reconstruction(&bundle, pairs, &thresholds, seed) {
        Ok(r) => r,
        Err(e @ FidelityError::MissingEvidence(_)) | Err(e @ FidelityError::TooFewFrames(_)) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(EXIT_MISSING_EVIDENCE));
        }
    };
    println!("pair        coverage  mae      l2       pass");
    for a in &report.audits {
        println!(
            "{:>4} -> {:<4} {:>8.4}  {:>7.4}  {:>7.4}  {}",
            a.frame_a,
            a.frame_b,
            a.coverage,
            a.mae,
            a.l2,
            if a.pass { "yes" } else { "no" }
        );
    }
    let verdict = if report.pass { "PASS" } else { "FAIL" };
    println!("{verdict}: {}/{} pairs passed", report.pairs_passed, report.audits.len());
    Ok(if report.pass { ExitCode::SUCCESS } else { ExitCode::from(EXIT_FAIL) })
}

fn validate(bundle: &Path) -> Result<ExitCode> {
    let b = load_bundle(bundle)?;
    b.validate()?;
    let m = &b.meta;
    println!(
        "ok: {} frames {}x{} @ {} fps, {} tracks, pointmaps {}, rgb {}, poses {}, intrinsics {}",
        m.frame_count,
        m.width,
        m.height,
        m.fps,
        b.tracks.len(),
        yes_no(b.pointmaps.is_some()),
        yes_no(b.frames.is_some()),
        yes_no(b.poses.is_some()),
        yes_no(b.intrinsics.is_some()),
    );
    Ok(ExitCode::SUCCESS)
}

fn yes_no(b: bool) -> &'static str {
    if b { "yes" } else { "no" }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Evaluate { manifest, out, weights, jobs, seed } => evaluate(&manifest, &out, weights, jobs, seed),
        Command::Report { results, out, tau, resamples, seed } => report(&results, &out, tau, resamples, seed),
        Command::Synth { spec, out, seed } => synth(&spec, &out, seed),
        Command::Audit { bundle, cov_min, mae_max, l2_max, pairs, seed } => {
            audit(&bundle, GuardThresholds { cov_min, mae_max, l2_max }, pairs, seed)
        }
        Command::Validate { bundle } => validate(&bundle),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PDI_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAIL)
        }
    }
}
