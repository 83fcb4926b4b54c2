//! `tephra evaluate`: leave-one-out KL reports for trained artifacts.
//!
//! Every artifact given on the command line is evaluated against the test
//! split, alongside a Euclidean-on-data baseline. Per-artifact failures are
//! recorded in the summary and do not stop the run.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use tephra_core::distances::LearnedDistance;
use tephra_core::kl::{loo_evaluate, KlReport};

use crate::config::LoadedConfig;
use crate::manifest::{manifest_path, StageManifest};
use crate::CliError;

use super::fmt_f64;
use super::train::{load_training_set, sidecar_path};

#[derive(Serialize)]
struct SummaryRow {
    technique: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    quantile: Option<f64>,
    median: f64,
    mean: f64,
    std_dev: f64,
    observations: usize,
    skipped: usize,
}

#[derive(Serialize)]
struct FailureRow {
    artifact: String,
    reason: String,
}

#[derive(Serialize)]
struct Summary {
    reports: Vec<SummaryRow>,
    failures: Vec<FailureRow>,
    /// `(technique, quantile)` with the smallest median estimate.
    best: Option<(String, Option<f64>)>,
}

pub fn run_evaluate(
    loaded: &LoadedConfig,
    out: &Path,
    artifacts: &[std::path::PathBuf],
) -> Result<(), CliError> {
    super::ensure_out_dir(out)?;
    let ts = load_training_set(loaded, out)?;
    let spec = loaded.gibbs_spec();

    let mut reports: Vec<KlReport> = Vec::new();
    let mut failures: Vec<FailureRow> = Vec::new();

    // Baseline: plain Euclidean distance between raw datasets.
    reports.push(loo_evaluate(&ts, &LearnedDistance::Euclidean, &spec)?);

    for path in artifacts {
        let evaluated = (|| -> Result<KlReport, CliError> {
            let sidecar = StageManifest::read(&sidecar_path(path))?;
            sidecar.verify_run_id(loaded)?;
            let artifact = LearnedDistance::load(path)?;
            let mut report = loo_evaluate(&ts, &artifact, &spec)?;
            if let Some(technique) = sidecar.notes.get("technique") {
                report.technique = technique.clone();
            }
            report.quantile = sidecar.notes.get("quantile").and_then(|q| q.parse().ok());
            Ok(report)
        })();
        match evaluated {
            Ok(report) => reports.push(report),
            Err(CliError::Config(reason)) if reason.contains("config hash mismatch") => {
                // Mixing artifacts across runs is a hard error, not a row.
                return Err(CliError::Config(reason));
            }
            Err(e) => {
                log::warn!("artifact {} failed: {e}", path.display());
                failures.push(FailureRow {
                    artifact: path.display().to_string(),
                    reason: e.to_string(),
                });
            }
        }
    }

    let report_path = out.join("kl_report.csv");
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(&report_path)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", report_path.display())))?,
    );
    writeln!(w, "technique,quantile,observation_id,kl_estimate")
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    for report in &reports {
        let q = report.quantile.map(|q| fmt_f64(q)).unwrap_or_default();
        for (obs, est) in &report.estimates {
            writeln!(w, "{},{q},{obs},{}", report.technique, fmt_f64(*est))
                .map_err(|e| CliError::Runtime(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;

    let best = reports
        .iter()
        .filter(|r| !r.estimates.is_empty())
        .min_by(|a, b| a.median().partial_cmp(&b.median()).unwrap())
        .map(|r| (r.technique.clone(), r.quantile));
    let summary = Summary {
        reports: reports
            .iter()
            .map(|r| SummaryRow {
                technique: r.technique.clone(),
                quantile: r.quantile,
                median: r.median(),
                mean: r.mean(),
                std_dev: r.std_dev(),
                observations: r.estimates.len(),
                skipped: r.skipped.len(),
            })
            .collect(),
        failures,
        best,
    };
    let summary_path = out.join("kl_summary.json");
    std::fs::write(
        &summary_path,
        serde_json::to_string_pretty(&summary).map_err(|e| CliError::Runtime(e.to_string()))?,
    )
    .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", summary_path.display())))?;

    let mut manifest = StageManifest::new(
        "evaluate",
        loaded,
        tephra_core::rng::derive_seed(loaded.config.master_seed, "evaluate"),
    );
    for a in artifacts {
        manifest.input(a);
    }
    manifest.output(&report_path).output(&summary_path);
    if let Some((technique, quantile)) = &summary.best {
        manifest.note("best_technique", technique);
        if let Some(q) = quantile {
            manifest.note("best_quantile", q);
        }
    }
    manifest.write(&manifest_path(out, "evaluate"))?;
    Ok(())
}
