//! `tephra train`: learn a distance artifact from the generated set.

use std::io::Write;
use std::path::{Path, PathBuf};

use tephra_core::distances::LearnedDistance;
use tephra_core::metric::{
    build_similarity, train_contrastive, train_sdml_traced, train_summary_stats, train_triplet,
    TrainingSet,
};
use tephra_core::rng::derive_seed;

use crate::config::LoadedConfig;
use crate::manifest::{manifest_path, StageManifest};
use crate::CliError;

use super::{ensure_out_dir, fmt_f64, training_set_paths};

pub const TECHNIQUES: [&str; 4] = ["sdml", "contrastive", "triplet", "summary_stats"];

/// Loads the generated training set, verifying it belongs to this run.
pub(crate) fn load_training_set(loaded: &LoadedConfig, out: &Path) -> Result<TrainingSet, CliError> {
    let generate_manifest = StageManifest::read(&manifest_path(out, "generate"))?;
    generate_manifest.verify_run_id(loaded)?;
    let (data_path, split_path) = training_set_paths(out);
    TrainingSet::load(&data_path, &split_path).map_err(CliError::from)
}

pub fn artifact_path(out: &Path, technique: &str, quantile: Option<f64>) -> PathBuf {
    match quantile {
        Some(q) => out.join(format!("artifact_{technique}_q{q:.2}.json")),
        None => out.join(format!("artifact_{technique}.json")),
    }
}

pub fn run_train(
    loaded: &LoadedConfig,
    out: &Path,
    technique: Option<&str>,
    quantile: Option<f64>,
) -> Result<PathBuf, CliError> {
    ensure_out_dir(out)?;
    let cfg = &loaded.config;
    let technique = technique.unwrap_or(&cfg.metric.technique).to_string();
    if !TECHNIQUES.contains(&technique.as_str()) {
        return Err(CliError::Config(format!(
            "unknown technique '{technique}'; expected one of {TECHNIQUES:?}"
        )));
    }
    let q = quantile.unwrap_or(cfg.metric.quantile);
    if !(q > 0.0 && q < 1.0) {
        return Err(CliError::Config(format!(
            "quantile must lie in (0, 1), got {q}"
        )));
    }

    let ts = load_training_set(loaded, out)?;
    // The similarity quantile plays no role in the regression trainer.
    let labelled_q = if technique == "summary_stats" { None } else { Some(q) };
    let stage = match labelled_q {
        Some(q) => format!("train/{technique}/q{q:.2}"),
        None => format!("train/{technique}"),
    };
    let stage_seed = derive_seed(cfg.master_seed, &stage);

    let (artifact, trace, trace_header) = match technique.as_str() {
        "sdml" => {
            let labels = build_similarity(ts.thetas(), q).map_err(remap_train_error)?;
            let outcome =
                train_sdml_traced(&ts, &labels, &loaded.sdml_config(ts.data_dim())).map_err(remap_train_error)?;
            (
                LearnedDistance::Mahalanobis(outcome.matrix),
                outcome.objective_trace,
                "iteration,objective",
            )
        }
        "contrastive" => {
            let labels = build_similarity(ts.thetas(), q).map_err(remap_train_error)?;
            let outcome = train_contrastive(&ts, &labels, &loaded.deep_config("contrastive", stage_seed))
                .map_err(remap_train_error)?;
            (
                LearnedDistance::Embedding(outcome.weights),
                outcome.loss_trace,
                "epoch,loss",
            )
        }
        "triplet" => {
            let labels = build_similarity(ts.thetas(), q).map_err(remap_train_error)?;
            let outcome = train_triplet(&ts, &labels, &loaded.deep_config("triplet", stage_seed))
                .map_err(remap_train_error)?;
            (
                LearnedDistance::Embedding(outcome.weights),
                outcome.loss_trace,
                "epoch,loss",
            )
        }
        "summary_stats" => {
            let outcome = train_summary_stats(&ts, &loaded.summary_config(stage_seed))
                .map_err(remap_train_error)?;
            (
                LearnedDistance::SummaryStats(outcome.weights),
                outcome.loss_trace,
                "epoch,loss",
            )
        }
        _ => unreachable!("validated above"),
    };

    let artifact_file = artifact_path(out, &technique, labelled_q);
    artifact.save(&artifact_file)?;

    let trace_file = match labelled_q {
        Some(q) => out.join(format!("loss_{technique}_q{q:.2}.csv")),
        None => out.join(format!("loss_{technique}.csv")),
    };
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(&trace_file)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", trace_file.display())))?,
    );
    writeln!(w, "{trace_header}").map_err(|e| CliError::Runtime(e.to_string()))?;
    for (i, v) in trace.iter().enumerate() {
        writeln!(w, "{i},{}", fmt_f64(*v)).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;

    // Per-artifact sidecar: provenance consumed by evaluate/infer.
    let mut sidecar = StageManifest::new("train", loaded, stage_seed);
    sidecar
        .output(&artifact_file)
        .output(&trace_file)
        .note("technique", &technique);
    if let Some(q) = labelled_q {
        sidecar.note("quantile", q);
    }
    sidecar.write(&sidecar_path(&artifact_file))?;
    Ok(artifact_file)
}

pub fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Trainer preconditions surface as config-class errors with a remediation
/// hint; everything else is a runtime failure.
fn remap_train_error(e: tephra_core::Error) -> CliError {
    match &e {
        tephra_core::Error::DegenerateSimilarity { sample, missing } => CliError::Config(format!(
            "{e}: sample {sample} has no {missing} partner; pick a quantile that leaves every \
             training sample with both similar and dissimilar partners (the deep trainers are \
             not applicable once a sample is similar to all others)"
        )),
        _ => CliError::from(e),
    }
}
