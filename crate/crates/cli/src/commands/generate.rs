//! `tephra generate`: draw parameters from the prior, simulate each through
//! the scheduler and write the training set.

use std::path::Path;

use nalgebra::DVector;
use tephra_core::metric::TrainingSet;
use tephra_core::model::{sample_prior, ParameterVector};
use tephra_core::rng::{derive_seed, derive_stream};
use tephra_core::scheduler::TeamPool;

use crate::config::LoadedConfig;
use crate::manifest::{manifest_path, StageManifest};
use crate::CliError;

use super::{ensure_out_dir, training_set_paths};

pub fn run_generate(
    loaded: &LoadedConfig,
    out: &Path,
    teams: Option<usize>,
    workers: Option<usize>,
) -> Result<(), CliError> {
    ensure_out_dir(out)?;
    let cfg = &loaded.config;
    let prior = loaded.prior()?;
    let stage_seed = derive_seed(cfg.master_seed, "generate");
    let thetas = sample_prior(&prior, stage_seed, cfg.training.n)?;

    let mut pool = TeamPool::new(loaded.team_descriptors(teams, workers)?, loaded.item_simulator()?)?;
    let requests: Vec<(ParameterVector, u64)> = thetas
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), derive_stream(stage_seed, i as u64)))
        .collect();
    let outcomes = pool.simulate_all(&requests)?;

    let mut kept_thetas = Vec::with_capacity(cfg.training.n);
    let mut kept_datasets = Vec::with_capacity(cfg.training.n);
    let mut failures = Vec::new();
    for ((theta, _), outcome) in requests.into_iter().zip(outcomes) {
        match outcome {
            Ok(loads) => {
                kept_thetas.push(theta);
                kept_datasets.push(DVector::from_vec(loads));
            }
            Err(f) => failures.push(f),
        }
    }
    // A small number of failed simulations is dropped; beyond 1% the run
    // aborts with the failure report.
    if failures.len() * 100 > cfg.training.n {
        return Err(CliError::Runtime(format!(
            "{} of {} simulations failed (>1%); first failure: {}",
            failures.len(),
            cfg.training.n,
            failures[0]
        )));
    }
    if !failures.is_empty() {
        log::warn!(
            "dropping {} failed simulation(s) out of {}",
            failures.len(),
            cfg.training.n
        );
    }

    let ts = TrainingSet::with_leading_split(kept_thetas, kept_datasets, cfg.training.train_fraction)?;
    let (data_path, split_path) = training_set_paths(out);
    ts.write_jsonl(&data_path)?;
    ts.write_split(&split_path)?;

    let mut manifest = StageManifest::new("generate", loaded, stage_seed);
    manifest
        .output(&data_path)
        .output(&split_path)
        .note("n_requested", cfg.training.n)
        .note("n_kept", ts.len())
        .note("n_failed", failures.len())
        .note("n_train", ts.train_indices().len())
        .note("n_test", ts.test_indices().len());
    manifest.write(&manifest_path(out, "generate"))?;
    Ok(())
}
