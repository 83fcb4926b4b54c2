//! `tephra infer`: APMCABC posterior inference for one observation.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use tephra_core::abc::{apmcabc, bayes_estimate, posterior_correlation, AbcConfig, Termination};
use tephra_core::distances::LearnedDistance;
use tephra_core::rng::derive_seed;
use tephra_core::scheduler::TeamPool;

use crate::config::LoadedConfig;
use crate::manifest::{manifest_path, StageManifest};
use crate::CliError;

use super::train::sidecar_path;
use super::{ensure_out_dir, fmt_f64, load_observation};

#[derive(Serialize)]
struct GenerationRecord {
    step: usize,
    gamma: f64,
    acceptance_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel_cov: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize)]
struct GenerationsFile {
    generations: Vec<GenerationRecord>,
    termination: Termination,
}

#[derive(Serialize)]
struct EstimateFile {
    /// Posterior mean over the gamma-accepted sample of the final
    /// generation.
    bayes_estimate: Vec<f64>,
    posterior_correlation: f64,
    final_gamma: f64,
    n_generations: usize,
    termination: Termination,
}

pub fn run_infer(
    loaded: &LoadedConfig,
    out: &Path,
    artifact_file: &Path,
    teams: Option<usize>,
    workers: Option<usize>,
) -> Result<(), CliError> {
    ensure_out_dir(out)?;
    let cfg = &loaded.config;
    let prior = loaded.prior()?;
    if prior_dim(&prior) != 2 {
        return Err(CliError::Config(
            "infer writes (u0, r0) posterior files and needs a 2-parameter prior".into(),
        ));
    }
    let obs_path = cfg.abc.observation.as_ref().ok_or_else(|| {
        CliError::Config("abc.observation must point at the observed dataset JSON".into())
    })?;
    let x0 = load_observation(obs_path)?;

    let sidecar = StageManifest::read(&sidecar_path(artifact_file))?;
    sidecar.verify_run_id(loaded)?;
    let distance = LearnedDistance::load(artifact_file)?;
    if let Some(expected) = distance.expected_len() {
        if expected != x0.len() {
            return Err(CliError::Config(format!(
                "observation has {} loads but the artifact expects {expected}",
                x0.len()
            )));
        }
    }

    let stage_seed = derive_seed(cfg.master_seed, "infer");
    let abc_cfg = AbcConfig {
        n_sample: cfg.abc.n_sample,
        n_step: cfg.abc.n_step,
        acc_cutoff: cfg.abc.acc_cutoff,
        keep_fraction: cfg.abc.keep_fraction,
        seed: stage_seed,
    };
    let mut pool = TeamPool::new(loaded.team_descriptors(teams, workers)?, loaded.item_simulator()?)?;
    let run = apmcabc(&mut pool, &prior, &distance, &x0, &abc_cfg)?;

    // posterior_samples.csv: every generation's full population.
    let samples_path = out.join("posterior_samples.csv");
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(&samples_path)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", samples_path.display())))?,
    );
    writeln!(w, "step,particle_id,u0,r0,weight,distance").map_err(|e| CliError::Runtime(e.to_string()))?;
    for generation in &run.generations {
        for (id, p) in generation.particles.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                generation.step,
                id,
                fmt_f64(p.theta.u0()),
                fmt_f64(p.theta.r0()),
                fmt_f64(p.weight),
                fmt_f64(p.distance)
            )
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;

    let generations_path = out.join("generations.json");
    let file = GenerationsFile {
        generations: run
            .generations
            .iter()
            .map(|g| GenerationRecord {
                step: g.step,
                gamma: g.gamma,
                acceptance_rate: g.acceptance_rate,
                kernel_cov: g.kernel_cov.as_ref().map(|m| {
                    (0..m.nrows())
                        .map(|r| m.row(r).iter().cloned().collect())
                        .collect()
                }),
            })
            .collect(),
        termination: run.termination.clone(),
    };
    std::fs::write(
        &generations_path,
        serde_json::to_string_pretty(&file).map_err(|e| CliError::Runtime(e.to_string()))?,
    )
    .map_err(|e| CliError::Runtime(e.to_string()))?;

    let final_gen = run.final_generation();
    let posterior = final_gen.posterior_particles();
    let estimate_input = if posterior.is_empty() {
        // Degenerate runs (e.g. a constant distance) still report over the
        // full final population.
        final_gen.particles.clone()
    } else {
        posterior
    };
    let estimate = bayes_estimate(&estimate_input)?;
    let correlation = posterior_correlation(&estimate_input).unwrap_or(f64::NAN);
    let estimate_path = out.join("estimate.json");
    let estimate_file = EstimateFile {
        bayes_estimate: estimate.as_slice().to_vec(),
        posterior_correlation: correlation,
        final_gamma: final_gen.gamma,
        n_generations: run.generations.len(),
        termination: run.termination.clone(),
    };
    std::fs::write(
        &estimate_path,
        serde_json::to_string_pretty(&estimate_file).map_err(|e| CliError::Runtime(e.to_string()))?,
    )
    .map_err(|e| CliError::Runtime(e.to_string()))?;

    if let Termination::AcceptanceCutoff { rate } = &run.termination {
        log::info!(
            "inference stopped early: acceptance rate {rate:.4} fell below the cutoff {}",
            cfg.abc.acc_cutoff
        );
    }

    let mut manifest = StageManifest::new("infer", loaded, stage_seed);
    manifest
        .input(obs_path)
        .input(artifact_file)
        .output(&samples_path)
        .output(&generations_path)
        .output(&estimate_path)
        .note("n_generations", run.generations.len())
        .note("final_gamma", fmt_f64(final_gen.gamma))
        .note("termination", format!("{:?}", run.termination));
    manifest.write(&manifest_path(out, "infer"))?;
    Ok(())
}

fn prior_dim(prior: &tephra_core::model::PriorBox) -> usize {
    use tephra_core::model::Prior;
    prior.dim()
}
