//! `tephra ppc`: posterior predictive check against the observation.

use std::io::Write;
use std::path::Path;

use tephra_core::abc::{posterior_predictive_check, Particle};
use tephra_core::model::ParameterVector;
use tephra_core::rng::derive_seed;
use tephra_core::scheduler::TeamPool;

use crate::config::LoadedConfig;
use crate::manifest::{manifest_path, StageManifest};
use crate::CliError;

use super::{ensure_out_dir, fmt_f64, load_observation};

/// Reads the final generation's gamma-accepted particles back from the
/// inference outputs.
fn load_posterior(loaded: &LoadedConfig, out: &Path) -> Result<Vec<Particle>, CliError> {
    let infer_manifest = StageManifest::read(&manifest_path(out, "infer"))?;
    infer_manifest.verify_run_id(loaded)?;

    let generations_path = out.join("generations.json");
    let text = std::fs::read_to_string(&generations_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", generations_path.display())))?;
    let generations: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    let last = generations["generations"]
        .as_array()
        .and_then(|a| a.last())
        .ok_or_else(|| CliError::Config("generations.json holds no generations".into()))?;
    let final_step = last["step"].as_u64().unwrap_or(0);
    let final_gamma = last["gamma"]
        .as_f64()
        .ok_or_else(|| CliError::Config("generations.json: missing gamma".into()))?;

    let samples_path = out.join("posterior_samples.csv");
    let mut reader = csv::Reader::from_path(&samples_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", samples_path.display())))?;
    let mut particles = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Config(e.to_string()))?;
        let step: u64 = record[0].parse().map_err(|e| CliError::Config(format!("bad step: {e}")))?;
        if step != final_step {
            continue;
        }
        let u0: f64 = record[2].parse().map_err(|e| CliError::Config(format!("bad u0: {e}")))?;
        let r0: f64 = record[3].parse().map_err(|e| CliError::Config(format!("bad r0: {e}")))?;
        let weight: f64 = record[4].parse().map_err(|e| CliError::Config(format!("bad weight: {e}")))?;
        let distance: f64 = record[5].parse().map_err(|e| CliError::Config(format!("bad distance: {e}")))?;
        particles.push(Particle {
            theta: ParameterVector::plume(u0, r0),
            weight,
            distance,
            dataset_hash: 0,
        });
    }
    // The posterior sample: particles beating the final threshold. A
    // degenerate run (gamma 0) falls back to the whole final population.
    let accepted: Vec<Particle> = particles
        .iter()
        .filter(|p| p.distance < final_gamma)
        .cloned()
        .collect();
    let mut chosen = if accepted.is_empty() { particles } else { accepted };
    let total: f64 = chosen.iter().map(|p| p.weight).sum();
    if !(total > 0.0) {
        return Err(CliError::Config("posterior sample carries no weight".into()));
    }
    for p in &mut chosen {
        p.weight /= total;
    }
    Ok(chosen)
}

pub fn run_ppc(
    loaded: &LoadedConfig,
    out: &Path,
    teams: Option<usize>,
    workers: Option<usize>,
) -> Result<(), CliError> {
    ensure_out_dir(out)?;
    let cfg = &loaded.config;
    let obs_path = cfg.abc.observation.as_ref().ok_or_else(|| {
        CliError::Config("abc.observation must point at the observed dataset JSON".into())
    })?;
    let x0 = load_observation(obs_path)?;
    let particles = load_posterior(loaded, out)?;

    let stage_seed = derive_seed(cfg.master_seed, "ppc");
    let mut pool = TeamPool::new(loaded.team_descriptors(teams, workers)?, loaded.item_simulator()?)?;
    let outcome = posterior_predictive_check(&particles, &mut pool, &x0, cfg.ppc.n_draws, stage_seed)?;

    let locations = loaded.locations()?;
    if locations.len() != outcome.rows.len() {
        return Err(CliError::Config(format!(
            "{} locations configured but the predictive datasets have {} entries",
            locations.len(),
            outcome.rows.len()
        )));
    }

    let ppc_path = out.join("ppc.csv");
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(&ppc_path)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", ppc_path.display())))?,
    );
    writeln!(w, "location_id,obs,mean,q25,q50,q75,lo_whisker,hi_whisker")
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    for (row, id) in outcome.rows.iter().zip(locations.ids()) {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            id,
            fmt_f64(row.obs),
            fmt_f64(row.mean),
            fmt_f64(row.q25),
            fmt_f64(row.q50),
            fmt_f64(row.q75),
            fmt_f64(row.lo_whisker),
            fmt_f64(row.hi_whisker)
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut manifest = StageManifest::new("ppc", loaded, stage_seed);
    manifest
        .input(obs_path)
        .output(&ppc_path)
        .note("draws_used", outcome.draws_used)
        .note("draws_failed", outcome.draws_failed);
    manifest.write(&manifest_path(out, "ppc"))?;
    Ok(())
}
