mod evaluate;
mod generate;
mod infer;
mod ppc;
mod team_worker;
mod train;

pub use evaluate::run_evaluate;
pub use generate::run_generate;
pub use infer::run_infer;
pub use ppc::run_ppc;
pub use team_worker::run_team_worker;
pub use train::run_train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

pub(crate) fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))
}

pub(crate) fn training_set_paths(out: &Path) -> (PathBuf, PathBuf) {
    (out.join("training_set.jsonl"), out.join("split.json"))
}

/// Observation file: one deposit dataset as JSON.
#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct ObservationFile {
    pub loads: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location_ids: Option<Vec<u32>>,
}

pub(crate) fn load_observation(path: &Path) -> Result<nalgebra::DVector<f64>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read observation {}: {e}", path.display())))?;
    let obs: ObservationFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("invalid observation {}: {e}", path.display())))?;
    if obs.loads.is_empty() || obs.loads.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Config(format!(
            "observation {} must hold non-empty finite loads",
            path.display()
        )));
    }
    Ok(nalgebra::DVector::from_vec(obs.loads))
}

/// Formats floats for CSV with Rust's shortest-roundtrip rendering, which is
/// deterministic across runs.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
