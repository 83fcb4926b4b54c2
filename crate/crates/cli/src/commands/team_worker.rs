//! `tephra team-worker`: the team-leader process spawned by the
//! child-process transport. Serves the wire protocol on stdin/stdout until a
//! shutdown frame or EOF.

use tephra_core::scheduler::team_worker_serve;

use crate::config::LoadedConfig;
use crate::CliError;

pub fn run_team_worker(loaded: &LoadedConfig, workers: usize) -> Result<(), CliError> {
    let simulator = loaded.item_simulator()?;
    let stdin = std::io::stdin().lock();
    let stdout = std::io::stdout().lock();
    team_worker_serve(stdin, stdout, simulator, workers)
        .map_err(|e| CliError::Runtime(format!("team worker: {e}")))
}
