//! Two-level work distribution: one scheduler, many teams.
//!
//! The scheduler hands parameter work items to whichever team is idle and
//! collects one result per item; each team executes one forward simulation
//! at a time, internally fanning the work out to `worker_count` cooperating
//! workers whose partial results the team leader merges. Determinism is
//! carried by per-item seeds, never by arrival order: results are keyed and
//! sorted by `item_id`, so any team count produces identical output.
//!
//! Teams are transport-agnostic. [`InProcessTeam`] runs workers as threads;
//! [`ProcessTeam`](crate::scheduler::ProcessTeam) drives a child process
//! speaking the length-prefixed JSON frame protocol in [`wire`].

mod process;
pub mod wire;

pub use process::ProcessTeam;
pub use wire::{read_frame, team_worker_serve, write_frame, WireFrame};

use std::collections::{HashMap, VecDeque};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParameterVector;

/// One simulation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkItem {
    pub item_id: u64,
    pub theta: ParameterVector,
    /// Per-item RNG stream seed; the only source of randomness downstream.
    pub seed: u64,
}

/// Why a work item produced no dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WorkFailure {
    /// The simulation itself reported an error.
    Simulation { detail: String },
    /// A child simulator exited without replying.
    Crash { status: Option<i32>, detail: String },
    Timeout { timeout_ms: u64 },
    /// Reply arrived but could not be interpreted.
    Malformed { detail: String },
    /// Every dispatch of this item lost its team.
    TeamLost { dispatches: u32 },
}

impl std::fmt::Display for WorkFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WorkFailure::Simulation { detail } => write!(f, "simulation failed: {detail}"),
            WorkFailure::Crash { status, detail } => {
                write!(f, "simulator crashed (status {status:?}): {detail}")
            }
            WorkFailure::Timeout { timeout_ms } => write!(f, "timed out after {timeout_ms} ms"),
            WorkFailure::Malformed { detail } => write!(f, "malformed reply: {detail}"),
            WorkFailure::TeamLost { dispatches } => {
                write!(f, "team lost on all {dispatches} dispatches")
            }
        }
    }
}

impl From<Error> for WorkFailure {
    fn from(e: Error) -> Self {
        match e {
            Error::ChildCrash { status, detail } => WorkFailure::Crash { status, detail },
            Error::ChildTimeout { timeout_ms } => WorkFailure::Timeout { timeout_ms },
            Error::MalformedReply(detail) => WorkFailure::Malformed { detail },
            other => WorkFailure::Simulation {
                detail: other.to_string(),
            },
        }
    }
}

/// Loads on success, a failure record otherwise.
pub type ItemOutcome = std::result::Result<Vec<f64>, WorkFailure>;

/// Exactly one per dispatched item.
#[derive(Debug, Clone)]
pub struct WorkResult {
    pub item_id: u64,
    pub outcome: ItemOutcome,
    pub wall_time: Duration,
}

/// How a team talks to its workers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Transport {
    /// Worker threads inside this process.
    InProcess,
    /// A child process speaking the wire protocol (the team leader); its
    /// `worker_count` workers live inside the child.
    ChildProcess {
        command: String,
        #[serde(default)]
        args: Vec<String>,
        /// Per-item reply budget; `None` waits indefinitely.
        reply_timeout_ms: Option<u64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TeamDescriptor {
    pub team_id: u32,
    pub worker_count: usize,
    pub transport: Transport,
}

impl TeamDescriptor {
    pub fn in_process(team_id: u32, worker_count: usize) -> Self {
        TeamDescriptor {
            team_id,
            worker_count,
            transport: Transport::InProcess,
        }
    }
}

/// A simulation that a team can split across cooperating workers.
///
/// Worker `part` of `of` computes a partial result; the leader merges the
/// partials in worker order. The default merge is concatenation (matching
/// simulators that partition output locations); reductions override it.
pub trait ItemSimulator: Send + Sync {
    fn simulate_part(&self, item: &WorkItem, part: usize, of: usize) -> ItemOutcome;

    fn merge(&self, partials: Vec<Vec<f64>>) -> ItemOutcome {
        Ok(partials.concat())
    }
}

/// Adapter for unsplittable simulations: worker 0 computes everything.
pub struct FnSimulator<F>(pub F);

impl<F> ItemSimulator for FnSimulator<F>
where
    F: Fn(&WorkItem) -> ItemOutcome + Send + Sync,
{
    fn simulate_part(&self, item: &WorkItem, part: usize, _of: usize) -> ItemOutcome {
        if part == 0 {
            (self.0)(item)
        } else {
            Ok(Vec::new())
        }
    }
}

/// The team became unusable; its in-flight item may be re-dispatched.
#[derive(Debug, Clone)]
pub struct TeamDead(pub String);

/// A spawned team the scheduler can feed.
pub trait RunningTeam: Send {
    fn team_id(&self) -> u32;

    /// Run one item to completion. `Err(TeamDead)` is a team-level loss (no
    /// result was produced); item-level failures travel inside the outcome.
    fn execute(&mut self, item: &WorkItem) -> std::result::Result<ItemOutcome, TeamDead>;

    fn shutdown(self: Box<Self>);
}

/// Spawn the team described by `desc`.
///
/// In-process teams execute `simulator` directly; child-process teams embody
/// their own simulation and ignore it.
pub fn team_lifecycle(
    desc: &TeamDescriptor,
    simulator: Arc<dyn ItemSimulator>,
) -> Result<Box<dyn RunningTeam>> {
    if desc.worker_count == 0 {
        return Err(Error::InvalidConfig(format!(
            "team {} has zero workers",
            desc.team_id
        )));
    }
    match &desc.transport {
        Transport::InProcess => Ok(Box::new(InProcessTeam::spawn(
            desc.team_id,
            desc.worker_count,
            simulator,
        ))),
        Transport::ChildProcess {
            command,
            args,
            reply_timeout_ms,
        } => Ok(Box::new(ProcessTeam::spawn(
            desc.team_id,
            command,
            args,
            reply_timeout_ms.map(Duration::from_millis),
        )?)),
    }
}

/// Leader plus `worker_count` worker threads in this process. Workers idle
/// until the leader broadcasts an item; each computes its partial and the
/// leader gathers them in worker order.
pub struct InProcessTeam {
    team_id: u32,
    worker_count: usize,
    simulator: Arc<dyn ItemSimulator>,
    work_txs: Vec<mpsc::Sender<WorkItem>>,
    partial_rx: mpsc::Receiver<(usize, ItemOutcome)>,
    handles: Vec<std::thread::JoinHandle<()>>,
}

impl InProcessTeam {
    pub fn spawn(team_id: u32, worker_count: usize, simulator: Arc<dyn ItemSimulator>) -> Self {
        assert!(worker_count >= 1, "worker_count must be >= 1");
        let (partial_tx, partial_rx) = mpsc::channel();
        let mut work_txs = Vec::with_capacity(worker_count);
        let mut handles = Vec::with_capacity(worker_count);
        for part in 0..worker_count {
            let (tx, rx) = mpsc::channel::<WorkItem>();
            let partial_tx = partial_tx.clone();
            let sim = simulator.clone();
            handles.push(std::thread::spawn(move || {
                while let Ok(item) = rx.recv() {
                    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
                        sim.simulate_part(&item, part, worker_count)
                    }))
                    .unwrap_or_else(|_| {
                        Err(WorkFailure::Simulation {
                            detail: format!("worker {part} panicked"),
                        })
                    });
                    if partial_tx.send((part, result)).is_err() {
                        break;
                    }
                }
            }));
            work_txs.push(tx);
        }
        InProcessTeam {
            team_id,
            worker_count,
            simulator,
            work_txs,
            partial_rx,
            handles,
        }
    }

    fn close(self) {
        drop(self.work_txs);
        for handle in self.handles {
            let _ = handle.join();
        }
    }
}

impl RunningTeam for InProcessTeam {
    fn team_id(&self) -> u32 {
        self.team_id
    }

    fn execute(&mut self, item: &WorkItem) -> std::result::Result<ItemOutcome, TeamDead> {
        for tx in &self.work_txs {
            tx.send(item.clone())
                .map_err(|_| TeamDead("worker channel closed".into()))?;
        }
        let mut partials: Vec<Option<Vec<f64>>> = vec![None; self.worker_count];
        let mut failure: Option<WorkFailure> = None;
        for _ in 0..self.worker_count {
            let (part, outcome) = self
                .partial_rx
                .recv()
                .map_err(|_| TeamDead("worker exited mid-item".into()))?;
            match outcome {
                Ok(p) => partials[part] = Some(p),
                Err(f) => failure = Some(f),
            }
        }
        if let Some(f) = failure {
            return Ok(Err(f));
        }
        let ordered: Vec<Vec<f64>> = partials.into_iter().map(|p| p.unwrap()).collect();
        Ok(self.simulator.merge(ordered))
    }

    fn shutdown(self: Box<Self>) {
        (*self).close();
    }
}

enum DriverMsg {
    Done { team: usize, result: WorkResult },
    Died { team: usize, item: WorkItem, detail: String },
}

fn drive_team(
    index: usize,
    mut team: Box<dyn RunningTeam>,
    work_rx: mpsc::Receiver<WorkItem>,
    msg_tx: mpsc::Sender<DriverMsg>,
) {
    while let Ok(item) = work_rx.recv() {
        let started = Instant::now();
        match team.execute(&item) {
            Ok(outcome) => {
                let msg = DriverMsg::Done {
                    team: index,
                    result: WorkResult {
                        item_id: item.item_id,
                        outcome,
                        wall_time: started.elapsed(),
                    },
                };
                if msg_tx.send(msg).is_err() {
                    break;
                }
            }
            Err(TeamDead(detail)) => {
                let _ = msg_tx.send(DriverMsg::Died {
                    team: index,
                    item,
                    detail,
                });
                // The team is unusable; drop it without a clean shutdown.
                return;
            }
        }
    }
    team.shutdown();
}

/// Dispatch `items` over already-running teams and collect one result per
/// item, ordered by `item_id`.
///
/// Scheduling is dynamic: the next pending item goes to the first idle team.
/// A team death re-queues its item once; a second loss fails the item. When
/// every team is gone with work still pending the batch aborts.
pub fn run_batch_on(
    items: Vec<WorkItem>,
    teams: Vec<Box<dyn RunningTeam>>,
) -> Result<Vec<WorkResult>> {
    if teams.is_empty() {
        return Err(Error::InvalidConfig("run_batch needs at least one team".into()));
    }
    if items.is_empty() {
        return Err(Error::InvalidConfig("empty work batch".into()));
    }
    {
        let mut ids: Vec<u64> = items.iter().map(|i| i.item_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != items.len() {
            return Err(Error::InvalidConfig("duplicate item_id in batch".into()));
        }
    }

    let total = items.len();
    let mut results: Vec<WorkResult> = Vec::with_capacity(total);
    let (msg_tx, msg_rx) = mpsc::channel::<DriverMsg>();

    std::thread::scope(|scope| -> Result<()> {
        let mut work_txs: Vec<Option<mpsc::Sender<WorkItem>>> = Vec::with_capacity(teams.len());
        for (index, team) in teams.into_iter().enumerate() {
            let (tx, rx) = mpsc::channel::<WorkItem>();
            let msg_tx = msg_tx.clone();
            scope.spawn(move || drive_team(index, team, rx, msg_tx));
            work_txs.push(Some(tx));
        }
        drop(msg_tx);

        let mut pending: VecDeque<WorkItem> = items.into();
        let mut idle: Vec<usize> = (0..work_txs.len()).rev().collect();
        let mut deaths: HashMap<u64, u32> = HashMap::new();
        let mut live = work_txs.len();

        while results.len() < total {
            // Greedy assignment: next pending item to the first idle team.
            while !pending.is_empty() && !idle.is_empty() {
                let team = idle.pop().unwrap();
                let item = pending.pop_front().unwrap();
                let sender = work_txs[team].as_ref().expect("idle team has a sender");
                if let Err(mpsc::SendError(returned)) = sender.send(item) {
                    // Driver already gone; its Died message is in flight.
                    work_txs[team] = None;
                    pending.push_front(returned);
                }
            }

            let msg = msg_rx.recv().map_err(|_| {
                let pending_ids = pending.iter().map(|i| i.item_id).collect();
                Error::BatchAborted {
                    pending: pending_ids,
                }
            })?;
            match msg {
                DriverMsg::Done { team, result } => {
                    results.push(result);
                    idle.push(team);
                }
                DriverMsg::Died { team, item, detail } => {
                    log::warn!(
                        "team driver {team} lost its team on item {}: {detail}",
                        item.item_id
                    );
                    work_txs[team] = None;
                    live -= 1;
                    let dispatches = deaths.entry(item.item_id).or_insert(0);
                    *dispatches += 1;
                    if *dispatches == 1 {
                        pending.push_back(item);
                    } else {
                        results.push(WorkResult {
                            item_id: item.item_id,
                            outcome: Err(WorkFailure::TeamLost {
                                dispatches: *dispatches,
                            }),
                            wall_time: Duration::ZERO,
                        });
                    }
                    if live == 0 && results.len() < total {
                        let pending_ids = pending.iter().map(|i| i.item_id).collect();
                        return Err(Error::BatchAborted {
                            pending: pending_ids,
                        });
                    }
                }
            }
        }

        // Closing the work channels lets surviving drivers shut their teams
        // down; the scope joins them.
        for tx in &mut work_txs {
            *tx = None;
        }
        Ok(())
    })?;

    results.sort_by_key(|r| r.item_id);
    Ok(results)
}

/// Spawn teams from descriptors, run the batch, shut the teams down.
pub fn run_batch(
    items: Vec<WorkItem>,
    descriptors: &[TeamDescriptor],
    simulator: Arc<dyn ItemSimulator>,
) -> Result<Vec<WorkResult>> {
    let teams = descriptors
        .iter()
        .map(|d| team_lifecycle(d, simulator.clone()))
        .collect::<Result<Vec<_>>>()?;
    run_batch_on(items, teams)
}

/// A reusable simulation pool: one set of team descriptors, fresh teams per
/// batch, monotone item ids across batches.
pub struct TeamPool {
    descriptors: Vec<TeamDescriptor>,
    simulator: Arc<dyn ItemSimulator>,
    next_item_id: u64,
}

impl TeamPool {
    pub fn new(descriptors: Vec<TeamDescriptor>, simulator: Arc<dyn ItemSimulator>) -> Result<Self> {
        if descriptors.is_empty() {
            return Err(Error::InvalidConfig("team pool needs at least one team".into()));
        }
        Ok(TeamPool {
            descriptors,
            simulator,
            next_item_id: 0,
        })
    }

    /// Simulate one request per `(theta, seed)` pair; outcomes come back in
    /// request order.
    pub fn simulate_all(&mut self, requests: &[(ParameterVector, u64)]) -> Result<Vec<ItemOutcome>> {
        let base = self.next_item_id;
        let items: Vec<WorkItem> = requests
            .iter()
            .enumerate()
            .map(|(k, (theta, seed))| WorkItem {
                item_id: base + k as u64,
                theta: theta.clone(),
                seed: *seed,
            })
            .collect();
        self.next_item_id = base + requests.len() as u64;
        let results = run_batch(items, &self.descriptors, self.simulator.clone())?;
        Ok(results.into_iter().map(|r| r.outcome).collect())
    }
}
