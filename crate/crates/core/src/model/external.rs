//! Adapter for an out-of-process simulator.
//!
//! One child process is launched per call. The request is a single JSON line
//! `{"theta":[u0,r0],"seed":<u64>}` on the child's stdin; the reply is one
//! JSON line `{"loads":[...]}` on its stdout. Crashes, malformed replies and
//! timeouts are reported as distinct errors.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{DepositDataset, ParameterVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
    /// Wall-clock budget for one simulation, in milliseconds.
    pub timeout_ms: u64,
    /// Number of loads the reply must carry.
    pub expected_len: usize,
}

#[derive(Debug, Serialize)]
struct Request<'a> {
    theta: &'a [f64],
    seed: u64,
}

#[derive(Debug, Deserialize)]
struct Reply {
    loads: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExternalSimulator {
    config: AdapterConfig,
}

impl ExternalSimulator {
    pub fn new(config: AdapterConfig) -> Result<Self> {
        if config.command.is_empty() {
            return Err(Error::InvalidConfig("empty adapter command".into()));
        }
        if config.expected_len == 0 {
            return Err(Error::InvalidConfig("expected_len must be >= 1".into()));
        }
        Ok(ExternalSimulator { config })
    }

    pub fn config(&self) -> &AdapterConfig {
        &self.config
    }

    pub fn simulate(&self, theta: &ParameterVector, seed: u64) -> Result<DepositDataset> {
        let mut child = Command::new(&self.config.command)
            .args(&self.config.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;

        let request = serde_json::to_string(&Request {
            theta: theta.as_slice(),
            seed,
        })?;

        // A child that exits before reading produces a broken pipe here;
        // fall through and let the status check classify it as a crash.
        if let Some(mut stdin) = child.stdin.take() {
            let _ = writeln!(stdin, "{request}");
            let _ = stdin.flush();
        }

        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| Error::Protocol("child stdout not captured".into()))?;
        let (tx, rx) = mpsc::channel();
        let reader = std::thread::spawn(move || {
            let mut line = String::new();
            let res = BufReader::new(stdout).read_line(&mut line);
            let _ = tx.send(res.map(|n| (n, line)));
        });

        let outcome = rx.recv_timeout(Duration::from_millis(self.config.timeout_ms));
        let result = match outcome {
            Err(mpsc::RecvTimeoutError::Timeout) | Err(mpsc::RecvTimeoutError::Disconnected) => {
                let _ = child.kill();
                Err(Error::ChildTimeout {
                    timeout_ms: self.config.timeout_ms,
                })
            }
            Ok(Err(e)) => {
                let _ = child.kill();
                Err(Error::MalformedReply(format!("read failure: {e}")))
            }
            Ok(Ok((0, _))) => Err(self.crash_error(&mut child)),
            Ok(Ok((_, line))) => self.parse_reply(&line),
        };
        // The reader thread is left to exit on its own: joining it here
        // would block on grandchildren that inherited the stdout pipe.
        drop(reader);
        // Reap the direct child; a nonzero status after a valid reply is
        // ignored.
        let _ = child.wait();
        result
    }

    fn crash_error(&self, child: &mut Child) -> Error {
        match child.wait() {
            Ok(status) => Error::ChildCrash {
                status: status.code(),
                detail: "child exited without replying".into(),
            },
            Err(e) => Error::ChildCrash {
                status: None,
                detail: format!("child unreachable: {e}"),
            },
        }
    }

    fn parse_reply(&self, line: &str) -> Result<DepositDataset> {
        let reply: Reply = serde_json::from_str(line.trim())
            .map_err(|e| Error::MalformedReply(format!("invalid JSON: {e}")))?;
        if reply.loads.len() != self.config.expected_len {
            return Err(Error::MalformedReply(format!(
                "expected {} loads, got {}",
                self.config.expected_len,
                reply.loads.len()
            )));
        }
        DepositDataset::new(reply.loads)
            .map_err(|e| Error::MalformedReply(format!("invalid loads: {e}")))
    }
}

impl crate::scheduler::ItemSimulator for ExternalSimulator {
    /// The external simulator parallelizes internally, so only worker 0
    /// does anything; run such teams with `worker_count = 1`.
    fn simulate_part(
        &self,
        item: &crate::scheduler::WorkItem,
        part: usize,
        _of: usize,
    ) -> crate::scheduler::ItemOutcome {
        if part != 0 {
            return Ok(Vec::new());
        }
        self.simulate(&item.theta, item.seed)
            .map(|d| d.loads().to_vec())
            .map_err(crate::scheduler::WorkFailure::from)
    }
}
