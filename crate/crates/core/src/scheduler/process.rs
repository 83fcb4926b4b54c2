//! Child-process team transport.
//!
//! The child is the team leader: it receives work frames on stdin and sends
//! result frames on stdout (see [`wire`](super::wire)). Any protocol
//! breakage — EOF, unparsable frames, mismatched ids, a missed reply
//! deadline — is a team loss; the scheduler re-dispatches the in-flight
//! item elsewhere.

use std::io::BufReader;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use super::wire::{read_frame, write_frame, WireFrame};
use super::{ItemOutcome, RunningTeam, TeamDead, WorkFailure, WorkItem};
use crate::error::{Error, Result};

pub struct ProcessTeam {
    team_id: u32,
    child: Child,
    stdin: ChildStdin,
    frames: mpsc::Receiver<std::io::Result<WireFrame>>,
    reply_timeout: Option<Duration>,
}

impl ProcessTeam {
    pub fn spawn(
        team_id: u32,
        command: &str,
        args: &[String],
        reply_timeout: Option<Duration>,
    ) -> Result<Self> {
        let mut child = Command::new(command)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::InvalidConfig(format!("team {team_id} spawn failed: {e}")))?;
        let stdin = child
            .stdin
            .take()
            .ok_or_else(|| Error::Protocol("child stdin not captured".into()))?;
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| Error::Protocol("child stdout not captured".into()))?;

        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                match read_frame(&mut reader) {
                    Ok(Some(frame)) => {
                        if tx.send(Ok(frame)).is_err() {
                            break;
                        }
                    }
                    Ok(None) => break,
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });

        Ok(ProcessTeam {
            team_id,
            child,
            stdin,
            frames: rx,
            reply_timeout,
        })
    }

    fn receive_reply(&mut self) -> std::result::Result<WireFrame, TeamDead> {
        let received = match self.reply_timeout {
            Some(timeout) => self.frames.recv_timeout(timeout).map_err(|e| {
                let _ = self.child.kill();
                TeamDead(format!("no reply within {timeout:?}: {e}"))
            })?,
            None => self
                .frames
                .recv()
                .map_err(|_| TeamDead("child closed its output".into()))?,
        };
        received.map_err(|e| TeamDead(format!("frame error: {e}")))
    }
}

impl RunningTeam for ProcessTeam {
    fn team_id(&self) -> u32 {
        self.team_id
    }

    fn execute(&mut self, item: &WorkItem) -> std::result::Result<ItemOutcome, TeamDead> {
        let frame = WireFrame::Work {
            item_id: item.item_id,
            theta: item.theta.as_slice().to_vec(),
            seed: item.seed,
        };
        write_frame(&mut self.stdin, &frame)
            .map_err(|e| TeamDead(format!("work frame write failed: {e}")))?;
        match self.receive_reply()? {
            WireFrame::Result {
                item_id,
                loads,
                error,
            } if item_id == item.item_id => match (loads, error) {
                (Some(loads), None) => Ok(Ok(loads)),
                (None, Some(detail)) => Ok(Err(WorkFailure::Simulation { detail })),
                _ => Err(TeamDead("result frame with inconsistent fields".into())),
            },
            other => Err(TeamDead(format!(
                "protocol violation: expected result for item {}, got {other:?}",
                item.item_id
            ))),
        }
    }

    fn shutdown(mut self: Box<Self>) {
        let _ = write_frame(&mut self.stdin, &WireFrame::Shutdown);
        drop(self.stdin);
        // Bounded wait, then force.
        for _ in 0..100 {
            match self.child.try_wait() {
                Ok(Some(_)) => return,
                Ok(None) => std::thread::sleep(Duration::from_millis(20)),
                Err(_) => break,
            }
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
