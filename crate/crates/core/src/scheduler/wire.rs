//! Scheduler <-> team wire protocol.
//!
//! Frames are UTF-8 JSON, length-prefixed by the payload byte count in ASCII
//! decimal followed by a newline:
//!
//! ```text
//! 52\n{"type":"work","item_id":0,"theta":[150.0,60.0],"seed":7}
//! ```
//!
//! Work and shutdown frames flow scheduler -> team; result frames flow back.
//! A result carries either `loads` (success) or `error` (the item failed
//! inside the team).

use std::io::{BufRead, Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParameterVector;
use crate::scheduler::{InProcessTeam, ItemSimulator, RunningTeam, WorkItem};

/// Upper bound on a frame payload; anything larger is a protocol error.
const MAX_FRAME_BYTES: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireFrame {
    Work {
        item_id: u64,
        theta: Vec<f64>,
        seed: u64,
    },
    Result {
        item_id: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        loads: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Shutdown,
}

pub fn write_frame<W: Write>(writer: &mut W, frame: &WireFrame) -> std::io::Result<()> {
    let payload = serde_json::to_vec(frame)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    writeln!(writer, "{}", payload.len())?;
    writer.write_all(&payload)?;
    writer.flush()
}

/// Reads one frame; `Ok(None)` on a clean EOF before the length line.
pub fn read_frame<R: BufRead>(reader: &mut R) -> std::io::Result<Option<WireFrame>> {
    let mut len_line = String::new();
    if reader.read_line(&mut len_line)? == 0 {
        return Ok(None);
    }
    let len: usize = len_line
        .trim()
        .parse()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("bad frame length: {e}")))?;
    if len > MAX_FRAME_BYTES {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("frame of {len} bytes exceeds the {MAX_FRAME_BYTES} byte cap"),
        ));
    }
    let mut payload = vec![0u8; len];
    reader.read_exact(&mut payload)?;
    serde_json::from_slice(&payload)
        .map(Some)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

/// Team-leader side of the protocol: serve work frames until shutdown/EOF.
///
/// This is the body of a child-process team. It spawns `workers` cooperating
/// worker threads and answers every work frame with one result frame.
pub fn team_worker_serve<R: Read, W: Write>(
    reader: R,
    mut writer: W,
    simulator: Arc<dyn ItemSimulator>,
    workers: usize,
) -> Result<()> {
    let mut reader = std::io::BufReader::new(reader);
    let mut team = InProcessTeam::spawn(0, workers.max(1), simulator);
    loop {
        let frame = match read_frame(&mut reader)? {
            Some(frame) => frame,
            None => break,
        };
        match frame {
            WireFrame::Work {
                item_id,
                theta,
                seed,
            } => {
                let item = WorkItem {
                    item_id,
                    theta: ParameterVector::new(theta),
                    seed,
                };
                let reply = match team.execute(&item) {
                    Ok(Ok(loads)) => WireFrame::Result {
                        item_id,
                        loads: Some(loads),
                        error: None,
                    },
                    Ok(Err(failure)) => WireFrame::Result {
                        item_id,
                        loads: None,
                        error: Some(failure.to_string()),
                    },
                    Err(dead) => {
                        return Err(Error::Protocol(format!(
                            "worker team failed irrecoverably: {}",
                            dead.0
                        )));
                    }
                };
                write_frame(&mut writer, &reply)?;
            }
            WireFrame::Shutdown => break,
            WireFrame::Result { .. } => {
                return Err(Error::Protocol(
                    "unexpected result frame on the team input channel".into(),
                ));
            }
        }
    }
    Box::new(team).shutdown();
    Ok(())
}
