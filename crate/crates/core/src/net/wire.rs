//! Length-prefixed binary framing.
//!
//! Frame: `"ATGW"`, u32 length of everything after these 8 bytes, u8 kind,
//! u32 epoch, then the kind's payload. Integers and floats are little-endian.

use std::io::{Read, Write};
use std::time::Duration;

use crate::error::{AtgError, Result};
use crate::problem::{ProblemConstants, StepSchedule};
use crate::worker::{OutputMode, StopRule, WorkerStatus};

pub const MAGIC: &[u8; 4] = b"ATGW";
pub const HEADER_LEN: usize = 8;
/// Largest accepted `length` field.
pub const MAX_FRAME: usize = 1 << 28;

const KIND_ASSIGN: u8 = 1;
const KIND_START_EPOCH: u8 = 2;
const KIND_UPDATE: u8 = 3;
const KIND_STOP: u8 = 4;
const KIND_ACK: u8 = 5;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Workers read an ATG1 cache file and slice their blocks from it.
    SharedFile(String),
    /// The worker's shard, row-major with the label last in each row.
    Inline { dim: u32, rows: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assign {
    pub worker: u32,
    pub n_workers: u32,
    pub redundancy: u32,
    pub seed: u64,
    pub stop_rule: StopRule,
    pub time_budget: Option<Duration>,
    pub iteration_cap: Option<u64>,
    pub schedule: StepSchedule,
    pub output: OutputMode,
    pub blocks: Vec<u32>,
    pub data: DataSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub worker: u32,
    pub q: u64,
    pub status: WorkerStatus,
    pub finish: Duration,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Assign(Box<Assign>),
    StartEpoch { epoch: u32, x: Vec<f64> },
    Update { epoch: u32, update: Update },
    Stop { epoch: u32 },
    Ack { epoch: u32 },
}

impl Message {
    pub fn epoch(&self) -> u32 {
        match self {
            Message::Assign(_) => 0,
            Message::StartEpoch { epoch, .. }
            | Message::Update { epoch, .. }
            | Message::Stop { epoch }
            | Message::Ack { epoch } => *epoch,
        }
    }

    fn kind(&self) -> u8 {
        match self {
            Message::Assign(_) => KIND_ASSIGN,
            Message::StartEpoch { .. } => KIND_START_EPOCH,
            Message::Update { .. } => KIND_UPDATE,
            Message::Stop { .. } => KIND_STOP,
            Message::Ack { .. } => KIND_ACK,
        }
    }
}

struct Out(Vec<u8>);

impl Out {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u32(v.len() as u32);
        v.iter().for_each(|&x| self.f64(x));
    }
    fn duration(&mut self, d: Duration) {
        self.u64(d.as_secs());
        self.u32(d.subsec_nanos());
    }
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let mut out = Out(Vec::with_capacity(64));
    out.0.extend_from_slice(MAGIC);
    out.u32(0);
    out.u8(msg.kind());
    out.u32(msg.epoch());
    match msg {
        Message::Assign(a) => {
            out.u32(a.worker);
            out.u32(a.n_workers);
            out.u32(a.redundancy);
            out.u64(a.seed);
            out.u8(match a.stop_rule {
                StopRule::TimeOnly => 0,
                StopRule::IterationsOnly => 1,
                StopRule::BothExhausted => 2,
            });
            match a.time_budget {
                Some(t) => {
                    out.u8(1);
                    out.duration(t);
                }
                None => out.u8(0),
            }
            match a.iteration_cap {
                Some(c) => {
                    out.u8(1);
                    out.u64(c);
                }
                None => out.u8(0),
            }
            match a.schedule {
                StepSchedule::Constant(r) => {
                    out.u8(0);
                    [r, 0.0, 0.0, 0.0].iter().for_each(|&v| out.f64(v));
                }
                StepSchedule::Decaying(c) => {
                    out.u8(1);
                    [c.lipschitz, c.sigma, c.diameter, c.grad_bound]
                        .iter()
                        .for_each(|&v| out.f64(v));
                }
            }
            out.u8(match a.output {
                OutputMode::LastIterate => 0,
                OutputMode::RunningAverage => 1,
            });
            out.u32(a.blocks.len() as u32);
            a.blocks.iter().for_each(|&b| out.u32(b));
            match &a.data {
                DataSource::SharedFile(path) => {
                    out.u8(0);
                    out.u32(path.len() as u32);
                    out.0.extend_from_slice(path.as_bytes());
                }
                DataSource::Inline { dim, rows } => {
                    out.u8(1);
                    out.u32(*dim);
                    out.f64s(rows);
                }
            }
        }
        Message::StartEpoch { x, .. } => out.f64s(x),
        Message::Update { update, .. } => {
            out.u32(update.worker);
            out.u64(update.q);
            out.u8(match update.status {
                WorkerStatus::Completed => 0,
                WorkerStatus::Diverged => 1,
            });
            out.duration(update.finish);
            out.f64s(&update.x);
        }
        Message::Stop { .. } | Message::Ack { .. } => {}
    }
    let len = (out.0.len() - HEADER_LEN) as u32;
    out.0[4..8].copy_from_slice(&len.to_le_bytes());
    out.0
}

/// Cursor over a frame that reports errors at absolute byte offsets.
struct In<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> In<'a> {
    fn err(&self, message: impl Into<String>) -> AtgError {
        AtgError::Protocol {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!(
                "truncated {what}: need {n} bytes, {} left",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4"),
        ))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8"),
        ))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8"),
        ))
    }
    fn count(&mut self, elem: usize, what: &str) -> Result<usize> {
        let at = self.pos;
        let n = self.u32(what)? as usize;
        if n.saturating_mul(elem) > self.buf.len() - self.pos {
            return Err(AtgError::Protocol {
                offset: at,
                message: format!("{what} claims {n} elements, frame too short"),
            });
        }
        Ok(n)
    }
    fn f64s(&mut self, what: &str) -> Result<Vec<f64>> {
        let n = self.count(8, what)?;
        (0..n).map(|_| self.f64(what)).collect()
    }
    fn flag(&mut self, what: &str) -> Result<bool> {
        match self.u8(what)? {
            0 => Ok(false),
            1 => Ok(true),
            b => {
                self.pos -= 1;
                Err(self.err(format!("bad {what} flag {b}")))
            }
        }
    }
    fn duration(&mut self, what: &str) -> Result<Duration> {
        let secs = self.u64(what)?;
        let nanos = self.u32(what)?;
        if nanos >= 1_000_000_000 {
            self.pos -= 4;
            return Err(self.err(format!("{what} nanoseconds out of range")));
        }
        Ok(Duration::new(secs, nanos))
    }
    fn enum_u8<T>(&mut self, what: &str, f: impl Fn(u8) -> Option<T>) -> Result<T> {
        let b = self.u8(what)?;
        f(b).ok_or_else(|| {
            self.pos -= 1;
            self.err(format!("unknown {what} {b}"))
        })
    }
}

/// Validates the 8-byte header and returns the body length that follows.
pub fn decode_header(header: &[u8]) -> Result<usize> {
    if header.len() < HEADER_LEN {
        return Err(AtgError::Protocol {
            offset: header.len(),
            message: "truncated header".into(),
        });
    }
    if &header[..4] != MAGIC {
        return Err(AtgError::Protocol {
            offset: 0,
            message: "bad magic".into(),
        });
    }
    let len = u32::from_le_bytes(header[4..8].try_into().expect("4")) as usize;
    if len > MAX_FRAME {
        return Err(AtgError::Protocol {
            offset: 4,
            message: format!("frame length {len} exceeds limit {MAX_FRAME}"),
        });
    }
    if len < 5 {
        return Err(AtgError::Protocol {
            offset: 4,
            message: format!("frame length {len} shorter than kind and epoch"),
        });
    }
    Ok(len)
}

/// Decodes one complete frame; returns the message and bytes consumed.
pub fn decode(bytes: &[u8]) -> Result<(Message, usize)> {
    let len = decode_header(bytes)?;
    let total = HEADER_LEN + len;
    if bytes.len() < total {
        return Err(AtgError::Protocol {
            offset: bytes.len(),
            message: format!("truncated frame: header promises {total} bytes"),
        });
    }
    let mut r = In {
        buf: &bytes[..total],
        pos: HEADER_LEN,
    };
    let kind = r.u8("kind")?;
    let epoch = r.u32("epoch")?;
    let msg = match kind {
        KIND_ASSIGN => {
            let worker = r.u32("worker id")?;
            let n_workers = r.u32("worker count")?;
            let redundancy = r.u32("redundancy")?;
            let seed = r.u64("seed")?;
            let stop_rule = r.enum_u8("stop rule", |b| match b {
                0 => Some(StopRule::TimeOnly),
                1 => Some(StopRule::IterationsOnly),
                2 => Some(StopRule::BothExhausted),
                _ => None,
            })?;
            let time_budget = if r.flag("time budget")? {
                Some(r.duration("time budget")?)
            } else {
                None
            };
            let iteration_cap = if r.flag("iteration cap")? {
                Some(r.u64("iteration cap")?)
            } else {
                None
            };
            let decaying = r.flag("schedule mode")?;
            let p = [
                r.f64("schedule")?,
                r.f64("schedule")?,
                r.f64("schedule")?,
                r.f64("schedule")?,
            ];
            let schedule = if decaying {
                StepSchedule::Decaying(ProblemConstants {
                    lipschitz: p[0],
                    sigma: p[1],
                    diameter: p[2],
                    grad_bound: p[3],
                })
            } else {
                StepSchedule::Constant(p[0])
            };
            let output = r.enum_u8("output mode", |b| match b {
                0 => Some(OutputMode::LastIterate),
                1 => Some(OutputMode::RunningAverage),
                _ => None,
            })?;
            let n = r.count(4, "block list")?;
            let blocks = (0..n)
                .map(|_| r.u32("block index"))
                .collect::<Result<_>>()?;
            let data = if r.flag("data mode")? {
                let dim = r.u32("row width")?;
                DataSource::Inline {
                    dim,
                    rows: r.f64s("rows")?,
                }
            } else {
                let n = r.count(1, "path")?;
                let at = r.pos;
                let raw = r.take(n, "path")?;
                let path = std::str::from_utf8(raw).map_err(|_| AtgError::Protocol {
                    offset: at,
                    message: "path is not UTF-8".into(),
                })?;
                DataSource::SharedFile(path.to_owned())
            };
            Message::Assign(Box::new(Assign {
                worker,
                n_workers,
                redundancy,
                seed,
                stop_rule,
                time_budget,
                iteration_cap,
                schedule,
                output,
                blocks,
                data,
            }))
        }
        KIND_START_EPOCH => Message::StartEpoch {
            epoch,
            x: r.f64s("parameter vector")?,
        },
        KIND_UPDATE => {
            let worker = r.u32("worker id")?;
            let q = r.u64("step count")?;
            let status = r.enum_u8("status", |b| match b {
                0 => Some(WorkerStatus::Completed),
                1 => Some(WorkerStatus::Diverged),
                _ => None,
            })?;
            let finish = r.duration("finish time")?;
            let x = r.f64s("iterate")?;
            Message::Update {
                epoch,
                update: Update {
                    worker,
                    q,
                    status,
                    finish,
                    x,
                },
            }
        }
        KIND_STOP => Message::Stop { epoch },
        KIND_ACK => Message::Ack { epoch },
        other => {
            return Err(AtgError::Protocol {
                offset: HEADER_LEN,
                message: format!("unknown message kind {other}"),
            })
        }
    };
    if r.pos != total {
        return Err(AtgError::Protocol {
            offset: r.pos,
            message: format!("{} trailing bytes in frame", total - r.pos),
        });
    }
    Ok((msg, total))
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<()> {
    w.write_all(&encode(msg))?;
    w.flush()?;
    Ok(())
}

/// Reads exactly one frame. A clean EOF before any byte is an `Io` error of
/// kind `UnexpectedEof`.
pub fn read_message<R: Read>(r: &mut R) -> Result<Message> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    let len = decode_header(&header)?;
    let mut frame = Vec::with_capacity(HEADER_LEN + len);
    frame.extend_from_slice(&header);
    frame.resize(HEADER_LEN + len, 0);
    r.read_exact(&mut frame[HEADER_LEN..])?;
    decode(&frame).map(|(m, _)| m)
}
