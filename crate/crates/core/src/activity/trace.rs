//! Line-delimited trace files and headless replay.
//!
//! A trace is one JSON object per line. The first line is the header
//! (`version`, `bucket_seconds`, `created_at`); every following non-blank
//! line is an [`ActivityEvent`].

use std::io::{BufRead, Write};
use std::path::Path;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ActivityEvent, EventKind};

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub version: u32,
    pub bucket_seconds: f64,
    /// Wall-clock instant of virtual time zero.
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<ActivityEvent>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot read trace: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("order error at line {line}: t={t} is earlier than previous t={previous}")]
    Order { line: usize, t: f64, previous: f64 },
    #[error("unsupported trace version {0} (expected {TRACE_VERSION})")]
    Version(u32),
    #[error("invalid event at line {line}: {message}")]
    Invalid { line: usize, message: String },
}

impl Trace {
    pub fn new(created_at: DateTime<Utc>, bucket_seconds: f64) -> Self {
        Trace {
            header: TraceHeader {
                version: TRACE_VERSION,
                bucket_seconds,
                created_at,
            },
            events: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Trace, TraceError> {
        let file = std::fs::File::open(path)?;
        Trace::read(std::io::BufReader::new(file))
    }

    pub fn read(reader: impl BufRead) -> Result<Trace, TraceError> {
        let mut lines = reader.lines().enumerate();
        let header: TraceHeader = loop {
            match lines.next() {
                Some((i, line)) => {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str(&line).map_err(|e| TraceError::Parse {
                        line: i + 1,
                        message: format!("bad header: {e}"),
                    })?;
                }
                None => {
                    return Err(TraceError::Parse {
                        line: 1,
                        message: "missing header".into(),
                    })
                }
            }
        };
        if header.version != TRACE_VERSION {
            return Err(TraceError::Version(header.version));
        }
        if header.bucket_seconds.is_nan() || header.bucket_seconds <= 0.0 {
            return Err(TraceError::Parse {
                line: 1,
                message: "bucket_seconds must be positive".into(),
            });
        }

        let mut validator = StreamValidator::default();
        let mut events = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let event: ActivityEvent = serde_json::from_str(&line).map_err(|e| TraceError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            validator.check(&event, i + 1)?;
            events.push(event);
        }
        Ok(Trace { header, events })
    }

    pub fn write(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{}", serde_json::to_string(&self.header)?)?;
        for ev in &self.events {
            writeln!(out, "{}", serde_json::to_string(ev)?)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut file)?;
        file.flush()
    }

    pub fn virtual_duration(&self) -> f64 {
        self.events.last().map_or(0.0, |e| e.t)
    }
}

/// Checks the stream invariants: finite non-negative non-decreasing `t`, and
/// strictly alternating idle boundaries starting with `IDLE_START`.
#[derive(Debug, Default)]
struct StreamValidator {
    last_t: Option<f64>,
    idle_open: bool,
}

impl StreamValidator {
    fn check(&mut self, ev: &ActivityEvent, line: usize) -> Result<(), TraceError> {
        if !ev.t.is_finite() || ev.t < 0.0 {
            return Err(TraceError::Invalid {
                line,
                message: format!("t={} must be a finite non-negative number", ev.t),
            });
        }
        if let Some(previous) = self.last_t {
            if ev.t < previous {
                return Err(TraceError::Order {
                    line,
                    t: ev.t,
                    previous,
                });
            }
        }
        match ev.kind {
            EventKind::IdleStart if self.idle_open => {
                return Err(TraceError::Invalid {
                    line,
                    message: "IDLE_START while already idle".into(),
                })
            }
            EventKind::IdleEnd if !self.idle_open => {
                return Err(TraceError::Invalid {
                    line,
                    message: "IDLE_END without a preceding IDLE_START".into(),
                })
            }
            EventKind::IdleStart => self.idle_open = true,
            EventKind::IdleEnd => self.idle_open = false,
            _ => {}
        }
        self.last_t = Some(ev.t);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReplaySpeed {
    /// No wall-clock pacing; virtual timestamps are passed through untouched.
    Instant,
    /// Wall-clock pacing at `n` virtual seconds per real second.
    Multiplier(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplayReport {
    pub events_emitted: usize,
    pub virtual_duration: f64,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("event sink closed")]
pub struct SinkClosed;

pub trait EventSink {
    fn accept(&mut self, event: &ActivityEvent) -> Result<(), SinkClosed>;
}

impl EventSink for Vec<ActivityEvent> {
    fn accept(&mut self, event: &ActivityEvent) -> Result<(), SinkClosed> {
        self.push(event.clone());
        Ok(())
    }
}

impl EventSink for std::sync::mpsc::Sender<ActivityEvent> {
    fn accept(&mut self, event: &ActivityEvent) -> Result<(), SinkClosed> {
        self.send(event.clone()).map_err(|_| SinkClosed)
    }
}

impl<F> EventSink for F
where
    F: FnMut(&ActivityEvent) -> Result<(), SinkClosed>,
{
    fn accept(&mut self, event: &ActivityEvent) -> Result<(), SinkClosed> {
        self(event)
    }
}

/// Delivers every event of `trace` to `sink` in order.
pub fn replay(trace: &Trace, sink: &mut dyn EventSink, speed: ReplaySpeed) -> Result<ReplayReport, SinkClosed> {
    let mut previous_t = trace.events.first().map_or(0.0, |e| e.t);
    for (emitted, event) in trace.events.iter().enumerate() {
        if let ReplaySpeed::Multiplier(factor) = speed {
            let gap = (event.t - previous_t).max(0.0);
            if factor > 0.0 && gap > 0.0 {
                std::thread::sleep(Duration::from_secs_f64(gap / factor));
            }
        }
        previous_t = event.t;
        sink.accept(event).inspect_err(|_e| {
            tracing::warn!(emitted, "replay stopped: sink closed");
        })?;
    }
    Ok(ReplayReport {
        events_emitted: trace.events.len(),
        virtual_duration: trace.virtual_duration(),
    })
}
