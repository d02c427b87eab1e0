//! Desktop activity events and their sources.
//!
//! Events come either from a [`live::LiveMonitor`] polling a platform
//! adapter or from a recorded [`trace::Trace`] replayed headlessly. Both
//! produce the same ordered stream, so everything downstream is agnostic to
//! where the events came from.

pub mod live;
pub mod trace;
pub mod x11;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use live::{InputCounts, LiveMonitor, MonitorError, PlatformAdapter, PlatformError, WindowInfo};
pub use trace::{replay, EventSink, ReplayReport, ReplaySpeed, SinkClosed, Trace, TraceError, TraceHeader};

/// One timestamped desktop signal. `t` is seconds since session start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityEvent {
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    WindowFocus {
        app_id: String,
        window_title: String,
    },
    /// Aggregate input counts for one bucket, stamped at the bucket end.
    InputBurst {
        keys: u32,
        clicks: u32,
    },
    IdleStart,
    IdleEnd,
}

impl ActivityEvent {
    pub fn focus(t: f64, app_id: &str, window_title: &str) -> Self {
        ActivityEvent {
            t,
            kind: EventKind::WindowFocus {
                app_id: app_id.to_string(),
                window_title: window_title.to_string(),
            },
        }
    }

    pub fn input(t: f64, keys: u32, clicks: u32) -> Self {
        ActivityEvent {
            t,
            kind: EventKind::InputBurst { keys, clicks },
        }
    }

    pub fn idle_start(t: f64) -> Self {
        ActivityEvent {
            t,
            kind: EventKind::IdleStart,
        }
    }

    pub fn idle_end(t: f64) -> Self {
        ActivityEvent {
            t,
            kind: EventKind::IdleEnd,
        }
    }

    /// True for events that prove the user is at the keyboard: a non-empty
    /// input burst, or the OS reporting the end of an idle period.
    pub fn is_user_input(&self) -> bool {
        match self.kind {
            EventKind::InputBurst { keys, clicks } => keys > 0 || clicks > 0,
            EventKind::IdleEnd => true,
            _ => false,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            EventKind::WindowFocus { .. } => "WINDOW_FOCUS",
            EventKind::InputBurst { .. } => "INPUT_BURST",
            EventKind::IdleStart => "IDLE_START",
            EventKind::IdleEnd => "IDLE_END",
        }
    }

    /// Copy with the window title replaced by its digest.
    pub fn redacted(&self) -> ActivityEvent {
        match &self.kind {
            EventKind::WindowFocus { app_id, window_title } if !is_redacted(window_title) => {
                ActivityEvent::focus(self.t, app_id, &redact_title(window_title))
            }
            _ => self.clone(),
        }
    }
}

const REDACTED_PREFIX: &str = "sha256:";

/// Stable one-way digest standing in for a window title.
pub fn redact_title(title: &str) -> String {
    let digest = Sha256::digest(title.as_bytes());
    format!("{REDACTED_PREFIX}{}", hex::encode(&digest[..8]))
}

pub fn is_redacted(title: &str) -> bool {
    title.len() == REDACTED_PREFIX.len() + 16
        && title.starts_with(REDACTED_PREFIX)
        && title[REDACTED_PREFIX.len()..].bytes().all(|b| b.is_ascii_hexdigit())
}
