//! Live sampling of the desktop through a platform adapter.

use std::collections::BTreeMap;

use thiserror::Error;

use super::ActivityEvent;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowInfo {
    pub app_id: String,
    pub window_title: String,
}

/// Keystroke and click counts. Key contents are never observed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InputCounts {
    pub keys: u32,
    pub clicks: u32,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("platform adapter unavailable: {0}")]
pub struct PlatformError(pub String);

/// OS integration used by [`LiveMonitor`].
pub trait PlatformAdapter: Send {
    fn name(&self) -> &'static str;
    /// The currently focused window, if any.
    fn active_window(&mut self) -> Result<Option<WindowInfo>, PlatformError>;
    /// Input counts observed since the previous call.
    fn take_input(&mut self) -> Result<InputCounts, PlatformError>;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonitorError {
    #[error(transparent)]
    PlatformUnavailable(#[from] PlatformError),
    #[error("clock skew: sample at {now} is earlier than previous sample at {last}")]
    ClockSkew { now: f64, last: f64 },
}

/// Polls a [`PlatformAdapter`] and turns its observations into
/// [`ActivityEvent`]s: a `WINDOW_FOCUS` whenever the focused window changes
/// and one `INPUT_BURST` per elapsed bucket that saw any input.
pub struct LiveMonitor<A> {
    adapter: A,
    bucket_seconds: f64,
    redact_titles: bool,
    last_now: Option<f64>,
    last_window: Option<WindowInfo>,
    input_only: bool,
    // bucket index -> accumulated counts, for buckets not yet emitted
    pending: BTreeMap<u64, InputCounts>,
}

impl<A: PlatformAdapter> LiveMonitor<A> {
    pub fn new(adapter: A, bucket_seconds: f64, redact_titles: bool) -> Self {
        assert!(bucket_seconds > 0.0, "bucket_seconds must be positive");
        LiveMonitor {
            adapter,
            bucket_seconds,
            redact_titles,
            last_now: None,
            last_window: None,
            input_only: false,
            pending: BTreeMap::new(),
        }
    }

    /// True once window queries have failed and only input is tracked.
    pub fn is_input_only(&self) -> bool {
        self.input_only
    }

    pub fn adapter(&self) -> &A {
        &self.adapter
    }

    /// Takes one sample at session time `now` (seconds).
    pub fn capture_sample(&mut self, now: f64) -> Result<Vec<ActivityEvent>, MonitorError> {
        if let Some(last) = self.last_now {
            if now < last {
                tracing::warn!(now, last, "dropping sample: clock moved backwards");
                return Err(MonitorError::ClockSkew { now, last });
            }
        }

        let counts = self.adapter.take_input()?;
        if counts.keys > 0 || counts.clicks > 0 {
            let bucket = self.bucket_containing(now);
            let slot = self.pending.entry(bucket).or_default();
            slot.keys = slot.keys.saturating_add(counts.keys);
            slot.clicks = slot.clicks.saturating_add(counts.clicks);
        }

        let mut events = Vec::new();
        while let Some((&bucket, _)) = self.pending.first_key_value() {
            let end = (bucket + 1) as f64 * self.bucket_seconds;
            if end > now {
                break;
            }
            let (_, c) = self.pending.pop_first().expect("non-empty");
            events.push(ActivityEvent::input(end, c.keys, c.clicks));
        }

        if !self.input_only {
            match self.adapter.active_window() {
                Ok(Some(window)) if self.last_window.as_ref() != Some(&window) => {
                    let ev = ActivityEvent::focus(now, &window.app_id, &window.window_title);
                    events.push(if self.redact_titles { ev.redacted() } else { ev });
                    self.last_window = Some(window);
                }
                Ok(_) => {}
                Err(e) => {
                    tracing::warn!(adapter = self.adapter.name(), error = %e, "window tracking unavailable, continuing with input only");
                    self.input_only = true;
                }
            }
        }

        self.last_now = Some(now);
        Ok(events)
    }

    /// Index of the bucket `(k*b, (k+1)*b]` holding `t`; counts drained at
    /// `t` happened during the interval ending at `t`.
    fn bucket_containing(&self, t: f64) -> u64 {
        let k = (t / self.bucket_seconds).ceil() - 1.0;
        if k < 0.0 {
            0
        } else {
            k as u64
        }
    }
}

/// Adapter driven by a script of observations, for tests and demos.
#[derive(Debug, Default)]
pub struct ScriptedAdapter {
    pub window: Option<WindowInfo>,
    pub pending_input: InputCounts,
    pub window_fails: bool,
    pub input_fails: bool,
}

impl ScriptedAdapter {
    pub fn focus(&mut self, app_id: &str, title: &str) {
        self.window = Some(WindowInfo {
            app_id: app_id.to_string(),
            window_title: title.to_string(),
        });
    }

    pub fn type_keys(&mut self, keys: u32, clicks: u32) {
        self.pending_input.keys += keys;
        self.pending_input.clicks += clicks;
    }
}

impl PlatformAdapter for ScriptedAdapter {
    fn name(&self) -> &'static str {
        "scripted"
    }

    fn active_window(&mut self) -> Result<Option<WindowInfo>, PlatformError> {
        if self.window_fails {
            return Err(PlatformError("no display".into()));
        }
        Ok(self.window.clone())
    }

    fn take_input(&mut self) -> Result<InputCounts, PlatformError> {
        if self.input_fails {
            return Err(PlatformError("no input device".into()));
        }
        Ok(std::mem::take(&mut self.pending_input))
    }
}
