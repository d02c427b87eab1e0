//! Notification delivery with cooldown, quiet hours and a daily cap.
//!
//! Time is the pipeline's virtual clock `t` (seconds). Local wall time for
//! quiet hours and the daily cap is `epoch + t` in the configured offset.
//! Chat-kind messages were asked for by the user and bypass the policy.

use std::process::Command;

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, NaiveTime, Utc};
use serde::{Deserialize, Serialize};

use crate::config::{parse_quiet_hours, NotifierConfig, QuietRange};
use crate::prompt::ResponseType;

pub const TITLE_MAX: usize = 60;
pub const BODY_MAX: usize = 240;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Urgency {
    Low,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Notification {
    pub id: u64,
    pub t: f64,
    pub title: String,
    pub body: String,
    pub kind: ResponseType,
    pub urgency: Urgency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Delivered,
    SuppressedCooldown,
    SuppressedQuiet,
    SuppressedDailyCap,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Delivered => "DELIVERED",
            Outcome::SuppressedCooldown => "SUPPRESSED_COOLDOWN",
            Outcome::SuppressedQuiet => "SUPPRESSED_QUIET",
            Outcome::SuppressedDailyCap => "SUPPRESSED_DAILY_CAP",
        }
    }
}

/// One journal line per delivery attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub notification: Notification,
    pub outcome: Outcome,
    /// The OS adapter failed and the item went to the in-app feed only.
    #[serde(default)]
    pub os_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryPolicy {
    pub cooldown_seconds: f64,
    pub quiet_hours: Vec<QuietRange>,
    pub max_per_day: u32,
}

impl DeliveryPolicy {
    pub fn from_config(config: &NotifierConfig) -> Result<Self, String> {
        if config.nudge_cooldown_seconds.is_nan() || config.nudge_cooldown_seconds <= 0.0 {
            return Err("nudge_cooldown_seconds must be positive".into());
        }
        Ok(DeliveryPolicy {
            cooldown_seconds: config.nudge_cooldown_seconds,
            quiet_hours: parse_quiet_hours(&config.quiet_hours)?,
            max_per_day: config.max_nudges_per_day,
        })
    }
}

impl Default for DeliveryPolicy {
    fn default() -> Self {
        DeliveryPolicy::from_config(&NotifierConfig::default()).expect("defaults are valid")
    }
}

pub trait OsNotifier: Send {
    fn show(&mut self, n: &Notification) -> Result<(), String>;
}

/// Desktop notifications through `notify-send`.
pub struct NotifySend;

impl OsNotifier for NotifySend {
    fn show(&mut self, n: &Notification) -> Result<(), String> {
        let urgency = match n.urgency {
            Urgency::Low => "low",
            Urgency::Normal => "normal",
        };
        let status = Command::new("notify-send")
            .args(["--app-name=tether", "-u", urgency, &n.title, &n.body])
            .status()
            .map_err(|e| e.to_string())?;
        if status.success() {
            Ok(())
        } else {
            Err(format!("notify-send exited with {status}"))
        }
    }
}

/// Removes markup and collapses whitespace.
pub fn sanitize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_tag = false;
    for c in text.chars() {
        match c {
            '<' => in_tag = true,
            '>' if in_tag => {
                in_tag = false;
                out.push(' ');
            }
            _ if in_tag => {}
            '*' | '_' | '`' | '#' | '~' => {}
            c if c.is_control() => out.push(' '),
            c => out.push(c),
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Cuts `text` to at most `max` chars, at a word boundary, ending in "…".
pub fn truncate_words(text: &str, max: usize) -> String {
    if text.chars().count() <= max {
        return text.to_string();
    }
    if max == 0 {
        return String::new();
    }
    let head: String = text.chars().take(max - 1).collect();
    // keep whole words when the next char is not a continuation of one
    let next_is_space = text.chars().nth(max - 1).is_some_and(char::is_whitespace);
    let cut = if next_is_space {
        head.as_str()
    } else {
        match head.rfind(char::is_whitespace) {
            Some(i) if i > 0 => &head[..i],
            _ => head.as_str(),
        }
    };
    format!("{}…", cut.trim_end())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Draft {
    pub title: String,
    pub body: String,
    pub kind: ResponseType,
    pub urgency: Urgency,
}

pub struct Notifier {
    policy: DeliveryPolicy,
    offset: FixedOffset,
    epoch: DateTime<Utc>,
    last_nudge_t: Option<f64>,
    day_count: Option<(NaiveDate, u32)>,
    next_id: u64,
    journal: Vec<DeliveryRecord>,
    os: Option<Box<dyn OsNotifier>>,
}

impl Notifier {
    /// Headless notifier: delivered items go to the feed only.
    pub fn new(policy: DeliveryPolicy, offset: FixedOffset, epoch: DateTime<Utc>) -> Self {
        Notifier {
            policy,
            offset,
            epoch,
            last_nudge_t: None,
            day_count: None,
            next_id: 1,
            journal: Vec::new(),
            os: None,
        }
    }

    pub fn with_os(mut self, os: Box<dyn OsNotifier>) -> Self {
        self.os = Some(os);
        self
    }

    pub fn set_policy(&mut self, policy: DeliveryPolicy) {
        self.policy = policy;
    }

    pub fn policy(&self) -> &DeliveryPolicy {
        &self.policy
    }

    /// Ids continue after `last_id`, for reopening a persisted journal.
    pub fn resume_ids(&mut self, last_id: u64) {
        self.next_id = self.next_id.max(last_id + 1);
    }

    pub fn last_nudge_t(&self) -> Option<f64> {
        self.last_nudge_t
    }

    pub fn local_time(&self, t: f64) -> DateTime<FixedOffset> {
        let at = self.epoch + Duration::milliseconds((t * 1000.0).round() as i64);
        at.with_timezone(&self.offset)
    }

    fn in_quiet_hours(&self, time: NaiveTime) -> bool {
        self.policy.quiet_hours.iter().any(|r| r.contains(time))
    }

    /// What [`Notifier::deliver`] would decide for a `kind` at `now`.
    pub fn check(&self, kind: ResponseType, now: f64) -> Outcome {
        if kind.is_chat() {
            return Outcome::Delivered;
        }
        if let Some(last) = self.last_nudge_t {
            if now - last < self.policy.cooldown_seconds {
                return Outcome::SuppressedCooldown;
            }
        }
        let local = self.local_time(now);
        if self.in_quiet_hours(local.time()) {
            return Outcome::SuppressedQuiet;
        }
        let today = local.date_naive();
        let count = match self.day_count {
            Some((d, n)) if d == today => n,
            _ => 0,
        };
        if count >= self.policy.max_per_day {
            return Outcome::SuppressedDailyCap;
        }
        Outcome::Delivered
    }

    pub fn deliver(&mut self, draft: Draft, now: f64) -> DeliveryRecord {
        let outcome = self.check(draft.kind, now);
        let notification = Notification {
            id: self.next_id,
            t: now,
            title: truncate_words(&sanitize(&draft.title), TITLE_MAX),
            body: truncate_words(&sanitize(&draft.body), BODY_MAX),
            kind: draft.kind,
            urgency: draft.urgency,
        };
        self.next_id += 1;
        let mut os_fallback = false;
        if outcome == Outcome::Delivered {
            if !draft.kind.is_chat() {
                self.last_nudge_t = Some(now);
                let today = self.local_time(now).date_naive();
                self.day_count = match self.day_count {
                    Some((d, n)) if d == today => Some((d, n + 1)),
                    _ => Some((today, 1)),
                };
                if let Some(os) = self.os.as_mut() {
                    if let Err(e) = os.show(&notification) {
                        tracing::warn!(error = %e, "OS notification failed; kept in feed");
                        os_fallback = true;
                    }
                }
            }
        } else {
            tracing::debug!(
                id = notification.id,
                reason = outcome.as_str(),
                "notification suppressed"
            );
        }
        let record = DeliveryRecord {
            notification,
            outcome,
            os_fallback,
        };
        self.journal.push(record.clone());
        record
    }

    /// Re-applies a persisted record without showing it again.
    pub fn restore(&mut self, record: DeliveryRecord) {
        self.resume_ids(record.notification.id);
        self.journal.push(record);
    }

    pub fn journal(&self) -> &[DeliveryRecord] {
        &self.journal
    }

    fn delivered(&self) -> impl Iterator<Item = &Notification> {
        self.journal
            .iter()
            .filter(|r| r.outcome == Outcome::Delivered)
            .map(|r| &r.notification)
    }

    /// Delivered notifications with `t > since`, ascending.
    pub fn feed(&self, since: f64) -> Vec<Notification> {
        self.delivered().filter(|n| n.t > since).cloned().collect()
    }

    /// Delivered notifications with `id > after`, ascending.
    pub fn feed_after_id(&self, after: u64) -> Vec<Notification> {
        self.delivered().filter(|n| n.id > after).cloned().collect()
    }
}
