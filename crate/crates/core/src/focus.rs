//! Focus state machine and trigger detection.
//!
//! [`FocusEngine`] consumes activity events in time order and reports
//! [`TriggerEvent`]s when the user drifts away (`PROLONGED_IDLE`), hops
//! between windows too fast (`CONTEXT_THRASH`) or comes back to development
//! work after a break (`RECOVERY`). It also keeps enough history to answer
//! [`FocusEngine::summarize`] queries and to cut activity into
//! [`FocusSession`]s.
//!
//! Time only moves forward through events or explicit [`FocusEngine::advance`]
//! calls, so replaying a trace gives the same triggers at the same virtual
//! times as the live run that recorded it.
//!
//! Idle periods run from the last input to the next input, `[last, next)`,
//! and count as idle once they reach `idle_threshold`. The prolonged-idle
//! trigger fires inside the period, at `last + prolonged_idle_threshold`.
//! Session start counts as an input.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activity::{ActivityEvent, EventKind};
use crate::config::Thresholds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AppCategory {
    Ide,
    Terminal,
    DocsBrowser,
    Communication,
    Other,
}

impl AppCategory {
    /// Development categories: focus blocks and recoveries count only here.
    pub fn is_dev(self) -> bool {
        matches!(self, AppCategory::Ide | AppCategory::Terminal)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AppCategory::Ide => "IDE",
            AppCategory::Terminal => "TERMINAL",
            AppCategory::DocsBrowser => "DOCS_BROWSER",
            AppCategory::Communication => "COMMUNICATION",
            AppCategory::Other => "OTHER",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppRule {
    pub pattern: String,
    pub category: AppCategory,
}

pub fn default_app_rules() -> Vec<AppRule> {
    use AppCategory::*;
    let table: &[(&[&str], AppCategory)] = &[
        (
            &[
                "code",
                "code-*",
                "vscodium",
                "cursor",
                "intellij*",
                "idea*",
                "pycharm*",
                "clion*",
                "goland*",
                "webstorm*",
                "rider*",
                "rustrover*",
                "android-studio*",
                "xcode",
                "sublime*",
                "vim",
                "nvim",
                "gvim",
                "emacs*",
                "zed",
                "helix",
                "eclipse*",
            ],
            Ide,
        ),
        (
            &[
                "*terminal*",
                "alacritty",
                "kitty",
                "wezterm*",
                "iterm*",
                "konsole",
                "xterm",
                "tilix",
                "foot",
                "warp",
                "ghostty",
                "tmux",
            ],
            Terminal,
        ),
        (
            &[
                "firefox*",
                "chrome*",
                "chromium*",
                "google-chrome*",
                "brave*",
                "safari",
                "msedge*",
                "*browser*",
                "opera*",
                "vivaldi*",
                "devdocs*",
                "zeal",
                "dash",
            ],
            DocsBrowser,
        ),
        (
            &[
                "slack*",
                "discord*",
                "teams*",
                "zoom*",
                "thunderbird*",
                "outlook*",
                "mail",
                "telegram*",
                "signal*",
                "element*",
                "skype*",
                "mattermost*",
            ],
            Communication,
        ),
    ];
    table
        .iter()
        .flat_map(|(patterns, category)| {
            patterns.iter().map(move |p| AppRule {
                pattern: (*p).to_string(),
                category: *category,
            })
        })
        .collect()
}

/// Ordered glob rules mapping app ids to categories; first match wins and
/// unmatched apps are `OTHER`. Matching ignores ASCII case.
#[derive(Debug, Clone)]
pub struct AppClassifier {
    rules: Vec<(glob::Pattern, AppCategory)>,
}

impl AppClassifier {
    pub fn new(rules: &[AppRule]) -> Result<Self, glob::PatternError> {
        let rules = rules
            .iter()
            .map(|r| Ok((glob::Pattern::new(&r.pattern.to_ascii_lowercase())?, r.category)))
            .collect::<Result<_, glob::PatternError>>()?;
        Ok(AppClassifier { rules })
    }

    pub fn classify(&self, app_id: &str) -> AppCategory {
        let app = app_id.to_ascii_lowercase();
        self.rules
            .iter()
            .find(|(p, _)| p.matches(&app))
            .map_or(AppCategory::Other, |(_, c)| *c)
    }
}

impl Default for AppClassifier {
    fn default() -> Self {
        AppClassifier::new(&default_app_rules()).expect("built-in rules are valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FocusMode {
    Active,
    Idle,
    Away,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FocusState {
    pub mode: FocusMode,
    pub last_input_t: f64,
    pub current_app: Option<String>,
    pub session_start_t: f64,
    pub idle_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TriggerKind {
    ProlongedIdle,
    ContextThrash,
    Recovery,
    UserMessage,
}

impl TriggerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TriggerKind::ProlongedIdle => "PROLONGED_IDLE",
            TriggerKind::ContextThrash => "CONTEXT_THRASH",
            TriggerKind::Recovery => "RECOVERY",
            TriggerKind::UserMessage => "USER_MESSAGE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TriggerContext {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub idle_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub switch_count: Option<u32>,
    /// For recoveries: seconds from the start of the idle period to the
    /// moment development work resumed.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub recovered_within: Option<f64>,
    pub apps_involved: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub t: f64,
    pub kind: TriggerKind,
    pub context: TriggerContext,
}

impl TriggerEvent {
    pub fn user_message(t: f64) -> Self {
        TriggerEvent {
            t,
            kind: TriggerKind::UserMessage,
            context: TriggerContext::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusSession {
    pub start_t: f64,
    pub end_t: f64,
    pub dominant_app: String,
    pub category: AppCategory,
    pub switch_count: u32,
    pub uninterrupted: bool,
}

impl FocusSession {
    pub fn duration(&self) -> f64 {
        self.end_t - self.start_t
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ActivitySummary {
    pub window_seconds: f64,
    pub per_app_seconds: BTreeMap<String, f64>,
    pub per_category_seconds: BTreeMap<AppCategory, f64>,
    pub idle_seconds: f64,
    pub switch_count: u32,
    pub last_nudge_t: Option<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FocusError {
    #[error("event at t={t} is older than engine clock t={clock}")]
    Order { t: f64, clock: f64 },
}

#[derive(Debug, Clone)]
struct OpenSession {
    start_t: f64,
    category: AppCategory,
    switch_count: u32,
    app_time: BTreeMap<String, f64>,
    // time from which the current app accrues session time
    mark_t: f64,
}

#[derive(Debug, Clone, Copy)]
struct PendingRecovery {
    resume_t: f64,
    idle_start_t: f64,
}

#[derive(Debug, Clone)]
pub struct FocusEngine {
    thresholds: Thresholds,
    classifier: AppClassifier,
    dev_aware: bool,
    session_start_t: f64,
    clock: f64,
    last_input_t: f64,
    // false until the first real input; the session-start pseudo input
    // drives triggers but is not reported as idle time
    seen_input: bool,
    idle_noted: bool,
    prolonged_fired: bool,
    current_app: Option<String>,
    recent_focus: VecDeque<(f64, String)>,
    thrash_quiet_until: f64,
    pending_recovery: Option<PendingRecovery>,
    open_session: Option<OpenSession>,
    closed_sessions: Vec<FocusSession>,
    out: Vec<TriggerEvent>,
    last_nudge_t: Option<f64>,
    // history for summaries
    focus_log: Vec<(f64, String)>,
    switch_log: Vec<f64>,
    idle_gaps: Vec<(f64, f64)>,
    explicit_idle: Vec<(f64, f64)>,
    explicit_idle_open: Option<f64>,
}

impl FocusEngine {
    pub fn new(thresholds: Thresholds, classifier: AppClassifier, session_start_t: f64) -> Self {
        FocusEngine {
            thresholds,
            classifier,
            dev_aware: true,
            session_start_t,
            clock: session_start_t,
            last_input_t: session_start_t,
            seen_input: false,
            idle_noted: false,
            prolonged_fired: false,
            current_app: None,
            recent_focus: VecDeque::new(),
            thrash_quiet_until: f64::NEG_INFINITY,
            pending_recovery: None,
            open_session: None,
            closed_sessions: Vec::new(),
            out: Vec::new(),
            last_nudge_t: None,
            focus_log: Vec::new(),
            switch_log: Vec::new(),
            idle_gaps: Vec::new(),
            explicit_idle: Vec::new(),
            explicit_idle_open: None,
        }
    }

    /// Without development awareness every app counts as a place to recover
    /// to, and sessions are not split by category.
    pub fn set_dev_aware(&mut self, dev_aware: bool) {
        self.dev_aware = dev_aware;
    }

    pub fn set_thresholds(&mut self, thresholds: Thresholds) {
        self.thresholds = thresholds;
    }

    pub fn set_classifier(&mut self, classifier: AppClassifier) {
        self.classifier = classifier;
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.thresholds
    }

    pub fn classify_app(&self, app_id: &str) -> AppCategory {
        self.classifier.classify(app_id)
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn note_nudge(&mut self, t: f64) {
        self.last_nudge_t = Some(t);
    }

    fn is_dev(&self, app: Option<&str>) -> bool {
        match app {
            Some(app) => !self.dev_aware || self.classifier.classify(app).is_dev(),
            None => false,
        }
    }

    fn session_category(&self) -> AppCategory {
        match (&self.current_app, self.dev_aware) {
            (Some(app), true) => self.classifier.classify(app),
            (Some(_), false) => AppCategory::Ide,
            (None, _) => AppCategory::Other,
        }
    }

    pub fn state(&self, now: f64) -> FocusState {
        let now = now.max(self.clock);
        let idle = now - self.last_input_t;
        let mode = if idle >= self.thresholds.away_threshold {
            FocusMode::Away
        } else if idle >= self.thresholds.idle_threshold {
            FocusMode::Idle
        } else {
            FocusMode::Active
        };
        FocusState {
            mode,
            last_input_t: self.last_input_t,
            current_app: self.current_app.clone(),
            session_start_t: self.session_start_t,
            idle_seconds: idle,
        }
    }

    /// The session in progress, closed hypothetically at `now`.
    pub fn open_session(&self, now: f64) -> Option<FocusSession> {
        let open = self.open_session.as_ref()?;
        let end = if self.idle_noted {
            self.last_input_t
        } else {
            now.max(open.start_t)
        };
        Some(self.finish_session(open, end))
    }

    /// Processes one event. Triggers due before the event (a prolonged idle
    /// crossing) come first, in time order.
    pub fn ingest(&mut self, event: &ActivityEvent, now: f64) -> Result<Vec<TriggerEvent>, FocusError> {
        if event.t < self.clock {
            return Err(FocusError::Order {
                t: event.t,
                clock: self.clock,
            });
        }
        self.advance_clock(event.t);
        let t = event.t;

        match &event.kind {
            EventKind::IdleStart => self.explicit_idle_open = Some(t),
            EventKind::IdleEnd => {
                if let Some(start) = self.explicit_idle_open.take() {
                    self.explicit_idle.push((start, t));
                }
            }
            EventKind::WindowFocus { app_id, .. } => self.on_focus(t, app_id),
            EventKind::InputBurst { .. } => {}
        }
        if event.is_user_input() {
            self.on_input(t);
        }

        self.advance_clock(now.max(t));
        Ok(std::mem::take(&mut self.out))
    }

    /// Moves the clock to `now` without an event, emitting any triggers that
    /// fall due.
    pub fn advance(&mut self, now: f64) -> Vec<TriggerEvent> {
        if now > self.clock {
            self.advance_clock(now);
        }
        std::mem::take(&mut self.out)
    }

    fn advance_clock(&mut self, to: f64) {
        let th = self.thresholds;
        if !self.idle_noted && self.last_input_t + th.idle_threshold <= to {
            self.idle_noted = true;
            let end = self.last_input_t;
            self.close_open_session(end);
        }
        if !self.prolonged_fired && self.last_input_t + th.prolonged_idle_threshold <= to {
            self.prolonged_fired = true;
            self.out.push(TriggerEvent {
                t: self.last_input_t + th.prolonged_idle_threshold,
                kind: TriggerKind::ProlongedIdle,
                context: TriggerContext {
                    idle_seconds: Some(th.prolonged_idle_threshold),
                    apps_involved: self.current_app.iter().cloned().collect(),
                    ..Default::default()
                },
            });
        }
        if let Some(p) = self.pending_recovery {
            if to > p.resume_t + th.recovery_window_seconds {
                self.pending_recovery = None;
            }
        }
        self.clock = self.clock.max(to);
    }

    fn on_input(&mut self, t: f64) {
        if self.idle_noted {
            if self.seen_input {
                self.idle_gaps.push((self.last_input_t, t));
            }
            self.pending_recovery = Some(PendingRecovery {
                resume_t: t,
                idle_start_t: self.last_input_t,
            });
            // With no window information at all, resuming input is the
            // only recovery signal there is.
            if self.current_app.is_none() || self.is_dev(self.current_app.as_deref()) {
                self.emit_recovery(t);
            }
        }
        self.last_input_t = t;
        self.seen_input = true;
        self.idle_noted = false;
        self.prolonged_fired = false;
        if self.open_session.is_none() {
            self.open_session = Some(OpenSession {
                start_t: t,
                category: self.session_category(),
                switch_count: 0,
                app_time: BTreeMap::new(),
                mark_t: t,
            });
        }
    }

    fn on_focus(&mut self, t: f64, app_id: &str) {
        let th = self.thresholds;

        if self.current_app.is_some() {
            self.switch_log.push(t);
        }
        self.recent_focus.push_back((t, app_id.to_string()));
        while let Some(&(ft, _)) = self.recent_focus.front() {
            if ft < t - th.thrash_window_seconds {
                self.recent_focus.pop_front();
            } else {
                break;
            }
        }
        if self.recent_focus.len() >= th.thrash_n && t >= self.thrash_quiet_until {
            let mut apps: Vec<String> = Vec::new();
            for (_, app) in &self.recent_focus {
                if !apps.contains(app) {
                    apps.push(app.clone());
                }
            }
            self.out.push(TriggerEvent {
                t,
                kind: TriggerKind::ContextThrash,
                context: TriggerContext {
                    switch_count: Some(self.recent_focus.len() as u32),
                    apps_involved: apps,
                    ..Default::default()
                },
            });
            self.thrash_quiet_until = t + th.thrash_cooldown_seconds;
        }

        let previous = self.current_app.replace(app_id.to_string());
        self.focus_log.push((t, app_id.to_string()));
        let category = self.session_category();
        if let Some(mut open) = self.open_session.take() {
            if let Some(prev) = previous {
                *open.app_time.entry(prev).or_default() += t - open.mark_t;
            }
            open.mark_t = t;
            if open.category.is_dev() != category.is_dev() {
                let session = self.finish_session(&open, t);
                self.push_session(session);
                self.open_session = Some(OpenSession {
                    start_t: t,
                    category,
                    switch_count: 0,
                    app_time: BTreeMap::new(),
                    mark_t: t,
                });
            } else {
                open.switch_count += 1;
                self.open_session = Some(open);
            }
        }

        if self.pending_recovery.is_some() && self.is_dev(Some(app_id)) {
            self.emit_recovery(t);
        }
    }

    fn emit_recovery(&mut self, t: f64) {
        if let Some(p) = self.pending_recovery.take() {
            self.out.push(TriggerEvent {
                t,
                kind: TriggerKind::Recovery,
                context: TriggerContext {
                    recovered_within: Some(t - p.idle_start_t),
                    apps_involved: self.current_app.iter().cloned().collect(),
                    ..Default::default()
                },
            });
        }
    }

    fn finish_session(&self, open: &OpenSession, end_t: f64) -> FocusSession {
        let mut app_time = open.app_time.clone();
        if let Some(app) = &self.current_app {
            let tail = (end_t - open.mark_t).max(0.0);
            *app_time.entry(app.clone()).or_default() += tail;
        }
        let dominant_app = app_time
            .iter()
            .fold(None::<(&String, f64)>, |best, (app, &secs)| match best {
                Some((_, b)) if b >= secs => best,
                _ => Some((app, secs)),
            })
            .map_or_else(|| "unknown".to_string(), |(a, _)| a.clone());
        FocusSession {
            start_t: open.start_t,
            end_t,
            dominant_app,
            category: open.category,
            switch_count: open.switch_count,
            uninterrupted: open.switch_count <= self.thresholds.max_switches_per_block,
        }
    }

    fn close_open_session(&mut self, end_t: f64) {
        if let Some(open) = self.open_session.take() {
            let session = self.finish_session(&open, end_t);
            self.push_session(session);
        }
    }

    fn push_session(&mut self, session: FocusSession) {
        if session.end_t > session.start_t {
            self.closed_sessions.push(session);
        }
    }

    /// Advances to `now` and drains the sessions closed so far, either at
    /// idle onset or when activity crossed between development and other
    /// categories. Triggers that fall due are kept for the next
    /// [`ingest`](Self::ingest) or [`advance`](Self::advance).
    pub fn close_sessions(&mut self, now: f64) -> Vec<FocusSession> {
        if now > self.clock {
            self.advance_clock(now);
        }
        std::mem::take(&mut self.closed_sessions)
    }

    /// Idle intervals known at `now`, unmerged.
    fn idle_intervals(&self, now: f64) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = self.idle_gaps.clone();
        if self.seen_input && now - self.last_input_t >= self.thresholds.idle_threshold {
            out.push((self.last_input_t, now));
        }
        out.extend(self.explicit_idle.iter().copied());
        if let Some(start) = self.explicit_idle_open {
            out.push((start, now));
        }
        out
    }

    /// Time per app and category over `[now - window_seconds, now]`, with
    /// idle time subtracted and reported separately.
    pub fn summarize(&self, window_seconds: f64, now: f64) -> ActivitySummary {
        let lo = now - window_seconds;
        let hi = now;
        let idle = merge_intervals(
            self.idle_intervals(now)
                .into_iter()
                .filter_map(|(a, b)| clip(a, b, lo, hi))
                .collect(),
        );
        // an empty f64 sum is -0.0, which renders as "-0"
        let idle_seconds = idle.iter().fold(0.0, |acc, (a, b)| acc + (b - a));

        let mut per_app: BTreeMap<String, f64> = BTreeMap::new();
        for (i, (start, app)) in self.focus_log.iter().enumerate() {
            let end = self.focus_log.get(i + 1).map_or(hi, |(t, _)| *t);
            let Some((a, b)) = clip(*start, end, lo, hi) else {
                continue;
            };
            let busy = (b - a) - overlap_with(&idle, a, b);
            if busy > 0.0 {
                *per_app.entry(app.clone()).or_default() += busy;
            }
        }
        let mut per_category: BTreeMap<AppCategory, f64> = BTreeMap::new();
        for (app, secs) in &per_app {
            *per_category.entry(self.classifier.classify(app)).or_default() += secs;
        }
        let switch_count = self.switch_log.iter().filter(|&&t| t > lo && t <= hi).count() as u32;

        ActivitySummary {
            window_seconds,
            per_app_seconds: per_app,
            per_category_seconds: per_category,
            idle_seconds,
            switch_count,
            last_nudge_t: self.last_nudge_t,
        }
    }

    /// Drops summary history that ended before `t`.
    pub fn prune_history(&mut self, t: f64) {
        let keep_from = self.focus_log.iter().rposition(|(ft, _)| *ft <= t).unwrap_or(0);
        self.focus_log.drain(..keep_from);
        self.switch_log.retain(|&s| s >= t);
        self.idle_gaps.retain(|&(_, b)| b >= t);
        self.explicit_idle.retain(|&(_, b)| b >= t);
    }
}

fn clip(a: f64, b: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    let (a, b) = (a.max(lo), b.min(hi));
    (b > a).then_some((a, b))
}

fn merge_intervals(mut v: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    v.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
    for (a, b) in v {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

fn overlap_with(merged: &[(f64, f64)], a: f64, b: f64) -> f64 {
    merged
        .iter()
        .filter_map(|&(x, y)| clip(x, y, a, b))
        .map(|(x, y)| y - x)
        .sum()
}
