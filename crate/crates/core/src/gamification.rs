//! Points, badges, streaks, milestones and theme unlocks.
//!
//! The engine is a fold over [`GameEvent`]s. Every state change is recorded
//! as exactly one [`Award`], so [`GamificationState::from_journal`] rebuilds
//! the visible state from the journal alone.
//!
//! | rule | event                  | effect                                   |
//! |------|------------------------|------------------------------------------|
//! | R1   | FOCUS_BLOCK_COMPLETED  | +10 per uninterrupted block ≥ 1500 s      |
//! | R2   | QUICK_RECOVERY         | +5 when latency ≤ 120 s                   |
//! | R3   | CHAT_CHECKIN           | +2, at most 5 per day                     |
//! | B1   | first R1               | badge `first_focus`                      |
//! | B2   | 4th R1 in a day        | badge `deep_diver`                       |
//! | B3   | 10th R2                | badge `comeback`                         |
//! | S    | DAY_ROLLOVER           | streak +1 after a day with a block, else 0 |
//! | S3/S7/S30 | streak reaches n  | badge `streak_n`                         |
//! | M    | points cross 100/500/1000 | milestone plus one theme              |

use std::collections::{BTreeSet, HashSet};

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GameEventKind {
    FocusBlockCompleted,
    QuickRecovery,
    ChatCheckin,
    DayRollover,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GamePayload {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub block_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub uninterrupted: Option<bool>,
    /// Distinguishes several blocks completed by one session.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub session_start_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub block_index: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub latency_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub message_id: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub day: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameEvent {
    pub t: f64,
    pub kind: GameEventKind,
    #[serde(default)]
    pub payload: GamePayload,
}

impl GameEvent {
    pub fn focus_block(t: f64, block_seconds: f64, uninterrupted: bool) -> Self {
        GameEvent {
            t,
            kind: GameEventKind::FocusBlockCompleted,
            payload: GamePayload {
                block_seconds: Some(block_seconds),
                uninterrupted: Some(uninterrupted),
                ..GamePayload::default()
            },
        }
    }

    pub fn quick_recovery(t: f64, latency_seconds: f64) -> Self {
        GameEvent {
            t,
            kind: GameEventKind::QuickRecovery,
            payload: GamePayload {
                latency_seconds: Some(latency_seconds),
                ..GamePayload::default()
            },
        }
    }

    pub fn chat_checkin(t: f64, message_id: u64) -> Self {
        GameEvent {
            t,
            kind: GameEventKind::ChatCheckin,
            payload: GamePayload {
                message_id: Some(message_id),
                ..GamePayload::default()
            },
        }
    }

    pub fn day_rollover(t: f64, day: NaiveDate) -> Self {
        GameEvent {
            t,
            kind: GameEventKind::DayRollover,
            payload: GamePayload {
                day: Some(day),
                ..GamePayload::default()
            },
        }
    }

    fn key(&self) -> String {
        format!(
            "{:016x}|{:?}|{}",
            self.t.to_bits(),
            self.kind,
            serde_json::to_string(&self.payload).expect("payload serializes")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Award {
    pub t: f64,
    pub points_delta: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub badge_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub milestone_id: Option<String>,
    /// Rule id from the table above.
    pub reason: String,
    /// Set by rollover awards: the new streak length.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub streak_days: Option<u32>,
    /// Set by rollover awards: the day that became active.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub day: Option<NaiveDate>,
}

impl Award {
    pub fn points(t: f64, delta: u64, reason: &str) -> Self {
        Award {
            t,
            points_delta: delta,
            badge_id: None,
            milestone_id: None,
            reason: reason.to_string(),
            streak_days: None,
            day: None,
        }
    }

    pub fn badge(t: f64, badge: &str, reason: &str) -> Self {
        Award {
            badge_id: Some(badge.to_string()),
            ..Award::points(t, 0, reason)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Milestone {
    pub id: &'static str,
    pub points: u64,
    pub theme_id: &'static str,
}

pub const MILESTONES: [Milestone; 3] = [
    Milestone {
        id: "m100",
        points: 100,
        theme_id: "dusk",
    },
    Milestone {
        id: "m500",
        points: 500,
        theme_id: "forest",
    },
    Milestone {
        id: "m1000",
        points: 1000,
        theme_id: "aurora",
    },
];

pub fn theme_for_milestone(id: &str) -> Option<&'static str> {
    MILESTONES.iter().find(|m| m.id == id).map(|m| m.theme_id)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameRules {
    pub block_points: u64,
    pub focus_block_seconds: f64,
    pub recovery_points: u64,
    pub quick_recovery_seconds: f64,
    pub checkin_points: u64,
    pub checkins_per_day: u32,
    pub deep_diver_blocks: u32,
    pub comeback_recoveries: u32,
}

impl Default for GameRules {
    fn default() -> Self {
        GameRules {
            block_points: 10,
            focus_block_seconds: 1500.0,
            recovery_points: 5,
            quick_recovery_seconds: 120.0,
            checkin_points: 2,
            checkins_per_day: 5,
            deep_diver_blocks: 4,
            comeback_recoveries: 10,
        }
    }
}

const STREAK_BADGES: [(u32, &str); 3] = [(3, "streak_3"), (7, "streak_7"), (30, "streak_30")];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GamificationState {
    pub points: u64,
    pub badges: BTreeSet<String>,
    pub milestones: BTreeSet<String>,
    pub streak_days: u32,
    pub last_active_day: Option<NaiveDate>,
    pub unlocked_themes: BTreeSet<String>,
    pub journal: Vec<Award>,
}

impl GamificationState {
    fn absorb(&mut self, award: &Award) {
        self.points += award.points_delta;
        if let Some(b) = &award.badge_id {
            self.badges.insert(b.clone());
        }
        if let Some(m) = &award.milestone_id {
            self.milestones.insert(m.clone());
            if let Some(theme) = theme_for_milestone(m) {
                self.unlocked_themes.insert(theme.to_string());
            }
        }
        if let Some(s) = award.streak_days {
            self.streak_days = s;
        }
        if let Some(d) = award.day {
            self.last_active_day = Some(d);
        }
        self.journal.push(award.clone());
    }

    pub fn from_journal(journal: &[Award]) -> Self {
        let mut state = GamificationState::default();
        for a in journal {
            state.absorb(a);
        }
        state
    }

    pub fn journal_sum(&self) -> u64 {
        self.journal.iter().map(|a| a.points_delta).sum()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("game event at t={t} precedes previous event at t={previous}")]
    Order { t: f64, previous: f64 },
    #[error("rollover to {day} precedes active day {current}")]
    DayOrder { day: NaiveDate, current: NaiveDate },
    #[error("event is missing payload field {0}")]
    MissingPayload(&'static str),
}

#[derive(Debug, Clone)]
pub struct GameEngine {
    rules: GameRules,
    state: GamificationState,
    seen: HashSet<String>,
    last_t: Option<f64>,
    blocks_today: u32,
    checkins_today: u32,
    lifetime_blocks: u64,
    recoveries: u32,
}

impl Default for GameEngine {
    fn default() -> Self {
        GameEngine::new(GameRules::default())
    }
}

impl GameEngine {
    pub fn new(rules: GameRules) -> Self {
        GameEngine {
            rules,
            state: GamificationState::default(),
            seen: HashSet::new(),
            last_t: None,
            blocks_today: 0,
            checkins_today: 0,
            lifetime_blocks: 0,
            recoveries: 0,
        }
    }

    /// Folds `events` from a fresh engine. Events that fail to apply are skipped.
    pub fn replay<'a>(rules: GameRules, events: impl IntoIterator<Item = &'a GameEvent>) -> Self {
        let mut engine = GameEngine::new(rules);
        for e in events {
            let _ = engine.apply(e);
        }
        engine
    }

    pub fn state(&self) -> &GamificationState {
        &self.state
    }

    pub fn rules(&self) -> &GameRules {
        &self.rules
    }

    pub fn last_t(&self) -> Option<f64> {
        self.last_t
    }

    pub fn current_day(&self) -> Option<NaiveDate> {
        self.state.last_active_day
    }

    pub fn set_focus_block_seconds(&mut self, seconds: f64) {
        self.rules.focus_block_seconds = seconds;
    }

    pub fn apply(&mut self, event: &GameEvent) -> Result<Vec<Award>, GameError> {
        let key = event.key();
        if self.seen.contains(&key) {
            return Ok(Vec::new());
        }
        if let Some(previous) = self.last_t {
            if event.t < previous {
                return Err(GameError::Order { t: event.t, previous });
            }
        }
        let t = event.t;
        let r = self.rules;
        let mut awards = Vec::new();
        match event.kind {
            GameEventKind::FocusBlockCompleted => {
                let secs = event
                    .payload
                    .block_seconds
                    .ok_or(GameError::MissingPayload("block_seconds"))?;
                let clean = event.payload.uninterrupted.unwrap_or(false);
                if clean && secs >= r.focus_block_seconds {
                    awards.push(Award::points(t, r.block_points, "R1"));
                    self.blocks_today += 1;
                    self.lifetime_blocks += 1;
                    if self.lifetime_blocks == 1 {
                        awards.push(Award::badge(t, "first_focus", "B1"));
                    }
                    if self.blocks_today == r.deep_diver_blocks && !self.state.badges.contains("deep_diver") {
                        awards.push(Award::badge(t, "deep_diver", "B2"));
                    }
                }
            }
            GameEventKind::QuickRecovery => {
                let latency = event
                    .payload
                    .latency_seconds
                    .ok_or(GameError::MissingPayload("latency_seconds"))?;
                if latency >= 0.0 && latency <= r.quick_recovery_seconds {
                    awards.push(Award::points(t, r.recovery_points, "R2"));
                    self.recoveries += 1;
                    if self.recoveries == r.comeback_recoveries {
                        awards.push(Award::badge(t, "comeback", "B3"));
                    }
                }
            }
            GameEventKind::ChatCheckin => {
                if self.checkins_today < r.checkins_per_day {
                    self.checkins_today += 1;
                    awards.push(Award::points(t, r.checkin_points, "R3"));
                }
            }
            GameEventKind::DayRollover => {
                let day = event.payload.day.ok_or(GameError::MissingPayload("day"))?;
                awards.extend(self.rollover_awards(t, day)?);
            }
        }
        self.seen.insert(key);
        self.last_t = Some(t);
        let awards = self.commit(t, awards);
        Ok(awards)
    }

    /// Closes the active day and opens `day`. `None` when `day` is already active.
    pub fn rollover(&mut self, t: f64, day: NaiveDate) -> Result<Option<Award>, GameError> {
        let awards = self.apply(&GameEvent::day_rollover(t, day))?;
        Ok(awards.into_iter().find(|a| a.streak_days.is_some()))
    }

    fn rollover_awards(&mut self, t: f64, day: NaiveDate) -> Result<Vec<Award>, GameError> {
        let current = self.state.last_active_day;
        let streak = match current {
            Some(c) if day == c => return Ok(Vec::new()),
            Some(c) if day < c => return Err(GameError::DayOrder { day, current: c }),
            Some(c) if c.checked_add_days(Days::new(1)) == Some(day) => {
                if self.blocks_today >= 1 {
                    self.state.streak_days + 1
                } else {
                    0
                }
            }
            // a skipped day breaks the streak
            Some(_) => 0,
            None => u32::from(self.blocks_today >= 1),
        };
        self.blocks_today = 0;
        self.checkins_today = 0;
        let mut awards = vec![Award {
            streak_days: Some(streak),
            day: Some(day),
            ..Award::points(t, 0, "S")
        }];
        for (n, badge) in STREAK_BADGES {
            if streak == n && !self.state.badges.contains(badge) {
                awards.push(Award::badge(t, badge, &format!("S{n}")));
            }
        }
        Ok(awards)
    }

    /// Appends milestone awards and folds everything into the state.
    fn commit(&mut self, t: f64, awards: Vec<Award>) -> Vec<Award> {
        let mut out = Vec::with_capacity(awards.len());
        for a in awards {
            let before = self.state.points;
            self.state.absorb(&a);
            let after = self.state.points;
            out.push(a);
            for m in &MILESTONES {
                if before < m.points && after >= m.points && !self.state.milestones.contains(m.id) {
                    let award = Award {
                        milestone_id: Some(m.id.to_string()),
                        ..Award::points(t, 0, &format!("M{}", m.points))
                    };
                    self.state.absorb(&award);
                    out.push(award);
                }
            }
        }
        out
    }
}
