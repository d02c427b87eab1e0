//! The assembled pipeline.
//!
//! [`Tether`] owns every component and exposes the operations the daemon,
//! API and CLI need. Each component sits behind its own lock and no lock is
//! held across a generation call, so status and feed reads stay fast while
//! the provider is busy.
//!
//! Activity flows `ingest → focus → (sessions → game, triggers → respond)`.
//! A trigger response is policy-checked first; only nudges that would be
//! shown are sent to the provider.

use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use serde::Serialize;
use thiserror::Error;

use crate::activity::{replay, ActivityEvent, ReplayReport, ReplaySpeed, SinkClosed, Trace};
use crate::config::{Config, ConfigError, Settings};
use crate::focus::{AppClassifier, FocusEngine, FocusSession, FocusState, TriggerEvent, TriggerKind};
use crate::gamification::{GameEngine, GameEvent, GameRules, GamificationState};
use crate::llm::{Gateway, LlmError};
use crate::notifier::{DeliveryPolicy, DeliveryRecord, Draft, Notification, Notifier, NotifySend, Outcome, Urgency};
use crate::prompt::{PromptBundle, PromptComposer, PromptError, PromptInput, ResponseType};
use crate::rag::{Document, RagEngine, RagError, ScoredChunk};
use crate::store::{ChatMessage, Role, Store, StoreError};

pub const MAX_CHAT_CHARS: usize = 4000;

/// Body used when the provider fails after a nudge was already cleared.
const FALLBACK_NUDGE: &str = "Time for one small step: pick the next tiny task and give it ten minutes.";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("message must be 1..={MAX_CHAT_CHARS} characters")]
    BadText,
    #[error("the {0} feature is disabled")]
    FeatureDisabled(&'static str),
    #[error("language model unavailable: {source}")]
    LlmUnavailable {
        user_message_id: Option<u64>,
        #[source]
        source: LlmError,
    },
    #[error("unknown message {0}")]
    UnknownMessage(u64),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Rag(#[from] RagError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid settings: {0}")]
    Settings(String),
    #[error("event out of order: {0}")]
    Order(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::BadText => "BAD_TEXT",
            ServiceError::FeatureDisabled(_) => "FEATURE_DISABLED",
            ServiceError::LlmUnavailable { .. } => "LLM_UNAVAILABLE",
            ServiceError::UnknownMessage(_) => "NOT_FOUND",
            ServiceError::Store(e) => e.code(),
            ServiceError::Rag(e) => e.code(),
            ServiceError::Prompt(e) => e.code(),
            ServiceError::Config(_) | ServiceError::Settings(_) => "INVALID_SETTINGS",
            ServiceError::Order(_) => "ORDER_ERROR",
        }
    }
}

/// Seconds since the pipeline epoch.
pub enum Clock {
    /// Moves only when events or [`Tether::advance`] say so.
    Virtual(Mutex<f64>),
    Live(Instant),
}

impl Clock {
    pub fn now(&self) -> f64 {
        match self {
            Clock::Virtual(t) => *t.lock().expect("clock lock"),
            Clock::Live(start) => start.elapsed().as_secs_f64(),
        }
    }

    fn observe(&self, t: f64) {
        if let Clock::Virtual(v) = self {
            let mut v = v.lock().expect("clock lock");
            *v = v.max(t);
        }
    }

    pub fn is_virtual(&self) -> bool {
        matches!(self, Clock::Virtual(_))
    }
}

pub struct Options {
    pub clock: Clock,
    /// Wall time at `t = 0`.
    pub epoch: DateTime<Utc>,
    /// Show nudges through the desktop notification service as well.
    pub native_notifications: bool,
    pub gateway: Option<Arc<Gateway>>,
}

impl Options {
    pub fn virtual_at(epoch: DateTime<Utc>) -> Self {
        Options {
            clock: Clock::Virtual(Mutex::new(0.0)),
            epoch,
            native_notifications: false,
            gateway: None,
        }
    }

    pub fn live() -> Self {
        Options {
            clock: Clock::Live(Instant::now()),
            epoch: Utc::now(),
            native_notifications: false,
            gateway: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Capabilities {
    pub monitoring: bool,
    pub chat: bool,
    pub dev_aware: bool,
    pub rag: bool,
    pub gamified: bool,
}

impl Capabilities {
    pub fn from_config(config: &Config) -> Self {
        let f = &config.features;
        Capabilities {
            monitoring: f.monitoring,
            chat: f.chat,
            dev_aware: f.dev_aware,
            rag: f.rag,
            gamified: f.gamification,
        }
    }

    pub fn lines(&self) -> [(&'static str, bool); 5] {
        [
            ("monitoring", self.monitoring),
            ("chat", self.chat),
            ("dev_aware", self.dev_aware),
            ("rag", self.rag),
            ("gamified", self.gamified),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Status {
    pub t: f64,
    #[serde(flatten)]
    pub state: FocusState,
    pub session: Option<FocusSession>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatOutcome {
    pub user_message_id: u64,
    pub reply: ChatMessage,
    pub template_id: String,
    pub retrieved: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Counters {
    pub events: u64,
    pub triggers: u64,
    pub nudges_delivered: u64,
    pub nudges_suppressed: u64,
}

type DeliveryListener = Box<dyn Fn(&Notification) + Send + Sync>;

pub struct Tether {
    config: RwLock<Config>,
    clock: Clock,
    epoch: DateTime<Utc>,
    store: Arc<Store>,
    gateway: Arc<Gateway>,
    rag: Arc<RagEngine>,
    composer: RwLock<PromptComposer>,
    focus: Mutex<FocusEngine>,
    game: Mutex<GameEngine>,
    /// Game events keep increasing across restarts: `t + game_offset`.
    game_offset: f64,
    notifier: Mutex<Notifier>,
    triggers: Mutex<Vec<TriggerEvent>>,
    counters: Mutex<Counters>,
    listeners: RwLock<Vec<DeliveryListener>>,
    last_prune: Mutex<f64>,
}

fn classifier(config: &Config) -> Result<AppClassifier, ServiceError> {
    AppClassifier::new(&config.app_rules).map_err(|e| ServiceError::Settings(format!("bad app rule pattern: {e}")))
}

fn game_rules(config: &Config) -> GameRules {
    GameRules {
        focus_block_seconds: config.thresholds.focus_block_seconds,
        ..GameRules::default()
    }
}

impl Tether {
    /// Opens the store at its configured path, refusing a damaged file.
    pub fn open(config: Config, options: Options) -> Result<Tether, ServiceError> {
        let store = Store::open(&config.store_path(), options.epoch)?.with_max_bytes(config.store.max_bytes);
        Tether::with_store(config, options, Arc::new(store))
    }

    pub fn with_store(config: Config, options: Options, store: Arc<Store>) -> Result<Tether, ServiceError> {
        config.validate().map_err(|(_, m)| ServiceError::Settings(m))?;
        store.set_redact_titles(config.redact_titles);
        let gateway = options
            .gateway
            .unwrap_or_else(|| Arc::new(Gateway::from_config(&config.provider)));
        let rag = RagEngine::new(Arc::clone(&gateway), config.rag)
            .with_store(Arc::clone(&store))
            .with_manifest(config.data_dir.join("index-manifest.tsv"));
        let composer = PromptComposer::from_config(&config.prompt, config.rag.k)?;

        let mut focus = FocusEngine::new(config.thresholds, classifier(&config)?, 0.0);
        focus.set_dev_aware(config.features.dev_aware);

        let state = store.state();
        let game = GameEngine::replay(game_rules(&config), state.game.iter().map(|s| &s.event));
        if GamificationState::from_journal(&state.awards()) != *game.state() {
            tracing::warn!("stored game journal disagrees with event replay; using replay");
        }
        let game_offset = game.last_t().unwrap_or(0.0);

        let policy = DeliveryPolicy::from_config(&config.notifier).map_err(ServiceError::Settings)?;
        let mut notifier = Notifier::new(policy, config.utc_offset(), options.epoch);
        if options.native_notifications {
            notifier = notifier.with_os(Box::new(NotifySend));
        }
        for record in state.notifications {
            notifier.restore(record);
        }

        Ok(Tether {
            clock: options.clock,
            epoch: options.epoch,
            store,
            gateway,
            rag: Arc::new(rag),
            composer: RwLock::new(composer),
            focus: Mutex::new(focus),
            game: Mutex::new(game),
            game_offset,
            notifier: Mutex::new(notifier),
            triggers: Mutex::new(Vec::new()),
            counters: Mutex::new(Counters::default()),
            listeners: RwLock::new(Vec::new()),
            last_prune: Mutex::new(0.0),
            config: RwLock::new(config),
        })
    }

    pub fn config(&self) -> Config {
        self.config.read().expect("config lock").clone()
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn rag(&self) -> &Arc<RagEngine> {
        &self.rag
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn now(&self) -> f64 {
        self.clock.now()
    }

    pub fn is_virtual(&self) -> bool {
        self.clock.is_virtual()
    }

    pub fn wall_time(&self, t: f64) -> DateTime<Utc> {
        self.epoch + Duration::milliseconds((t * 1000.0).round() as i64)
    }

    fn local_day(&self, t: f64) -> NaiveDate {
        let offset = self.config.read().expect("config lock").utc_offset();
        self.wall_time(t).with_timezone(&offset).date_naive()
    }

    pub fn capabilities(&self) -> Capabilities {
        Capabilities::from_config(&self.config.read().expect("config lock"))
    }

    pub fn counters(&self) -> Counters {
        self.counters.lock().expect("counters lock").clone()
    }

    pub fn triggers(&self) -> Vec<TriggerEvent> {
        self.triggers.lock().expect("trigger lock").clone()
    }

    /// Calls `listener` for every delivered notification.
    pub fn on_delivery(&self, listener: DeliveryListener) {
        self.listeners.write().expect("listener lock").push(listener);
    }

    pub fn status(&self) -> Status {
        let now = self.now();
        let focus = self.focus.lock().expect("focus lock");
        let now = now.max(focus.clock());
        Status {
            t: now,
            state: focus.state(now),
            session: focus.open_session(now),
        }
    }

    pub fn gamification(&self) -> GamificationState {
        self.game.lock().expect("game lock").state().clone()
    }

    pub fn feed_after_id(&self, after: u64) -> Vec<Notification> {
        self.notifier.lock().expect("notifier lock").feed_after_id(after)
    }

    pub fn feed_since(&self, since: f64) -> Vec<Notification> {
        self.notifier.lock().expect("notifier lock").feed(since)
    }

    pub fn delivery_journal(&self) -> Vec<DeliveryRecord> {
        self.notifier.lock().expect("notifier lock").journal().to_vec()
    }

    /// Feeds one activity event through the pipeline.
    pub fn ingest(&self, event: &ActivityEvent) -> Result<Vec<TriggerEvent>, ServiceError> {
        if !self.config.read().expect("config lock").features.monitoring {
            return Ok(Vec::new());
        }
        self.clock.observe(event.t);
        let now = self.now().max(event.t);
        let (triggers, sessions) = {
            let mut focus = self.focus.lock().expect("focus lock");
            let triggers = focus
                .ingest(event, now)
                .map_err(|e| ServiceError::Order(e.to_string()))?;
            (triggers, focus.close_sessions(now))
        };
        self.store.append_event(event, self.wall_time(event.t))?;
        self.counters.lock().expect("counters lock").events += 1;
        self.after_step(now, triggers, sessions)
    }

    /// Moves the clock forward without an event.
    pub fn advance(&self, now: f64) -> Result<Vec<TriggerEvent>, ServiceError> {
        self.clock.observe(now);
        let now = self.now();
        let (triggers, sessions) = {
            let mut focus = self.focus.lock().expect("focus lock");
            let triggers = focus.advance(now);
            (triggers, focus.close_sessions(now))
        };
        self.after_step(now, triggers, sessions)
    }

    fn after_step(
        &self,
        now: f64,
        triggers: Vec<TriggerEvent>,
        sessions: Vec<FocusSession>,
    ) -> Result<Vec<TriggerEvent>, ServiceError> {
        self.roll_day(now)?;
        for s in &sessions {
            self.store.append_session(s, self.wall_time(s.end_t))?;
            self.award_blocks(now, s)?;
        }
        for trigger in &triggers {
            self.triggers.lock().expect("trigger lock").push(trigger.clone());
            self.counters.lock().expect("counters lock").triggers += 1;
            self.respond(trigger)?;
        }
        self.maybe_prune(now);
        Ok(triggers)
    }

    fn maybe_prune(&self, now: f64) {
        let mut last = self.last_prune.lock().expect("prune lock");
        if now - *last < 600.0 {
            return;
        }
        *last = now;
        let window = self.config.read().expect("config lock").prompt.summary_window_seconds;
        self.focus.lock().expect("focus lock").prune_history(now - 2.0 * window);
        let mut triggers = self.triggers.lock().expect("trigger lock");
        let excess = triggers.len().saturating_sub(1000);
        triggers.drain(..excess);
    }

    fn gamified(&self) -> bool {
        self.config.read().expect("config lock").features.gamification
    }

    fn game_apply(&self, event: GameEvent) -> Result<(), ServiceError> {
        if !self.gamified() {
            return Ok(());
        }
        let mut game = self.game.lock().expect("game lock");
        let mut event = event;
        // chat and activity interleave; keep game time monotone
        if let Some(last) = game.last_t() {
            event.t = event.t.max(last);
        }
        match game.apply(&event) {
            Ok(awards) => {
                // kept even without awards: replay needs the day counters
                self.store.append_game(&event, &awards)?;
                Ok(())
            }
            Err(e) => {
                tracing::warn!(error = %e, "game event rejected");
                Ok(())
            }
        }
    }

    fn roll_day(&self, now: f64) -> Result<(), ServiceError> {
        if !self.gamified() {
            return Ok(());
        }
        let day = self.local_day(now);
        let current = self.game.lock().expect("game lock").current_day();
        if current.is_none_or(|c| day > c) {
            self.game_apply(GameEvent::day_rollover(now + self.game_offset, day))?;
        }
        Ok(())
    }

    fn award_blocks(&self, now: f64, session: &FocusSession) -> Result<(), ServiceError> {
        let block = self.config.read().expect("config lock").thresholds.focus_block_seconds;
        if !session.category.is_dev() || block <= 0.0 {
            return Ok(());
        }
        let blocks = (session.duration() / block).floor() as u32;
        for i in 0..blocks {
            let mut event = GameEvent::focus_block(now + self.game_offset, block, session.uninterrupted);
            event.payload.session_start_t = Some(session.start_t + self.game_offset);
            event.payload.block_index = Some(i);
            self.game_apply(event)?;
        }
        Ok(())
    }

    fn retrieve(&self, query: &str) -> Vec<ScoredChunk> {
        if !self.config.read().expect("config lock").features.rag {
            return Vec::new();
        }
        match self.rag.query_default(query) {
            Ok(hits) => hits,
            Err(e) => {
                tracing::warn!(error = %e, "retrieval failed; composing without grounding");
                Vec::new()
            }
        }
    }

    fn compose(&self, input: PromptInput<'_>, query: &str, t: f64) -> Result<(PromptBundle, String), ServiceError> {
        let (window, history_limit) = {
            let c = self.config.read().expect("config lock");
            (c.prompt.summary_window_seconds, c.prompt.history_limit)
        };
        let summary = self.focus.lock().expect("focus lock").summarize(window, t);
        let retrieved = self.retrieve(query);
        let history = self.store.recent_messages(history_limit);
        let composer = self.composer.read().expect("composer lock");
        let bundle = composer.compose(input, &summary, &retrieved, &history)?;
        let text = composer.render(&bundle)?;
        Ok((bundle, text))
    }

    /// Builds a prompt for `trigger` without sending it anywhere.
    pub fn preview(&self, trigger: &TriggerEvent) -> Result<String, ServiceError> {
        let query = trigger_query(trigger);
        Ok(self.compose(PromptInput::Trigger(trigger), &query, trigger.t)?.1)
    }

    fn respond(&self, trigger: &TriggerEvent) -> Result<(), ServiceError> {
        let (kind, _, celebratory) = self
            .composer
            .read()
            .expect("composer lock")
            .select(&PromptInput::Trigger(trigger));

        if trigger.kind == TriggerKind::Recovery {
            let last_nudge = self.notifier.lock().expect("notifier lock").last_nudge_t();
            if let Some(n) = last_nudge.filter(|&n| n <= trigger.t) {
                self.game_apply(GameEvent::quick_recovery(trigger.t + self.game_offset, trigger.t - n))?;
            }
        }

        let title = match (kind, celebratory) {
            (ResponseType::Nudge, true) => "Welcome back",
            (ResponseType::Nudge, false) => "Ready for a small step?",
            (ResponseType::TaskSuggestion, _) => "One thing at a time",
            _ => "Tether",
        };
        let urgency = if celebratory { Urgency::Low } else { Urgency::Normal };
        let query = trigger_query(trigger);

        let precheck = self.notifier.lock().expect("notifier lock").check(kind, trigger.t);
        let body = if precheck == Outcome::Delivered {
            let (_, prompt) = self.compose(PromptInput::Trigger(trigger), &query, trigger.t)?;
            let (temperature, max_chars) = {
                let c = self.config.read().expect("config lock");
                (c.provider.nudge_temperature, c.provider.max_output_chars)
            };
            let req = self.gateway.request(prompt, temperature, max_chars);
            match self.gateway.generate(&req) {
                Ok(result) => result.text,
                Err(e) => {
                    tracing::warn!(error = %e, "nudge generation failed; using fallback text");
                    FALLBACK_NUDGE.to_string()
                }
            }
        } else {
            query
        };

        let record = self.notifier.lock().expect("notifier lock").deliver(
            Draft {
                title: title.to_string(),
                body,
                kind,
                urgency,
            },
            trigger.t,
        );
        self.store.append_notification(&record)?;
        {
            let mut c = self.counters.lock().expect("counters lock");
            if record.outcome == Outcome::Delivered {
                c.nudges_delivered += 1;
            } else {
                c.nudges_suppressed += 1;
            }
        }
        if record.outcome == Outcome::Delivered {
            self.focus.lock().expect("focus lock").note_nudge(trigger.t);
            let trigger_id = format!("{}@{}", trigger.kind.as_str(), trigger.t);
            let at = self.wall_time(trigger.t);
            self.store.append_message(
                Role::System,
                &trigger_query(trigger),
                at,
                None,
                Some(trigger_id.clone()),
            )?;
            self.store.append_message(
                Role::Assistant,
                &record.notification.body,
                at,
                Some(kind),
                Some(trigger_id),
            )?;
            for listener in self.listeners.read().expect("listener lock").iter() {
                listener(&record.notification);
            }
        }
        Ok(())
    }

    /// Handles a user chat message. With `retry_of`, re-answers an already
    /// stored message instead of storing a new one.
    pub fn chat(&self, text: &str, retry_of: Option<u64>) -> Result<ChatOutcome, ServiceError> {
        let (enabled, rag_enabled, temperature, max_chars) = {
            let c = self.config.read().expect("config lock");
            (
                c.features.chat,
                c.features.rag,
                c.provider.chat_temperature,
                c.provider.max_output_chars,
            )
        };
        if !enabled {
            return Err(ServiceError::FeatureDisabled("chat"));
        }
        let t = self.now();
        let at = self.wall_time(t);
        let user = match retry_of {
            Some(id) => self
                .store
                .state()
                .messages
                .into_iter()
                .find(|m| m.id == id && m.role == Role::User)
                .ok_or(ServiceError::UnknownMessage(id))?,
            None => {
                let chars = text.chars().count();
                if chars == 0 || chars > MAX_CHAT_CHARS || text.trim().is_empty() {
                    return Err(ServiceError::BadText);
                }
                self.store.append_message(Role::User, text, at, None, None)?
            }
        };

        let (window, history_limit) = {
            let c = self.config.read().expect("config lock");
            (c.prompt.summary_window_seconds, c.prompt.history_limit)
        };
        let summary = self.focus.lock().expect("focus lock").summarize(window, t);
        let retrieved = self.retrieve(&user.text);
        let history: Vec<ChatMessage> = self
            .store
            .list_messages(history_limit, Some(user.id))
            .into_iter()
            .rev()
            .collect();
        let (bundle, prompt) = {
            let composer = self.composer.read().expect("composer lock");
            let bundle = composer.compose(
                PromptInput::Message { text: &user.text, t },
                &summary,
                &retrieved,
                &history,
            )?;
            let prompt = composer.render(&bundle)?;
            (bundle, prompt)
        };

        let req = self.gateway.request(prompt, temperature, max_chars);
        let result = self
            .gateway
            .generate(&req)
            .map_err(|source| ServiceError::LlmUnavailable {
                user_message_id: Some(user.id),
                source,
            })?;
        let reply = self
            .store
            .append_message(Role::Assistant, &result.text, at, Some(bundle.response_type), None)?;

        if bundle.response_type == ResponseType::EmotionalCheckin {
            self.game_apply(GameEvent::chat_checkin(t + self.game_offset, user.id))?;
        }
        if rag_enabled {
            for m in [&user, &reply] {
                if let Err(e) = self.rag.index_chat_message(m.id, &m.text, m.at) {
                    tracing::warn!(message = m.id, error = %e, "chat message not indexed yet");
                }
            }
        }
        Ok(ChatOutcome {
            user_message_id: user.id,
            reply,
            template_id: bundle.template_id,
            retrieved: bundle.retrieved.iter().map(|r| r.doc_id.clone()).collect(),
        })
    }

    pub fn add_document(&self, title: &str, text: &str) -> Result<usize, ServiceError> {
        if !self.config.read().expect("config lock").features.rag {
            return Err(ServiceError::FeatureDisabled("rag"));
        }
        if text.is_empty() {
            return Err(ServiceError::BadText);
        }
        let doc = Document::reference(title, text.to_string(), self.wall_time(self.now()));
        Ok(self.rag.index_document(doc)?)
    }

    pub fn index_file(&self, path: &Path) -> Result<(String, usize), ServiceError> {
        let text = std::fs::read_to_string(path).map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let title = path.file_stem().unwrap_or_default().to_string_lossy().to_string();
        let doc = Document::reference(&title, text, self.wall_time(self.now()));
        let id = doc.doc_id.clone();
        Ok((id, self.rag.index_document(doc)?))
    }

    /// Validates and applies new settings to every component.
    pub fn update_settings(&self, settings: &Settings) -> Result<Settings, ServiceError> {
        let next = self.config.read().expect("config lock").with_settings(settings)?;
        let classifier = classifier(&next)?;
        let policy = DeliveryPolicy::from_config(&next.notifier).map_err(ServiceError::Settings)?;
        {
            let mut focus = self.focus.lock().expect("focus lock");
            focus.set_thresholds(next.thresholds);
            focus.set_classifier(classifier);
            focus.set_dev_aware(next.features.dev_aware);
        }
        self.game
            .lock()
            .expect("game lock")
            .set_focus_block_seconds(next.thresholds.focus_block_seconds);
        self.notifier.lock().expect("notifier lock").set_policy(policy);
        self.rag.set_params(next.rag);
        self.composer
            .write()
            .expect("composer lock")
            .update(&next.prompt, next.rag.k);
        self.store.set_redact_titles(next.redact_titles);
        let applied = next.settings();
        self.store
            .put_settings(serde_json::to_value(&applied).expect("settings serialize"))?;
        *self.config.write().expect("config lock") = next;
        Ok(applied)
    }

    pub fn settings(&self) -> Settings {
        self.config.read().expect("config lock").settings()
    }

    /// Replays a recorded trace through the pipeline.
    pub fn replay_trace(&self, trace: &Trace, speed: ReplaySpeed) -> Result<ReplayReport, ServiceError> {
        let mut failure = None;
        let mut sink = |ev: &ActivityEvent| match self.ingest(ev) {
            Ok(_) => Ok(()),
            Err(e) => {
                failure = Some(e);
                Err(SinkClosed)
            }
        };
        let report = replay(trace, &mut sink, speed);
        match (failure, report) {
            (Some(e), _) => Err(e),
            (None, Ok(report)) => Ok(report),
            (None, Err(_)) => unreachable!("sink only closes on failure"),
        }
    }

    /// Retries chat messages whose embedding failed earlier.
    pub fn retry_pending_index(&self) -> usize {
        self.rag.retry_pending()
    }
}

fn trigger_query(trigger: &TriggerEvent) -> String {
    let c = &trigger.context;
    let app = c.apps_involved.last().map_or("unknown", String::as_str);
    match trigger.kind {
        TriggerKind::ProlongedIdle => format!(
            "idle for {} minutes, last app {app}; getting started again with a small step",
            (c.idle_seconds.unwrap_or(0.0) / 60.0).round()
        ),
        TriggerKind::ContextThrash => format!(
            "switching windows often ({} switches); focus on one task and timebox it",
            c.switch_count.unwrap_or(0)
        ),
        TriggerKind::Recovery => format!("back to work in {app} after a break; keep the momentum"),
        TriggerKind::UserMessage => "user message".to_string(),
    }
}
