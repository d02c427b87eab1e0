//! Structured prompt assembly.
//!
//! A [`PromptBundle`] always carries the six sections in the order of
//! [`SectionKind::ALL`]. [`PromptComposer::render`] joins them under
//! `## KIND` headers and fits the result into the character budget by
//! dropping history (oldest first), then retrieved chunks (lowest score
//! first), then activity lines, then template lines. Principles and input
//! are never cut.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PromptConfig;
use crate::focus::{ActivitySummary, TriggerEvent, TriggerKind};
use crate::llm::stub::{DOC_MARKER, TEMPLATE_MARKER};
use crate::rag::ScoredChunk;
use crate::store::ChatMessage;

const DEFAULT_PRINCIPLES: &str = include_str!("../../assets/principles.txt");
const DEFAULT_TEMPLATES: [(&str, &str); 5] = [
    ("nudge", include_str!("../../assets/templates/nudge.txt")),
    ("celebrate", include_str!("../../assets/templates/celebrate.txt")),
    ("task", include_str!("../../assets/templates/task.txt")),
    ("checkin", include_str!("../../assets/templates/checkin.txt")),
    ("chat", include_str!("../../assets/templates/chat.txt")),
];

pub fn default_checkin_lexicon() -> Vec<String> {
    [
        "overwhelmed",
        "stuck",
        "anxious",
        "can't start",
        "cannot start",
        "can't focus",
        "panic",
        "burned out",
        "burnt out",
        "hopeless",
        "frustrated",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ResponseType {
    Nudge,
    TaskSuggestion,
    EmotionalCheckin,
    ChatReply,
}

impl ResponseType {
    pub fn as_str(self) -> &'static str {
        match self {
            ResponseType::Nudge => "NUDGE",
            ResponseType::TaskSuggestion => "TASK_SUGGESTION",
            ResponseType::EmotionalCheckin => "EMOTIONAL_CHECKIN",
            ResponseType::ChatReply => "CHAT_REPLY",
        }
    }

    pub fn is_chat(self) -> bool {
        matches!(self, ResponseType::EmotionalCheckin | ResponseType::ChatReply)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Route {
    Notification,
    Chat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SectionKind {
    Principles,
    Style,
    Retrieved,
    Activity,
    History,
    Input,
}

impl SectionKind {
    pub const ALL: [SectionKind; 6] = [
        SectionKind::Principles,
        SectionKind::Style,
        SectionKind::Retrieved,
        SectionKind::Activity,
        SectionKind::History,
        SectionKind::Input,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SectionKind::Principles => "PRINCIPLES",
            SectionKind::Style => "STYLE",
            SectionKind::Retrieved => "RETRIEVED",
            SectionKind::Activity => "ACTIVITY",
            SectionKind::History => "HISTORY",
            SectionKind::Input => "INPUT",
        }
    }

    pub fn header(self) -> String {
        format!("## {}", self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Section {
    pub kind: SectionKind,
    pub items: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievedRef {
    pub doc_id: String,
    pub chunk_index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptBundle {
    pub template_id: String,
    pub response_type: ResponseType,
    pub route: Route,
    pub celebratory: bool,
    pub sections: Vec<Section>,
    pub retrieved: Vec<RetrievedRef>,
    pub created_t: f64,
}

impl PromptBundle {
    pub fn section(&self, kind: SectionKind) -> &Section {
        self.sections
            .iter()
            .find(|s| s.kind == kind)
            .expect("bundles carry every section")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PrinciplesPack {
    pub pack_id: String,
    pub version: u32,
    pub principles: Vec<String>,
}

impl PrinciplesPack {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let mut pack_id = None;
        let mut version = None;
        let mut principles = Vec::new();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(id) = line.strip_prefix("pack_id:") {
                pack_id = Some(id.trim().to_string());
            } else if let Some(v) = line.strip_prefix("version:") {
                version = Some(
                    v.trim()
                        .parse()
                        .map_err(|_| PromptError::BadAsset(format!("bad principles version {v:?}")))?,
                );
            } else {
                principles.push(line.to_string());
            }
        }
        match (pack_id, version) {
            (Some(pack_id), Some(version)) if !principles.is_empty() => Ok(PrinciplesPack {
                pack_id,
                version,
                principles,
            }),
            _ => Err(PromptError::BadAsset(
                "principles pack needs pack_id, version and at least one directive".into(),
            )),
        }
    }

    pub fn builtin() -> Self {
        PrinciplesPack::parse(DEFAULT_PRINCIPLES).expect("built-in principles parse")
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("template {0} is missing")]
    TemplateMissing(String),
    #[error("principles and input alone need {needed} chars, budget is {budget}")]
    BudgetImpossible { needed: usize, budget: usize },
    #[error("bad prompt asset: {0}")]
    BadAsset(String),
}

impl PromptError {
    pub fn code(&self) -> &'static str {
        match self {
            PromptError::TemplateMissing(_) => "TEMPLATE_MISSING",
            PromptError::BudgetImpossible { .. } => "BUDGET_IMPOSSIBLE",
            PromptError::BadAsset(_) => "BAD_ASSET",
        }
    }
}

/// What a prompt responds to.
#[derive(Debug, Clone, Copy)]
pub enum PromptInput<'a> {
    Trigger(&'a TriggerEvent),
    Message { text: &'a str, t: f64 },
}

impl PromptInput<'_> {
    fn t(&self) -> f64 {
        match self {
            PromptInput::Trigger(tr) => tr.t,
            PromptInput::Message { t, .. } => *t,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PromptComposer {
    principles: PrinciplesPack,
    templates: BTreeMap<String, Vec<String>>,
    lexicon: Vec<String>,
    char_budget: usize,
    history_limit: usize,
    k: usize,
}

fn template_lines(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
}

fn normalize_apostrophes(text: &str) -> String {
    text.replace(['\u{2019}', '\u{2018}'], "'")
}

impl PromptComposer {
    pub fn builtin(config: &PromptConfig, k: usize) -> Self {
        PromptComposer {
            principles: PrinciplesPack::builtin(),
            templates: DEFAULT_TEMPLATES
                .iter()
                .map(|(id, text)| (id.to_string(), template_lines(text)))
                .collect(),
            lexicon: config.checkin_lexicon.clone(),
            char_budget: config.char_budget,
            history_limit: config.history_limit,
            k,
        }
    }

    /// Built-in assets, overridden by `assets_dir` when configured.
    /// `principles.txt` replaces the pack; a `templates/` directory replaces
    /// the whole template set.
    pub fn from_config(config: &PromptConfig, k: usize) -> Result<Self, PromptError> {
        let mut composer = PromptComposer::builtin(config, k);
        if let Some(dir) = &config.assets_dir {
            composer.load_assets(dir)?;
        }
        Ok(composer)
    }

    fn load_assets(&mut self, dir: &Path) -> Result<(), PromptError> {
        let read =
            |p: &Path| std::fs::read_to_string(p).map_err(|e| PromptError::BadAsset(format!("{}: {e}", p.display())));
        let principles = dir.join("principles.txt");
        if principles.exists() {
            self.principles = PrinciplesPack::parse(&read(&principles)?)?;
        }
        let templates = dir.join("templates");
        if templates.is_dir() {
            let mut set = BTreeMap::new();
            let entries = std::fs::read_dir(&templates).map_err(|e| PromptError::BadAsset(e.to_string()))?;
            for entry in entries {
                let path = entry.map_err(|e| PromptError::BadAsset(e.to_string()))?.path();
                if path.extension().is_some_and(|e| e == "txt") {
                    let id = path.file_stem().unwrap_or_default().to_string_lossy().to_string();
                    set.insert(id, template_lines(&read(&path)?));
                }
            }
            self.templates = set;
        }
        Ok(())
    }

    pub fn principles(&self) -> &PrinciplesPack {
        &self.principles
    }

    pub fn set_templates(&mut self, templates: BTreeMap<String, Vec<String>>) {
        self.templates = templates;
    }

    pub fn update(&mut self, config: &PromptConfig, k: usize) {
        self.lexicon = config.checkin_lexicon.clone();
        self.char_budget = config.char_budget;
        self.history_limit = config.history_limit;
        self.k = k;
    }

    pub fn char_budget(&self) -> usize {
        self.char_budget
    }

    pub fn history_limit(&self) -> usize {
        self.history_limit
    }

    pub fn is_checkin(&self, message: &str) -> bool {
        let text = normalize_apostrophes(&message.to_lowercase());
        self.lexicon
            .iter()
            .any(|w| !w.is_empty() && text.contains(&normalize_apostrophes(&w.to_lowercase())))
    }

    /// Response type, route and celebratory flag for an input.
    pub fn select(&self, input: &PromptInput<'_>) -> (ResponseType, Route, bool) {
        match input {
            PromptInput::Trigger(t) => match t.kind {
                TriggerKind::ProlongedIdle => (ResponseType::Nudge, Route::Notification, false),
                TriggerKind::ContextThrash => (ResponseType::TaskSuggestion, Route::Notification, false),
                TriggerKind::Recovery => (ResponseType::Nudge, Route::Notification, true),
                TriggerKind::UserMessage => (ResponseType::ChatReply, Route::Chat, false),
            },
            PromptInput::Message { text, .. } if self.is_checkin(text) => {
                (ResponseType::EmotionalCheckin, Route::Chat, false)
            }
            PromptInput::Message { .. } => (ResponseType::ChatReply, Route::Chat, false),
        }
    }

    pub fn compose(
        &self,
        input: PromptInput<'_>,
        summary: &ActivitySummary,
        retrieved: &[ScoredChunk],
        history: &[ChatMessage],
    ) -> Result<PromptBundle, PromptError> {
        let (response_type, route, celebratory) = self.select(&input);
        let template_id = match (response_type, celebratory) {
            (ResponseType::Nudge, true) => "celebrate",
            (ResponseType::Nudge, false) => "nudge",
            (ResponseType::TaskSuggestion, _) => "task",
            (ResponseType::EmotionalCheckin, _) => "checkin",
            (ResponseType::ChatReply, _) => "chat",
        };
        let template = self
            .templates
            .get(template_id)
            .ok_or_else(|| PromptError::TemplateMissing(template_id.to_string()))?;

        let mut style = vec![
            format!("{TEMPLATE_MARKER}{template_id}"),
            format!("response_type: {}", response_type.as_str()),
        ];
        style.extend(template.iter().cloned());

        let retrieved = &retrieved[..retrieved.len().min(self.k)];
        let retrieved_items = retrieved
            .iter()
            .map(|s| {
                format!(
                    "{DOC_MARKER}{} chunk={} score={:.4}] {}",
                    s.chunk.doc_id, s.chunk.chunk_index, s.score, s.chunk.text
                )
            })
            .collect();

        let skip = history.len().saturating_sub(self.history_limit);
        let history_items = history[skip..]
            .iter()
            .map(|m| format!("{}: {}", m.role.as_str(), m.text))
            .collect();

        let sections = vec![
            Section {
                kind: SectionKind::Principles,
                items: self.principles.principles.iter().map(|p| format!("- {p}")).collect(),
            },
            Section {
                kind: SectionKind::Style,
                items: style,
            },
            Section {
                kind: SectionKind::Retrieved,
                items: retrieved_items,
            },
            Section {
                kind: SectionKind::Activity,
                items: activity_lines(summary),
            },
            Section {
                kind: SectionKind::History,
                items: history_items,
            },
            Section {
                kind: SectionKind::Input,
                items: input_lines(&input),
            },
        ];
        Ok(PromptBundle {
            template_id: template_id.to_string(),
            response_type,
            route,
            celebratory,
            sections,
            retrieved: retrieved
                .iter()
                .map(|s| RetrievedRef {
                    doc_id: s.chunk.doc_id.clone(),
                    chunk_index: s.chunk.chunk_index,
                    score: s.score,
                })
                .collect(),
            created_t: input.t(),
        })
    }

    /// Renders within the character budget.
    pub fn render(&self, bundle: &PromptBundle) -> Result<String, PromptError> {
        render_within(bundle, self.char_budget)
    }
}

fn activity_lines(s: &ActivitySummary) -> Vec<String> {
    let mut lines = vec![
        format!("window_seconds: {:.0}", s.window_seconds),
        format!("idle_seconds: {:.0}", s.idle_seconds),
        format!("switch_count: {}", s.switch_count),
        match s.last_nudge_t {
            Some(t) => format!("last_nudge_t: {t:.0}"),
            None => "last_nudge_t: none".to_string(),
        },
    ];
    let mut cats = String::from("per_category_seconds:");
    for (c, secs) in &s.per_category_seconds {
        let _ = write!(cats, " {}={secs:.0}", c.as_str());
    }
    lines.push(cats);
    let mut apps: Vec<(&String, &f64)> = s.per_app_seconds.iter().collect();
    // most-used first, name breaks ties
    apps.sort_by(|a, b| b.1.total_cmp(a.1).then_with(|| a.0.cmp(b.0)));
    for (app, secs) in apps {
        lines.push(format!("app {app}: {secs:.0}s"));
    }
    lines
}

fn minutes(seconds: f64) -> u64 {
    (seconds / 60.0).round().max(0.0) as u64
}

fn input_lines(input: &PromptInput<'_>) -> Vec<String> {
    match input {
        PromptInput::Message { text, .. } => vec![format!("user message: {text}")],
        PromptInput::Trigger(t) => {
            let c = &t.context;
            let last_app = c.apps_involved.last().map_or("unknown", String::as_str);
            let description = match t.kind {
                TriggerKind::ProlongedIdle => format!(
                    "idle for {} minutes, last app {last_app}",
                    minutes(c.idle_seconds.unwrap_or(0.0))
                ),
                TriggerKind::ContextThrash => format!(
                    "switched windows {} times recently across {}",
                    c.switch_count.unwrap_or(0),
                    if c.apps_involved.is_empty() {
                        "unknown apps".to_string()
                    } else {
                        c.apps_involved.join(", ")
                    }
                ),
                TriggerKind::Recovery => format!(
                    "back to work after {} minutes away, now in {last_app}",
                    minutes(c.recovered_within.or(c.idle_seconds).unwrap_or(0.0))
                ),
                TriggerKind::UserMessage => "user opened the chat".to_string(),
            };
            vec![format!("trigger: {}", t.kind.as_str()), description]
        }
    }
}

fn section_len(items: &[String]) -> usize {
    // header + newline, then items joined by newlines (or "none"), then newline
    if items.is_empty() {
        "none".len() + 1
    } else {
        items.iter().map(|i| i.chars().count() + 1).sum()
    }
}

fn total_len(sections: &[Section]) -> usize {
    sections
        .iter()
        .map(|s| s.kind.header().len() + 1 + section_len(&s.items))
        .sum()
}

fn join(sections: &[Section]) -> String {
    let mut out = String::new();
    for s in sections {
        out.push_str(&s.kind.header());
        out.push('\n');
        if s.items.is_empty() {
            out.push_str("none\n");
        }
        for item in &s.items {
            out.push_str(item);
            out.push('\n');
        }
    }
    out
}

/// Lines of STYLE that survive any truncation: template marker and type.
const STYLE_KEEP: usize = 2;

pub fn render_within(bundle: &PromptBundle, budget: usize) -> Result<String, PromptError> {
    let mut sections = bundle.sections.clone();
    let pos = |k: SectionKind| SectionKind::ALL.iter().position(|&x| x == k).expect("known kind");
    let (style, retrieved, activity, history) = (
        pos(SectionKind::Style),
        pos(SectionKind::Retrieved),
        pos(SectionKind::Activity),
        pos(SectionKind::History),
    );

    let mut len = total_len(&sections);
    if len > budget {
        let minimal: Vec<Section> = sections
            .iter()
            .map(|s| Section {
                kind: s.kind,
                items: match s.kind {
                    SectionKind::Principles | SectionKind::Input => s.items.clone(),
                    SectionKind::Style => s.items.iter().take(STYLE_KEEP).cloned().collect(),
                    _ => Vec::new(),
                },
            })
            .collect();
        let needed = total_len(&minimal);
        if needed > budget {
            return Err(PromptError::BudgetImpossible { needed, budget });
        }
    }
    while len > budget {
        let victim = if !sections[history].items.is_empty() {
            (history, 0)
        } else if !sections[retrieved].items.is_empty() {
            (retrieved, sections[retrieved].items.len() - 1)
        } else if !sections[activity].items.is_empty() {
            (activity, sections[activity].items.len() - 1)
        } else {
            (style, sections[style].items.len() - 1)
        };
        let before = section_len(&sections[victim.0].items);
        sections[victim.0].items.remove(victim.1);
        len = len - before + section_len(&sections[victim.0].items);
    }
    Ok(join(&sections))
}
