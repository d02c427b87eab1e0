//! Daemon configuration.
//!
//! The config file is TOML (`key = value` lines grouped under `[section]`
//! headers). Every key has a default, so an empty file is a valid config.
//! Parse and validation errors carry the 1-based line of the offending key
//! when it can be located.

use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{FixedOffset, NaiveTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::focus::{AppCategory, AppRule};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}", fmt_line(.line, .message))]
    Invalid { line: Option<usize>, message: String },
}

fn fmt_line(line: &Option<usize>, message: &str) -> String {
    match line {
        Some(line) => format!("line {line}: {message}"),
        None => message.to_string(),
    }
}

impl ConfigError {
    fn invalid(message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            line: None,
            message: message.into(),
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            ConfigError::Invalid { line, .. } => *line,
            ConfigError::Io { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data_dir: PathBuf,
    /// Fixed UTC offset used for day boundaries and quiet hours, e.g. `+02:00`.
    pub timezone: String,
    pub redact_titles: bool,
    pub features: Features,
    pub monitor: MonitorConfig,
    pub thresholds: Thresholds,
    pub app_rules: Vec<AppRule>,
    pub rag: RagConfig,
    pub provider: ProviderConfig,
    pub prompt: PromptConfig,
    pub notifier: NotifierConfig,
    pub api: ApiConfig,
    pub store: StoreConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            data_dir: default_home().join("data"),
            timezone: "+00:00".to_string(),
            redact_titles: false,
            features: Features::default(),
            monitor: MonitorConfig::default(),
            thresholds: Thresholds::default(),
            app_rules: crate::focus::default_app_rules(),
            rag: RagConfig::default(),
            provider: ProviderConfig::default(),
            prompt: PromptConfig::default(),
            notifier: NotifierConfig::default(),
            api: ApiConfig::default(),
            store: StoreConfig::default(),
        }
    }
}

/// `~/.tether`, or `./.tether` when no home directory is known.
pub fn default_home() -> PathBuf {
    std::env::var_os("HOME")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
        .join(".tether")
}

pub fn default_config_path() -> PathBuf {
    default_home().join("config")
}

/// Module switches reported by the capabilities endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Features {
    pub monitoring: bool,
    pub chat: bool,
    pub dev_aware: bool,
    pub rag: bool,
    pub gamification: bool,
}

impl Default for Features {
    fn default() -> Self {
        Features {
            monitoring: true,
            chat: true,
            dev_aware: true,
            rag: true,
            gamification: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub bucket_seconds: f64,
    pub poll_interval_ms: u64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            bucket_seconds: 10.0,
            poll_interval_ms: 1000,
        }
    }
}

/// Focus-engine thresholds, all in seconds except the counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub idle_threshold: f64,
    pub away_threshold: f64,
    pub prolonged_idle_threshold: f64,
    pub recovery_window_seconds: f64,
    pub thrash_n: usize,
    pub thrash_window_seconds: f64,
    pub thrash_cooldown_seconds: f64,
    pub max_switches_per_block: u32,
    pub focus_block_seconds: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            idle_threshold: 120.0,
            away_threshold: 900.0,
            prolonged_idle_threshold: 300.0,
            recovery_window_seconds: 120.0,
            thrash_n: 6,
            thrash_window_seconds: 120.0,
            thrash_cooldown_seconds: 120.0,
            max_switches_per_block: 4,
            focus_block_seconds: 1500.0,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let positive = [
            ("idle_threshold", self.idle_threshold),
            ("away_threshold", self.away_threshold),
            ("prolonged_idle_threshold", self.prolonged_idle_threshold),
            ("recovery_window_seconds", self.recovery_window_seconds),
            ("thrash_window_seconds", self.thrash_window_seconds),
            ("focus_block_seconds", self.focus_block_seconds),
        ];
        for (key, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err((key, format!("thresholds.{key} must be a positive number")));
            }
        }
        if !(self.thrash_cooldown_seconds.is_finite() && self.thrash_cooldown_seconds >= 0.0) {
            return Err((
                "thrash_cooldown_seconds",
                "thresholds.thrash_cooldown_seconds must be >= 0".into(),
            ));
        }
        if self.idle_threshold >= self.away_threshold {
            return Err((
                "idle_threshold",
                "thresholds.idle_threshold must be less than thresholds.away_threshold".into(),
            ));
        }
        if self.thrash_n < 2 {
            return Err(("thrash_n", "thresholds.thrash_n must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RagConfig {
    pub chunk_size: usize,
    pub overlap: usize,
    pub k: usize,
    pub min_score: f64,
    pub min_chat_index_chars: usize,
}

impl Default for RagConfig {
    fn default() -> Self {
        RagConfig {
            chunk_size: 1600,
            overlap: 200,
            k: 4,
            min_score: 0.25,
            min_chat_index_chars: 80,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Stub,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key. The key itself
    /// is never written to config or to the store.
    pub api_key_env: Option<String>,
    pub model_name: Option<String>,
    pub embed_model_name: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub max_batch: usize,
    pub chat_temperature: f64,
    pub nudge_temperature: f64,
    pub max_output_chars: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Stub,
            endpoint: None,
            api_key_env: None,
            model_name: None,
            embed_model_name: None,
            timeout_ms: 20_000,
            max_retries: 2,
            max_in_flight: 2,
            max_batch: 64,
            chat_temperature: 0.7,
            nudge_temperature: 0.4,
            max_output_chars: 1200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub char_budget: usize,
    pub history_limit: usize,
    pub checkin_lexicon: Vec<String>,
    /// Directory holding `principles.txt` and `templates/<id>.txt`
    /// overrides. Built-in assets are used when unset.
    pub assets_dir: Option<PathBuf>,
    pub summary_window_seconds: f64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            char_budget: 12_000,
            history_limit: 12,
            checkin_lexicon: crate::prompt::default_checkin_lexicon(),
            assets_dir: None,
            summary_window_seconds: 1800.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NotifierConfig {
    pub nudge_cooldown_seconds: f64,
    pub max_nudges_per_day: u32,
    /// Local-time ranges `HH:MM-HH:MM`, end exclusive; may wrap midnight.
    pub quiet_hours: Vec<String>,
    /// Show nudges through the desktop notification service. When false
    /// (or headless) delivered nudges only go to the in-app feed.
    pub native: bool,
}

impl Default for NotifierConfig {
    fn default() -> Self {
        NotifierConfig {
            nudge_cooldown_seconds: 900.0,
            max_nudges_per_day: 10,
            quiet_hours: Vec::new(),
            native: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApiConfig {
    pub port: u16,
    pub token_file: Option<PathBuf>,
    pub ui_dir: Option<PathBuf>,
}

impl Default for ApiConfig {
    fn default() -> Self {
        ApiConfig {
            port: 4517,
            token_file: None,
            ui_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreConfig {
    pub retention_days: u32,
    pub max_bytes: u64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            retention_days: 30,
            max_bytes: 1 << 30,
        }
    }
}

/// A local-time range `[start, end)`; `end < start` wraps past midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuietRange {
    pub start: NaiveTime,
    pub end: NaiveTime,
}

impl QuietRange {
    pub fn parse(text: &str) -> Result<Self, String> {
        let (a, b) = text
            .split_once('-')
            .ok_or_else(|| format!("quiet range {text:?} is not HH:MM-HH:MM"))?;
        let parse = |s: &str| {
            NaiveTime::parse_from_str(s.trim(), "%H:%M").map_err(|_| format!("bad time {s:?} in quiet range {text:?}"))
        };
        let range = QuietRange {
            start: parse(a)?,
            end: parse(b)?,
        };
        if range.start == range.end {
            return Err(format!("quiet range {text:?} is empty"));
        }
        Ok(range)
    }

    pub fn contains(&self, time: NaiveTime) -> bool {
        if self.start < self.end {
            time >= self.start && time < self.end
        } else {
            time >= self.start || time < self.end
        }
    }

    /// Minutes of the day covered, as `[start, end)` pieces within `0..1440`.
    fn pieces(&self) -> Vec<(u32, u32)> {
        use chrono::Timelike;
        let s = self.start.hour() * 60 + self.start.minute();
        let e = self.end.hour() * 60 + self.end.minute();
        if s < e {
            vec![(s, e)]
        } else {
            vec![(s, 1440), (0, e)]
        }
    }
}

impl fmt::Display for QuietRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start.format("%H:%M"), self.end.format("%H:%M"))
    }
}

pub fn parse_quiet_hours(ranges: &[String]) -> Result<Vec<QuietRange>, String> {
    let parsed = ranges
        .iter()
        .map(|r| QuietRange::parse(r))
        .collect::<Result<Vec<_>, _>>()?;
    for (i, a) in parsed.iter().enumerate() {
        for b in &parsed[i + 1..] {
            let overlap = a
                .pieces()
                .iter()
                .any(|&(s1, e1)| b.pieces().iter().any(|&(s2, e2)| s1 < e2 && s2 < e1));
            if overlap {
                return Err(format!("quiet ranges {a} and {b} overlap"));
            }
        }
    }
    Ok(parsed)
}

pub fn parse_timezone(text: &str) -> Result<FixedOffset, String> {
    let t = text.trim();
    if t.eq_ignore_ascii_case("utc") || t.eq_ignore_ascii_case("z") {
        return Ok(FixedOffset::east_opt(0).expect("zero offset"));
    }
    let (sign, rest) = match t.as_bytes().first() {
        Some(b'+') => (1, &t[1..]),
        Some(b'-') => (-1, &t[1..]),
        _ => return Err(format!("timezone {text:?} must look like +HH:MM or UTC")),
    };
    let (h, m) = rest
        .split_once(':')
        .ok_or_else(|| format!("timezone {text:?} must look like +HH:MM or UTC"))?;
    let h: i32 = h.parse().map_err(|_| format!("bad timezone hour in {text:?}"))?;
    let m: i32 = m.parse().map_err(|_| format!("bad timezone minute in {text:?}"))?;
    if h > 14 || m > 59 {
        return Err(format!("timezone {text:?} out of range"));
    }
    FixedOffset::east_opt(sign * (h * 3600 + m * 60)).ok_or_else(|| format!("timezone {text:?} out of range"))
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Config::parse(&text)?;
        config.data_dir = expand_home(&config.data_dir);
        Ok(config)
    }

    /// Like [`Config::load`], but a missing file yields the defaults.
    pub fn load_or_default(path: &Path) -> Result<Config, ConfigError> {
        if path.exists() {
            Config::load(path)
        } else {
            Ok(Config::default())
        }
    }

    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let config: Config = toml::from_str(text).map_err(|e| ConfigError::Invalid {
            line: e.span().map(|span| line_of_offset(text, span.start)),
            message: e.message().to_string(),
        })?;
        config.validate().map_err(|(key, message)| ConfigError::Invalid {
            line: key.and_then(|k| line_of_key(text, k)),
            message,
        })?;
        Ok(config)
    }

    /// Checks cross-field invariants. On failure returns the offending key
    /// (for line lookup) and a message.
    pub fn validate(&self) -> Result<(), (Option<&'static str>, String)> {
        self.thresholds.validate().map_err(|(k, m)| (Some(k), m))?;
        parse_timezone(&self.timezone).map_err(|m| (Some("timezone"), m))?;
        if self.monitor.bucket_seconds <= 0.0 || !self.monitor.bucket_seconds.is_finite() {
            return Err((Some("bucket_seconds"), "monitor.bucket_seconds must be positive".into()));
        }
        if self.monitor.poll_interval_ms == 0 {
            return Err((
                Some("poll_interval_ms"),
                "monitor.poll_interval_ms must be positive".into(),
            ));
        }
        if self.rag.chunk_size <= self.rag.overlap {
            return Err((
                Some("overlap"),
                "rag.chunk_size must be greater than rag.overlap".into(),
            ));
        }
        if self.rag.k == 0 {
            return Err((Some("k"), "rag.k must be at least 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.rag.min_score) {
            return Err((Some("min_score"), "rag.min_score must be within [-1, 1]".into()));
        }
        if self.provider.kind == ProviderKind::Http {
            if self.provider.endpoint.as_deref().unwrap_or("").is_empty() {
                return Err((
                    Some("endpoint"),
                    "provider.endpoint is required for http providers".into(),
                ));
            }
            if self.provider.api_key_env.as_deref().unwrap_or("").is_empty() {
                return Err((
                    Some("api_key_env"),
                    "provider.api_key_env is required for http providers".into(),
                ));
            }
        }
        if self.provider.timeout_ms == 0 {
            return Err((Some("timeout_ms"), "provider.timeout_ms must be positive".into()));
        }
        if self.provider.max_in_flight == 0 || self.provider.max_batch == 0 {
            return Err((
                Some("max_in_flight"),
                "provider.max_in_flight and provider.max_batch must be positive".into(),
            ));
        }
        for (key, t) in [
            ("chat_temperature", self.provider.chat_temperature),
            ("nudge_temperature", self.provider.nudge_temperature),
        ] {
            if !(0.0..=2.0).contains(&t) {
                return Err((Some(key), format!("provider.{key} must be within [0, 2]")));
            }
        }
        if self.prompt.history_limit == 0 || self.prompt.char_budget == 0 {
            return Err((
                Some("char_budget"),
                "prompt.char_budget and prompt.history_limit must be positive".into(),
            ));
        }
        if self.prompt.summary_window_seconds <= 0.0 {
            return Err((
                Some("summary_window_seconds"),
                "prompt.summary_window_seconds must be positive".into(),
            ));
        }
        if self.notifier.nudge_cooldown_seconds.is_nan() || self.notifier.nudge_cooldown_seconds <= 0.0 {
            return Err((
                Some("nudge_cooldown_seconds"),
                "notifier.nudge_cooldown_seconds must be positive".into(),
            ));
        }
        parse_quiet_hours(&self.notifier.quiet_hours).map_err(|m| (Some("quiet_hours"), m))?;
        for rule in &self.app_rules {
            glob::Pattern::new(&rule.pattern)
                .map_err(|e| (Some("pattern"), format!("app rule pattern {:?}: {e}", rule.pattern)))?;
        }
        Ok(())
    }

    pub fn settings(&self) -> Settings {
        Settings {
            redact_titles: self.redact_titles,
            features: self.features,
            thresholds: self.thresholds,
            app_rules: self.app_rules.clone(),
            rag: self.rag,
            notifier: self.notifier.clone(),
            prompt: SettingsPrompt {
                char_budget: self.prompt.char_budget,
                history_limit: self.prompt.history_limit,
                checkin_lexicon: self.prompt.checkin_lexicon.clone(),
                summary_window_seconds: self.prompt.summary_window_seconds,
            },
        }
    }

    /// Returns a copy of this config with `settings` applied, validated.
    pub fn with_settings(&self, settings: &Settings) -> Result<Config, ConfigError> {
        let mut next = self.clone();
        next.redact_titles = settings.redact_titles;
        next.features = settings.features;
        next.thresholds = settings.thresholds;
        next.app_rules = settings.app_rules.clone();
        next.rag = settings.rag;
        next.notifier = settings.notifier.clone();
        next.prompt.char_budget = settings.prompt.char_budget;
        next.prompt.history_limit = settings.prompt.history_limit;
        next.prompt.checkin_lexicon = settings.prompt.checkin_lexicon.clone();
        next.prompt.summary_window_seconds = settings.prompt.summary_window_seconds;
        next.validate().map_err(|(_, m)| ConfigError::invalid(m))?;
        Ok(next)
    }

    pub fn utc_offset(&self) -> FixedOffset {
        parse_timezone(&self.timezone).unwrap_or_else(|_| FixedOffset::east_opt(0).expect("zero offset"))
    }

    pub fn store_path(&self) -> PathBuf {
        self.data_dir.join("tether.db")
    }

    pub fn token_path(&self) -> PathBuf {
        self.api
            .token_file
            .clone()
            .unwrap_or_else(|| self.data_dir.join("api-token"))
    }

    /// Resolves `path` against `data_dir` unless it is absolute.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.data_dir.join(path)
        }
    }
}

/// The hot-reloadable subset of [`Config`] exposed over the settings API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub redact_titles: bool,
    pub features: Features,
    pub thresholds: Thresholds,
    pub app_rules: Vec<AppRule>,
    pub rag: RagConfig,
    pub notifier: NotifierConfig,
    pub prompt: SettingsPrompt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingsPrompt {
    pub char_budget: usize,
    pub history_limit: usize,
    pub checkin_lexicon: Vec<String>,
    pub summary_window_seconds: f64,
}

fn expand_home(path: &Path) -> PathBuf {
    match path.to_str() {
        Some(s) if s == "~" || s.starts_with("~/") => {
            let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_default();
            home.join(s.trim_start_matches('~').trim_start_matches('/'))
        }
        _ => path.to_path_buf(),
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// First line assigning `key`, ignoring comments.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines().enumerate().find_map(|(i, line)| {
        let line = line.split('#').next().unwrap_or("");
        let (lhs, _) = line.split_once('=')?;
        let lhs = lhs.trim();
        (lhs == key || lhs.ends_with(&format!(".{key}"))).then_some(i + 1)
    })
}

impl AppRule {
    pub fn new(pattern: &str, category: AppCategory) -> Self {
        AppRule {
            pattern: pattern.to_string(),
            category,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let config = Config::parse("").unwrap();
        assert_eq!(config.thresholds.prolonged_idle_threshold, 300.0);
        assert_eq!(config.rag.chunk_size, 1600);
        assert_eq!(config.notifier.nudge_cooldown_seconds, 900.0);
        assert_eq!(config.api.port, 4517);
        assert!(config.features.gamification);
    }

    #[test]
    fn threshold_violation_reports_line() {
        let text = "redact_titles = true\n\n[thresholds]\nidle_threshold = 1000\naway_threshold = 900\n";
        let err = Config::parse(text).unwrap_err();
        assert_eq!(err.line(), Some(4));
        assert!(err.to_string().starts_with("line 4:"));
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let err = Config::parse("[rag]\nchunk_size = 100\nbogus = 3\n").unwrap_err();
        assert_eq!(err.line(), Some(3));
    }

    #[test]
    fn quiet_hours_wrap_and_overlap() {
        let r = QuietRange::parse("22:00-07:00").unwrap();
        assert!(r.contains(NaiveTime::from_hms_opt(2, 0, 0).unwrap()));
        assert!(r.contains(NaiveTime::from_hms_opt(22, 0, 0).unwrap()));
        assert!(!r.contains(NaiveTime::from_hms_opt(7, 0, 0).unwrap()));
        assert!(parse_quiet_hours(&["22:00-07:00".into(), "06:00-08:00".into()]).is_err());
        assert!(parse_quiet_hours(&["22:00-07:00".into(), "12:00-13:00".into()]).is_ok());
    }

    #[test]
    fn timezone_parsing() {
        assert_eq!(parse_timezone("UTC").unwrap().local_minus_utc(), 0);
        assert_eq!(parse_timezone("-03:30").unwrap().local_minus_utc(), -12600);
        assert!(parse_timezone("Europe/Paris").is_err());
    }

    #[test]
    fn http_provider_needs_endpoint() {
        let err = Config::parse("[provider]\nkind = \"http\"\n").unwrap_err();
        assert!(err.to_string().contains("endpoint"));
    }
}
