//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.
//!
//! Run with `cargo test -p tether --test acceptance`. The binary re-executes
//! itself as a store writer for the kill-point harness when
//! `TETHER_ACCEPT_WRITER` is set.

mod common;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{NaiveDate, TimeZone, Utc};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use sha2::{Digest, Sha256};

use tether_core::activity::{ActivityEvent, ReplaySpeed};
use tether_core::config::{Config, NotifierConfig, PromptConfig, RagConfig, Thresholds};
use tether_core::focus::{
    ActivitySummary, AppCategory, AppClassifier, FocusEngine, TriggerContext, TriggerEvent, TriggerKind,
};
use tether_core::gamification::{Award, GameEngine, GameEvent, GameRules, MILESTONES};
use tether_core::llm::Gateway;
use tether_core::notifier::{DeliveryPolicy, Draft, Notifier, Outcome, Urgency};
use tether_core::prompt::{PromptComposer, PromptError, PromptInput, ResponseType, SectionKind};
use tether_core::rag::{chunk_text, Document, DocumentChunk, RagEngine, ScoredChunk};
use tether_core::service::{Options, Tether};
use tether_core::store::{ChatMessage, FaultPlan, Role, Store, StoreError, StoreState};
use tether_testkit::delivery::{self, Verdict};
use tether_testkit::focus::{self as focus_oracle, Event, Fired, Kind};
use tether_testkit::journal::{random_ops, Model, Op};
use tether_testkit::{retrieval, text};

use common::{json, Server};

const WRITER_ENV: &str = "TETHER_ACCEPT_WRITER";

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() -> ExitCode {
    if let Ok(job) = std::env::var(WRITER_ENV) {
        writer(&job);
        return ExitCode::SUCCESS;
    }

    let criteria: [Criterion; 10] = [
        ("capability-matrix", capability_matrix),
        ("end-to-end-nudge", end_to_end_nudge),
        ("trigger-oracle", trigger_oracle),
        ("retrieval-oracle", retrieval_oracle),
        ("chunker-reconstruction", chunker_reconstruction),
        ("gamification-determinism", gamification_determinism),
        ("cooldown-safety", cooldown_safety),
        ("durability", durability),
        ("prompt-contract", prompt_contract),
        ("headless-stub", headless_stub),
    ];

    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_text(&p))));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {name} ({secs:.3}s) {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({secs:.3}s) {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn panic_text(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn within(start: Instant, limit: Duration) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure!(took < limit, "took {took:?}, limit {limit:?}");
    Ok(took)
}

fn capability_matrix() -> Check {
    let server = Server::start();
    let start = Instant::now();
    let (status, body) = json(server.get("/v1/capabilities").call());
    within(start, Duration::from_secs(1))?;
    ensure!(status == 200, "status {status}");
    let expected = serde_json::json!({
        "monitoring": true, "chat": true, "dev_aware": true, "rag": true, "gamified": true
    });
    ensure!(body == expected, "got {body}");
    Ok("five flags true".into())
}

fn end_to_end_nudge() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let trace = common::trace("idle_nudge.jsonl");
    let tether = Tether::open(
        common::config_in(dir.path()),
        Options::virtual_at(trace.header.created_at),
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        tether.gateway().provider_name() == "stub",
        "provider {}",
        tether.gateway().provider_name()
    );
    ensure!(
        tether.config().thresholds.prolonged_idle_threshold == 300.0,
        "threshold changed"
    );
    tether
        .replay_trace(&trace, ReplaySpeed::Instant)
        .map_err(|e| e.to_string())?;

    let journal = tether.delivery_journal();
    let delivered: Vec<_> = journal
        .iter()
        .filter(|r| r.outcome == Outcome::Delivered && r.notification.kind == ResponseType::Nudge)
        .map(|r| r.notification.t)
        .collect();
    ensure!(delivered == [300.0], "delivered nudges at {delivered:?}");
    let recoveries = tether
        .triggers()
        .iter()
        .filter(|t| t.kind == TriggerKind::Recovery)
        .count();
    ensure!(recoveries == 1, "{recoveries} recovery triggers");
    let took = within(start, Duration::from_secs(5))?;
    Ok(format!("1 nudge at t=300, 1 recovery, {took:?}"))
}

fn oracle_thresholds(th: &Thresholds) -> focus_oracle::Thresholds {
    focus_oracle::Thresholds {
        idle: th.idle_threshold,
        prolonged: th.prolonged_idle_threshold,
        recovery_window: th.recovery_window_seconds,
        thrash_n: th.thrash_n,
        thrash_window: th.thrash_window_seconds,
        thrash_cooldown: th.thrash_cooldown_seconds,
    }
}

fn engine_triggers(events: &[Event], horizon: f64, th: Thresholds) -> Vec<Fired> {
    let mut engine = FocusEngine::new(th, AppClassifier::default(), 0.0);
    let mut out = Vec::new();
    for e in events {
        let ev = match e {
            Event::Input(t) => ActivityEvent::input(*t, 3, 1),
            Event::Focus(t, app) => ActivityEvent::focus(*t, app, "window"),
        };
        out.extend(engine.ingest(&ev, ev.t).unwrap());
    }
    out.extend(engine.advance(horizon));
    let mut fired: Vec<Fired> = out
        .iter()
        .map(|t| {
            let c = &t.context;
            let (kind, value) = match t.kind {
                TriggerKind::ProlongedIdle => (Kind::ProlongedIdle, c.idle_seconds.unwrap()),
                TriggerKind::Recovery => (Kind::Recovery, c.recovered_within.unwrap()),
                TriggerKind::ContextThrash => (Kind::Thrash, f64::from(c.switch_count.unwrap())),
                TriggerKind::UserMessage => unreachable!("engine never emits user messages"),
            };
            Fired { t: t.t, kind, value }
        })
        .collect();
    fired.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.kind.cmp(&b.kind)));
    fired
}

fn trigger_oracle() -> Check {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x7e7e);
    let th = Thresholds::default();
    let mut fired = 0;
    for case in 0..1000 {
        let (events, horizon) = focus_oracle::random_trace(&mut rng, 7200.0);
        ensure!(horizon <= 7200.0, "case {case}: horizon {horizon}");
        let want = focus_oracle::triggers(&events, horizon, oracle_thresholds(&th), focus_oracle::is_dev_app);
        let got = engine_triggers(&events, horizon, th);
        ensure!(got == want, "case {case}: engine {got:?} oracle {want:?}");
        fired += want.len();
    }
    let took = within(start, Duration::from_secs(60))?;
    Ok(format!("1000 traces, {fired} triggers, {took:?}"))
}

fn retrieval_oracle() -> Check {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x4a6);
    let vocab = retrieval::vocabulary(300);
    let config = RagConfig::default();
    let rag = RagEngine::new(Arc::new(Gateway::stub()), config);
    let p = rag.params();
    let mut chunks = Vec::new();
    for i in 0..200 {
        let words = rng.gen_range(1..600);
        let body = retrieval::random_words(&mut rng, &vocab, words);
        let doc = Document::reference(&format!("doc {i:03}"), body.clone(), Utc::now());
        let id = doc.doc_id.clone();
        rag.index_document(doc).map_err(|e| e.to_string())?;
        for (j, piece) in text::windows(&body, p.chunk_size, p.overlap).into_iter().enumerate() {
            chunks.push((id.clone(), j, piece));
        }
    }
    ensure!(
        rag.snapshot().len() == chunks.len(),
        "index holds {} chunks",
        rag.snapshot().len()
    );
    let mut hits = 0;
    for q in 0..100 {
        let len = rng.gen_range(1..10);
        let query = retrieval::random_words(&mut rng, &vocab, len);
        for min in [0.0, config.min_score] {
            let got: Vec<_> = rag
                .query(&query, 4, min)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|h| (h.chunk.doc_id.clone(), h.chunk.chunk_index, h.score))
                .collect();
            let want: Vec<_> = retrieval::top_k(&chunks, &query, 4, min)
                .into_iter()
                .map(|h| (h.doc_id, h.chunk_index, h.score))
                .collect();
            ensure!(got == want, "query {q} min {min}: engine {got:?} scan {want:?}");
            hits += got.len();
        }
    }
    let took = within(start, Duration::from_secs(30))?;
    Ok(format!(
        "200 docs, {} chunks, 100 queries, {hits} hits, {took:?}",
        chunks.len()
    ))
}

fn chunker_reconstruction() -> Check {
    let mut rng = StdRng::seed_from_u64(0xc4c);
    let RagConfig {
        chunk_size, overlap, ..
    } = RagConfig::default();
    for case in 0..100 {
        let len = rng.gen_range(100..=50_000);
        let input = text::random_text(&mut rng, len);
        let pieces: Vec<String> = chunk_text(&input, chunk_size, overlap)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|(_, t)| t)
            .collect();
        ensure!(
            text::reassemble(&pieces, overlap) == input,
            "case {case} ({len} chars) differs"
        );
    }
    Ok("100 texts byte-identical".into())
}

#[derive(Clone, Copy)]
enum Step {
    Block,
    Recovery,
    Checkin,
}

/// Applies `steps` after a day rollover, checking each step against the rule
/// table. Returns the final points.
fn boundary(steps: &[Step]) -> Result<u64, String> {
    let day = NaiveDate::from_ymd_opt(2026, 3, 2).unwrap();
    let mut engine = GameEngine::new(GameRules::default());
    engine
        .apply(&GameEvent::day_rollover(0.0, day))
        .map_err(|e| e.to_string())?;
    let mut expected = 0;
    let mut flips: BTreeMap<String, u32> = BTreeMap::new();
    for (i, step) in steps.iter().enumerate() {
        let t = (i + 1) as f64 * 60.0;
        let (event, delta) = match step {
            Step::Block => (GameEvent::focus_block(t, 1500.0, true), 10),
            Step::Recovery => (GameEvent::quick_recovery(t, 30.0), 5),
            Step::Checkin => (GameEvent::chat_checkin(t, i as u64), 2),
        };
        let before = engine.state().unlocked_themes.clone();
        engine.apply(&event).map_err(|e| e.to_string())?;
        expected += delta;
        let s = engine.state();
        ensure!(
            s.points == expected,
            "step {i}: points {} expected {expected}",
            s.points
        );
        ensure!(
            s.points == s.journal_sum(),
            "step {i}: points {} journal {}",
            s.points,
            s.journal_sum()
        );
        ensure!(
            before.is_subset(&s.unlocked_themes),
            "step {i}: a theme was locked again"
        );
        for theme in s.unlocked_themes.difference(&before) {
            *flips.entry(theme.clone()).or_default() += 1;
        }
    }
    let s = engine.state();
    for m in MILESTONES {
        let reached = u32::from(s.points >= m.points);
        let awards = s
            .journal
            .iter()
            .filter(|a| a.milestone_id.as_deref() == Some(m.id))
            .count() as u32;
        ensure!(
            awards == reached,
            "{}: {awards} milestone awards at {} points",
            m.id,
            s.points
        );
        let flipped = flips.get(m.theme_id).copied().unwrap_or(0);
        ensure!(
            flipped == reached,
            "{}: flipped {flipped} times at {} points",
            m.theme_id,
            s.points
        );
        ensure!(
            s.unlocked_themes.contains(m.theme_id) == (reached == 1),
            "{} unlock state",
            m.theme_id
        );
    }
    Ok(s.points)
}

fn sequence(blocks: usize, recoveries: usize, checkins: usize) -> Vec<Step> {
    let mut v = vec![Step::Block; blocks];
    v.extend(std::iter::repeat_n(Step::Recovery, recoveries));
    v.extend(std::iter::repeat_n(Step::Checkin, checkins));
    v
}

fn gamification_determinism() -> Check {
    let trace = common::trace("focus_day.jsonl");
    let replay = || -> Result<(tempfile::TempDir, Tether), String> {
        let dir = tempfile::tempdir().unwrap();
        let tether = Tether::open(
            common::config_in(dir.path()),
            Options::virtual_at(trace.header.created_at),
        )
        .map_err(|e| e.to_string())?;
        tether
            .replay_trace(&trace, ReplaySpeed::Instant)
            .map_err(|e| e.to_string())?;
        Ok((dir, tether))
    };
    let (_a, first) = replay()?;
    let (_b, second) = replay()?;
    let state = first.gamification();
    ensure!(state == second.gamification(), "replays differ");
    ensure!(state.points > 0, "fixture awarded nothing");

    let mut engine = GameEngine::new(GameRules::default());
    for (i, step) in first.store().state().game.iter().enumerate() {
        let awards = engine.apply(&step.event).map_err(|e| e.to_string())?;
        ensure!(awards == step.awards, "step {i}: awards differ from the stored journal");
        let s = engine.state();
        ensure!(
            s.points == s.journal_sum(),
            "step {i}: points {} journal {}",
            s.points,
            s.journal_sum()
        );
    }
    ensure!(engine.state() == &state, "journal refold differs from live state");

    // 99 -> 101 and 98 -> 100 cross the first milestone, 499 -> 501 and
    // 498 -> 500 the second
    let cases = [
        (sequence(9, 1, 2), 99),
        (sequence(9, 0, 4), 98),
        (sequence(49, 1, 2), 499),
        (sequence(49, 0, 4), 498),
    ];
    let mut reached = Vec::new();
    for (mut steps, below) in cases {
        ensure!(boundary(&steps)? == below, "expected {below} before the boundary");
        steps.push(Step::Checkin);
        reached.push(boundary(&steps)?);
    }
    ensure!(reached == [101, 100, 501, 500], "boundary points {reached:?}");
    Ok(format!(
        "{} points from the fixture, boundaries {reached:?}",
        state.points
    ))
}

fn cooldown_safety() -> Check {
    let mut rng = StdRng::seed_from_u64(0xc001);
    let epoch = Utc.with_ymd_and_hms(2026, 3, 2, 0, 0, 0).unwrap();
    let mut suppressed = 0;
    for case in 0..1000 {
        let tl = delivery::random_timeline(&mut rng);
        let config = NotifierConfig {
            nudge_cooldown_seconds: f64::from(tl.cooldown),
            max_nudges_per_day: tl.cap,
            quiet_hours: tl
                .quiet
                .map(|(a, b)| format!("{a:02}:00-{b:02}:00"))
                .into_iter()
                .collect(),
            native: false,
        };
        let policy = DeliveryPolicy::from_config(&config).map_err(|e| e.to_string())?;
        let mut notifier = Notifier::new(policy, chrono::FixedOffset::east_opt(0).unwrap(), epoch);
        for &(t, chat) in &tl.items {
            let kind = if chat {
                ResponseType::ChatReply
            } else {
                ResponseType::Nudge
            };
            let draft = Draft {
                title: "Gentle check-in".into(),
                body: "Pick one small task and give it ten minutes.".into(),
                kind,
                urgency: Urgency::Low,
            };
            notifier.deliver(draft, f64::from(t));
        }
        let journal = notifier.journal();
        ensure!(
            journal.len() == tl.items.len(),
            "case {case}: {} of {} attempts journaled",
            journal.len(),
            tl.items.len()
        );
        let want: Vec<&str> = delivery::verdicts(&tl)
            .into_iter()
            .map(|v| match v {
                Verdict::Delivered => "DELIVERED",
                Verdict::Cooldown => "SUPPRESSED_COOLDOWN",
                Verdict::Quiet => "SUPPRESSED_QUIET",
                Verdict::DailyCap => "SUPPRESSED_DAILY_CAP",
            })
            .collect();
        let got: Vec<&str> = journal.iter().map(|r| r.outcome.as_str()).collect();
        ensure!(got == want, "case {case}: outcomes {got:?} oracle {want:?}");
        let delivered: Vec<f64> = journal
            .iter()
            .filter(|r| r.outcome == Outcome::Delivered && !r.notification.kind.is_chat())
            .map(|r| r.notification.t)
            .collect();
        for w in delivered.windows(2) {
            ensure!(
                w[1] - w[0] >= f64::from(tl.cooldown),
                "case {case}: nudges at {} and {}",
                w[0],
                w[1]
            );
        }
        suppressed += journal.iter().filter(|r| r.outcome != Outcome::Delivered).count();
    }
    Ok(format!("1000 timelines, {suppressed} suppressions journaled"))
}

fn project(state: &StoreState) -> Model {
    Model {
        messages: state.messages.iter().map(|m| (m.id, m.text.clone())).collect(),
        events: state.events.iter().map(|e| e.event.t).collect(),
        games: state.game.iter().map(|g| g.event.t).collect(),
        documents: state
            .documents
            .iter()
            .map(|(id, d)| {
                let bits = d
                    .chunks
                    .iter()
                    .flat_map(|c| c.embedding.iter().map(|x| x.to_bits()))
                    .collect();
                (id.trim_start_matches("ref:").to_string(), (d.doc.text.clone(), bits))
            })
            .collect(),
        settings: state.settings.as_ref().map(|v| v["n"].as_u64().unwrap() as u32),
    }
}

fn write_op(store: &Store, op: &Op) -> Result<(), StoreError> {
    let at = Utc.with_ymd_and_hms(2026, 3, 2, 9, 0, 0).unwrap();
    match op {
        Op::Message(text) => store.append_message(Role::User, text, at, None, None).map(|_| ()),
        Op::Event(t) => store.append_event(&ActivityEvent::input(*t, 1, 0), at),
        Op::Game(t) => store.append_game(&GameEvent::quick_recovery(*t, 30.0), &[Award::points(*t, 5, "R2")]),
        Op::Document { id, text, embedding } => {
            let doc = Document::reference(id, text.clone(), at);
            let chunk = DocumentChunk {
                doc_id: doc.doc_id.clone(),
                chunk_index: 0,
                span: (0, text.chars().count()),
                text: text.clone(),
                embedding: embedding.clone(),
            };
            store.put_document(&doc, &[chunk])
        }
        Op::Settings(n) => store.put_settings(serde_json::json!({ "n": n })),
    }
}

const KILL_OPS: usize = 80;

/// Child side of the kill-point harness: `<path>:<seed>`.
fn writer(job: &str) {
    let (path, seed) = job.rsplit_once(':').expect("path:seed");
    let ops = random_ops(&mut StdRng::seed_from_u64(seed.parse().unwrap()), KILL_OPS);
    let store = Store::open(Path::new(path), Utc::now()).unwrap();
    let mut out = std::io::stdout().lock();
    for (i, op) in ops.iter().enumerate() {
        write_op(&store, op).unwrap();
        writeln!(out, "ack {i}").unwrap();
        out.flush().unwrap();
        std::thread::sleep(Duration::from_millis(1));
    }
}

/// Smallest `m >= from` with `model == Model::of(&ops[..m])`.
fn prefix_of(model: &Model, ops: &[Op], from: usize) -> Option<usize> {
    (from..=ops.len()).find(|&m| &Model::of(&ops[..m]) == model)
}

fn durability() -> Check {
    let mut rng = StdRng::seed_from_u64(0xd0_0d);
    let exe = std::env::current_exe().unwrap();
    let mut torn_tails = 0;
    for round in 0..10 {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.db");
        let seed: u64 = rng.gen();
        let kill_after = rng.gen_range(0..KILL_OPS - 10);
        let ops = random_ops(&mut StdRng::seed_from_u64(seed), KILL_OPS);

        let mut child = Command::new(&exe)
            .env(WRITER_ENV, format!("{}:{seed}", path.display()))
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
        let target = format!("ack {kill_after}");
        let mut seen = false;
        for line in lines.by_ref() {
            if line.unwrap() == target {
                seen = true;
                break;
            }
        }
        child.kill().unwrap();
        child.wait().unwrap();
        ensure!(seen, "round {round}: writer stopped before {target}");
        let acked = kill_after + 1;

        match Store::open(&path, Utc::now()) {
            Ok(store) => {
                let m = project(&store.state());
                ensure!(
                    prefix_of(&m, &ops, acked).is_some(),
                    "round {round}: strict open is not a prefix of at least {acked} writes"
                );
            }
            Err(StoreError::Corruption { .. }) => torn_tails += 1,
            Err(e) => return Err(format!("round {round}: strict open failed: {e}")),
        }
        let (store, _) = Store::open_recovering(&path, Utc::now()).map_err(|e| e.to_string())?;
        let m = project(&store.state());
        ensure!(
            prefix_of(&m, &ops, acked).is_some(),
            "round {round}: recovered state is not a prefix of at least {acked} writes"
        );
    }

    // torn appends injected at random frames
    for round in 0..10 {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.db");
        let n = rng.gen_range(2..60);
        let ops = random_ops(&mut rng, n);
        let crash_at = rng.gen_range(0..n);
        {
            let store = Store::open(&path, Utc::now()).unwrap();
            store.inject_fault(FaultPlan {
                at_append: crash_at as u64,
                keep_bytes: rng.gen_range(1..16),
            });
            for op in &ops {
                if write_op(&store, op).is_err() {
                    break;
                }
            }
        }
        let strict = Store::open(&path, Utc::now());
        ensure!(
            matches!(strict, Err(StoreError::Corruption { .. })),
            "round {round}: torn frame read silently"
        );
        let (store, recovery) = Store::open_recovering(&path, Utc::now()).map_err(|e| e.to_string())?;
        ensure!(recovery.is_some(), "round {round}: no recovery reported");
        ensure!(
            project(&store.state()) == Model::of(&ops[..crash_at]),
            "round {round}: recovered state differs"
        );
    }

    // a flipped bit in the last frame
    for round in 0..10 {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.db");
        let n = rng.gen_range(1..40);
        let ops = random_ops(&mut rng, n);
        let (before_last, end) = {
            let store = Store::open(&path, Utc::now()).unwrap();
            let mut before = store.size_bytes();
            for op in &ops {
                before = store.size_bytes();
                write_op(&store, op).unwrap();
            }
            (before, store.size_bytes())
        };
        let mut bytes = std::fs::read(&path).unwrap();
        let at = rng.gen_range(before_last..end) as usize;
        bytes[at] ^= 1 << rng.gen_range(0..8);
        std::fs::write(&path, &bytes).unwrap();
        let strict = Store::open(&path, Utc::now());
        ensure!(
            matches!(strict, Err(StoreError::Corruption { .. })),
            "round {round}: flipped byte {at} read silently"
        );
        let (store, _) = Store::open_recovering(&path, Utc::now()).map_err(|e| e.to_string())?;
        ensure!(
            project(&store.state()) == Model::of(&ops[..n - 1]),
            "round {round}: recovered state differs"
        );
    }
    Ok(format!(
        "10 kill points ({torn_tails} torn tails), 10 torn appends, 10 flipped tails"
    ))
}

const PROMPT_CHARS: &[char] = &[
    'a', 'b', 'c', 'k', 'm', 'q', 'x', 'z', 'A', 'Q', '0', '7', ' ', ' ', ',', '.', '!', '?', '\'', 'é', '🙂', '\n',
];

fn prompt_text(rng: &mut StdRng, max: usize) -> String {
    let n = rng.gen_range(1..=max);
    (0..n)
        .map(|_| PROMPT_CHARS[rng.gen_range(0..PROMPT_CHARS.len())])
        .collect()
}

fn word(rng: &mut StdRng) -> String {
    let n = rng.gen_range(2..10);
    (0..n).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
}

fn maybe<T>(rng: &mut StdRng, f: impl FnOnce(&mut StdRng) -> T) -> Option<T> {
    if rng.gen_bool(0.5) {
        Some(f(rng))
    } else {
        None
    }
}

fn random_summary(rng: &mut StdRng) -> ActivitySummary {
    let apps: BTreeMap<String, f64> = (0..rng.gen_range(0..6))
        .map(|_| (word(rng), rng.gen_range(1.0..3000.0)))
        .collect();
    ActivitySummary {
        window_seconds: 1800.0,
        per_category_seconds: BTreeMap::from([(AppCategory::Other, apps.values().sum())]),
        per_app_seconds: apps,
        idle_seconds: rng.gen_range(0.0..1800.0),
        switch_count: rng.gen_range(0..50),
        last_nudge_t: maybe(rng, |r| r.gen_range(0.0..7200.0)),
    }
}

fn random_retrieved(rng: &mut StdRng) -> Vec<ScoredChunk> {
    let mut hits: Vec<ScoredChunk> = (0..rng.gen_range(0..8))
        .map(|_| {
            let text = prompt_text(rng, 400);
            ScoredChunk {
                chunk: Arc::new(DocumentChunk {
                    doc_id: format!("ref:{}", word(rng)),
                    chunk_index: rng.gen_range(0..5),
                    span: (0, text.chars().count()),
                    text,
                    embedding: Vec::new(),
                }),
                score: rng.gen_range(0.0..1.0),
            }
        })
        .collect();
    hits.sort_by(ScoredChunk::rank_cmp);
    hits
}

fn random_history(rng: &mut StdRng) -> Vec<ChatMessage> {
    (0..rng.gen_range(0..30))
        .map(|i| ChatMessage {
            id: i + 1,
            at: Utc::now(),
            role: if rng.gen_bool(0.5) { Role::User } else { Role::Assistant },
            text: prompt_text(rng, 200),
            response_type: None,
            linked_trigger_id: None,
        })
        .collect()
}

fn random_trigger(rng: &mut StdRng) -> TriggerEvent {
    let kinds = [
        TriggerKind::ProlongedIdle,
        TriggerKind::ContextThrash,
        TriggerKind::Recovery,
        TriggerKind::UserMessage,
    ];
    let idle = maybe(rng, |r| r.gen_range(0.0..3000.0));
    TriggerEvent {
        t: rng.gen_range(0.0..7200.0),
        kind: kinds[rng.gen_range(0..kinds.len())],
        context: TriggerContext {
            idle_seconds: idle,
            switch_count: maybe(rng, |r| r.gen_range(0..30)),
            recovered_within: idle,
            apps_involved: (0..rng.gen_range(0..4)).map(|_| word(rng)).collect(),
        },
    }
}

/// Section names and their lines as they appear in a rendered prompt.
fn parse_sections(rendered: &str) -> Vec<(String, Vec<String>)> {
    let mut out: Vec<(String, Vec<String>)> = Vec::new();
    for line in rendered.lines() {
        if let Some(name) = line.strip_prefix("## ") {
            if SectionKind::ALL.iter().any(|k| k.as_str() == name) {
                out.push((name.to_string(), Vec::new()));
                continue;
            }
        }
        if let Some(last) = out.last_mut() {
            last.1.push(line.to_string());
        }
    }
    out
}

fn prompt_contract() -> Check {
    let mut rng = StdRng::seed_from_u64(0x9e7);
    let order: Vec<&str> = SectionKind::ALL.iter().map(|k| k.as_str()).collect();
    let mut impossible = 0;
    for case in 0..500 {
        let trigger = random_trigger(&mut rng);
        let message = match rng.gen_range(0..4) {
            0 => "I'm overwhelmed and stuck".to_string(),
            1 => "I can’t focus today".to_string(),
            _ => prompt_text(&mut rng, 300),
        };
        let input = if rng.gen_bool(0.5) {
            PromptInput::Trigger(&trigger)
        } else {
            PromptInput::Message {
                text: &message,
                t: 10.0,
            }
        };
        let summary = random_summary(&mut rng);
        let retrieved = random_retrieved(&mut rng);
        let history = random_history(&mut rng);
        let budget = if rng.gen_bool(0.5) {
            rng.gen_range(200..2000)
        } else {
            rng.gen_range(2000..12_000)
        };
        let k = rng.gen_range(1..6);
        let config = PromptConfig {
            char_budget: budget,
            history_limit: 12,
            ..PromptConfig::default()
        };
        let composer = PromptComposer::builtin(&config, k);
        let bundle = composer
            .compose(input, &summary, &retrieved, &history)
            .map_err(|e| e.to_string())?;
        let kinds: Vec<SectionKind> = bundle.sections.iter().map(|s| s.kind).collect();
        ensure!(kinds == SectionKind::ALL, "case {case}: sections {kinds:?}");

        match composer.render(&bundle) {
            Ok(rendered) => {
                let again = composer.render(&bundle).map_err(|e| e.to_string())?;
                ensure!(
                    Sha256::digest(&rendered) == Sha256::digest(&again),
                    "case {case}: render is not deterministic"
                );
                ensure!(rendered.chars().count() <= budget, "case {case}: over budget");
                let parsed = parse_sections(&rendered);
                let names: Vec<&str> = parsed.iter().map(|(n, _)| n.as_str()).collect();
                ensure!(names == order, "case {case}: rendered order {names:?}");
                for kind in [SectionKind::Principles, SectionKind::Input] {
                    let full = bundle.section(kind).items.join("\n");
                    let got = parsed.iter().find(|(n, _)| n == kind.as_str()).unwrap().1.join("\n");
                    ensure!(got == full, "case {case}: {} was truncated", kind.as_str());
                }
            }
            Err(PromptError::BudgetImpossible { needed, budget: b }) => {
                // the smallest rendering: headers, the fixed sections in
                // full, two style lines and "none" for the rest
                let lines = |v: &[String]| -> usize {
                    if v.is_empty() {
                        5
                    } else {
                        v.iter().map(|i| i.chars().count() + 1).sum()
                    }
                };
                let headers: usize = SectionKind::ALL.iter().map(|k| k.as_str().len() + 4).sum();
                let minimal = headers
                    + lines(&bundle.section(SectionKind::Principles).items)
                    + lines(&bundle.section(SectionKind::Style).items[..2])
                    + lines(&bundle.section(SectionKind::Input).items)
                    + 3 * 5;
                ensure!(
                    b == budget && needed == minimal && minimal > budget,
                    "case {case}: refused a feasible budget"
                );
                impossible += 1;
            }
            Err(e) => return Err(format!("case {case}: {e}")),
        }
    }
    Ok(format!("500 bundles, {impossible} infeasible budgets refused"))
}

fn headless_stub() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let tether =
        Tether::open(common::config_in(dir.path()), Options::virtual_at(Utc::now())).map_err(|e| e.to_string())?;
    ensure!(
        tether.gateway().provider_name() == "stub",
        "default provider {}",
        tether.gateway().provider_name()
    );
    ensure!(Config::default().api.ui_dir.is_none(), "default config serves a UI");
    drop(tether);

    let config = dir.path().join("config");
    std::fs::write(&config, "[api]\nport = 0\n\n[notifier]\nnative = false\n").unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_tether"))
        .env("HOME", dir.path())
        .args(["--config", config.to_str().unwrap(), "--data-dir"])
        .arg(dir.path().join("daemon"))
        .args(["run", "--headless"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let result = (|| -> Check {
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .map_err(|e| e.to_string())?;
        let base = line
            .trim()
            .strip_prefix("listening=")
            .ok_or(format!("no address line: {line:?}"))?
            .to_string();
        ensure!(base.starts_with("http://127.0.0.1:"), "bound to {base}");
        let token = std::fs::read_to_string(dir.path().join("daemon/api-token")).map_err(|e| e.to_string())?;
        let auth = format!("Bearer {}", token.trim());
        let (status, body) = json(
            ureq::get(&format!("{base}/v1/status"))
                .set("Authorization", &auth)
                .call(),
        );
        ensure!(status == 200 && body["mode"] == "ACTIVE", "status {status} {body}");
        let ui = ureq::get(&format!("{base}/")).set("Authorization", &auth).call();
        let code = match ui {
            Ok(r) => r.status(),
            Err(ureq::Error::Status(c, _)) => c,
            Err(e) => return Err(e.to_string()),
        };
        ensure!(code == 404, "GET / returned {code}");

        let kill = Command::new("kill")
            .args(["-TERM", &child.id().to_string()])
            .status()
            .map_err(|e| e.to_string())?;
        ensure!(kill.success(), "kill failed");
        let deadline = Instant::now() + Duration::from_secs(10);
        loop {
            if let Some(status) = child.try_wait().map_err(|e| e.to_string())? {
                ensure!(status.success(), "daemon exited with {status}");
                break;
            }
            ensure!(Instant::now() < deadline, "daemon ignored SIGTERM");
            std::thread::sleep(Duration::from_millis(20));
        }
        Store::open(&dir.path().join("daemon/tether.db"), Utc::now())
            .map_err(|e| format!("store after shutdown: {e}"))?;
        Ok(format!("stub provider, {base}, no UI, clean SIGTERM"))
    })();
    let _ = child.kill();
    let _ = child.wait();
    result
}
