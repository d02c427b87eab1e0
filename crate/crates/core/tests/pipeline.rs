use std::path::{Path, PathBuf};

use tether_core::activity::{ReplaySpeed, Trace};
use tether_core::config::Config;
use tether_core::focus::{FocusMode, TriggerKind};
use tether_core::notifier::Outcome;
use tether_core::prompt::ResponseType;
use tether_core::service::{Options, ServiceError, Tether};
use tether_core::store::Role;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn open(dir: &Path, trace: &Trace) -> Tether {
    let config = Config {
        data_dir: dir.to_path_buf(),
        ..Config::default()
    };
    Tether::open(config, Options::virtual_at(trace.header.created_at)).unwrap()
}

fn replay(name: &str) -> (tempfile::TempDir, Tether) {
    let dir = tempfile::tempdir().unwrap();
    let trace = Trace::load(&fixture(name)).unwrap();
    let tether = open(dir.path(), &trace);
    tether.replay_trace(&trace, ReplaySpeed::Instant).unwrap();
    (dir, tether)
}

#[test]
fn idle_nudge_delivers_once() {
    let (_dir, tether) = replay("idle_nudge.jsonl");
    let kinds: Vec<_> = tether.triggers().iter().map(|t| (t.kind, t.t)).collect();
    assert_eq!(
        kinds,
        vec![(TriggerKind::ProlongedIdle, 300.0), (TriggerKind::Recovery, 450.0)]
    );

    let journal = tether.delivery_journal();
    let delivered: Vec<_> = journal.iter().filter(|r| r.outcome == Outcome::Delivered).collect();
    assert_eq!(delivered.len(), 1);
    assert_eq!(delivered[0].notification.t, 300.0);
    assert_eq!(delivered[0].notification.kind, ResponseType::Nudge);
    assert!(delivered[0].notification.body.contains("One small step"));
    assert_eq!(journal[1].outcome, Outcome::SuppressedCooldown);

    let c = tether.counters();
    assert_eq!((c.triggers, c.nudges_delivered, c.nudges_suppressed), (2, 1, 1));
    assert_eq!(tether.feed_after_id(0).len(), 1);
}

#[test]
fn delivered_nudge_is_stored_as_conversation() {
    let (_dir, tether) = replay("idle_nudge.jsonl");
    let msgs = tether.store().recent_messages(10);
    let roles: Vec<_> = msgs.iter().map(|m| m.role).collect();
    assert_eq!(roles, vec![Role::System, Role::Assistant]);
    assert_eq!(msgs[1].linked_trigger_id.as_deref(), Some("PROLONGED_IDLE@300"));
}

#[test]
fn status_reports_idle_seconds() {
    let dir = tempfile::tempdir().unwrap();
    let mut trace = Trace::load(&fixture("idle_nudge.jsonl")).unwrap();
    trace.events.truncate(1);
    let tether = open(dir.path(), &trace);
    tether.replay_trace(&trace, ReplaySpeed::Instant).unwrap();
    tether.advance(350.0).unwrap();
    let status = tether.status();
    assert_eq!(status.state.mode, FocusMode::Idle);
    assert_eq!(status.state.idle_seconds, 350.0);
}

#[test]
fn focus_day_awards_block_and_recovery() {
    let (_dir, tether) = replay("focus_day.jsonl");
    let game = tether.gamification();
    assert_eq!(game.points, 15);
    assert_eq!(
        game.badges.iter().cloned().collect::<Vec<_>>(),
        vec!["first_focus".to_string()]
    );
    assert_eq!(game.points, game.journal_sum());
}

#[test]
fn focus_day_replays_identically() {
    let (_a, first) = replay("focus_day.jsonl");
    let (_b, second) = replay("focus_day.jsonl");
    assert_eq!(first.gamification(), second.gamification());
    assert_eq!(first.triggers(), second.triggers());
}

#[test]
fn game_state_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let trace = Trace::load(&fixture("focus_day.jsonl")).unwrap();
    let before = {
        let tether = open(dir.path(), &trace);
        tether.replay_trace(&trace, ReplaySpeed::Instant).unwrap();
        tether.gamification()
    };
    let reopened = open(dir.path(), &trace);
    assert_eq!(reopened.gamification(), before);
}

#[test]
fn chat_round_trip_with_checkin() {
    let dir = tempfile::tempdir().unwrap();
    let trace = Trace::new(chrono::Utc::now(), 10.0);
    let tether = open(dir.path(), &trace);
    let out = tether.chat("I'm stuck on this bug", None).unwrap();
    assert!(out.reply.text.starts_with("[checkin|"), "{}", out.reply.text);
    assert_eq!(out.reply.role, Role::Assistant);
    assert_eq!(tether.gamification().points, 2);

    let out = tether.chat("what is a good way to plan the afternoon", None).unwrap();
    assert!(out.reply.text.starts_with("[chat|"));
    assert_eq!(tether.store().recent_messages(10).len(), 4);
}

#[test]
fn chat_rejects_empty_and_oversized_text() {
    let dir = tempfile::tempdir().unwrap();
    let tether = open(dir.path(), &Trace::new(chrono::Utc::now(), 10.0));
    assert!(matches!(tether.chat("", None), Err(ServiceError::BadText)));
    assert!(matches!(
        tether.chat(&"x".repeat(4001), None),
        Err(ServiceError::BadText)
    ));
    assert!(tether.store().recent_messages(10).is_empty());
}

#[test]
fn corpus_query_grounds_time_boxing() {
    let dir = tempfile::tempdir().unwrap();
    let tether = open(dir.path(), &Trace::new(chrono::Utc::now(), 10.0));
    for entry in std::fs::read_dir(fixture("corpus")).unwrap() {
        tether.index_file(&entry.unwrap().path()).unwrap();
    }
    let hits = tether.rag().query("time boxing", 2, 0.25).unwrap();
    assert_eq!(hits.len(), 2);
    assert_eq!(hits[0].doc_id(), "ref:time-boxing");
    assert_eq!(hits[1].doc_id(), "ref:task-initiation");
    assert!(tether.rag().query("time boxing", 4, 0.25).unwrap().len() == 2);
}
