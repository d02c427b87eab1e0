//! Brute-force trigger oracle over a whole trace.
//!
//! Prolonged idle: every gap between consecutive inputs (session start at 0
//! counts as one, the last gap ends at the horizon) of at least `prolonged`
//! seconds fires once, at `gap_start + prolonged`.
//!
//! Recovery: an input ending a gap of at least `idle` seconds opens a
//! recovery. It fires at that input if the focused app is a development app
//! or no app is known yet, else at the first development focus within
//! `recovery_window` seconds, unless another gap-ending input comes first.
//!
//! Thrash: a focus event fires when at least `thrash_n` focus events lie in
//! `[t - thrash_window, t]` and the last thrash was `thrash_cooldown` or more
//! seconds earlier.

use rand::Rng;

#[derive(Debug, Clone, Copy)]
pub struct Thresholds {
    pub idle: f64,
    pub prolonged: f64,
    pub recovery_window: f64,
    pub thrash_n: usize,
    pub thrash_window: f64,
    pub thrash_cooldown: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Input(f64),
    Focus(f64, String),
}

impl Event {
    pub fn t(&self) -> f64 {
        match self {
            Event::Input(t) | Event::Focus(t, _) => *t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Kind {
    ProlongedIdle,
    Recovery,
    Thrash,
}

/// `value` is idle seconds, seconds since the idle start, or the switch
/// count, by kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Fired {
    pub t: f64,
    pub kind: Kind,
    pub value: f64,
}

/// Triggers for `events` (strictly increasing times, all at or after 0)
/// observed up to `horizon`, sorted by time then kind.
pub fn triggers(events: &[Event], horizon: f64, th: Thresholds, is_dev: impl Fn(&str) -> bool) -> Vec<Fired> {
    let mut out = Vec::new();
    let inputs: Vec<f64> = events
        .iter()
        .filter_map(|e| match e {
            Event::Input(t) => Some(*t),
            _ => None,
        })
        .collect();
    let focus: Vec<(f64, &str)> = events
        .iter()
        .filter_map(|e| match e {
            Event::Focus(t, app) => Some((*t, app.as_str())),
            _ => None,
        })
        .collect();

    let mut anchors = vec![0.0];
    anchors.extend(&inputs);
    for (i, &a) in anchors.iter().enumerate() {
        let end = anchors.get(i + 1).copied().unwrap_or(horizon);
        if a + th.prolonged <= end {
            out.push(Fired {
                t: a + th.prolonged,
                kind: Kind::ProlongedIdle,
                value: th.prolonged,
            });
        }
    }

    let app_before = |t: f64| focus.iter().rev().find(|(ft, _)| *ft < t).map(|(_, a)| *a);
    let resumes: Vec<(f64, f64)> = anchors
        .windows(2)
        .filter(|w| w[1] - w[0] >= th.idle)
        .map(|w| (w[1], w[0]))
        .collect();
    for (i, &(r, start)) in resumes.iter().enumerate() {
        let fire_at = match app_before(r) {
            None => Some(r),
            Some(app) if is_dev(app) => Some(r),
            Some(_) => {
                let next_resume = resumes.get(i + 1).map_or(f64::INFINITY, |n| n.0);
                focus
                    .iter()
                    .find(|(ft, app)| *ft > r && *ft <= r + th.recovery_window && *ft < next_resume && is_dev(app))
                    .map(|(ft, _)| *ft)
            }
        };
        if let Some(t) = fire_at {
            out.push(Fired {
                t,
                kind: Kind::Recovery,
                value: t - start,
            });
        }
    }

    let mut quiet_until = f64::NEG_INFINITY;
    for &(t, _) in &focus {
        let count = focus
            .iter()
            .filter(|(ft, _)| *ft >= t - th.thrash_window && *ft <= t)
            .count();
        if count >= th.thrash_n && t >= quiet_until {
            out.push(Fired {
                t,
                kind: Kind::Thrash,
                value: count as f64,
            });
            quiet_until = t + th.thrash_cooldown;
        }
    }

    out.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.kind.cmp(&b.kind)));
    out
}

pub const APPS: [&str; 5] = ["code", "kitty", "firefox", "slack", "notes"];

pub fn is_dev_app(app: &str) -> bool {
    matches!(app, "code" | "kitty")
}

/// A random trace of at most `max_seconds` virtual seconds with whole-second,
/// strictly increasing times, mixing work bursts, idle gaps and switch
/// storms. Returns the events and an observation horizon.
pub fn random_trace(rng: &mut impl Rng, max_seconds: f64) -> (Vec<Event>, f64) {
    let limit = rng.gen_range(300.0..=max_seconds).floor();
    let mut events = Vec::new();
    let mut t = 0.0_f64;
    fn next(rng: &mut impl Rng, lo: u32, hi: u32, t: &mut f64) -> f64 {
        *t += f64::from(rng.gen_range(lo..=hi));
        *t
    }
    // the first event may sit exactly at session start
    if rng.gen_bool(0.5) {
        events.push(Event::Input(0.0));
    }
    while t < limit {
        match rng.gen_range(0..10) {
            0..=3 => {
                for _ in 0..rng.gen_range(1..30) {
                    events.push(Event::Input(next(rng, 1, 30, &mut t)));
                }
            }
            4..=5 => {
                // gaps straddling the idle, prolonged and window thresholds
                let gap = *[60, 119, 120, 121, 299, 300, 301, 450, 900, 1500]
                    .get(rng.gen_range(0..10))
                    .expect("in range");
                t += f64::from(gap) - 1.0;
                events.push(Event::Input(next(rng, 1, 1, &mut t)));
            }
            6..=7 => {
                for _ in 0..rng.gen_range(2..10) {
                    let app = APPS[rng.gen_range(0..APPS.len())].to_string();
                    events.push(Event::Focus(next(rng, 1, 25, &mut t), app));
                    if rng.gen_bool(0.5) {
                        events.push(Event::Input(next(rng, 1, 5, &mut t)));
                    }
                }
            }
            _ => {
                let app = APPS[rng.gen_range(0..APPS.len())].to_string();
                events.push(Event::Focus(next(rng, 1, 200, &mut t), app));
            }
        }
    }
    events.retain(|e| e.t() <= limit);
    let last = events.last().map_or(0.0, Event::t);
    let horizon = (last + f64::from(rng.gen_range(0..600))).min(limit.max(last));
    (events, horizon)
}
