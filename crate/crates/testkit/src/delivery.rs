//! Delivery policy oracle over whole-second timelines.
//!
//! Chat replies always go out. Any other item is checked in order against
//! the cooldown since the last delivered non-chat item, then quiet hours
//! (`[start, end)` in whole hours, wrapping past midnight when
//! `end < start`), then the per-day cap. Day boundaries are UTC midnights
//! counted from `t = 0`.

use std::collections::HashMap;

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Delivered,
    Cooldown,
    Quiet,
    DailyCap,
}

#[derive(Debug, Clone)]
pub struct Timeline {
    pub cooldown: u32,
    pub cap: u32,
    pub quiet: Option<(u32, u32)>,
    /// `(t, is_chat)` with `t` non-decreasing.
    pub items: Vec<(u32, bool)>,
}

pub fn verdicts(tl: &Timeline) -> Vec<Verdict> {
    let mut last: Option<u32> = None;
    let mut per_day: HashMap<u32, u32> = HashMap::new();
    tl.items
        .iter()
        .map(|&(t, chat)| {
            if chat {
                return Verdict::Delivered;
            }
            if last.is_some_and(|l| t - l < tl.cooldown) {
                return Verdict::Cooldown;
            }
            let hour = (t % 86_400) / 3600;
            if let Some((a, b)) = tl.quiet {
                let quiet = if a < b {
                    hour >= a && hour < b
                } else {
                    hour >= a || hour < b
                };
                if quiet {
                    return Verdict::Quiet;
                }
            }
            let n = per_day.entry(t / 86_400).or_default();
            if *n >= tl.cap {
                return Verdict::DailyCap;
            }
            *n += 1;
            last = Some(t);
            Verdict::Delivered
        })
        .collect()
}

/// Cooldowns and gaps straddle each other so every verdict shows up.
pub fn random_timeline(rng: &mut impl Rng) -> Timeline {
    let cooldown: u32 = rng.gen_range(60..2000);
    let quiet = if rng.gen_bool(0.5) {
        let a = rng.gen_range(0..24);
        let b = (a + rng.gen_range(1..24)) % 24;
        Some((a, b))
    } else {
        None
    };
    let mut t = 0u32;
    let items = (0..rng.gen_range(1..120))
        .map(|_| {
            t += match rng.gen_range(0..4) {
                0 => cooldown.saturating_sub(1),
                1 => cooldown,
                _ => rng.gen_range(0..3000),
            };
            (t, rng.gen_bool(0.15))
        })
        .collect();
    Timeline {
        cooldown,
        cap: rng.gen_range(1..8),
        quiet,
        items,
    }
}
