//! Delay/loss model for the command path.
//!
//! The first frame that survives after a session opens waits out a startup delay;
//! every later frame gets a navigation delay. Delays are drawn uniformly from the
//! profile ranges with a seeded generator, and delivery times are clamped to be
//! non-decreasing so the link never reorders.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const QUEUE_BOUND: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyProfile {
    /// `[low, high]`, s
    pub startup: [f64; 2],
    /// `[low, high]`, s
    pub nav: [f64; 2],
    /// Per-frame drop probability.
    pub loss: f64,
}

impl Default for LatencyProfile {
    fn default() -> Self {
        Self {
            startup: [6.0, 8.0],
            nav: [2.0, 3.0],
            loss: 0.0,
        }
    }
}

impl LatencyProfile {
    /// No delay, no loss.
    pub fn ideal() -> Self {
        Self {
            startup: [0.0, 0.0],
            nav: [0.0, 0.0],
            loss: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [("latency.startup", self.startup), ("latency.nav", self.nav)] {
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
                return Err(Error::invalid(name, "need 0 <= low <= high"));
            }
        }
        if !(0.0..=1.0).contains(&self.loss) {
            return Err(Error::invalid("latency.loss", "must be in [0, 1]"));
        }
        Ok(())
    }
}

fn sample(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Where a frame ended up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheduled {
    /// Deliverable at `at`; `delay` is the sampled delay before ordering clamps.
    Delivery { at: f64, delay: f64 },
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LinkStats {
    pub enqueued: u64,
    pub delivered: u64,
    pub lost: u64,
    pub overflowed: u64,
}

#[derive(Debug, Clone)]
pub struct Link<T> {
    profile: LatencyProfile,
    rng: ChaCha8Rng,
    queue: VecDeque<(f64, T)>,
    awaiting_startup: bool,
    last_delivery: f64,
    stats: LinkStats,
}

impl<T> Link<T> {
    /// A link whose session is open and still owes its startup delay.
    pub fn new(profile: LatencyProfile, seed: u64) -> Self {
        Self {
            profile,
            rng: ChaCha8Rng::seed_from_u64(seed),
            queue: VecDeque::new(),
            awaiting_startup: true,
            last_delivery: f64::NEG_INFINITY,
            stats: LinkStats::default(),
        }
    }

    /// A link past its startup phase; every frame gets a navigation delay.
    pub fn established(profile: LatencyProfile, seed: u64) -> Self {
        Self {
            awaiting_startup: false,
            ..Self::new(profile, seed)
        }
    }

    /// Starts a new session: drops anything in flight and re-arms the startup delay.
    pub fn open(&mut self) {
        self.queue.clear();
        self.awaiting_startup = true;
        self.last_delivery = f64::NEG_INFINITY;
    }

    pub fn profile(&self) -> &LatencyProfile {
        &self.profile
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    pub fn enqueue(&mut self, frame: T, now: f64) -> Scheduled {
        self.stats.enqueued += 1;
        let range = if self.awaiting_startup {
            self.profile.startup
        } else {
            self.profile.nav
        };
        let delay = sample(&mut self.rng, range);
        if self.profile.loss > 0.0 && self.rng.random_bool(self.profile.loss) {
            self.stats.lost += 1;
            return Scheduled::Lost;
        }
        self.awaiting_startup = false;
        let at = (now + delay).max(self.last_delivery);
        self.last_delivery = at;
        if self.queue.len() >= QUEUE_BOUND {
            self.queue.pop_front();
            self.stats.overflowed += 1;
        }
        self.queue.push_back((at, frame));
        Scheduled::Delivery { at, delay }
    }

    /// Frames whose delivery time has come, in send order.
    pub fn poll(&mut self, now: f64) -> Vec<T> {
        let mut out = Vec::new();
        while self.queue.front().is_some_and(|(at, _)| *at <= now) {
            out.push(self.queue.pop_front().unwrap().1);
        }
        self.stats.delivered += out.len() as u64;
        out
    }
}
