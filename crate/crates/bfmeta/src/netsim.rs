//! Deterministic simulated-time event loop and the closed-form latency
//! accounting.
//!
//! The clock is an integer microsecond tick; latency distributions are
//! configured in milliseconds and each draw is rounded to a tick, so every
//! total below is an exact integer sum of the drawn samples. Events fire in
//! `(fire_time, sequence)` order, which makes a whole run a pure function
//! of configuration and seed.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::{Address, Digest};

/// Simulated time in microseconds.
pub type Tick = u64;

/// Milliseconds-per-tick view used in reports.
pub fn tick_to_ms(t: Tick) -> f64 {
    t as f64 / 1000.0
}

fn ms_to_tick(ms: f64) -> Tick {
    (ms * 1000.0).round() as Tick
}

/// Latency distribution descriptor, in simulated milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyDist {
    Constant(f64),
    Uniform(f64, f64),
}

impl LatencyDist {
    pub fn validate(&self, name: &str) -> Result<()> {
        match *self {
            LatencyDist::Constant(c) => {
                if !(c.is_finite() && c >= 0.0) {
                    return Err(Error::config(format!(
                        "latency.{name}: constant must be finite and >= 0"
                    )));
                }
            }
            LatencyDist::Uniform(lo, hi) => {
                if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                    return Err(Error::config(format!(
                        "latency.{name}: uniform bounds need 0 <= lo <= hi"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Tick {
        match *self {
            LatencyDist::Constant(c) => ms_to_tick(c),
            LatencyDist::Uniform(lo, hi) => {
                if lo == hi {
                    ms_to_tick(lo)
                } else {
                    ms_to_tick(rng.gen_range(lo..hi))
                }
            }
        }
    }

    pub fn mean_ms(&self) -> f64 {
        match *self {
            LatencyDist::Constant(c) => c,
            LatencyDist::Uniform(lo, hi) => (lo + hi) / 2.0,
        }
    }
}

/// Per-component latency model: training, the two transmission legs, and
/// the three blockchain phases (generation, consensus, synchronization).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyConfig {
    pub t_fl: LatencyDist,
    pub t_c_to_s: LatencyDist,
    pub t_s_to_c: LatencyDist,
    pub t_bg: LatencyDist,
    pub t_bv: LatencyDist,
    pub t_bs: LatencyDist,
}

impl LatencyConfig {
    pub fn validate(&self) -> Result<()> {
        self.t_fl.validate("t_fl")?;
        self.t_c_to_s.validate("t_c_to_s")?;
        self.t_s_to_c.validate("t_s_to_c")?;
        self.t_bg.validate("t_bg")?;
        self.t_bv.validate("t_bv")?;
        self.t_bs.validate("t_bs")
    }
}

impl Default for LatencyConfig {
    fn default() -> Self {
        LatencyConfig {
            t_fl: LatencyDist::Uniform(1.0, 3.0),
            t_c_to_s: LatencyDist::Uniform(0.5, 1.5),
            t_s_to_c: LatencyDist::Uniform(0.5, 1.5),
            t_bg: LatencyDist::Uniform(0.8, 1.6),
            t_bv: LatencyDist::Uniform(0.6, 1.0),
            t_bs: LatencyDist::Uniform(0.6, 1.0),
        }
    }
}

/// Total system latency over `n` rounds with fixed per-round components.
pub fn system_latency(n: u64, t_fl: Tick, t_c_to_s: Tick, t_s_to_c: Tick) -> Tick {
    n * (t_fl + t_c_to_s + t_s_to_c)
}

/// Per-round blockchain latency: generation + consensus + synchronization.
pub fn blockchain_latency(t_bg: Tick, t_bv: Tick, t_bs: Tick) -> Tick {
    t_bg + t_bv + t_bs
}

/// One round's recorded component samples. With stochastic distributions
/// the per-client components enter as the maximum over the round's draws
/// (the server waits for the slowest participant).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundLatency {
    pub t_fl: Tick,
    pub t_c_to_s: Tick,
    pub t_s_to_c: Tick,
    pub t_bg: Tick,
    pub t_bv: Tick,
    pub t_bs: Tick,
}

impl RoundLatency {
    pub fn system(&self) -> Tick {
        self.t_fl + self.t_c_to_s + self.t_s_to_c
    }

    pub fn blockchain(&self) -> Tick {
        blockchain_latency(self.t_bg, self.t_bv, self.t_bs)
    }
}

/// Accumulated per-round samples with the totals derived from them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub rounds: Vec<RoundLatency>,
}

impl LatencyReport {
    pub fn n_rounds(&self) -> u64 {
        self.rounds.len() as u64
    }

    /// Total system latency: the sum of each round's recorded
    /// `t_fl + t_c_to_s + t_s_to_c` samples, exactly.
    pub fn total_system(&self) -> Tick {
        self.rounds.iter().map(RoundLatency::system).sum()
    }

    pub fn per_round_blockchain(&self) -> Vec<Tick> {
        self.rounds.iter().map(RoundLatency::blockchain).collect()
    }

    pub fn total_blockchain(&self) -> Tick {
        self.rounds.iter().map(RoundLatency::blockchain).sum()
    }

    pub fn total(&self) -> Tick {
        self.total_system() + self.total_blockchain()
    }
}

/// What an event does when it fires.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum EventKind {
    /// A client's submission arrives at the server.
    Submit { client: Address },
    /// The miner seals the round's records.
    Mine,
    /// The server screens the arrived submissions.
    Verify,
    /// The server aggregates the included models.
    Aggregate,
    /// The chain head reaches one client.
    Broadcast { client: Address, head: Digest },
}

/// A scheduled occurrence; `sequence` breaks fire-time ties in insertion
/// order.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Event {
    pub fire_time: Tick,
    pub sequence: u64,
    pub kind: EventKind,
}

struct QueuedEvent {
    fire_time: Tick,
    sequence: u64,
    kind: EventKind,
}

impl PartialEq for QueuedEvent {
    fn eq(&self, other: &Self) -> bool {
        (self.fire_time, self.sequence) == (other.fire_time, other.sequence)
    }
}

impl Eq for QueuedEvent {}

impl Ord for QueuedEvent {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.fire_time, self.sequence).cmp(&(other.fire_time, other.sequence))
    }
}

impl PartialOrd for QueuedEvent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Deterministic event queue owning the simulated clock.
pub struct EventQueue {
    heap: BinaryHeap<Reverse<QueuedEvent>>,
    now: Tick,
    next_sequence: u64,
    processed: usize,
    /// Processing cap guarding against event loops that never drain.
    pub event_cap: usize,
}

impl Default for EventQueue {
    fn default() -> Self {
        EventQueue::new()
    }
}

impl EventQueue {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            now: 0,
            next_sequence: 0,
            processed: 0,
            event_cap: 1_000_000,
        }
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn is_idle(&self) -> bool {
        self.heap.is_empty()
    }

    /// Moves the clock forward without an event (round bookkeeping).
    pub fn advance_to(&mut self, t: Tick) {
        if t > self.now {
            self.now = t;
        }
    }

    pub fn schedule_at(&mut self, fire_time: Tick, kind: EventKind) -> Result<()> {
        if fire_time < self.now {
            return Err(Error::invalid_input(format!(
                "cannot schedule at {fire_time} before the current tick {}",
                self.now
            )));
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Reverse(QueuedEvent {
            fire_time,
            sequence,
            kind,
        }));
        Ok(())
    }

    pub fn schedule_after(&mut self, delay: Tick, kind: EventKind) -> Result<()> {
        self.schedule_at(self.now + delay, kind)
    }

    /// Drains the queue in `(fire_time, sequence)` order, advancing the
    /// clock to each event and handing it to `handler` (which may schedule
    /// more). Returns the ordered trace of processed events.
    pub fn run_until_idle<F>(&mut self, mut handler: F) -> Result<Vec<Event>>
    where
        F: FnMut(&mut EventQueue, &Event) -> Result<()>,
    {
        let mut trace = Vec::new();
        while let Some(Reverse(queued)) = self.heap.pop() {
            self.processed += 1;
            if self.processed > self.event_cap {
                return Err(Error::RunawaySimulation { cap: self.event_cap });
            }
            debug_assert!(queued.fire_time >= self.now, "time must not run backwards");
            self.now = queued.fire_time;
            let event = Event {
                fire_time: queued.fire_time,
                sequence: queued.sequence,
                kind: queued.kind,
            };
            handler(self, &event)?;
            trace.push(event);
        }
        Ok(trace)
    }
}

/// Schedules one chain-head delivery per client, each delayed by an
/// independent synchronization draw. Returns the delivery ticks in client
/// order.
pub fn broadcast_chain(
    queue: &mut EventQueue,
    head: Digest,
    clients: &[Address],
    t_bs: &LatencyDist,
    rng: &mut impl Rng,
) -> Result<Vec<Tick>> {
    let mut deliveries = Vec::with_capacity(clients.len());
    for client in clients {
        let delay = t_bs.sample(rng);
        let at = queue.now() + delay;
        queue.schedule_at(
            at,
            EventKind::Broadcast {
                client: client.clone(),
                head,
            },
        )?;
        deliveries.push(at);
    }
    Ok(deliveries)
}
