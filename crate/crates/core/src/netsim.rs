//! Partially synchronous network: logical ticks, reliable authenticated
//! point-to-point links, and a deterministic event queue.
//!
//! Before GST every delay is chosen by a [`DelayPolicy`] (the adversary),
//! capped so that anything sent before GST arrives by `gst + delta`. From
//! GST on, delays fall in `[1, delta]`.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::types::{Process, ReplicaId, TxId};

pub type Tick = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimClock {
    pub now: Tick,
    pub gst: Tick,
    pub delta: Tick,
}

impl SimClock {
    pub fn new(gst: Tick, delta: Tick) -> Self {
        assert!(delta >= 1, "delta must be at least one tick");
        SimClock { now: 0, gst, delta }
    }

    pub fn advance_to(&mut self, tick: Tick) {
        debug_assert!(tick >= self.now, "time never goes backwards");
        self.now = self.now.max(tick);
    }

    pub fn is_synchronous(&self) -> bool {
        self.now >= self.gst
    }

    /// Latest tick at which something sent at `sent_at` may be delivered.
    pub fn latest_delivery(&self, sent_at: Tick) -> Tick {
        sent_at.max(self.gst) + self.delta
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EnvelopeId(pub u64);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope<M> {
    pub id: EnvelopeId,
    pub from: Process,
    pub to: Process,
    pub payload: M,
    pub sent_at: Tick,
    pub deliver_at: Tick,
}

/// What a delay is being chosen for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Traffic {
    Request {
        tx: TxId,
    },
    SubProposal {
        instance: u64,
        sender: ReplicaId,
    },
    /// Consensus output notification.
    Output {
        instance: u64,
    },
}

#[derive(Clone, Copy, Debug)]
pub struct DelayContext {
    pub from: Option<Process>,
    pub to: Process,
    pub traffic: Traffic,
    pub clock: SimClock,
    /// Either endpoint is corrupt.
    pub touches_corrupt: bool,
}

/// Adversarial choice of message delays. Implementations return a delay in
/// ticks; the network clamps it into the model's bounds.
pub trait DelayPolicy {
    fn pre_gst_delay(&mut self, ctx: &DelayContext, rng: &mut ChaCha8Rng) -> Tick;

    /// Delay once the system is synchronous; defaults to uniform in `[1, delta]`.
    fn post_gst_delay(&mut self, ctx: &DelayContext, rng: &mut ChaCha8Rng) -> Tick {
        rng.gen_range(1..=ctx.clock.delta)
    }
}

/// Named pre-GST delay policies available from scenario files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum DelaySpec {
    /// Uniform in `[1, max]`.
    Uniform { max: Tick },
    /// Always `ticks`.
    Fixed { ticks: Tick },
    /// Deliver as late as allowed: at `gst + delta`.
    MaxHold,
}

impl Default for DelaySpec {
    fn default() -> Self {
        DelaySpec::Uniform { max: 20 }
    }
}

impl DelaySpec {
    /// Builds the policy; `rushing` gives traffic to or from corrupt
    /// processes the minimum delay.
    pub fn build(&self, rushing: bool) -> Box<dyn DelayPolicy + Send> {
        Box::new(NamedDelay {
            spec: self.clone(),
            rushing,
        })
    }
}

struct NamedDelay {
    spec: DelaySpec,
    rushing: bool,
}

impl DelayPolicy for NamedDelay {
    fn pre_gst_delay(&mut self, ctx: &DelayContext, rng: &mut ChaCha8Rng) -> Tick {
        if self.rushing && ctx.touches_corrupt {
            return 1;
        }
        match self.spec {
            DelaySpec::Uniform { max } => rng.gen_range(1..=max.max(1)),
            DelaySpec::Fixed { ticks } => ticks,
            DelaySpec::MaxHold => Tick::MAX,
        }
    }

    fn post_gst_delay(&mut self, ctx: &DelayContext, rng: &mut ChaCha8Rng) -> Tick {
        if self.rushing && ctx.touches_corrupt {
            return 1;
        }
        rng.gen_range(1..=ctx.clock.delta)
    }
}

/// Draws a delivery tick for something sent now, enforcing
/// `sent_at + 1 <= deliver_at` and the partial-synchrony bound.
pub fn delivery_tick(
    policy: &mut dyn DelayPolicy,
    ctx: &DelayContext,
    rng: &mut ChaCha8Rng,
) -> Tick {
    let clock = ctx.clock;
    let raw = if clock.is_synchronous() {
        policy.post_gst_delay(ctx, rng).min(clock.delta)
    } else {
        policy.pre_gst_delay(ctx, rng)
    };
    let delay = raw.max(1);
    clock
        .now
        .saturating_add(delay)
        .min(clock.latest_delivery(clock.now))
        .max(clock.now + 1)
}

/// Pending events ordered by `(tick, insertion sequence)`.
#[derive(Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<Slot<E>>>,
    next_seq: u64,
}

#[derive(Debug)]
struct Slot<E> {
    at: Tick,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Slot<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl<E> Eq for Slot<E> {}

impl<E> PartialOrd for Slot<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Slot<E> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            next_seq: 0,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn push(&mut self, at: Tick, event: E) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Slot { at, seq, event }));
    }

    pub fn pop(&mut self) -> Option<(Tick, E)> {
        self.heap.pop().map(|Reverse(s)| (s.at, s.event))
    }

    pub fn peek_tick(&self) -> Option<Tick> {
        self.heap.peek().map(|Reverse(s)| s.at)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn drain(&mut self) -> impl Iterator<Item = (Tick, E)> + '_ {
        std::iter::from_fn(move || self.pop())
    }
}

/// Something the queue will hand back: a message delivery or a local timer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Scheduled<M, T> {
    Deliver(Envelope<M>),
    Timer(T),
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum NetError {
    #[error("{executing:?} attempted to send as {claimed}")]
    Spoofing {
        executing: Option<Process>,
        claimed: Process,
    },
}

/// Metadata of an enqueued envelope.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sent {
    pub id: EnvelopeId,
    pub to: Process,
    pub deliver_at: Tick,
}

/// The simulated network plus the engine's timers, sharing one ordered queue.
pub struct Network<M, T> {
    clock: SimClock,
    queue: EventQueue<Scheduled<M, T>>,
    rng: ChaCha8Rng,
    policy: Box<dyn DelayPolicy + Send>,
    replicas: u32,
    corrupt: std::collections::BTreeSet<Process>,
    executing: Option<Process>,
    next_envelope: u64,
    in_flight: usize,
}

impl<M: Clone, T> Network<M, T> {
    pub fn new(
        clock: SimClock,
        replicas: u32,
        corrupt: impl IntoIterator<Item = Process>,
        policy: Box<dyn DelayPolicy + Send>,
        rng: ChaCha8Rng,
    ) -> Self {
        Network {
            clock,
            queue: EventQueue::default(),
            rng,
            policy,
            replicas,
            corrupt: corrupt.into_iter().collect(),
            executing: None,
            next_envelope: 0,
            in_flight: 0,
        }
    }

    pub fn clock(&self) -> SimClock {
        self.clock
    }

    pub fn now(&self) -> Tick {
        self.clock.now
    }

    /// Marks the process whose handler is running; only it may send.
    pub fn set_executing(&mut self, p: Option<Process>) {
        self.executing = p;
    }

    pub fn executing(&self) -> Option<Process> {
        self.executing
    }

    pub fn is_corrupt(&self, p: Process) -> bool {
        self.corrupt.contains(&p)
    }

    /// Draws a delay for traffic not carried by an envelope (for example
    /// consensus notifications).
    pub fn draw_delivery(&mut self, from: Option<Process>, to: Process, traffic: Traffic) -> Tick {
        let touches_corrupt =
            self.corrupt.contains(&to) || from.is_some_and(|f| self.corrupt.contains(&f));
        let ctx = DelayContext {
            from,
            to,
            traffic,
            clock: self.clock,
            touches_corrupt,
        };
        delivery_tick(self.policy.as_mut(), &ctx, &mut self.rng)
    }

    pub fn send(
        &mut self,
        from: Process,
        to: Process,
        payload: M,
        traffic: Traffic,
    ) -> Result<Sent, NetError> {
        if self.executing != Some(from) {
            return Err(NetError::Spoofing {
                executing: self.executing,
                claimed: from,
            });
        }
        let deliver_at = self.draw_delivery(Some(from), to, traffic);
        let id = EnvelopeId(self.next_envelope);
        self.next_envelope += 1;
        self.in_flight += 1;
        self.queue.push(
            deliver_at,
            Scheduled::Deliver(Envelope {
                id,
                from,
                to,
                payload,
                sent_at: self.clock.now,
                deliver_at,
            }),
        );
        Ok(Sent { id, to, deliver_at })
    }

    /// `n` independent sends, one per replica, self included.
    pub fn broadcast(
        &mut self,
        from: Process,
        payload: M,
        traffic: Traffic,
    ) -> Result<Vec<Sent>, NetError> {
        (0..self.replicas)
            .map(|r| {
                self.send(
                    from,
                    Process::Replica(ReplicaId(r)),
                    payload.clone(),
                    traffic,
                )
            })
            .collect()
    }

    pub fn schedule(&mut self, at: Tick, timer: T) {
        self.queue
            .push(at.max(self.clock.now), Scheduled::Timer(timer));
    }

    pub fn next_tick(&self) -> Option<Tick> {
        self.queue.peek_tick()
    }

    /// Pops the next event and advances the clock to it.
    pub fn step(&mut self) -> Option<Scheduled<M, T>> {
        let (at, event) = self.queue.pop()?;
        self.clock.advance_to(at);
        if let Scheduled::Deliver(_) = event {
            self.in_flight -= 1;
        }
        self.executing = None;
        Some(event)
    }

    /// Envelopes sent but not yet delivered.
    pub fn in_flight(&self) -> usize {
        self.in_flight
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
