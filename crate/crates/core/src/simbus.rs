//! Deterministic virtual-time publish-subscribe bus.
//!
//! All nodes of the bench exchange messages through one `Bus`. Deliveries
//! and timers carry virtual timestamps; [`Bus::advance`] moves the clock
//! and fires everything due, in timestamp order with ties broken by
//! registration order. The scheduler is single-threaded, so two runs with
//! the same inputs replay the exact same event sequence.

use std::collections::{BinaryHeap, HashMap, VecDeque};

use thiserror::Error;

use crate::lidar::{Frame, OperatingData};

#[derive(Debug, Error)]
pub enum BusError {
    #[error("channel '{0}' is not registered")]
    UnknownChannel(String),
    #[error("channel '{0}' is already registered")]
    DuplicateChannel(String),
    #[error("payload kind {got:?} does not match channel '{channel}' kind {want:?}")]
    KindMismatch {
        channel: String,
        want: PayloadKind,
        got: PayloadKind,
    },
    #[error("publish time {t} is before the clock ({now})")]
    TimeInPast { t: f64, now: f64 },
    #[error("advance step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("unknown subscription id {0}")]
    UnknownSubscription(usize),
}

/// Payload type tag carried by every channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PayloadKind {
    Frame,
    Telemetry,
    Thermal,
    Stage,
    Command,
}

/// Thermal snapshot as recorded on the bus and in bags.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalSample {
    pub t_set: f64,
    pub t_oil: f64,
    /// T0..T4: ambient, plate, three housings.
    pub temps: [f64; 5],
}

/// Stage position report: commanded and realized angle in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSample {
    pub position_index: u16,
    pub phi_cmd_deg: f64,
    pub phi_actual_deg: f64,
}

/// Commands the orchestrator issues to the rig nodes.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    SetTemperature { t_set: f64 },
    MoveStage { position_index: u16, phi_deg: f64 },
    Capture { dut: u8, frames: u16 },
    RequestTelemetry { dut: u8 },
}

/// A message value; immutable once published, cloned per subscriber.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Frame(Frame),
    Telemetry(OperatingData),
    Thermal(ThermalSample),
    Stage(StageSample),
    Command(Command),
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Frame(_) => PayloadKind::Frame,
            Payload::Telemetry(_) => PayloadKind::Telemetry,
            Payload::Thermal(_) => PayloadKind::Thermal,
            Payload::Stage(_) => PayloadKind::Stage,
            Payload::Command(_) => PayloadKind::Command,
        }
    }
}

/// A delivered message: channel, delivery timestamp, payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub channel: ChannelId,
    pub t: f64,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChannelId(pub u16);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubscriptionId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimerId(pub u64);

/// Receipt returned by `publish`: scheduled delivery time and sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Receipt {
    pub t: f64,
    pub seq: u64,
}

/// What `advance` fired, in firing order.
#[derive(Debug, Clone, PartialEq)]
pub enum Fired {
    Delivery {
        channel: ChannelId,
        t: f64,
        subscribers: usize,
    },
    Timer {
        id: TimerId,
        t: f64,
    },
}

/// Monotonic simulated clock with an acceleration factor.
///
/// `scale` is the default step in simulated seconds; it compresses the
/// rig's multi-hour cycles into desk-scale runs without touching physics.
#[derive(Debug, Clone)]
pub struct VirtualClock {
    now: f64,
    pub scale: f64,
}

impl VirtualClock {
    pub fn new(scale: f64) -> Self {
        Self { now: 0.0, scale }
    }

    pub fn now(&self) -> f64 {
        self.now
    }
}

struct ChannelInfo {
    name: String,
    kind: PayloadKind,
    subscribers: Vec<usize>,
}

enum Pending {
    Delivery { channel: ChannelId, payload: Payload },
    Timer { id: TimerId },
}

struct Scheduled {
    t: f64,
    seq: u64,
    item: Pending,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.t == other.t && self.seq == other.seq
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // BinaryHeap is a max-heap; invert for earliest-first, then lowest seq.
        other
            .t
            .total_cmp(&self.t)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// The deterministic bus.
pub struct Bus {
    clock: VirtualClock,
    channels: Vec<ChannelInfo>,
    by_name: HashMap<String, ChannelId>,
    queues: Vec<VecDeque<Message>>,
    pending: BinaryHeap<Scheduled>,
    next_seq: u64,
    next_timer: u64,
}

impl Bus {
    pub fn new(scale: f64) -> Self {
        Self {
            clock: VirtualClock::new(scale),
            channels: Vec::new(),
            by_name: HashMap::new(),
            queues: Vec::new(),
            pending: BinaryHeap::new(),
            next_seq: 0,
            next_timer: 0,
        }
    }

    pub fn now(&self) -> f64 {
        self.clock.now()
    }

    pub fn register_channel(&mut self, name: &str, kind: PayloadKind) -> Result<ChannelId, BusError> {
        if self.by_name.contains_key(name) {
            return Err(BusError::DuplicateChannel(name.to_string()));
        }
        let id = ChannelId(self.channels.len() as u16);
        self.channels.push(ChannelInfo {
            name: name.to_string(),
            kind,
            subscribers: Vec::new(),
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn channel(&self, name: &str) -> Result<ChannelId, BusError> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| BusError::UnknownChannel(name.to_string()))
    }

    pub fn channel_name(&self, id: ChannelId) -> &str {
        &self.channels[id.0 as usize].name
    }

    pub fn channel_kind(&self, id: ChannelId) -> PayloadKind {
        self.channels[id.0 as usize].kind
    }

    pub fn subscribe(&mut self, channel: ChannelId) -> SubscriptionId {
        let sub = SubscriptionId(self.queues.len());
        self.queues.push(VecDeque::new());
        self.channels[channel.0 as usize].subscribers.push(sub.0);
        sub
    }

    /// Enqueues a payload for delivery at virtual time `t`.
    pub fn publish(&mut self, channel: ChannelId, payload: Payload, t: f64) -> Result<Receipt, BusError> {
        let info = self
            .channels
            .get(channel.0 as usize)
            .ok_or_else(|| BusError::UnknownChannel(format!("#{}", channel.0)))?;
        if payload.kind() != info.kind {
            return Err(BusError::KindMismatch {
                channel: info.name.clone(),
                want: info.kind,
                got: payload.kind(),
            });
        }
        if t < self.clock.now {
            return Err(BusError::TimeInPast {
                t,
                now: self.clock.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.pending.push(Scheduled {
            t,
            seq,
            item: Pending::Delivery { channel, payload },
        });
        Ok(Receipt { t, seq })
    }

    /// Publishes by channel name at the current virtual time.
    pub fn publish_now(&mut self, name: &str, payload: Payload) -> Result<Receipt, BusError> {
        let id = self.channel(name)?;
        let now = self.clock.now;
        self.publish(id, payload, now)
    }

    /// Registers a timer that fires at absolute virtual time `t`.
    pub fn schedule_timer(&mut self, t: f64) -> Result<TimerId, BusError> {
        if t < self.clock.now {
            return Err(BusError::TimeInPast {
                t,
                now: self.clock.now,
            });
        }
        let id = TimerId(self.next_timer);
        self.next_timer += 1;
        let seq = self.next_seq;
        self.next_seq += 1;
        self.pending.push(Scheduled {
            t,
            seq,
            item: Pending::Timer { id },
        });
        Ok(id)
    }

    /// Advances the clock by `dt` and fires everything due by the new time.
    pub fn advance(&mut self, dt: f64) -> Result<Vec<Fired>, BusError> {
        if !(dt > 0.0) {
            return Err(BusError::NonPositiveStep(dt));
        }
        let horizon = self.clock.now + dt;
        let mut fired = Vec::new();
        while let Some(head) = self.pending.peek() {
            if head.t > horizon {
                break;
            }
            let Scheduled { t, item, .. } = self.pending.pop().expect("peeked");
            self.clock.now = self.clock.now.max(t);
            match item {
                Pending::Delivery { channel, payload } => {
                    let subs = self.channels[channel.0 as usize].subscribers.clone();
                    for &s in &subs {
                        self.queues[s].push_back(Message {
                            channel,
                            t,
                            payload: payload.clone(),
                        });
                    }
                    fired.push(Fired::Delivery {
                        channel,
                        t,
                        subscribers: subs.len(),
                    });
                }
                Pending::Timer { id } => fired.push(Fired::Timer { id, t }),
            }
        }
        self.clock.now = horizon;
        Ok(fired)
    }

    /// Takes the next delivered message from a subscription queue.
    pub fn poll(&mut self, sub: SubscriptionId) -> Option<Message> {
        self.queues.get_mut(sub.0).and_then(|q| q.pop_front())
    }

    /// Drains all delivered messages from a subscription queue.
    pub fn drain(&mut self, sub: SubscriptionId) -> Vec<Message> {
        match self.queues.get_mut(sub.0) {
            Some(q) => q.drain(..).collect(),
            None => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cmd(t: f64) -> Payload {
        Payload::Command(Command::SetTemperature { t_set: t })
    }

    #[test]
    fn identity_delivery() {
        let mut bus = Bus::new(1.0);
        let ch = bus.register_channel("cmd", PayloadKind::Command).unwrap();
        let sub = bus.subscribe(ch);
        bus.publish(ch, cmd(25.0), 0.5).unwrap();
        bus.advance(1.0).unwrap();
        let got = bus.poll(sub).expect("one message");
        assert_eq!(got.payload, cmd(25.0));
        assert_eq!(got.t, 0.5);
        assert!(bus.poll(sub).is_none());
    }

    #[test]
    fn per_channel_fifo() {
        let mut bus = Bus::new(1.0);
        let ch = bus.register_channel("cmd", PayloadKind::Command).unwrap();
        let sub = bus.subscribe(ch);
        for i in 0..3 {
            bus.publish(ch, cmd(i as f64), 1.0).unwrap();
        }
        bus.advance(2.0).unwrap();
        for i in 0..3 {
            assert_eq!(bus.poll(sub).unwrap().payload, cmd(i as f64));
        }
    }

    #[test]
    fn two_subscribers_get_equal_copies() {
        let mut bus = Bus::new(1.0);
        let ch = bus.register_channel("cmd", PayloadKind::Command).unwrap();
        let s1 = bus.subscribe(ch);
        let s2 = bus.subscribe(ch);
        bus.publish(ch, cmd(7.0), 0.0).unwrap();
        bus.advance(1.0).unwrap();
        let m1 = bus.poll(s1).unwrap();
        let m2 = bus.poll(s2).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn advance_with_no_events() {
        let mut bus = Bus::new(1.0);
        let fired = bus.advance(5.0).unwrap();
        assert!(fired.is_empty());
        assert_eq!(bus.now(), 5.0);
    }

    #[test]
    fn timers_fire_in_timestamp_order() {
        let mut bus = Bus::new(1.0);
        let t2 = bus.schedule_timer(2.0).unwrap();
        let t1 = bus.schedule_timer(1.0).unwrap();
        let fired = bus.advance(3.0).unwrap();
        assert_eq!(
            fired,
            vec![Fired::Timer { id: t1, t: 1.0 }, Fired::Timer { id: t2, t: 2.0 }]
        );
    }

    #[test]
    fn ties_break_by_registration_order() {
        let mut bus = Bus::new(1.0);
        let a = bus.schedule_timer(1.0).unwrap();
        let b = bus.schedule_timer(1.0).unwrap();
        let fired = bus.advance(2.0).unwrap();
        assert_eq!(
            fired,
            vec![Fired::Timer { id: a, t: 1.0 }, Fired::Timer { id: b, t: 1.0 }]
        );
    }

    #[test]
    fn non_positive_advance_rejected() {
        let mut bus = Bus::new(1.0);
        assert!(matches!(bus.advance(0.0), Err(BusError::NonPositiveStep(_))));
        assert!(matches!(bus.advance(-1.0), Err(BusError::NonPositiveStep(_))));
    }

    #[test]
    fn kind_mismatch_rejected() {
        let mut bus = Bus::new(1.0);
        let ch = bus.register_channel("thermal", PayloadKind::Thermal).unwrap();
        let err = bus.publish(ch, cmd(1.0), 0.0).unwrap_err();
        assert!(matches!(err, BusError::KindMismatch { .. }));
    }

    #[test]
    fn duplicate_channel_rejected() {
        let mut bus = Bus::new(1.0);
        bus.register_channel("x", PayloadKind::Command).unwrap();
        assert!(matches!(
            bus.register_channel("x", PayloadKind::Stage),
            Err(BusError::DuplicateChannel(_))
        ));
    }

    #[test]
    fn publish_into_past_rejected() {
        let mut bus = Bus::new(1.0);
        let ch = bus.register_channel("cmd", PayloadKind::Command).unwrap();
        bus.advance(10.0).unwrap();
        assert!(matches!(
            bus.publish(ch, cmd(0.0), 9.0),
            Err(BusError::TimeInPast { .. })
        ));
    }

    #[test]
    fn delivered_timestamps_never_exceed_clock() {
        let mut bus = Bus::new(1.0);
        let ch = bus.register_channel("cmd", PayloadKind::Command).unwrap();
        let sub = bus.subscribe(ch);
        for i in 0..10 {
            bus.publish(ch, cmd(i as f64), i as f64 * 0.3).unwrap();
        }
        bus.advance(4.0).unwrap();
        while let Some(m) = bus.poll(sub) {
            assert!(m.t <= bus.now());
        }
    }

    #[test]
    fn identical_schedules_replay_identically() {
        let run = || {
            let mut bus = Bus::new(1.0);
            let ch = bus.register_channel("cmd", PayloadKind::Command).unwrap();
            let _sub = bus.subscribe(ch);
            bus.schedule_timer(0.25).unwrap();
            bus.publish(ch, cmd(1.0), 0.25).unwrap();
            bus.schedule_timer(0.1).unwrap();
            let mut log = Vec::new();
            for _ in 0..4 {
                log.extend(bus.advance(0.1).unwrap());
            }
            log
        };
        assert_eq!(run(), run());
    }
}
