//! Seeded discrete-event broadcast fabric with per-class loss and latency.
//!
//! Every broadcast is fanned out to all other registered drones. Each copy is
//! dropped or scheduled independently. Deliveries come out of [`Fabric::step`]
//! ordered by (delivery time, sequence number).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::DroneId;

/// Message classes with independent drop probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsgClass {
    Vio,
    Distance,
    Detection,
    Keyframe,
    MapEdge,
}

impl MsgClass {
    pub const ALL: [MsgClass; 5] = [
        MsgClass::Vio,
        MsgClass::Distance,
        MsgClass::Detection,
        MsgClass::Keyframe,
        MsgClass::MapEdge,
    ];
}

/// Anything that can travel over the fabric.
pub trait Payload {
    fn class(&self) -> MsgClass;
    /// Rough serialized size, for bandwidth accounting only.
    fn size_bytes(&self) -> usize;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("sender {0} is not registered")]
    UnregisteredSender(DroneId),
    #[error("time went backwards: fabric at {now}, asked to step to {until}")]
    TimeRegression { now: f64, until: f64 },
    #[error("drop probability for {class:?} must be in [0, 1], got {p}")]
    InvalidDrop { class: MsgClass, p: f64 },
    #[error("latency must be non-negative and finite")]
    InvalidLatency,
}

/// Loss and latency model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub drop_vio: f64,
    pub drop_distance: f64,
    pub drop_detection: f64,
    pub drop_keyframe: f64,
    pub drop_map_edge: f64,
    /// Seconds.
    pub latency: f64,
    /// Half-width of the uniform jitter added to `latency`, seconds.
    pub jitter: f64,
    /// When false, copies between one sender and one recipient keep send order.
    pub reorder: bool,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            drop_vio: 0.0,
            drop_distance: 0.0,
            drop_detection: 0.0,
            drop_keyframe: 0.0,
            drop_map_edge: 0.0,
            latency: 0.020,
            jitter: 0.010,
            reorder: false,
            seed: 0,
        }
    }
}

impl ChannelConfig {
    pub fn lossless() -> Self {
        Self::default()
    }

    pub fn drop_probability(&self, class: MsgClass) -> f64 {
        match class {
            MsgClass::Vio => self.drop_vio,
            MsgClass::Distance => self.drop_distance,
            MsgClass::Detection => self.drop_detection,
            MsgClass::Keyframe => self.drop_keyframe,
            MsgClass::MapEdge => self.drop_map_edge,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        for class in MsgClass::ALL {
            let p = self.drop_probability(class);
            if !(0.0..=1.0).contains(&p) {
                return Err(NetError::InvalidDrop { class, p });
            }
        }
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.latency) || !ok(self.jitter) {
            return Err(NetError::InvalidLatency);
        }
        Ok(())
    }
}

/// A broadcast as seen by one recipient. The payload is shared, never copied.
#[derive(Debug)]
pub struct Envelope<P> {
    pub sender: DroneId,
    pub send_time: f64,
    pub seq: u64,
    pub size_bytes: usize,
    pub payload: Arc<P>,
}

impl<P> Clone for Envelope<P> {
    fn clone(&self) -> Self {
        Envelope {
            sender: self.sender,
            send_time: self.send_time,
            seq: self.seq,
            size_bytes: self.size_bytes,
            payload: Arc::clone(&self.payload),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Delivery<P> {
    pub recipient: DroneId,
    pub delivery_time: f64,
    pub envelope: Envelope<P>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

struct Pending<P> {
    delivery: Delivery<P>,
}

impl<P> Pending<P> {
    fn key(&self) -> (f64, u64, DroneId) {
        (
            self.delivery.delivery_time,
            self.delivery.envelope.seq,
            self.delivery.recipient,
        )
    }
}

impl<P> PartialEq for Pending<P> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<P> Eq for Pending<P> {}

impl<P> PartialOrd for Pending<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so the max-heap pops the earliest delivery.
impl<P> Ord for Pending<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        let (ta, sa, ra) = self.key();
        let (tb, sb, rb) = other.key();
        tb.total_cmp(&ta).then(sb.cmp(&sa)).then(rb.cmp(&ra))
    }
}

#[derive(Serialize)]
struct PacketLogLine {
    t: f64,
    event: &'static str,
    seq: u64,
    sender: DroneId,
    recipient: DroneId,
    class: MsgClass,
}

/// The broadcast medium shared by all drones of a run.
pub struct Fabric<P> {
    cfg: ChannelConfig,
    rng: ChaCha8Rng,
    peers: BTreeSet<DroneId>,
    queue: BinaryHeap<Pending<P>>,
    now: f64,
    next_seq: u64,
    last_scheduled: BTreeMap<(DroneId, DroneId), f64>,
    stats: BTreeMap<MsgClass, ClassStats>,
    packet_log: Option<Vec<u8>>,
}

impl<P: Payload> Fabric<P> {
    pub fn new(cfg: ChannelConfig) -> Result<Self, NetError> {
        cfg.validate()?;
        Ok(Fabric {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            peers: BTreeSet::new(),
            queue: BinaryHeap::new(),
            now: f64::NEG_INFINITY,
            next_seq: 0,
            last_scheduled: BTreeMap::new(),
            stats: BTreeMap::new(),
            packet_log: None,
        })
    }

    /// Records every delivery and drop as a JSON line.
    pub fn enable_packet_log(&mut self) {
        self.packet_log = Some(Vec::new());
    }

    pub fn packet_log(&self) -> Option<&[u8]> {
        self.packet_log.as_deref()
    }

    pub fn register(&mut self, drone: DroneId) {
        self.peers.insert(drone);
    }

    /// Removes a drone. Copies already in flight to it are discarded on delivery.
    pub fn unregister(&mut self, drone: DroneId) {
        self.peers.remove(&drone);
    }

    pub fn peers(&self) -> impl Iterator<Item = DroneId> + '_ {
        self.peers.iter().copied()
    }

    pub fn stats(&self, class: MsgClass) -> ClassStats {
        self.stats.get(&class).copied().unwrap_or_default()
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    fn log(&mut self, t: f64, event: &'static str, env: &Envelope<P>, recipient: DroneId) {
        if let Some(buf) = self.packet_log.as_mut() {
            let line = PacketLogLine {
                t,
                event,
                seq: env.seq,
                sender: env.sender,
                recipient,
                class: env.payload.class(),
            };
            // Writing into a Vec cannot fail.
            let _ = serde_json::to_writer(&mut *buf, &line);
            let _ = buf.write_all(b"\n");
        }
    }

    /// Sends `payload` from `sender` to every other registered drone. Returns
    /// the sequence number assigned to the broadcast.
    pub fn broadcast(&mut self, sender: DroneId, send_time: f64, payload: P) -> Result<u64, NetError> {
        if !self.peers.contains(&sender) {
            return Err(NetError::UnregisteredSender(sender));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let class = payload.class();
        let envelope = Envelope {
            sender,
            send_time,
            seq,
            size_bytes: payload.size_bytes(),
            payload: Arc::new(payload),
        };
        let p_drop = self.cfg.drop_probability(class);
        let recipients: Vec<DroneId> = self.peers.iter().copied().filter(|&r| r != sender).collect();
        for recipient in recipients {
            // Both draws happen for every copy so the random stream does not
            // depend on which copies were dropped.
            let u_drop: f64 = self.rng.random();
            let u_lat: f64 = self.rng.random();
            let stats = self.stats.entry(class).or_default();
            stats.sent += 1;
            if u_drop < p_drop {
                stats.dropped += 1;
                self.log(send_time, "drop", &envelope, recipient);
                continue;
            }
            let latency = (self.cfg.latency + self.cfg.jitter * (2.0 * u_lat - 1.0)).max(0.0);
            let mut delivery_time = send_time + latency;
            if !self.cfg.reorder {
                let last = self.last_scheduled.entry((sender, recipient)).or_insert(f64::NEG_INFINITY);
                delivery_time = delivery_time.max(*last);
                *last = delivery_time;
            }
            self.queue.push(Pending {
                delivery: Delivery {
                    recipient,
                    delivery_time,
                    envelope: envelope.clone(),
                },
            });
        }
        Ok(seq)
    }

    /// Hands out every copy due at or before `until`, grouped by recipient,
    /// each group in delivery order.
    pub fn step(&mut self, until: f64) -> Result<BTreeMap<DroneId, Vec<Delivery<P>>>, NetError> {
        if until < self.now {
            return Err(NetError::TimeRegression {
                now: self.now,
                until,
            });
        }
        self.now = until;
        let mut out: BTreeMap<DroneId, Vec<Delivery<P>>> = BTreeMap::new();
        while self
            .queue
            .peek()
            .is_some_and(|p| p.delivery.delivery_time <= until)
        {
            let Some(Pending { delivery }) = self.queue.pop() else {
                break;
            };
            if !self.peers.contains(&delivery.recipient) {
                continue;
            }
            let class = delivery.envelope.payload.class();
            self.stats.entry(class).or_default().delivered += 1;
            self.log(delivery.delivery_time, "deliver", &delivery.envelope, delivery.recipient);
            out.entry(delivery.recipient).or_default().push(delivery);
        }
        Ok(out)
    }
}
