//! Packet-level discrete-event simulator.
//!
//! Every ordered pair emits a Poisson packet stream at its traffic-matrix rate.
//! Each directed link owns a drop-tail FIFO output queue drained at the link
//! capacity; the buffer limit counts the packet in transmission. Only packets
//! generated inside `[warmup, duration)` enter the statistics, and the run keeps
//! going after `duration` until every such packet is delivered or dropped, so
//! `delivered + dropped == generated` holds exactly.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{pair_count, RoutingScheme, Topology};
use crate::traffic::{pair_of, TrafficMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("inputs disagree: {0}")]
    Mismatch(String),
    #[error("pair {src}->{dst} has positive demand but delivered no packet in the window")]
    NoDeliveries { src: usize, dst: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PacketSize {
    /// Exponentially distributed with unit mean.
    Exponential,
    /// Always one unit.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub duration: f64,
    pub warmup: f64,
    pub buffer_packets: usize,
    pub packet_size: PacketSize,
    pub propagation_delay: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            duration: 16_000.0,
            warmup: 1_000.0,
            buffer_packets: 32,
            packet_size: PacketSize::Exponential,
            propagation_delay: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.warmup >= 0.0 && self.duration > self.warmup && self.duration.is_finite()) {
            return Err(SimError::Config(format!(
                "need duration > warmup >= 0, got duration={} warmup={}",
                self.duration, self.warmup
            )));
        }
        if self.buffer_packets == 0 {
            return Err(SimError::Config("buffer_packets must be >= 1".into()));
        }
        if !(self.propagation_delay >= 0.0 && self.propagation_delay.is_finite()) {
            return Err(SimError::Config("propagation_delay must be >= 0".into()));
        }
        Ok(())
    }

    /// Compact description of the run parameters stored next to every sample.
    pub fn digest(&self, ti: f64) -> String {
        let size = match self.packet_size {
            PacketSize::Exponential => "exp",
            PacketSize::Fixed => "fixed",
        };
        format!(
            "ti={} duration={} warmup={} buffer={} size={} prop={}",
            ti, self.duration, self.warmup, self.buffer_packets, size, self.propagation_delay
        )
    }
}

/// Per-pair measurements over the packets generated in the window.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairStats {
    pub mean_delay: f64,
    /// Variance of the per-packet end-to-end delay.
    pub jitter: f64,
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// Mean over delivered packets of their summed transmission times; a lower
    /// bound on `mean_delay` by construction.
    pub mean_transmission: f64,
}

/// Statistics for every ordered pair, in lexicographic pair order.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowStats {
    pub pairs: Vec<PairStats>,
}

impl FlowStats {
    pub fn mean_delays(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.mean_delay).collect()
    }

    pub fn jitters(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.jitter).collect()
    }

    pub fn dropped(&self) -> Vec<u64> {
        self.pairs.iter().map(|p| p.dropped).collect()
    }
}

#[derive(Debug, Clone, Copy)]
enum EventKind {
    Generate { pair: u32 },
    TxDone { link: u32 },
    Arrive { packet: u32 },
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl Ord for Event {
    // min-heap on (time, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy)]
struct Packet {
    pair: u32,
    hop: u32,
    size: f64,
    birth: f64,
    tx_total: f64,
    counted: bool,
}

#[derive(Debug, Clone, Default)]
struct Accumulator {
    generated: u64,
    delivered: u64,
    dropped: u64,
    mean: f64,
    m2: f64,
    tx_sum: f64,
}

impl Accumulator {
    fn record(&mut self, delay: f64, tx: f64) {
        self.delivered += 1;
        let delta = delay - self.mean;
        self.mean += delta / self.delivered as f64;
        self.m2 += delta * (delay - self.mean);
        self.tx_sum += tx;
    }
}

struct Engine<'a> {
    config: &'a SimConfig,
    routes: Vec<&'a [usize]>,
    service_rate: Vec<f64>,
    queues: Vec<VecDeque<u32>>,
    packets: Vec<Packet>,
    free: Vec<u32>,
    events: BinaryHeap<Event>,
    seq: u64,
    stats: Vec<Accumulator>,
}

impl<'a> Engine<'a> {
    fn new(topo: &'a Topology, routing: &'a RoutingScheme, config: &'a SimConfig) -> Self {
        Engine {
            config,
            routes: routing.paths().iter().map(|p| p.links.as_slice()).collect(),
            service_rate: topo.links().iter().map(|l| l.capacity).collect(),
            queues: vec![VecDeque::new(); topo.link_count()],
            packets: Vec::new(),
            free: Vec::new(),
            events: BinaryHeap::new(),
            seq: 0,
            stats: vec![Accumulator::default(); routing.len()],
        }
    }

    fn schedule(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.events.push(Event {
            time,
            seq: self.seq,
            kind,
        });
    }

    fn spawn(&mut self, pair: u32, time: f64, size: f64) {
        let counted = time >= self.config.warmup && time < self.config.duration;
        if counted {
            self.stats[pair as usize].generated += 1;
        }
        let packet = Packet {
            pair,
            hop: 0,
            size,
            birth: time,
            tx_total: 0.0,
            counted,
        };
        let id = match self.free.pop() {
            Some(id) => {
                self.packets[id as usize] = packet;
                id
            }
            None => {
                self.packets.push(packet);
                (self.packets.len() - 1) as u32
            }
        };
        self.enqueue(id, time);
    }

    fn enqueue(&mut self, id: u32, time: f64) {
        let p = self.packets[id as usize];
        let link = self.routes[p.pair as usize][p.hop as usize];
        let queue = &mut self.queues[link];
        if queue.len() >= self.config.buffer_packets {
            if p.counted {
                self.stats[p.pair as usize].dropped += 1;
            }
            self.free.push(id);
            return;
        }
        queue.push_back(id);
        if queue.len() == 1 {
            self.start_transmission(link, time);
        }
    }

    fn start_transmission(&mut self, link: usize, time: f64) {
        let head = self.queues[link][0] as usize;
        let tx = self.packets[head].size / self.service_rate[link];
        self.packets[head].tx_total += tx;
        self.schedule(time + tx, EventKind::TxDone { link: link as u32 });
    }

    fn transmitted(&mut self, link: usize, time: f64) {
        let id = self.queues[link].pop_front().expect("busy link has a head packet");
        if !self.queues[link].is_empty() {
            self.start_transmission(link, time);
        }
        let arrival = time + self.config.propagation_delay;
        let p = &mut self.packets[id as usize];
        p.hop += 1;
        if p.hop as usize == self.routes[p.pair as usize].len() {
            if p.counted {
                let (pair, delay, tx) = (p.pair as usize, arrival - p.birth, p.tx_total);
                self.stats[pair].record(delay, tx);
            }
            self.free.push(id);
        } else if self.config.propagation_delay > 0.0 {
            self.schedule(arrival, EventKind::Arrive { packet: id });
        } else {
            self.enqueue(id, time);
        }
    }

    fn finish(self, demand_positive: impl Fn(usize) -> bool, nodes: usize) -> Result<FlowStats, SimError> {
        let mut pairs = Vec::with_capacity(self.stats.len());
        for (i, acc) in self.stats.into_iter().enumerate() {
            if acc.delivered == 0 && demand_positive(i) {
                let (src, dst) = pair_of(nodes, i);
                return Err(SimError::NoDeliveries { src, dst });
            }
            let n = acc.delivered.max(1) as f64;
            pairs.push(PairStats {
                mean_delay: acc.mean,
                jitter: acc.m2 / n,
                generated: acc.generated,
                delivered: acc.delivered,
                dropped: acc.dropped,
                mean_transmission: acc.tx_sum / n,
            });
        }
        Ok(FlowStats { pairs })
    }
}

fn check_inputs(topo: &Topology, routing: &RoutingScheme, config: &SimConfig) -> Result<(), SimError> {
    config.validate()?;
    if routing.len() != pair_count(topo.node_count()) {
        return Err(SimError::Mismatch(format!(
            "routing has {} paths for {} nodes",
            routing.len(),
            topo.node_count()
        )));
    }
    routing.validate(topo).map_err(|e| SimError::Mismatch(e.to_string()))
}

/// Runs the simulation for one (topology, routing, traffic matrix) instance.
pub fn simulate(
    topo: &Topology,
    routing: &RoutingScheme,
    tm: &TrafficMatrix,
    config: &SimConfig,
    seed: u64,
) -> Result<FlowStats, SimError> {
    check_inputs(topo, routing, config)?;
    if tm.n() != topo.node_count() {
        return Err(SimError::Mismatch(format!(
            "traffic matrix is {}x{} but topology has {} nodes",
            tm.n(),
            tm.n(),
            topo.node_count()
        )));
    }
    let rates = tm.pair_demands();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut engine = Engine::new(topo, routing, config);
    let draw_size = |rng: &mut ChaCha8Rng| match config.packet_size {
        PacketSize::Exponential => rng.sample::<f64, _>(Exp1),
        PacketSize::Fixed => 1.0,
    };
    for (pair, &rate) in rates.iter().enumerate() {
        if rate > 0.0 {
            let first = rng.sample::<f64, _>(Exp1) / rate;
            engine.schedule(first, EventKind::Generate { pair: pair as u32 });
        }
    }
    while let Some(event) = engine.events.pop() {
        match event.kind {
            EventKind::Generate { pair } => {
                if event.time >= config.duration {
                    continue;
                }
                let size = draw_size(&mut rng);
                engine.spawn(pair, event.time, size);
                let next = event.time + rng.sample::<f64, _>(Exp1) / rates[pair as usize];
                engine.schedule(next, EventKind::Generate { pair });
            }
            EventKind::TxDone { link } => engine.transmitted(link as usize, event.time),
            EventKind::Arrive { packet } => engine.enqueue(packet, event.time),
        }
    }
    engine.finish(|i| rates[i] > 0.0, topo.node_count())
}

/// A packet placed into the network at a given time, for deterministic traces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InjectedPacket {
    pub time: f64,
    pub pair: usize,
    pub size: f64,
}

/// Replays an explicit packet trace instead of Poisson sources.
pub fn simulate_injected(
    topo: &Topology,
    routing: &RoutingScheme,
    config: &SimConfig,
    trace: &[InjectedPacket],
) -> Result<FlowStats, SimError> {
    check_inputs(topo, routing, config)?;
    let mut engine = Engine::new(topo, routing, config);
    let mut trace = trace.to_vec();
    trace.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut next = trace.iter().peekable();
    loop {
        let pending = engine.events.peek().map(|e| e.time);
        match (next.peek(), pending) {
            (Some(p), t) if t.is_none_or(|t| p.time <= t) => {
                engine.spawn(p.pair as u32, p.time, p.size);
                next.next();
            }
            (_, Some(_)) => {
                let event = engine.events.pop().expect("peeked");
                match event.kind {
                    EventKind::TxDone { link } => engine.transmitted(link as usize, event.time),
                    EventKind::Arrive { packet } => engine.enqueue(packet, event.time),
                    EventKind::Generate { .. } => unreachable!("traces schedule no sources"),
                }
            }
            (None, None) => break,
            (Some(_), None) => unreachable!(),
        }
    }
    engine.finish(|_| false, topo.node_count())
}
