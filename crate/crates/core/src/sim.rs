//! The simulated world: vehicles contending for one shared channel toward
//! the sink, under plain EDCA or FROG fragmentation.
//!
//! Every vehicle runs one access function per priority class. Handlers
//! react to an event, then `settle` arms access timers for every contender
//! that may count down on the now-idle medium.

use std::collections::HashMap;

use crate::channel::{
    Channel, ChannelEvent, ChannelStats, Frame, FrameBody, FrameKind, NodeId, TraceEntry, TxId,
};
use crate::config::{Protocol, ScenarioConfig};
use crate::edca::{
    access_time, draw_backoff, on_collision, slots_elapsed, CollisionOutcome, EdcaClassParams,
    EdcaQueueState, PriorityClass,
};
use crate::engine::{Engine, EventHandle};
use crate::error::SimError;
use crate::frog::{ack_p_frag_route, fragment_frame, FragmentPlan, FrogSender, ReassemblyBuffer};
use crate::metrics::{summarize, DropReason, Metrics, PacketRecord, RunSummary, RunTotals};
use crate::rng::{Purpose, RandomStream};
use crate::time::SimTime;
use crate::traffic::{build_data_frame, FrameHeader, TrafficSource, HEADER_BYTES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    Arrival {
        node: u16,
        class: PriorityClass,
        scripted: bool,
    },
    Access {
        node: u16,
        class: PriorityClass,
    },
    TxEnd(TxId),
    Timeout {
        node: u16,
        class: PriorityClass,
    },
    PauseEnd {
        node: u16,
    },
    Noise {
        bytes: u32,
    },
}

/// Source address of injected interference; no vehicle or sink listens to it.
pub const NOISE: NodeId = NodeId(u16::MAX);

/// Where one access function stands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcPhase {
    Idle,
    Contend,
    AwaitCts,
    SendData,
    AwaitAck,
    SendFragment,
    /// Between two fragments of a burst; any carrier suspends the burst.
    Paused,
    AwaitSack,
}

impl AcPhase {
    fn in_exchange(self) -> bool {
        matches!(
            self,
            AcPhase::AwaitCts
                | AcPhase::SendData
                | AcPhase::AwaitAck
                | AcPhase::SendFragment
                | AcPhase::AwaitSack
        )
    }
}

struct Ac {
    class: PriorityClass,
    params: EdcaClassParams,
    state: EdcaQueueState,
    phase: AcPhase,
    /// Must count down a backoff before transmitting.
    deferred: bool,
    count_from: SimTime,
    timer: Option<EventHandle>,
    response: Option<EventHandle>,
    rng: RandomStream,
}

impl Ac {
    fn new(class: PriorityClass, params: EdcaClassParams, node: NodeId, seed: u64) -> Ac {
        let purpose = match class {
            PriorityClass::Urgent => Purpose::UrgentBackoff,
            PriorityClass::Normal => Purpose::NormalBackoff,
        };
        Ac {
            class,
            params,
            state: EdcaQueueState::new(&params),
            phase: AcPhase::Idle,
            deferred: false,
            count_from: SimTime::ZERO,
            timer: None,
            response: None,
            rng: RandomStream::new(seed, node.0 as u32, purpose),
        }
    }
}

struct Node {
    id: NodeId,
    acs: [Ac; 2],
    burst: Option<FrogSender>,
    pause: Option<EventHandle>,
}

impl Node {
    fn in_exchange(&self) -> bool {
        self.acs.iter().any(|a| a.phase.in_exchange())
    }

    fn ac(&mut self, class: PriorityClass) -> &mut Ac {
        &mut self.acs[class.index()]
    }

    fn find_phase(&self, phase: AcPhase) -> Option<PriorityClass> {
        self.acs.iter().find(|a| a.phase == phase).map(|a| a.class)
    }
}

#[derive(Default)]
struct Sink {
    buffers: HashMap<NodeId, ReassemblyBuffer>,
    /// Sender whose fragment burst is in progress.
    open_burst: Option<NodeId>,
    /// Interrupted sender owed an ACK_P_FRAG after the current urgent exchange.
    pending_apf: Option<NodeId>,
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub records: Vec<PacketRecord>,
    pub channel: ChannelStats,
    pub trace: Option<Vec<TraceEntry>>,
    /// Transmissions started while the starting node sensed carrier.
    pub sense_violations: u64,
    /// Packets whose payload at the sink differed from what was sent.
    pub payload_mismatches: u64,
}

pub struct Simulation {
    engine: Engine<Event>,
    world: World,
}

struct World {
    cfg: ScenarioConfig,
    /// Present when normal packets travel as multi-fragment bursts.
    plan: Option<FragmentPlan>,
    cts_timeout: SimTime,
    ack_timeout: SimTime,
    sack_timeout: SimTime,
    channel: Channel,
    nodes: Vec<Node>,
    sources: Vec<TrafficSource>,
    sink: Sink,
    metrics: Metrics,
    originals: Vec<Vec<u8>>,
    /// Record index of each packet, per node and class, by sequence number.
    by_seq: Vec<[Vec<usize>; 2]>,
    failures: [u64; 2],
    suspensions: u64,
    sense_violations: u64,
    payload_mismatches: u64,
    error: Option<SimError>,
}

impl Simulation {
    /// A run with the configured traffic generators on every vehicle.
    pub fn new(cfg: &ScenarioConfig, seed: u64) -> Result<Self, SimError> {
        let mut sim = Self::scripted(cfg, seed)?;
        for i in 0..sim.world.nodes.len() {
            let id = sim.world.nodes[i].id;
            let gen = *sim.world.sources[i].config();
            if gen.generates(id, PriorityClass::Urgent) {
                let at = sim.world.sources[i].urgent_gap();
                sim.schedule_arrival(at, id, PriorityClass::Urgent, false);
            }
            if gen.generates(id, PriorityClass::Normal) {
                let at = sim.world.sources[i].normal_phase();
                sim.schedule_arrival(at, id, PriorityClass::Normal, false);
            }
        }
        Ok(sim)
    }

    /// A run with no generators; add packets with [`Simulation::inject`].
    pub fn scripted(cfg: &ScenarioConfig, seed: u64) -> Result<Self, SimError> {
        let plan = FragmentPlan::new(cfg.fragment_payload_size)?;
        let plan = (cfg.protocol == Protocol::Frog && plan.count() > 1).then_some(plan);
        assert!(
            (1..=255).contains(&cfg.node_count),
            "node_count must be in 1..=255"
        );
        let mut channel = Channel::new(cfg.byte_time);
        channel.subscribe_channel_events(NodeId::SINK);
        let mut nodes = Vec::new();
        let mut sources = Vec::new();
        for n in 1..=cfg.node_count {
            let id = NodeId(n);
            channel.subscribe_channel_events(id);
            nodes.push(Node {
                id,
                acs: [
                    Ac::new(PriorityClass::Urgent, cfg.urgent, id, seed),
                    Ac::new(PriorityClass::Normal, cfg.normal, id, seed),
                ],
                burst: None,
                pause: None,
            });
            sources.push(TrafficSource::new(id, cfg.generator(), seed));
        }
        let sizes = cfg.frame_sizes;
        let bt = cfg.byte_time;
        let world = World {
            plan,
            cts_timeout: bt.mul(sizes.cts as u64) + cfg.response_guard,
            ack_timeout: bt.mul(sizes.ack as u64) + cfg.response_guard,
            sack_timeout: bt.mul(sizes.sack.max(sizes.nack) as u64) + cfg.response_guard,
            channel,
            by_seq: (0..nodes.len()).map(|_| [Vec::new(), Vec::new()]).collect(),
            nodes,
            sources,
            sink: Sink::default(),
            metrics: Metrics::new(),
            originals: Vec::new(),
            failures: [0; 2],
            suspensions: 0,
            sense_violations: 0,
            payload_mismatches: 0,
            error: None,
            cfg: cfg.clone(),
        };
        Ok(Simulation {
            engine: Engine::new(),
            world,
        })
    }

    /// Record every transmission for later inspection.
    pub fn enable_trace(&mut self) {
        self.world.channel.enable_trace();
    }

    /// Generate one packet of `class` at `node` at time `at`.
    pub fn inject(&mut self, at: SimTime, node: NodeId, class: PriorityClass) {
        assert!(
            node.0 >= 1 && node.0 <= self.world.cfg.node_count,
            "no such vehicle {node:?}"
        );
        self.schedule_arrival(at, node, class, true);
    }

    /// Put `bytes` byte times of interference on the channel at `at`, as an
    /// out-of-range transmitter would.
    pub fn inject_noise(&mut self, at: SimTime, bytes: u32) {
        assert!(bytes >= 1, "noise needs a length");
        self.engine.schedule(at, Event::Noise { bytes });
    }

    fn schedule_arrival(&mut self, at: SimTime, node: NodeId, class: PriorityClass, scripted: bool) {
        self.engine.schedule(
            at,
            Event::Arrival {
                node: node.0,
                class,
                scripted,
            },
        );
    }

    pub fn now(&self) -> SimTime {
        self.engine.now()
    }

    /// Process events up to and including `end`.
    pub fn run_until(&mut self, end: SimTime) {
        let world = &mut self.world;
        self.engine
            .run_until(end, |eng, now, ev| world.handle(eng, now, ev));
    }

    /// Run to the configured duration and summarize.
    pub fn run(mut self) -> Result<RunOutput, SimError> {
        let end = self.world.cfg.duration;
        self.run_until(end);
        self.finish()
    }

    /// Summarize at the current clock.
    pub fn finish(self) -> Result<RunOutput, SimError> {
        let now = self.engine.now();
        let mut w = self.world;
        if let Some(e) = w.error.take() {
            return Err(e);
        }
        let mut queued = [0u64; 2];
        for node in &w.nodes {
            for ac in &node.acs {
                queued[ac.class.index()] += ac
                    .state
                    .queue
                    .iter()
                    .filter(|p| !w.metrics.record(p.record).is_finalized())
                    .count() as u64;
            }
        }
        let channel = w.channel.stats();
        let totals = RunTotals {
            queued,
            collisions: w.failures,
            channel_collisions: channel.collision_count,
            busy_time: w.channel.busy_time_until(now),
            suspensions: w.suspensions,
        };
        let summary = summarize(w.metrics.records(), now, &totals)?;
        Ok(RunOutput {
            summary,
            records: w.metrics.records().to_vec(),
            channel,
            trace: w.channel.take_trace(),
            sense_violations: w.sense_violations,
            payload_mismatches: w.payload_mismatches,
        })
    }
}

impl World {
    fn node(&mut self, n: u16) -> &mut Node {
        &mut self.nodes[n as usize - 1]
    }

    fn handle(&mut self, eng: &mut Engine<Event>, now: SimTime, ev: Event) {
        let res = match ev {
            Event::Arrival {
                node,
                class,
                scripted,
            } => self.on_arrival(eng, now, node, class, scripted),
            Event::Access { node, class } => self.on_access(eng, now, node, class),
            Event::TxEnd(id) => self.on_tx_end(eng, now, id),
            Event::Timeout { node, class } => self.on_timeout(eng, now, node, class),
            Event::Noise { bytes } => {
                let frame = Frame::control(FrameKind::Data, bytes, NOISE, NOISE, FrameBody::Empty);
                self.transmit(eng, now, frame);
                Ok(())
            }
            Event::PauseEnd { node } => {
                let nd = self.node(node);
                nd.pause = None;
                if nd.ac(PriorityClass::Normal).phase == AcPhase::Paused {
                    self.send_fragment(eng, now, node)
                } else {
                    Ok(())
                }
            }
        };
        if let Err(e) = res {
            self.error.get_or_insert(e);
        }
        self.settle(eng, now);
    }

    fn on_arrival(
        &mut self,
        eng: &mut Engine<Event>,
        now: SimTime,
        n: u16,
        class: PriorityClass,
        scripted: bool,
    ) -> Result<(), SimError> {
        let i = n as usize - 1;
        if !scripted {
            let next = match class {
                PriorityClass::Urgent => now + self.sources[i].urgent_gap(),
                PriorityClass::Normal => now + self.cfg.normal_period,
            };
            eng.schedule(
                next,
                Event::Arrival {
                    node: n,
                    class,
                    scripted,
                },
            );
        }
        let record = self.metrics.records().len();
        let packet = self.sources[i].make_packet(class, now, record);
        self.metrics.register(packet.id, now);
        self.originals.push(packet.payload.clone());
        self.by_seq[i][class.index()].push(record);
        let cap = self.cfg.queue_capacity;
        let ac = self.nodes[i].ac(class);
        if ac.state.queue.len() >= cap {
            return self.metrics.record_drop(record, DropReason::Queue);
        }
        ac.state.queue.push_back(packet);
        if ac.phase == AcPhase::Idle {
            let idle = self.medium_idle_for(n, class, now);
            let ac = self.node(n).ac(class);
            ac.phase = AcPhase::Contend;
            ac.deferred = !idle;
            ac.state.backoff_remaining = None;
        }
        Ok(())
    }

    fn medium_idle_for(&self, n: u16, class: PriorityClass, now: SimTime) -> bool {
        let node = &self.nodes[n as usize - 1];
        let blocked_by_burst = class == PriorityClass::Normal
            && self.channel.reservation().is_some_and(|o| o != node.id);
        !self.channel.is_busy(now) && !blocked_by_burst && !node.in_exchange()
    }

    /// Arm access timers for every contender allowed to count down now.
    fn settle(&mut self, eng: &mut Engine<Event>, now: SimTime) {
        if self.channel.is_busy(now) {
            return;
        }
        let reserved = self.channel.reservation();
        let frog = self.cfg.protocol == Protocol::Frog;
        let slot = self.cfg.slot_time;
        for node in self.nodes.iter_mut() {
            if node.in_exchange() {
                continue;
            }
            let id = node.id;
            for ac in node.acs.iter_mut() {
                if ac.phase != AcPhase::Contend || ac.timer.is_some() {
                    continue;
                }
                let normal = ac.class == PriorityClass::Normal;
                if normal && reserved.is_some_and(|o| o != id) {
                    continue;
                }
                // urgent traffic may take a burst pause without backoff
                let exempt = frog && !normal && ac.state.retry_count == 0 && reserved.is_some();
                let slots = match ac.state.backoff_remaining {
                    Some(b) => b,
                    None if !ac.deferred || exempt => 0,
                    None => {
                        let b = draw_backoff(&mut ac.rng, ac.state.cw_current);
                        ac.state.backoff_remaining = Some(b);
                        b
                    }
                };
                ac.count_from = now;
                let at = access_time(now, ac.params.aifs, slots, slot);
                ac.timer = Some(eng.schedule(
                    at,
                    Event::Access {
                        node: id.0,
                        class: ac.class,
                    },
                ));
            }
        }
    }

    /// Put a frame on the air and react to the carrier it raises.
    fn transmit(&mut self, eng: &mut Engine<Event>, now: SimTime, frame: Frame) {
        let begun = self.channel.begin_transmission(frame, now);
        eng.schedule(begun.end, Event::TxEnd(begun.id));
        let slot = self.cfg.slot_time;
        for node in self.nodes.iter_mut() {
            for ac in node.acs.iter_mut() {
                let Some(h) = ac.timer else { continue };
                if h.fire_time() <= now {
                    // fires this microsecond and cannot sense the new carrier
                    continue;
                }
                eng.cancel(&h);
                ac.timer = None;
                let used = slots_elapsed(ac.count_from, ac.params.aifs, slot, now);
                match ac.state.backoff_remaining.as_mut() {
                    Some(b) => *b -= used.min(*b),
                    None => ac.deferred = true,
                }
            }
            if node.acs[PriorityClass::Normal.index()].phase == AcPhase::Paused {
                if let Some(h) = node.pause.take() {
                    eng.cancel(&h);
                }
                if let Some(b) = node.burst.as_mut() {
                    b.suspend();
                }
                self.channel.release(node.id);
                let ac = node.ac(PriorityClass::Normal);
                ac.phase = AcPhase::Contend;
                ac.deferred = true;
                ac.state.backoff_remaining = None;
                self.suspensions += 1;
            }
        }
    }

    fn on_access(
        &mut self,
        eng: &mut Engine<Event>,
        now: SimTime,
        n: u16,
        class: PriorityClass,
    ) -> Result<(), SimError> {
        let node = self.node(n);
        node.ac(class).timer = None;
        if node.ac(class).phase != AcPhase::Contend {
            return Ok(());
        }
        if node.in_exchange() {
            // the node's burst resumed this same microsecond; wait for it
            node.ac(class).deferred = true;
            return Ok(());
        }
        let other = match class {
            PriorityClass::Urgent => PriorityClass::Normal,
            PriorityClass::Normal => PriorityClass::Urgent,
        };
        let winner = match node.ac(other).timer {
            Some(h) if h.fire_time() == now => {
                // both queues won the same slot: urgent goes, normal collides
                eng.cancel(&h);
                node.ac(other).timer = None;
                self.fail(eng, now, n, PriorityClass::Normal)?;
                PriorityClass::Urgent
            }
            _ => class,
        };
        if self.channel.carrier_sensed(now) {
            self.sense_violations += 1;
        }
        self.send_rts(eng, now, n, winner);
        Ok(())
    }

    fn send_rts(&mut self, eng: &mut Engine<Event>, now: SimTime, n: u16, class: PriorityClass) {
        let fragmented = class == PriorityClass::Normal && self.plan.is_some();
        let size = self.cfg.frame_sizes.rts;
        let node = &mut self.nodes[n as usize - 1];
        let id = node.id;
        let ac = node.ac(class);
        let record = ac.state.queue.front().expect("contending with a packet").record;
        ac.phase = AcPhase::AwaitCts;
        ac.state.backoff_remaining = None;
        ac.deferred = false;
        self.metrics.note_rts(record, now);
        let frame = Frame::control(
            FrameKind::Rts,
            size,
            id,
            NodeId::SINK,
            FrameBody::Request { class, fragmented },
        );
        self.transmit(eng, now, frame);
    }

    fn send_fragment(
        &mut self,
        eng: &mut Engine<Event>,
        now: SimTime,
        n: u16,
    ) -> Result<(), SimError> {
        let plan = self.plan.expect("fragment bursts need a plan");
        let node = &mut self.nodes[n as usize - 1];
        let (index, last) = node
            .burst
            .as_mut()
            .and_then(|b| b.next_fragment())
            .ok_or(SimError::FragmentMismatch("no fragment left to send"))?;
        let ac = node.ac(PriorityClass::Normal);
        let head = ac.state.queue.front().expect("burst without a packet");
        let frame = fragment_frame(head, &plan, index, last, NodeId::SINK);
        ac.phase = AcPhase::SendFragment;
        self.transmit(eng, now, frame);
        Ok(())
    }

    fn arm_response(
        &mut self,
        eng: &mut Engine<Event>,
        n: u16,
        class: PriorityClass,
        at: SimTime,
        phase: AcPhase,
    ) {
        let ac = self.node(n).ac(class);
        ac.phase = phase;
        ac.response = Some(eng.schedule(at, Event::Timeout { node: n, class }));
    }

    fn on_tx_end(&mut self, eng: &mut Engine<Event>, now: SimTime, id: TxId) -> Result<(), SimError> {
        let ended = self.channel.end_transmission(id, now);
        let frame = &ended.record.frame;
        if frame.source == NodeId::SINK {
            if frame.kind == FrameKind::Ack {
                self.send_pending_apf(eng, now);
            }
        } else if frame.source != NOISE {
            self.own_frame_ended(eng, now, frame.source.0, frame.kind);
        }
        for notice in ended.notices {
            if let ChannelEvent::FrameReceived(f) = notice.event {
                if notice.node == NodeId::SINK {
                    self.sink_receive(eng, now, f)?;
                } else {
                    self.node_receive(eng, now, notice.node.0, f)?;
                }
            }
        }
        Ok(())
    }

    fn own_frame_ended(&mut self, eng: &mut Engine<Event>, now: SimTime, n: u16, kind: FrameKind) {
        match kind {
            FrameKind::Rts => {
                if let Some(c) = self.node(n).find_phase(AcPhase::AwaitCts) {
                    let at = now + self.cts_timeout;
                    self.arm_response(eng, n, c, at, AcPhase::AwaitCts);
                }
            }
            FrameKind::Data => {
                if let Some(c) = self.node(n).find_phase(AcPhase::SendData) {
                    let at = now + self.ack_timeout;
                    self.arm_response(eng, n, c, at, AcPhase::AwaitAck);
                }
            }
            FrameKind::Fragment => {
                let t_int = self.cfg.t_int;
                let sack_at = now + self.sack_timeout;
                let node = self.node(n);
                if node.ac(PriorityClass::Normal).phase != AcPhase::SendFragment {
                    return;
                }
                if node.burst.as_ref().is_some_and(|b| b.has_more_in_round()) {
                    node.ac(PriorityClass::Normal).phase = AcPhase::Paused;
                    node.pause = Some(eng.schedule(now + t_int, Event::PauseEnd { node: n }));
                } else {
                    self.arm_response(eng, n, PriorityClass::Normal, sack_at, AcPhase::AwaitSack);
                }
            }
            _ => {}
        }
    }

    fn sink_send(
        &mut self,
        eng: &mut Engine<Event>,
        now: SimTime,
        kind: FrameKind,
        to: NodeId,
        body: FrameBody,
    ) {
        let size = self
            .cfg
            .frame_sizes
            .of(kind)
            .expect("sink sends control frames");
        let frame = Frame::control(kind, size, NodeId::SINK, to, body);
        self.transmit(eng, now, frame);
    }

    fn send_pending_apf(&mut self, eng: &mut Engine<Event>, now: SimTime) {
        let Some(sender) = self.sink.pending_apf.take() else {
            return;
        };
        let route = ack_p_frag_route(sender);
        let body = match self.sink.buffers.get(&sender) {
            Some(b) => FrameBody::Bitmap {
                seq: b.seq(),
                bits: b.received_bits(),
            },
            None => return,
        };
        debug_assert_eq!(route.from, NodeId::SINK);
        self.sink_send(eng, now, FrameKind::AckPFrag, route.to, body);
    }

    fn sink_receive(&mut self, eng: &mut Engine<Event>, now: SimTime, frame: Frame) -> Result<(), SimError> {
        let src = frame.source;
        match frame.kind {
            FrameKind::Rts => {
                if let FrameBody::Request { class, fragmented } = frame.body {
                    if class == PriorityClass::Urgent {
                        if let Some(s) = self.sink.open_burst.take() {
                            self.sink.pending_apf = Some(s);
                        }
                    } else if fragmented {
                        self.sink.open_burst = Some(src);
                        if self.sink.pending_apf == Some(src) {
                            self.sink.pending_apf = None;
                        }
                    }
                }
                self.sink_send(eng, now, FrameKind::Cts, src, FrameBody::Empty);
            }
            FrameKind::Data => {
                let FrameBody::Bytes(bytes) = &frame.body else {
                    return Err(SimError::MalformedHeader);
                };
                let h = FrameHeader::decode(bytes)?;
                let class = if h.urgent {
                    PriorityClass::Urgent
                } else {
                    PriorityClass::Normal
                };
                self.deliver(src, class, h.seq, &bytes[HEADER_BYTES..], now)?;
                self.sink_send(eng, now, FrameKind::Ack, src, FrameBody::Empty);
            }
            FrameKind::Fragment => {
                let buf = self
                    .sink
                    .buffers
                    .entry(src)
                    .or_insert_with(|| ReassemblyBuffer::new(src));
                let acc = buf.accept(&frame)?;
                let seq = buf.seq();
                let (complete, received, missing) =
                    (buf.is_complete(), buf.received_bits(), buf.missing_bits());
                if acc.completed {
                    let payload = buf.payload().expect("complete").to_vec();
                    self.deliver(src, PriorityClass::Normal, seq, &payload, now)?;
                }
                if acc.last_in_round {
                    if complete {
                        if self.sink.open_burst == Some(src) {
                            self.sink.open_burst = None;
                        }
                        let body = FrameBody::Bitmap { seq, bits: received };
                        self.sink_send(eng, now, FrameKind::Sack, src, body);
                    } else {
                        let body = FrameBody::Bitmap { seq, bits: missing };
                        self.sink_send(eng, now, FrameKind::Nack, src, body);
                    }
                } else {
                    self.sink.open_burst = Some(src);
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// The sink holds a whole packet: check it against what was sent and
    /// record the delivery once.
    fn deliver(
        &mut self,
        src: NodeId,
        class: PriorityClass,
        seq: u16,
        payload: &[u8],
        now: SimTime,
    ) -> Result<(), SimError> {
        let list = &self.by_seq[src.0 as usize - 1][class.index()];
        let len = list.len();
        let s = seq as usize;
        if s >= len {
            return Err(SimError::FragmentMismatch("unknown sequence number"));
        }
        // newest packet whose sequence number matches in its low 16 bits
        let full = s + ((len - 1 - s) >> 16 << 16);
        let record = list[full];
        if self.originals[record] != payload {
            self.payload_mismatches += 1;
            return Ok(());
        }
        if !self.metrics.record(record).is_finalized() {
            self.metrics.record_delivery(record, now)?;
        }
        Ok(())
    }

    fn node_receive(
        &mut self,
        eng: &mut Engine<Event>,
        now: SimTime,
        n: u16,
        frame: Frame,
    ) -> Result<(), SimError> {
        match frame.kind {
            FrameKind::Cts => {
                let Some(class) = self.node(n).find_phase(AcPhase::AwaitCts) else {
                    return Ok(());
                };
                self.cancel_response(eng, n, class);
                match (class, self.plan) {
                    (PriorityClass::Normal, Some(plan)) => {
                        let node = self.node(n);
                        node.burst
                            .get_or_insert_with(|| FrogSender::new(plan))
                            .resume();
                        let id = node.id;
                        self.channel.reserve(id);
                        self.send_fragment(eng, now, n)?;
                    }
                    _ => {
                        let node = self.node(n);
                        let ac = node.ac(class);
                        let head = ac.state.queue.front().expect("exchange without a packet");
                        let data = build_data_frame(head, NodeId::SINK)?;
                        ac.phase = AcPhase::SendData;
                        self.transmit(eng, now, data);
                    }
                }
            }
            FrameKind::Ack => {
                if let Some(class) = self.node(n).find_phase(AcPhase::AwaitAck) {
                    self.cancel_response(eng, n, class);
                    self.finish_head(eng, n, class, None)?;
                }
            }
            FrameKind::Sack => {
                if self.node(n).ac(PriorityClass::Normal).phase == AcPhase::AwaitSack {
                    self.cancel_response(eng, n, PriorityClass::Normal);
                    self.finish_head(eng, n, PriorityClass::Normal, None)?;
                }
            }
            FrameKind::Nack => {
                if self.node(n).ac(PriorityClass::Normal).phase != AcPhase::AwaitSack {
                    return Ok(());
                }
                self.cancel_response(eng, n, PriorityClass::Normal);
                let FrameBody::Bitmap { bits, .. } = frame.body else {
                    return Err(SimError::MalformedHeader);
                };
                if self.fail(eng, now, n, PriorityClass::Normal)? == CollisionOutcome::Retry {
                    let node = self.node(n);
                    if let Some(b) = node.burst.as_mut() {
                        b.apply_nack(bits);
                    }
                    self.send_fragment(eng, now, n)?;
                }
            }
            FrameKind::AckPFrag => {
                if let FrameBody::Bitmap { seq, bits } = frame.body {
                    let node = self.node(n);
                    let head_seq = node
                        .ac(PriorityClass::Normal)
                        .state
                        .queue
                        .front()
                        .map(|p| p.id.seq as u16);
                    if head_seq == Some(seq) {
                        if let Some(b) = node.burst.as_mut() {
                            b.apply_ack_p_frag(bits);
                        }
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn cancel_response(&mut self, eng: &mut Engine<Event>, n: u16, class: PriorityClass) {
        if let Some(h) = self.node(n).ac(class).response.take() {
            eng.cancel(&h);
        }
    }

    fn on_timeout(
        &mut self,
        eng: &mut Engine<Event>,
        now: SimTime,
        n: u16,
        class: PriorityClass,
    ) -> Result<(), SimError> {
        let node = self.node(n);
        node.ac(class).response = None;
        match node.ac(class).phase {
            AcPhase::AwaitCts | AcPhase::AwaitAck => {
                self.fail(eng, now, n, class)?;
            }
            AcPhase::AwaitSack => {
                if let Some(b) = node.burst.as_mut() {
                    b.on_response_timeout();
                }
                let id = node.id;
                self.channel.release(id);
                self.fail(eng, now, n, class)?;
            }
            _ => {}
        }
        Ok(())
    }

    /// A failed attempt: widen the window and re-contend, or drop the packet
    /// past the retry limit.
    fn fail(
        &mut self,
        eng: &mut Engine<Event>,
        _now: SimTime,
        n: u16,
        class: PriorityClass,
    ) -> Result<CollisionOutcome, SimError> {
        self.failures[class.index()] += 1;
        let limit = self.cfg.retry_limit;
        let ac = self.node(n).ac(class);
        let params = ac.params;
        let outcome = on_collision(&mut ac.state, &params, limit);
        match outcome {
            CollisionOutcome::Retry => {
                ac.phase = AcPhase::Contend;
                ac.deferred = true;
            }
            CollisionOutcome::Drop => self.finish_head(eng, n, class, Some(DropReason::Retry))?,
        }
        Ok(outcome)
    }

    /// Retire the head-of-line packet, delivered or dropped, and move on.
    fn finish_head(
        &mut self,
        eng: &mut Engine<Event>,
        n: u16,
        class: PriorityClass,
        drop: Option<DropReason>,
    ) -> Result<(), SimError> {
        let node = self.node(n);
        let id = node.id;
        let ac = node.ac(class);
        let params = ac.params;
        let packet = ac.state.queue.pop_front().expect("finishing an empty queue");
        ac.state.reset(&params);
        // the next packet contends with a fresh backoff
        if ac.state.queue.is_empty() {
            ac.phase = AcPhase::Idle;
            ac.deferred = false;
        } else {
            ac.phase = AcPhase::Contend;
            ac.deferred = true;
        }
        if class == PriorityClass::Normal {
            node.burst = None;
            if let Some(h) = node.pause.take() {
                eng.cancel(&h);
            }
            self.channel.release(id);
        }
        if let Some(reason) = drop {
            if !self.metrics.record(packet.record).is_finalized() {
                self.metrics.record_drop(packet.record, reason)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(protocol: Protocol) -> ScenarioConfig {
        ScenarioConfig {
            node_count: 1,
            protocol,
            duration: SimTime::from_secs(1),
            ..ScenarioConfig::default()
        }
    }

    fn one_packet(cfg: &ScenarioConfig, class: PriorityClass, at: u64) -> RunOutput {
        let mut sim = Simulation::scripted(cfg, 1).unwrap();
        sim.enable_trace();
        sim.inject(SimTime::from_micros(at), NodeId(1), class);
        sim.run().unwrap()
    }

    #[test]
    fn urgent_closed_form() {
        let out = one_packet(&single(Protocol::Edca), PriorityClass::Urgent, 1000);
        assert_eq!(out.records[0].delay(), Some(SimTime::from_micros(4402)));
        let kinds: Vec<_> = out.trace.unwrap().iter().map(|e| e.kind).collect();
        assert_eq!(
            kinds,
            vec![FrameKind::Rts, FrameKind::Cts, FrameKind::Data, FrameKind::Ack]
        );
    }

    #[test]
    fn normal_closed_form() {
        let out = one_packet(&single(Protocol::Edca), PriorityClass::Normal, 0);
        assert_eq!(out.records[0].delay(), Some(SimTime::from_micros(4411)));
    }

    #[test]
    fn frog_full_payload_matches_edca() {
        let mut cfg = single(Protocol::Frog);
        cfg.fragment_payload_size = 121;
        let out = one_packet(&cfg, PriorityClass::Normal, 0);
        assert_eq!(out.records[0].delay(), Some(SimTime::from_micros(4411)));
    }

    #[test]
    fn frog_burst_pauses() {
        let mut cfg = single(Protocol::Frog);
        cfg.fragment_payload_size = 16;
        let out = one_packet(&cfg, PriorityClass::Normal, 0);
        let trace = out.trace.unwrap();
        let frags: Vec<_> = trace
            .iter()
            .filter(|e| e.kind == FrameKind::Fragment)
            .collect();
        assert_eq!(frags.len(), 8);
        for w in frags.windows(2) {
            assert_eq!((w[1].start - w[0].end).as_micros(), 600);
        }
        assert_eq!(trace.last().unwrap().kind, FrameKind::Sack);
        // 27 + RTS + CTS + 169 bytes of fragments + 7 pauses
        let expected = 27 + 160 + 160 + 169 * 32 + 7 * 600;
        assert_eq!(out.records[0].delay(), Some(SimTime::from_micros(expected)));
        assert_eq!(out.payload_mismatches, 0);
    }
}
