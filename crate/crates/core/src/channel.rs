//! Shared broadcast medium.
//!
//! One channel, every node in range of every other, zero propagation delay
//! and no capture: any two transmissions whose half-open intervals
//! `[start, end)` overlap destroy each other. Airtime is `bytes * byte_time`.

use std::fmt;
use std::io::{self, Write};

use crate::edca::PriorityClass;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u16);

impl NodeId {
    /// The roadside unit at the center of the star.
    pub const SINK: NodeId = NodeId(0);
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameKind {
    Rts,
    Cts,
    Data,
    Fragment,
    Ack,
    Sack,
    Nack,
    AckPFrag,
}

impl FrameKind {
    pub const ALL: [FrameKind; 8] = [
        FrameKind::Rts,
        FrameKind::Cts,
        FrameKind::Data,
        FrameKind::Fragment,
        FrameKind::Ack,
        FrameKind::Sack,
        FrameKind::Nack,
        FrameKind::AckPFrag,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FrameKind::Rts => "RTS",
            FrameKind::Cts => "CTS",
            FrameKind::Data => "DATA",
            FrameKind::Fragment => "FRAGMENT",
            FrameKind::Ack => "ACK",
            FrameKind::Sack => "SACK",
            FrameKind::Nack => "NACK",
            FrameKind::AckPFrag => "ACK_P_FRAG",
        }
    }

    pub fn from_name(s: &str) -> Option<FrameKind> {
        FrameKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// Sizes of the fixed-length control frames, in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameSizes {
    pub rts: u32,
    pub cts: u32,
    pub ack: u32,
    pub sack: u32,
    pub nack: u32,
    pub ack_p_frag: u32,
}

impl Default for FrameSizes {
    fn default() -> Self {
        FrameSizes {
            rts: 5,
            cts: 5,
            ack: 5,
            sack: 6,
            nack: 6,
            ack_p_frag: 8,
        }
    }
}

impl FrameSizes {
    /// Size of a control frame; `None` for the variable-length data kinds.
    pub fn of(&self, kind: FrameKind) -> Option<u32> {
        match kind {
            FrameKind::Rts => Some(self.rts),
            FrameKind::Cts => Some(self.cts),
            FrameKind::Ack => Some(self.ack),
            FrameKind::Sack => Some(self.sack),
            FrameKind::Nack => Some(self.nack),
            FrameKind::AckPFrag => Some(self.ack_p_frag),
            FrameKind::Data | FrameKind::Fragment => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameBody {
    Empty,
    /// RTS descriptor: the class of the pending packet and whether it will
    /// be sent as a fragment burst.
    Request {
        class: PriorityClass,
        fragmented: bool,
    },
    /// Wire bytes of a DATA or FRAGMENT frame (header followed by payload).
    Bytes(Vec<u8>),
    /// Fragment bitmap for SACK / NACK / ACK_P_FRAG. For NACK the set bits
    /// are the missing fragments; otherwise the received ones.
    Bitmap { seq: u16, bits: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameKind,
    pub total_bytes: u32,
    pub source: NodeId,
    pub destination: NodeId,
    pub body: FrameBody,
}

impl Frame {
    /// Build a frame. Byte-carrying bodies take their length from the body;
    /// control frames use the default size table.
    pub fn new(kind: FrameKind, source: NodeId, destination: NodeId, body: FrameBody) -> Frame {
        let total_bytes = match &body {
            FrameBody::Bytes(b) => b.len() as u32,
            _ => FrameSizes::default().of(kind).unwrap_or(1),
        };
        Frame {
            kind,
            total_bytes,
            source,
            destination,
            body,
        }
    }

    pub fn control(
        kind: FrameKind,
        total_bytes: u32,
        source: NodeId,
        destination: NodeId,
        body: FrameBody,
    ) -> Frame {
        Frame {
            kind,
            total_bytes,
            source,
            destination,
            body,
        }
    }
}

/// Airtime of a frame: `total_bytes` byte times.
pub fn airtime(frame: &Frame, byte_time: SimTime) -> SimTime {
    debug_assert!(frame.total_bytes >= 1);
    byte_time.mul(frame.total_bytes as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TxId(u64);

#[derive(Debug, Clone)]
pub struct TransmissionRecord {
    pub id: TxId,
    pub frame: Frame,
    pub start: SimTime,
    pub end: SimTime,
    pub corrupted: bool,
}

/// One line of the exported transmission trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub start: SimTime,
    pub end: SimTime,
    pub source: NodeId,
    pub destination: NodeId,
    pub kind: FrameKind,
    pub bytes: u32,
    pub corrupted: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChannelStats {
    pub collision_count: u64,
    pub delivered_frame_count: u64,
    pub busy_time: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChannelEvent {
    BusyStarted { source: NodeId },
    BusyEnded,
    FrameReceived(Frame),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Notice {
    pub node: NodeId,
    pub event: ChannelEvent,
}

/// Result of starting a transmission.
#[derive(Debug)]
pub struct Begun {
    pub id: TxId,
    pub end: SimTime,
    pub notices: Vec<Notice>,
}

#[derive(Debug)]
pub struct Ended {
    pub record: TransmissionRecord,
    pub notices: Vec<Notice>,
}

pub struct Channel {
    byte_time: SimTime,
    active: Vec<TransmissionRecord>,
    next_id: u64,
    stats: ChannelStats,
    busy_since: Option<SimTime>,
    busy_until: SimTime,
    busy_accum: SimTime,
    subscribers: Vec<NodeId>,
    trace: Option<Vec<TraceEntry>>,
    reservation: Option<NodeId>,
}

impl Channel {
    pub fn new(byte_time: SimTime) -> Self {
        Channel {
            byte_time,
            active: Vec::new(),
            next_id: 0,
            stats: ChannelStats::default(),
            busy_since: None,
            busy_until: SimTime::ZERO,
            busy_accum: SimTime::ZERO,
            subscribers: Vec::new(),
            trace: None,
            reservation: None,
        }
    }

    /// Keep a record of every completed transmission.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> Option<&[TraceEntry]> {
        self.trace.as_deref()
    }

    pub fn take_trace(&mut self) -> Option<Vec<TraceEntry>> {
        self.trace.take()
    }

    pub fn byte_time(&self) -> SimTime {
        self.byte_time
    }

    pub fn airtime(&self, frame: &Frame) -> SimTime {
        airtime(frame, self.byte_time)
    }

    /// Counters, with `busy_time` covering every interval begun so far.
    pub fn stats(&self) -> ChannelStats {
        ChannelStats {
            busy_time: self.busy_time_until(SimTime::MAX),
            ..self.stats
        }
    }

    pub fn subscribe_channel_events(&mut self, node: NodeId) {
        if !self.subscribers.contains(&node) {
            self.subscribers.push(node);
        }
    }

    /// True iff some transmission interval `[start, end)` contains `now`.
    pub fn is_busy(&self, now: SimTime) -> bool {
        self.active.iter().any(|r| r.start <= now && now < r.end)
    }

    /// Carrier as a node can sense it at `now`: transmissions that started
    /// at this very microsecond are not yet detectable.
    pub fn carrier_sensed(&self, now: SimTime) -> bool {
        self.active.iter().any(|r| r.start < now && now < r.end)
    }

    pub fn active(&self, id: TxId) -> Option<&TransmissionRecord> {
        self.active.iter().find(|r| r.id == id)
    }

    /// Virtual carrier sense: a normal-class burst reservation (the NAV set
    /// by an overheard CTS) held by `owner` until released.
    pub fn reserve(&mut self, owner: NodeId) {
        self.reservation = Some(owner);
    }

    pub fn release(&mut self, owner: NodeId) {
        if self.reservation == Some(owner) {
            self.reservation = None;
        }
    }

    pub fn reservation(&self) -> Option<NodeId> {
        self.reservation
    }

    pub fn begin_transmission(&mut self, frame: Frame, now: SimTime) -> Begun {
        let end = now + self.airtime(&frame);
        let mut corrupted = false;
        let mut fresh_collision = false;
        for other in self.active.iter_mut() {
            if other.start < end && now < other.end {
                if !other.corrupted {
                    fresh_collision = true;
                }
                other.corrupted = true;
                corrupted = true;
            }
        }
        if fresh_collision {
            self.stats.collision_count += 1;
        }
        match self.busy_since {
            Some(since) if now < self.busy_until => {
                debug_assert!(since <= now);
                self.busy_until = self.busy_until.max(end);
            }
            _ => {
                if let Some(since) = self.busy_since {
                    self.busy_accum += self.busy_until - since;
                }
                self.busy_since = Some(now);
                self.busy_until = end;
            }
        }
        let id = TxId(self.next_id);
        self.next_id += 1;
        let source = frame.source;
        self.active.push(TransmissionRecord {
            id,
            frame,
            start: now,
            end,
            corrupted,
        });
        let notices = self
            .subscribers
            .iter()
            .map(|&node| Notice {
                node,
                event: ChannelEvent::BusyStarted { source },
            })
            .collect();
        Begun { id, end, notices }
    }

    /// Measure of the union of all transmission intervals, clipped at `now`.
    pub fn busy_time_until(&self, now: SimTime) -> SimTime {
        match self.busy_since {
            Some(since) if since < now => self.busy_accum + (self.busy_until.min(now) - since),
            _ => self.busy_accum,
        }
    }

    /// Finish a transmission at its end time.
    ///
    /// # Panics
    ///
    /// Panics if `id` is not active.
    pub fn end_transmission(&mut self, id: TxId, now: SimTime) -> Ended {
        let idx = self
            .active
            .iter()
            .position(|r| r.id == id)
            .expect("ending an unknown transmission");
        debug_assert_eq!(self.active[idx].end, now);
        let record = self.active.remove(idx);
        let still_busy = self.active.iter().any(|r| r.end > now);
        if let Some(t) = self.trace.as_mut() {
            t.push(TraceEntry {
                start: record.start,
                end: record.end,
                source: record.frame.source,
                destination: record.frame.destination,
                kind: record.frame.kind,
                bytes: record.frame.total_bytes,
                corrupted: record.corrupted,
            });
        }
        let mut notices = Vec::new();
        if !record.corrupted {
            self.stats.delivered_frame_count += 1;
            if self.subscribers.contains(&record.frame.destination) {
                notices.push(Notice {
                    node: record.frame.destination,
                    event: ChannelEvent::FrameReceived(record.frame.clone()),
                });
            }
        }
        if !still_busy {
            notices.extend(self.subscribers.iter().map(|&node| Notice {
                node,
                event: ChannelEvent::BusyEnded,
            }));
        }
        Ended { record, notices }
    }
}

/// Write a trace as tab-separated `start_us end_us src dst kind bytes corrupted`.
pub fn write_trace<W: Write>(entries: &[TraceEntry], mut out: W) -> io::Result<()> {
    for e in entries {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            e.start.as_micros(),
            e.end.as_micros(),
            e.source,
            e.destination,
            e.kind.name(),
            e.bytes,
            e.corrupted as u8
        )?;
    }
    Ok(())
}

/// Parse a trace written by [`write_trace`].
pub fn parse_trace(text: &str) -> Result<Vec<TraceEntry>, String> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 7 {
                return Err(format!("line {}: expected 7 fields", i + 1));
            }
            let num = |s: &str| s.parse::<u64>().map_err(|e| format!("line {}: {e}", i + 1));
            Ok(TraceEntry {
                start: SimTime::from_micros(num(f[0])?),
                end: SimTime::from_micros(num(f[1])?),
                source: NodeId(num(f[2])? as u16),
                destination: NodeId(num(f[3])? as u16),
                kind: FrameKind::from_name(f[4])
                    .ok_or_else(|| format!("line {}: unknown kind {}", i + 1, f[4]))?,
                bytes: num(f[5])? as u32,
                corrupted: num(f[6])? != 0,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const BYTE: SimTime = SimTime::from_micros(32);

    fn rts(src: u16) -> Frame {
        Frame::new(FrameKind::Rts, NodeId(src), NodeId::SINK, FrameBody::Empty)
    }

    fn data(src: u16) -> Frame {
        Frame::new(
            FrameKind::Data,
            NodeId(src),
            NodeId::SINK,
            FrameBody::Bytes(vec![0; 127]),
        )
    }

    fn t(us: u64) -> SimTime {
        SimTime::from_micros(us)
    }

    #[test]
    fn airtime_examples() {
        assert_eq!(airtime(&data(1), BYTE), t(4064));
        assert_eq!(airtime(&rts(1), BYTE), t(160));
        let one = Frame::control(FrameKind::Ack, 1, NodeId(1), NodeId(0), FrameBody::Empty);
        assert_eq!(airtime(&one, BYTE), t(32));
    }

    #[test]
    fn default_control_sizes() {
        let s = FrameSizes::default();
        assert_eq!(
            [s.rts, s.cts, s.ack, s.sack, s.nack, s.ack_p_frag],
            [5, 5, 5, 6, 6, 8]
        );
    }

    #[test]
    fn lone_rts_delivered() {
        let mut ch = Channel::new(BYTE);
        ch.subscribe_channel_events(NodeId::SINK);
        ch.subscribe_channel_events(NodeId(1));
        let b = ch.begin_transmission(rts(1), t(0));
        assert_eq!(b.notices.len(), 2);
        assert!(b
            .notices
            .iter()
            .all(|n| matches!(n.event, ChannelEvent::BusyStarted { .. })));
        let e = ch.end_transmission(b.id, b.end);
        assert!(!e.record.corrupted);
        assert!(e.notices.iter().any(|n| n.node == NodeId::SINK
            && matches!(n.event, ChannelEvent::FrameReceived(_))));
        assert_eq!(ch.stats().collision_count, 0);
        assert_eq!(ch.stats().delivered_frame_count, 1);
        assert_eq!(ch.stats().busy_time, t(160));
    }

    #[test]
    fn simultaneous_rts_both_corrupted() {
        let mut ch = Channel::new(BYTE);
        ch.subscribe_channel_events(NodeId::SINK);
        let a = ch.begin_transmission(rts(1), t(10));
        let b = ch.begin_transmission(rts(2), t(10));
        let ea = ch.end_transmission(a.id, a.end);
        let eb = ch.end_transmission(b.id, b.end);
        assert!(ea.record.corrupted && eb.record.corrupted);
        assert!(ea.notices.iter().chain(eb.notices.iter()).all(|n| !matches!(
            n.event,
            ChannelEvent::FrameReceived(_)
        )));
        assert_eq!(ch.stats().collision_count, 1);
    }

    #[test]
    fn partial_overlap_destroys_both() {
        let mut ch = Channel::new(BYTE);
        let d = ch.begin_transmission(data(1), t(0));
        let r = ch.begin_transmission(rts(2), t(100));
        let er = ch.end_transmission(r.id, r.end);
        let ed = ch.end_transmission(d.id, d.end);
        assert!(er.record.corrupted && ed.record.corrupted);
        assert_eq!(ch.stats().busy_time, t(4064));
    }

    #[test]
    fn busy_is_half_open() {
        let mut ch = Channel::new(BYTE);
        assert!(!ch.is_busy(t(0)));
        let d = ch.begin_transmission(data(1), t(0));
        assert!(ch.is_busy(t(0)));
        assert!(ch.is_busy(t(2000)));
        assert!(!ch.is_busy(t(4064)));
        assert!(!ch.carrier_sensed(t(0)));
        assert!(ch.carrier_sensed(t(1)));
        ch.end_transmission(d.id, d.end);
        assert!(!ch.is_busy(t(2000)));
    }

    #[test]
    fn back_to_back_frames_do_not_collide() {
        let mut ch = Channel::new(BYTE);
        let a = ch.begin_transmission(rts(1), t(0));
        // response starts at the exact end, before the end event is processed
        let b = ch.begin_transmission(rts(2), a.end);
        let ea = ch.end_transmission(a.id, a.end);
        let eb = ch.end_transmission(b.id, b.end);
        assert!(!ea.record.corrupted && !eb.record.corrupted);
        assert_eq!(ch.stats().busy_time, t(320));
    }

    #[test]
    fn busy_ended_only_when_idle() {
        let mut ch = Channel::new(BYTE);
        ch.subscribe_channel_events(NodeId(1));
        let d = ch.begin_transmission(data(1), t(0));
        let r = ch.begin_transmission(rts(2), t(100));
        let er = ch.end_transmission(r.id, r.end);
        assert!(!er
            .notices
            .iter()
            .any(|n| n.event == ChannelEvent::BusyEnded));
        let ed = ch.end_transmission(d.id, d.end);
        assert!(ed.notices.iter().any(|n| n.event == ChannelEvent::BusyEnded));
    }

    #[test]
    fn trace_round_trip() {
        let mut ch = Channel::new(BYTE);
        ch.enable_trace();
        let a = ch.begin_transmission(rts(3), t(5));
        ch.end_transmission(a.id, a.end);
        let mut buf = Vec::new();
        write_trace(ch.trace().unwrap(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "5\t165\t3\t0\tRTS\t5\t0\n");
        assert_eq!(parse_trace(&text).unwrap(), ch.trace().unwrap());
    }

    #[test]
    fn reservation_release_only_by_owner() {
        let mut ch = Channel::new(BYTE);
        ch.reserve(NodeId(2));
        ch.release(NodeId(3));
        assert_eq!(ch.reservation(), Some(NodeId(2)));
        ch.release(NodeId(2));
        assert_eq!(ch.reservation(), None);
    }
}
