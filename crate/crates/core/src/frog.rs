//! FROG-MAC fragmentation, reassembly and sender bookkeeping.
//!
//! A normal packet's 121-byte payload is cut into `k = ceil(121 / F)`
//! fragments, each carried in its own frame behind a copy of the 6-byte
//! header. Between fragments the sender leaves the medium idle for the
//! interruptible period; carrier heard during that pause suspends the burst
//! so an urgent exchange can run. The receiver acknowledges a finished round
//! with SACK (complete) or NACK (bitmap of what is missing) and announces
//! what it already holds with ACK_P_FRAG after an interruption.

use std::ops::Range;

use crate::channel::{Frame, FrameBody, FrameKind, NodeId};
use crate::edca::PriorityClass;
use crate::error::SimError;
use crate::time::SimTime;
use crate::traffic::{FrameHeader, Packet, HEADER_BYTES, PAYLOAD_BYTES};

pub const MIN_FRAGMENT: usize = 2;
pub const MAX_FRAGMENT: usize = PAYLOAD_BYTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FragmentPlan {
    fragment_size: usize,
    count: usize,
}

impl FragmentPlan {
    pub fn new(fragment_size: usize) -> Result<Self, SimError> {
        if !(MIN_FRAGMENT..=MAX_FRAGMENT).contains(&fragment_size) {
            return Err(SimError::FragmentSize(fragment_size));
        }
        Ok(FragmentPlan {
            fragment_size,
            count: PAYLOAD_BYTES.div_ceil(fragment_size),
        })
    }

    pub fn fragment_size(&self) -> usize {
        self.fragment_size
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn payload_range(&self, index: usize) -> Range<usize> {
        let start = index * self.fragment_size;
        start..((index + 1) * self.fragment_size).min(PAYLOAD_BYTES)
    }

    pub fn frame_bytes(&self, index: usize) -> usize {
        self.payload_range(index).len() + HEADER_BYTES
    }

    /// Bitmap with one bit set per fragment.
    pub fn full_mask(&self) -> u64 {
        if self.count == 64 {
            u64::MAX
        } else {
            (1u64 << self.count) - 1
        }
    }

    /// Airtime of an uninterrupted burst: all fragment frames plus the
    /// `k - 1` pauses between them, excluding the handshake and SACK.
    pub fn uninterrupted_occupancy(&self, byte_time: SimTime, pause: SimTime) -> SimTime {
        let bytes = (PAYLOAD_BYTES + HEADER_BYTES * self.count) as u64;
        byte_time.mul(bytes) + pause.mul(self.count as u64 - 1)
    }
}

/// Build the wire frame for one fragment of `packet`.
pub fn fragment_frame(
    packet: &Packet,
    plan: &FragmentPlan,
    index: usize,
    last_in_round: bool,
    destination: NodeId,
) -> Frame {
    let header = FrameHeader {
        source: packet.id.source,
        urgent: false,
        last_in_round,
        seq: packet.id.seq as u16,
        index: index as u8,
        count: plan.count() as u8,
    };
    let range = plan.payload_range(index);
    let mut bytes = Vec::with_capacity(range.len() + HEADER_BYTES);
    bytes.extend_from_slice(&header.encode());
    bytes.extend_from_slice(&packet.payload[range]);
    Frame::new(
        FrameKind::Fragment,
        packet.id.source,
        destination,
        FrameBody::Bytes(bytes),
    )
}

/// Split a normal packet into its ordered fragment frames.
pub fn fragment(packet: &Packet, fragment_size: usize) -> Result<Vec<Frame>, SimError> {
    if packet.id.class == PriorityClass::Urgent {
        return Err(SimError::UrgentFragment);
    }
    if packet.payload.len() != PAYLOAD_BYTES {
        return Err(SimError::PayloadLength(packet.payload.len()));
    }
    let plan = FragmentPlan::new(fragment_size)?;
    let k = plan.count();
    Ok((0..k)
        .map(|i| fragment_frame(packet, &plan, i, i + 1 == k, NodeId::SINK))
        .collect())
}

fn split_fragment(frame: &Frame) -> Result<(FrameHeader, &[u8]), SimError> {
    match &frame.body {
        FrameBody::Bytes(b) => {
            let h = FrameHeader::decode(b)?;
            Ok((h, &b[HEADER_BYTES..]))
        }
        _ => Err(SimError::MalformedHeader),
    }
}

/// Receiver-side buffer for one sender's packet in progress.
#[derive(Debug, Clone)]
pub struct ReassemblyBuffer {
    source: NodeId,
    seq: u16,
    count: u8,
    fragment_size: usize,
    received: u64,
    data: [u8; PAYLOAD_BYTES],
    delivered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Accepted {
    /// This fragment completed the packet for the first time.
    pub completed: bool,
    pub last_in_round: bool,
}

impl ReassemblyBuffer {
    pub fn new(source: NodeId) -> Self {
        ReassemblyBuffer {
            source,
            seq: 0,
            count: 0,
            fragment_size: 0,
            received: 0,
            data: [0; PAYLOAD_BYTES],
            delivered: false,
        }
    }

    pub fn source(&self) -> NodeId {
        self.source
    }

    pub fn seq(&self) -> u16 {
        self.seq
    }

    fn mask(&self) -> u64 {
        if self.count == 0 {
            0
        } else if self.count == 64 {
            u64::MAX
        } else {
            (1u64 << self.count) - 1
        }
    }

    pub fn received_bits(&self) -> u64 {
        self.received
    }

    pub fn missing_bits(&self) -> u64 {
        self.mask() & !self.received
    }

    pub fn is_complete(&self) -> bool {
        self.count > 0 && self.missing_bits() == 0
    }

    pub fn payload(&self) -> Option<&[u8]> {
        self.is_complete().then_some(&self.data[..])
    }

    /// Store one fragment; a new sequence number restarts the buffer.
    pub fn accept(&mut self, frame: &Frame) -> Result<Accepted, SimError> {
        let (h, payload) = split_fragment(frame)?;
        if h.source != self.source {
            return Err(SimError::FragmentMismatch("fragment from another sender"));
        }
        if self.count == 0 || h.seq != self.seq || h.count != self.count {
            self.seq = h.seq;
            self.count = h.count;
            self.received = 0;
            self.delivered = false;
            self.fragment_size = 0;
        }
        // every fragment but the last is full-size, so any non-final one fixes F
        let idx = h.index as usize;
        let size = if idx + 1 < h.count as usize {
            payload.len()
        } else if self.fragment_size != 0 {
            self.fragment_size
        } else if h.count == 1 {
            PAYLOAD_BYTES
        } else {
            (PAYLOAD_BYTES - payload.len()) / (h.count as usize - 1)
        };
        if self.fragment_size == 0 {
            self.fragment_size = size;
        }
        let start = idx * self.fragment_size;
        let end = start + payload.len();
        if end > PAYLOAD_BYTES {
            return Err(SimError::FragmentMismatch("fragment exceeds payload"));
        }
        self.data[start..end].copy_from_slice(payload);
        self.received |= 1u64 << idx;
        let completed = !self.delivered && self.is_complete();
        if completed {
            self.delivered = true;
        }
        Ok(Accepted {
            completed,
            last_in_round: h.last_in_round,
        })
    }
}

/// Rebuild the 121-byte payload from a complete set of fragments, in any order.
pub fn reassemble(frames: &[Frame]) -> Result<Vec<u8>, SimError> {
    let first = frames
        .first()
        .ok_or(SimError::Incomplete { missing: 0, count: 0 })?;
    let (h0, _) = split_fragment(first)?;
    let mut buf = ReassemblyBuffer::new(h0.source);
    for f in frames {
        let (h, _) = split_fragment(f)?;
        if h.seq != h0.seq || h.count != h0.count {
            return Err(SimError::FragmentMismatch("fragments of different packets"));
        }
        buf.accept(f)?;
    }
    match buf.payload() {
        Some(p) => Ok(p.to_vec()),
        None => Err(SimError::Incomplete {
            missing: buf.missing_bits().count_ones(),
            count: h0.count as u32,
        }),
    }
}

/// Coarse protocol phase of a FROG sender.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrogPhase {
    Idle,
    Contend,
    Handshake,
    SendingFragment,
    PausedInterruptible,
    Suspended,
    AwaitSack,
}

/// Sender bookkeeping for the head-of-line normal packet.
#[derive(Debug, Clone)]
pub struct FrogSender {
    plan: FragmentPlan,
    acked: u64,
    round: Vec<u8>,
    cursor: usize,
    resume_from: Option<Vec<u8>>,
    suspended: bool,
    suspensions: u32,
}

impl FrogSender {
    pub fn new(plan: FragmentPlan) -> Self {
        FrogSender {
            plan,
            acked: 0,
            round: (0..plan.count() as u8).collect(),
            cursor: 0,
            resume_from: None,
            suspended: false,
            suspensions: 0,
        }
    }

    pub fn plan(&self) -> &FragmentPlan {
        &self.plan
    }

    pub fn is_suspended(&self) -> bool {
        self.suspended
    }

    pub fn suspensions(&self) -> u32 {
        self.suspensions
    }

    pub fn acked(&self) -> u64 {
        self.acked
    }

    /// Take the next fragment of the current round: `(index, last_in_round)`.
    pub fn next_fragment(&mut self) -> Option<(usize, bool)> {
        let idx = *self.round.get(self.cursor)?;
        self.cursor += 1;
        Some((idx as usize, self.cursor == self.round.len()))
    }

    pub fn has_more_in_round(&self) -> bool {
        self.cursor < self.round.len()
    }

    /// Carrier was heard during a pause. Without further news the burst
    /// resumes from the sender's own next fragment.
    pub fn suspend(&mut self) {
        self.suspended = true;
        self.suspensions += 1;
        self.resume_from = Some(self.round[self.cursor..].to_vec());
    }

    /// The receiver reported which fragments it holds.
    pub fn apply_ack_p_frag(&mut self, received: u64) {
        self.acked |= received & self.plan.full_mask();
        if self.suspended {
            self.resume_from = Some(self.unacked());
        }
    }

    /// NACK: retransmit exactly the missing fragments, immediately.
    pub fn apply_nack(&mut self, missing: u64) {
        let missing = missing & self.plan.full_mask();
        self.acked |= self.plan.full_mask() & !missing;
        self.round = bits_to_indices(missing);
        if self.round.is_empty() {
            self.round = self.last_index();
        }
        self.cursor = 0;
    }

    /// No SACK or NACK came back: on the next access resend everything not
    /// positively acknowledged.
    pub fn on_response_timeout(&mut self) {
        self.suspended = false;
        self.resume_from = Some(self.unacked());
    }

    /// A new handshake succeeded after suspension or timeout.
    pub fn resume(&mut self) {
        if let Some(r) = self.resume_from.take() {
            self.round = r;
        } else if self.cursor > 0 {
            self.round = self.round[self.cursor..].to_vec();
        }
        if self.round.is_empty() {
            self.round = self.last_index();
        }
        self.cursor = 0;
        self.suspended = false;
    }

    fn unacked(&self) -> Vec<u8> {
        bits_to_indices(self.plan.full_mask() & !self.acked)
    }

    fn last_index(&self) -> Vec<u8> {
        vec![self.plan.count() as u8 - 1]
    }
}

fn bits_to_indices(bits: u64) -> Vec<u8> {
    (0..64u8).filter(|i| bits & (1u64 << i) != 0).collect()
}

/// How pending fragments are announced after an interruption: the receiver
/// sends ACK_P_FRAG to the interrupted sender right after the interrupting
/// exchange. Kept in one place so the direction can be changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AckPFragRoute {
    pub from: NodeId,
    pub to: NodeId,
}

pub fn ack_p_frag_route(interrupted_sender: NodeId) -> AckPFragRoute {
    AckPFragRoute {
        from: NodeId::SINK,
        to: interrupted_sender,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::{GeneratorConfig, TrafficSource};

    fn normal_packet(seed: u64) -> Packet {
        let mut src = TrafficSource::new(NodeId(4), GeneratorConfig::default(), seed);
        src.make_packet(PriorityClass::Normal, SimTime::ZERO, 0)
    }

    #[test]
    fn fragment_counts() {
        let p = normal_packet(1);
        assert_eq!(fragment(&p, 2).unwrap().len(), 61);
        assert_eq!(fragment(&p, 121).unwrap().len(), 1);
        let f16 = fragment(&p, 16).unwrap();
        assert_eq!(f16.len(), 8);
        let sizes: Vec<u32> = f16.iter().map(|f| f.total_bytes).collect();
        assert_eq!(sizes, vec![22, 22, 22, 22, 22, 22, 22, 15]);
        assert_eq!(FragmentPlan::new(16).unwrap().payload_range(7).len(), 9);
    }

    #[test]
    fn fragment_size_bounds() {
        assert!(matches!(FragmentPlan::new(1), Err(SimError::FragmentSize(1))));
        assert!(matches!(FragmentPlan::new(122), Err(SimError::FragmentSize(122))));
        for f in 2..=121 {
            let plan = FragmentPlan::new(f).unwrap();
            assert!((1..=61).contains(&plan.count()));
            assert_eq!(plan.count() == 1, f >= 121);
            let total: usize = (0..plan.count()).map(|i| plan.payload_range(i).len()).sum();
            assert_eq!(total, 121);
        }
    }

    #[test]
    fn urgent_rejected() {
        let mut src = TrafficSource::new(NodeId(4), GeneratorConfig::default(), 1);
        let u = src.make_packet(PriorityClass::Urgent, SimTime::ZERO, 0);
        assert!(matches!(fragment(&u, 2), Err(SimError::UrgentFragment)));
    }

    #[test]
    fn round_trip() {
        let p = normal_packet(3);
        assert_eq!(reassemble(&fragment(&p, 2).unwrap()).unwrap(), p.payload);
        assert_eq!(reassemble(&fragment(&p, 16).unwrap()).unwrap(), p.payload);
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn out_of_order_reassembly() {
        let p = normal_packet(8);
        // F = 41 -> 3 fragments, F = 31 -> 4 fragments, F = 61 -> 2
        for f in [121, 61, 41, 31] {
            let frames = fragment(&p, f).unwrap();
            let perms = permutations(frames.len());
            assert_eq!(perms.len(), (1..=frames.len()).product::<usize>());
            for perm in perms {
                let shuffled: Vec<Frame> = perm.iter().map(|&i| frames[i].clone()).collect();
                assert_eq!(reassemble(&shuffled).unwrap(), p.payload);
            }
        }
    }

    #[test]
    fn missing_fragment_is_incomplete() {
        let p = normal_packet(2);
        let mut frames = fragment(&p, 16).unwrap();
        frames.remove(3);
        assert!(matches!(
            reassemble(&frames),
            Err(SimError::Incomplete { missing: 1, count: 8 })
        ));
    }

    #[test]
    fn occupancy_arithmetic() {
        let byte = SimTime::from_micros(32);
        let pause = SimTime::from_micros(600);
        let f2 = FragmentPlan::new(2).unwrap();
        assert_eq!(
            f2.uninterrupted_occupancy(byte, pause),
            // 60 two-byte fragments and a one-byte tail: (121 + 6 * 61) bytes
            SimTime::from_micros(15584 + 36000)
        );
        let f121 = FragmentPlan::new(121).unwrap();
        assert_eq!(f121.uninterrupted_occupancy(byte, pause), SimTime::from_micros(4064));
        let f16 = FragmentPlan::new(16).unwrap();
        assert_eq!(
            f16.uninterrupted_occupancy(byte, pause),
            SimTime::from_micros((7 * 22 + 15) * 32 + 7 * 600)
        );
        let mut prev = SimTime::ZERO;
        for f in (2..=121).rev() {
            let occ = FragmentPlan::new(f).unwrap().uninterrupted_occupancy(byte, pause);
            assert!(occ >= prev);
            prev = occ;
        }
    }

    #[test]
    fn sender_rounds_and_suspension() {
        let plan = FragmentPlan::new(31).unwrap(); // 4 fragments
        let mut s = FrogSender::new(plan);
        assert_eq!(s.next_fragment(), Some((0, false)));
        assert_eq!(s.next_fragment(), Some((1, false)));
        s.suspend();
        assert!(s.is_suspended());
        s.resume();
        assert_eq!(s.next_fragment(), Some((2, false)));
        assert_eq!(s.next_fragment(), Some((3, true)));
        assert_eq!(s.next_fragment(), None);
        s.apply_nack(0b0101);
        assert_eq!(s.next_fragment(), Some((0, false)));
        assert_eq!(s.next_fragment(), Some((2, true)));
    }

    #[test]
    fn ack_p_frag_overrides_own_cursor() {
        let plan = FragmentPlan::new(31).unwrap();
        let mut s = FrogSender::new(plan);
        s.next_fragment();
        s.next_fragment();
        s.suspend();
        // receiver lost fragment 0
        s.apply_ack_p_frag(0b0010);
        s.resume();
        let sent: Vec<_> = std::iter::from_fn(|| s.next_fragment()).collect();
        assert_eq!(sent, vec![(0, false), (2, false), (3, true)]);
    }

    #[test]
    fn route_goes_receiver_to_sender() {
        let r = ack_p_frag_route(NodeId(5));
        assert_eq!((r.from, r.to), (NodeId::SINK, NodeId(5)));
    }
}
