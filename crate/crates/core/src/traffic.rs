//! Packets and per-node traffic generation.
//!
//! Urgent traffic arrives as a Poisson process (mean interval 2 s), normal
//! traffic at a constant rate (every 200 ms) from a random per-node phase.

use crate::channel::{Frame, FrameBody, FrameKind, NodeId};
use crate::edca::{AccessCategory, PriorityClass};
use crate::error::SimError;
use crate::rng::{Purpose, RandomStream};
use crate::time::SimTime;

pub const PAYLOAD_BYTES: usize = 121;
pub const HEADER_BYTES: usize = 6;
pub const DATA_FRAME_BYTES: usize = PAYLOAD_BYTES + HEADER_BYTES;

/// Payload bits per delivered packet.
pub const PAYLOAD_BITS: u64 = PAYLOAD_BYTES as u64 * 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PacketId {
    pub source: NodeId,
    pub class: PriorityClass,
    pub seq: u32,
}

#[derive(Debug, Clone)]
pub struct Packet {
    pub id: PacketId,
    pub access_category: AccessCategory,
    pub payload: Vec<u8>,
    pub generated_at: SimTime,
    /// Index of this packet's record in the run's metrics.
    pub record: usize,
}

impl Packet {
    pub fn class(&self) -> PriorityClass {
        self.id.class
    }
}

/// The 6-byte header carried by DATA and FRAGMENT frames.
///
/// Layout: source, flags (bit 0 urgent, bit 1 last-in-round), sequence
/// (little-endian u16), fragment index, fragment count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub source: NodeId,
    pub urgent: bool,
    pub last_in_round: bool,
    pub seq: u16,
    pub index: u8,
    pub count: u8,
}

impl FrameHeader {
    pub fn encode(&self) -> [u8; HEADER_BYTES] {
        let seq = self.seq.to_le_bytes();
        let flags = (self.urgent as u8) | ((self.last_in_round as u8) << 1);
        [
            self.source.0 as u8,
            flags,
            seq[0],
            seq[1],
            self.index,
            self.count,
        ]
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, SimError> {
        if bytes.len() < HEADER_BYTES {
            return Err(SimError::MalformedHeader);
        }
        let flags = bytes[1];
        if flags & !0b11 != 0 || bytes[5] == 0 || bytes[4] >= bytes[5] {
            return Err(SimError::MalformedHeader);
        }
        Ok(FrameHeader {
            source: NodeId(bytes[0] as u16),
            urgent: flags & 1 != 0,
            last_in_round: flags & 2 != 0,
            seq: u16::from_le_bytes([bytes[2], bytes[3]]),
            index: bytes[4],
            count: bytes[5],
        })
    }
}

/// Wrap a whole packet into one 127-byte DATA frame addressed to `destination`.
pub fn build_data_frame(packet: &Packet, destination: NodeId) -> Result<Frame, SimError> {
    if packet.payload.len() != PAYLOAD_BYTES {
        return Err(SimError::PayloadLength(packet.payload.len()));
    }
    let header = FrameHeader {
        source: packet.id.source,
        urgent: packet.id.class == PriorityClass::Urgent,
        last_in_round: true,
        seq: packet.id.seq as u16,
        index: 0,
        count: 1,
    };
    let mut bytes = Vec::with_capacity(DATA_FRAME_BYTES);
    bytes.extend_from_slice(&header.encode());
    bytes.extend_from_slice(&packet.payload);
    Ok(Frame::new(
        FrameKind::Data,
        packet.id.source,
        destination,
        FrameBody::Bytes(bytes),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrafficMix {
    /// Every vehicle generates both classes.
    Both,
    /// Odd node ids generate urgent traffic only, even ids normal only.
    Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub urgent_mean_interval: SimTime,
    pub normal_period: SimTime,
    pub mix: TrafficMix,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            urgent_mean_interval: SimTime::from_secs(2),
            normal_period: SimTime::from_millis(200),
            mix: TrafficMix::Both,
        }
    }
}

impl GeneratorConfig {
    pub fn generates(&self, node: NodeId, class: PriorityClass) -> bool {
        match self.mix {
            TrafficMix::Both => true,
            TrafficMix::Split => match class {
                PriorityClass::Urgent => node.0 % 2 == 1,
                PriorityClass::Normal => node.0.is_multiple_of(2),
            },
        }
    }
}

/// Per-node packet factory. Each class has its own arrival and payload
/// streams so that MAC behavior never shifts the traffic a seed produces.
pub struct TrafficSource {
    node: NodeId,
    config: GeneratorConfig,
    arrivals: RandomStream,
    phase: RandomStream,
    urgent_payload: RandomStream,
    normal_payload: RandomStream,
    urgent_seq: u32,
    normal_seq: u32,
}

impl TrafficSource {
    pub fn new(node: NodeId, config: GeneratorConfig, seed: u64) -> Self {
        let id = node.0 as u32;
        TrafficSource {
            node,
            config,
            arrivals: RandomStream::new(seed, id, Purpose::UrgentArrivals),
            phase: RandomStream::new(seed, id, Purpose::NormalPhase),
            urgent_payload: RandomStream::new(seed, id, Purpose::UrgentPayload),
            normal_payload: RandomStream::new(seed, id, Purpose::NormalPayload),
            urgent_seq: 0,
            normal_seq: 0,
        }
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// Time until the next urgent arrival.
    pub fn urgent_gap(&mut self) -> SimTime {
        self.arrivals
            .draw_exponential(self.config.urgent_mean_interval)
            .expect("validated positive interval")
    }

    /// Offset of the first normal arrival in `[0, period)`.
    pub fn normal_phase(&mut self) -> SimTime {
        let period = self.config.normal_period.as_micros();
        SimTime::from_micros(self.phase.draw_uniform_int(0, period - 1))
    }

    pub fn make_packet(&mut self, class: PriorityClass, now: SimTime, record: usize) -> Packet {
        let (seq, stream) = match class {
            PriorityClass::Urgent => (&mut self.urgent_seq, &mut self.urgent_payload),
            PriorityClass::Normal => (&mut self.normal_seq, &mut self.normal_payload),
        };
        let mut payload = vec![0u8; PAYLOAD_BYTES];
        stream.fill_bytes(&mut payload);
        let id = PacketId {
            source: self.node,
            class,
            seq: *seq,
        };
        *seq += 1;
        let access_category = match class {
            PriorityClass::Urgent => AccessCategory::Ac3,
            // routine traffic cycles through the three lower categories
            PriorityClass::Normal => match id.seq % 3 {
                0 => AccessCategory::Ac0,
                1 => AccessCategory::Ac1,
                _ => AccessCategory::Ac2,
            },
        };
        Packet {
            id,
            access_category,
            payload,
            generated_at: now,
            record,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::airtime;
    use crate::edca::classify;

    fn packet(class: PriorityClass) -> Packet {
        let mut src = TrafficSource::new(NodeId(3), GeneratorConfig::default(), 1);
        src.make_packet(class, SimTime::from_micros(10), 0)
    }

    #[test]
    fn data_frame_is_127_bytes() {
        for class in [PriorityClass::Urgent, PriorityClass::Normal] {
            let p = packet(class);
            let f = build_data_frame(&p, NodeId::SINK).unwrap();
            assert_eq!(f.total_bytes, 127);
            assert_eq!(airtime(&f, SimTime::from_micros(32)), SimTime::from_micros(4064));
            assert_eq!(DATA_FRAME_BYTES - PAYLOAD_BYTES, 6);
        }
    }

    #[test]
    fn wrong_payload_length_rejected() {
        let mut p = packet(PriorityClass::Normal);
        p.payload.pop();
        assert!(matches!(
            build_data_frame(&p, NodeId::SINK),
            Err(SimError::PayloadLength(120))
        ));
    }

    #[test]
    fn header_round_trip() {
        let h = FrameHeader {
            source: NodeId(11),
            urgent: false,
            last_in_round: true,
            seq: 40_000,
            index: 60,
            count: 61,
        };
        assert_eq!(FrameHeader::decode(&h.encode()).unwrap(), h);
        assert!(FrameHeader::decode(&[0, 0, 0, 0, 5, 5]).is_err());
        assert!(FrameHeader::decode(&[0, 0, 0]).is_err());
    }

    #[test]
    fn categories_map_to_classes() {
        let mut src = TrafficSource::new(NodeId(1), GeneratorConfig::default(), 1);
        for i in 0..6 {
            let p = src.make_packet(PriorityClass::Normal, SimTime::ZERO, i);
            assert_eq!(classify(p.access_category as u8).unwrap(), PriorityClass::Normal);
        }
        let u = src.make_packet(PriorityClass::Urgent, SimTime::ZERO, 0);
        assert_eq!(classify(u.access_category as u8).unwrap(), PriorityClass::Urgent);
    }

    #[test]
    fn split_mix_assigns_disjoint_classes() {
        let cfg = GeneratorConfig {
            mix: TrafficMix::Split,
            ..GeneratorConfig::default()
        };
        for n in 1..=11u16 {
            let u = cfg.generates(NodeId(n), PriorityClass::Urgent);
            let v = cfg.generates(NodeId(n), PriorityClass::Normal);
            assert!(u ^ v);
        }
    }

    #[test]
    fn phase_within_period() {
        let mut src = TrafficSource::new(NodeId(2), GeneratorConfig::default(), 9);
        let p = src.normal_phase();
        assert!(p < SimTime::from_millis(200));
    }
}
