use thiserror::Error;

use crate::traffic::PacketId;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("exponential mean must be positive")]
    InvalidMean,
    #[error("unknown access category {0}")]
    UnknownCategory(u8),
    #[error("urgent packets are never fragmented")]
    UrgentFragment,
    #[error("fragment payload size {0} outside [2, 121]")]
    FragmentSize(usize),
    #[error("payload is {0} bytes, expected 121")]
    PayloadLength(usize),
    #[error("incomplete reassembly: {missing} of {count} fragments missing")]
    Incomplete { missing: u32, count: u32 },
    #[error("inconsistent fragment set: {0}")]
    FragmentMismatch(&'static str),
    #[error("malformed header")]
    MalformedHeader,
    #[error("packet {0:?} finalized twice")]
    DoubleFinalize(PacketId),
    #[error("at least two runs are required for a confidence interval, got {0}")]
    TooFewRuns(usize),
    #[error("conservation violated for {class}: generated {generated} != delivered {delivered} + dropped {dropped} + queued {queued}")]
    Conservation {
        class: &'static str,
        generated: u64,
        delivered: u64,
        dropped: u64,
        queued: u64,
    },
    #[error("reassembled payload differs from the original for {0} packet(s)")]
    ReassemblyMismatch(u64),
}
