//! EDCA channel-access rules shared by both protocols.
//!
//! Two classes contend: URGENT (AC3) and NORMAL (AC0-AC2), each with its own
//! AIFS and contention window. A fresh packet on an idle medium transmits
//! after AIFS alone; a deferred or retried packet also counts down a random
//! number of 32 us slots, freezing whenever the medium is busy.

use std::collections::VecDeque;
use std::fmt;

use crate::error::SimError;
use crate::rng::RandomStream;
use crate::time::SimTime;
use crate::traffic::Packet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PriorityClass {
    Urgent,
    Normal,
}

impl PriorityClass {
    pub const ALL: [PriorityClass; 2] = [PriorityClass::Urgent, PriorityClass::Normal];

    pub fn name(self) -> &'static str {
        match self {
            PriorityClass::Urgent => "urgent",
            PriorityClass::Normal => "normal",
        }
    }

    pub fn index(self) -> usize {
        match self {
            PriorityClass::Urgent => 0,
            PriorityClass::Normal => 1,
        }
    }
}

impl fmt::Display for PriorityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum AccessCategory {
    Ac0 = 0,
    Ac1 = 1,
    Ac2 = 2,
    Ac3 = 3,
}

/// Map a raw access category to a priority class: AC3 is urgent, AC0-AC2 normal.
pub fn classify(category: u8) -> Result<PriorityClass, SimError> {
    match category {
        0..=2 => Ok(PriorityClass::Normal),
        3 => Ok(PriorityClass::Urgent),
        other => Err(SimError::UnknownCategory(other)),
    }
}

pub fn classify_packet(packet: &Packet) -> PriorityClass {
    classify(packet.access_category as u8).expect("AccessCategory is always in range")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdcaClassParams {
    pub aifs: SimTime,
    pub cw_min: u32,
    pub cw_max: u32,
}

impl EdcaClassParams {
    pub const URGENT: EdcaClassParams = EdcaClassParams {
        aifs: SimTime::from_micros(18),
        cw_min: 3,
        cw_max: 15,
    };
    pub const NORMAL: EdcaClassParams = EdcaClassParams {
        aifs: SimTime::from_micros(27),
        cw_min: 16,
        cw_max: 1023,
    };

    pub fn for_class(class: PriorityClass) -> EdcaClassParams {
        match class {
            PriorityClass::Urgent => Self::URGENT,
            PriorityClass::Normal => Self::NORMAL,
        }
    }

    /// Window doubling `2 (cw + 1) - 1`, capped at `cw_max`.
    pub fn next_cw(&self, cw: u32) -> u32 {
        (2 * (cw + 1) - 1).min(self.cw_max)
    }
}

/// Per-class transmit queue with backoff bookkeeping.
#[derive(Debug, Clone)]
pub struct EdcaQueueState {
    pub queue: VecDeque<Packet>,
    pub cw_current: u32,
    /// Remaining backoff slots once drawn; `None` before any draw.
    pub backoff_remaining: Option<u32>,
    pub retry_count: u32,
}

impl EdcaQueueState {
    pub fn new(params: &EdcaClassParams) -> Self {
        EdcaQueueState {
            queue: VecDeque::new(),
            cw_current: params.cw_min,
            backoff_remaining: None,
            retry_count: 0,
        }
    }

    pub fn reset(&mut self, params: &EdcaClassParams) {
        self.cw_current = params.cw_min;
        self.retry_count = 0;
        self.backoff_remaining = None;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollisionOutcome {
    Retry,
    /// The head-of-line packet exceeded the retry limit.
    Drop,
}

/// Uniform backoff in `[0, cw]` slots.
pub fn draw_backoff(stream: &mut RandomStream, cw: u32) -> u32 {
    stream.draw_uniform_int(0, cw as u64) as u32
}

/// Apply a failed attempt: widen the window and count the retry. Past the
/// retry limit the packet is dropped and the state returns to `cw_min`.
/// The caller removes the packet from the queue on `Drop`.
pub fn on_collision(
    state: &mut EdcaQueueState,
    params: &EdcaClassParams,
    retry_limit: u32,
) -> CollisionOutcome {
    state.retry_count += 1;
    state.backoff_remaining = None;
    if state.retry_count > retry_limit {
        state.reset(params);
        CollisionOutcome::Drop
    } else {
        state.cw_current = params.next_cw(state.cw_current);
        CollisionOutcome::Retry
    }
}

/// When an access timer fires: AIFS of idle counted from `count_from`, then
/// `slots` backoff slots.
pub fn access_time(count_from: SimTime, aifs: SimTime, slots: u32, slot: SimTime) -> SimTime {
    count_from + aifs + slot.mul(slots as u64)
}

/// Whole backoff slots that elapsed before the medium turned busy at `busy_at`.
pub fn slots_elapsed(count_from: SimTime, aifs: SimTime, slot: SimTime, busy_at: SimTime) -> u32 {
    let start = count_from + aifs;
    if busy_at <= start {
        0
    } else {
        ((busy_at - start).as_micros() / slot.as_micros()) as u32
    }
}

/// Virtual collision inside one node: when both queues' timers expire in the
/// same slot, urgent transmits and normal is treated as collided.
pub fn resolve_internal_contention(urgent_ready: bool, normal_ready: bool) -> Option<PriorityClass> {
    match (urgent_ready, normal_ready) {
        (true, _) => Some(PriorityClass::Urgent),
        (false, true) => Some(PriorityClass::Normal),
        (false, false) => None,
    }
}
