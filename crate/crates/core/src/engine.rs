//! Single-threaded discrete-event engine.
//!
//! Events are ordered by `(fire_time, sequence)` where `sequence` is a
//! monotonically increasing insertion counter, so simultaneous events are
//! delivered first-in first-out. Cancelled events are never delivered.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use crate::time::SimTime;

/// Handle for a scheduled event, usable to cancel it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle {
    fire_time: SimTime,
    sequence: u64,
}

impl EventHandle {
    pub fn fire_time(&self) -> SimTime {
        self.fire_time
    }

    pub fn sequence(&self) -> u64 {
        self.sequence
    }
}

struct Entry<E> {
    at: SimTime,
    seq: u64,
    payload: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // Reversed: BinaryHeap is a max-heap and we want the earliest first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// Event queue plus virtual clock.
pub struct Engine<E> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Entry<E>>,
    live: HashSet<u64>,
    processed: u64,
}

impl<E> Default for Engine<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Engine<E> {
    pub fn new() -> Self {
        Engine {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            live: HashSet::new(),
            processed: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Total events delivered so far.
    pub fn processed(&self) -> u64 {
        self.processed
    }

    /// Number of live (scheduled, not cancelled, not yet delivered) events.
    pub fn pending(&self) -> usize {
        self.live.len()
    }

    /// Schedule `payload` to fire at `at`.
    ///
    /// # Panics
    ///
    /// Panics if `at` is earlier than the current clock.
    pub fn schedule(&mut self, at: SimTime, payload: E) -> EventHandle {
        assert!(
            at >= self.now,
            "cannot schedule in the past: now={}, at={}",
            self.now,
            at
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { at, seq, payload });
        self.live.insert(seq);
        EventHandle {
            fire_time: at,
            sequence: seq,
        }
    }

    /// Cancel a scheduled event. Cancelling twice, or after delivery, is a no-op.
    pub fn cancel(&mut self, handle: &EventHandle) {
        self.live.remove(&handle.sequence);
    }

    pub fn is_live(&self, handle: &EventHandle) -> bool {
        self.live.contains(&handle.sequence)
    }

    /// Pop the next live event with `fire_time <= end`, advancing the clock
    /// to its fire time.
    pub fn next_event(&mut self, end: SimTime) -> Option<(SimTime, E)> {
        loop {
            let top = self.heap.peek()?;
            if top.at > end {
                return None;
            }
            let entry = self.heap.pop().expect("peeked entry");
            if !self.live.remove(&entry.seq) {
                continue;
            }
            debug_assert!(entry.at >= self.now);
            self.now = entry.at;
            self.processed += 1;
            return Some((entry.at, entry.payload));
        }
    }

    /// Move the clock forward to `end` once no events remain before it.
    pub fn advance_to(&mut self, end: SimTime) {
        if end > self.now {
            self.now = end;
        }
    }

    /// Deliver every event with `fire_time <= end` to `handler`, in order,
    /// then set the clock to `end`. Returns the number of events processed.
    pub fn run_until<F>(&mut self, end: SimTime, mut handler: F) -> u64
    where
        F: FnMut(&mut Engine<E>, SimTime, E),
    {
        let mut count = 0;
        while let Some((at, ev)) = self.next_event(end) {
            handler(self, at, ev);
            count += 1;
        }
        self.advance_to(end);
        count
    }
}
