//! Per-packet accounting, run summaries and cross-run confidence intervals.
//!
//! Delay runs from generation to the instant the sink receives the last
//! payload byte. Throughput counts payload bits only (968 per packet).

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::edca::PriorityClass;
use crate::error::SimError;
use crate::time::SimTime;
use crate::traffic::{PacketId, PAYLOAD_BITS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    Queue,
    Retry,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketRecord {
    pub id: PacketId,
    pub generated_at: SimTime,
    pub delivered_at: Option<SimTime>,
    pub dropped: Option<DropReason>,
    /// Start of the first RTS sent for this packet.
    pub first_rts_at: Option<SimTime>,
}

impl PacketRecord {
    pub fn class(&self) -> PriorityClass {
        self.id.class
    }

    pub fn is_finalized(&self) -> bool {
        self.delivered_at.is_some() || self.dropped.is_some()
    }

    pub fn delay(&self) -> Option<SimTime> {
        self.delivered_at.map(|d| d - self.generated_at)
    }
}

#[derive(Debug, Default, Clone)]
pub struct Metrics {
    records: Vec<PacketRecord>,
}

impl Metrics {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a generated packet; returns its record index.
    pub fn register(&mut self, id: PacketId, generated_at: SimTime) -> usize {
        self.records.push(PacketRecord {
            id,
            generated_at,
            delivered_at: None,
            dropped: None,
            first_rts_at: None,
        });
        self.records.len() - 1
    }

    pub fn records(&self) -> &[PacketRecord] {
        &self.records
    }

    pub fn record(&self, index: usize) -> &PacketRecord {
        &self.records[index]
    }

    pub fn note_rts(&mut self, index: usize, at: SimTime) {
        let r = &mut self.records[index];
        if r.first_rts_at.is_none() {
            r.first_rts_at = Some(at);
        }
    }

    pub fn record_delivery(&mut self, index: usize, delivered_at: SimTime) -> Result<(), SimError> {
        let r = &mut self.records[index];
        if r.is_finalized() {
            return Err(SimError::DoubleFinalize(r.id));
        }
        debug_assert!(delivered_at >= r.generated_at);
        r.delivered_at = Some(delivered_at);
        Ok(())
    }

    pub fn record_drop(&mut self, index: usize, reason: DropReason) -> Result<(), SimError> {
        let r = &mut self.records[index];
        if r.is_finalized() {
            return Err(SimError::DoubleFinalize(r.id));
        }
        r.dropped = Some(reason);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClassSummary {
    /// `None` when nothing of this class was delivered.
    pub mean_delay_us: Option<f64>,
    pub throughput_bps: f64,
    pub generated: u64,
    pub delivered: u64,
    pub dropped_queue: u64,
    pub dropped_retry: u64,
    /// Still queued at a sender when the run ended.
    pub queued: u64,
    /// Failed access attempts (missing CTS/ACK/SACK, NACK rounds, virtual collisions).
    pub collisions: u64,
}

impl ClassSummary {
    pub fn dropped(&self) -> u64 {
        self.dropped_queue + self.dropped_retry
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub duration: SimTime,
    pub urgent: ClassSummary,
    pub normal: ClassSummary,
    pub channel_collisions: u64,
    pub busy_time: SimTime,
    pub suspensions: u64,
}

impl RunSummary {
    pub fn class(&self, class: PriorityClass) -> &ClassSummary {
        match class {
            PriorityClass::Urgent => &self.urgent,
            PriorityClass::Normal => &self.normal,
        }
    }
}

/// Facts the summary needs from outside the packet records.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunTotals {
    /// Unfinalized packets found in sender queues at the end, per class.
    pub queued: [u64; 2],
    pub collisions: [u64; 2],
    pub channel_collisions: u64,
    pub busy_time: SimTime,
    pub suspensions: u64,
}

/// Reduce packet records to per-class delay and throughput, checking that
/// every generated packet is accounted for.
pub fn summarize(
    records: &[PacketRecord],
    duration: SimTime,
    totals: &RunTotals,
) -> Result<RunSummary, SimError> {
    let mut out = [ClassSummary::default(); 2];
    let mut delay_sum = [0u128; 2];
    for r in records {
        let s = &mut out[r.class().index()];
        s.generated += 1;
        if let Some(d) = r.delay() {
            s.delivered += 1;
            delay_sum[r.class().index()] += d.as_micros() as u128;
        }
        match r.dropped {
            Some(DropReason::Queue) => s.dropped_queue += 1,
            Some(DropReason::Retry) => s.dropped_retry += 1,
            None => {}
        }
    }
    let secs = duration.as_secs_f64();
    for class in PriorityClass::ALL {
        let i = class.index();
        let s = &mut out[i];
        s.queued = totals.queued[i];
        s.collisions = totals.collisions[i];
        s.mean_delay_us = (s.delivered > 0).then(|| delay_sum[i] as f64 / s.delivered as f64);
        s.throughput_bps = if secs > 0.0 {
            (PAYLOAD_BITS * s.delivered) as f64 / secs
        } else {
            0.0
        };
        if s.generated != s.delivered + s.dropped() + s.queued {
            return Err(SimError::Conservation {
                class: class.name(),
                generated: s.generated,
                delivered: s.delivered,
                dropped: s.dropped(),
                queued: s.queued,
            });
        }
    }
    Ok(RunSummary {
        duration,
        urgent: out[0],
        normal: out[1],
        channel_collisions: totals.channel_collisions,
        busy_time: totals.busy_time,
        suspensions: totals.suspensions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

impl Aggregate {
    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }

    /// The two intervals share no point.
    pub fn disjoint_from(&self, other: &Aggregate) -> bool {
        self.upper() < other.lower() || other.upper() < self.lower()
    }
}

/// Two-sided Student-t quantile `t(1 - (1 - confidence) / 2, df)`.
pub fn t_quantile(confidence: f64, df: usize) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    dist.inverse_cdf(1.0 - (1.0 - confidence) / 2.0)
}

/// Mean and Student-t half-width `t * s / sqrt(n)` over per-run values.
pub fn aggregate_ci(values: &[f64], confidence: f64) -> Result<Aggregate, SimError> {
    let n = values.len();
    if n < 2 {
        return Err(SimError::TooFewRuns(n));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let half_width = if var == 0.0 {
        0.0
    } else {
        t_quantile(confidence, n - 1) * var.sqrt() / (n as f64).sqrt()
    };
    Ok(Aggregate {
        mean,
        half_width,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::NodeId;

    fn id(class: PriorityClass, seq: u32) -> PacketId {
        PacketId {
            source: NodeId(1),
            class,
            seq,
        }
    }

    #[test]
    fn delivery_and_drop() {
        let mut m = Metrics::new();
        let a = m.register(id(PriorityClass::Urgent, 0), SimTime::from_micros(100));
        m.record_delivery(a, SimTime::from_micros(4502)).unwrap();
        assert_eq!(m.record(a).delay(), Some(SimTime::from_micros(4402)));
        let b = m.register(id(PriorityClass::Normal, 0), SimTime::ZERO);
        m.record_drop(b, DropReason::Queue).unwrap();
        assert!(matches!(
            m.record_drop(b, DropReason::Retry),
            Err(SimError::DoubleFinalize(_))
        ));
        assert!(m.record_delivery(a, SimTime::from_micros(5000)).is_err());
        let s = summarize(m.records(), SimTime::from_secs(1), &RunTotals::default()).unwrap();
        assert_eq!(s.normal.dropped(), 1);
        assert_eq!(s.normal.mean_delay_us, None);
        assert_eq!(s.urgent.mean_delay_us, Some(4402.0));
    }

    #[test]
    fn mean_delay_and_throughput() {
        let mut m = Metrics::new();
        for (i, d) in [10u64, 20, 30].into_iter().enumerate() {
            let r = m.register(id(PriorityClass::Urgent, i as u32), SimTime::ZERO);
            m.record_delivery(r, SimTime::from_micros(d)).unwrap();
        }
        let s = summarize(m.records(), SimTime::from_secs(1000), &RunTotals::default()).unwrap();
        assert_eq!(s.urgent.mean_delay_us, Some(20.0));

        let mut m = Metrics::new();
        for i in 0..5000 {
            let r = m.register(id(PriorityClass::Normal, i), SimTime::ZERO);
            m.record_delivery(r, SimTime::from_micros(5)).unwrap();
        }
        let s = summarize(m.records(), SimTime::from_secs(1000), &RunTotals::default()).unwrap();
        assert_eq!(s.normal.throughput_bps, 4840.0);
        assert_eq!(s.urgent.mean_delay_us, None);
    }

    #[test]
    fn conservation_checked() {
        let mut m = Metrics::new();
        m.register(id(PriorityClass::Normal, 0), SimTime::ZERO);
        let err = summarize(m.records(), SimTime::from_secs(1), &RunTotals::default());
        assert!(matches!(err, Err(SimError::Conservation { .. })));
        let totals = RunTotals {
            queued: [0, 1],
            ..RunTotals::default()
        };
        assert!(summarize(m.records(), SimTime::from_secs(1), &totals).is_ok());
    }

    #[test]
    fn student_t_ci() {
        let a = aggregate_ci(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.95).unwrap();
        assert_eq!(a.mean, 3.0);
        assert_eq!(a.n, 5);
        // t(0.975, 4) = 2.7764 from tables; s = sqrt(2.5)
        let expected = 2.776_445 * 2.5f64.sqrt() / 5f64.sqrt();
        assert!((a.half_width - expected).abs() < 1e-4, "{}", a.half_width);
        assert!((a.half_width - 1.963).abs() < 1e-3);
    }

    #[test]
    fn identical_values_zero_width() {
        let a = aggregate_ci(&[7.5; 5], 0.95).unwrap();
        assert_eq!(a.mean, 7.5);
        assert_eq!(a.half_width, 0.0);
    }

    #[test]
    fn single_run_rejected() {
        assert!(matches!(aggregate_ci(&[1.0], 0.95), Err(SimError::TooFewRuns(1))));
        assert!(matches!(aggregate_ci(&[], 0.95), Err(SimError::TooFewRuns(0))));
    }

    #[test]
    fn t_table_values() {
        // standard two-sided 95% table
        for (df, t) in [(1, 12.7062), (2, 4.3027), (4, 2.7764), (9, 2.2622), (30, 2.0423)] {
            assert!((t_quantile(0.95, df) - t).abs() < 1e-3, "df {df}");
        }
    }

    #[test]
    fn disjoint_intervals() {
        let a = Aggregate { mean: 1.0, half_width: 0.5, n: 5 };
        let b = Aggregate { mean: 2.0, half_width: 0.4, n: 5 };
        let c = Aggregate { mean: 2.0, half_width: 0.6, n: 5 };
        assert!(a.disjoint_from(&b));
        assert!(!a.disjoint_from(&c));
    }
}
