//! Seeded random streams, one per `(node, purpose)` pair.
//!
//! Every stream is derived from the run seed and its identity alone, so
//! changing how often one node draws never perturbs another node's sequence.
//! This keeps protocol A/B comparisons paired: traffic streams are identical
//! across protocols for the same seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::SimError;
use crate::time::SimTime;

/// What a stream is used for. Part of the stream identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    UrgentArrivals,
    NormalPhase,
    UrgentPayload,
    NormalPayload,
    UrgentBackoff,
    NormalBackoff,
    Test(u64),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::UrgentArrivals => 1,
            Purpose::NormalPhase => 2,
            Purpose::UrgentPayload => 3,
            Purpose::NormalPayload => 4,
            Purpose::UrgentBackoff => 5,
            Purpose::NormalBackoff => 6,
            Purpose::Test(t) => 0x1000 ^ t,
        }
    }
}

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold a list of words into one 64-bit seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x005E_ED0F_F00D_u64, |acc, &p| mix64(acc ^ mix64(p)))
}

pub struct RandomStream {
    seed: u64,
    node: u32,
    purpose: Purpose,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64, node: u32, purpose: Purpose) -> Self {
        let derived = derive_seed(&[seed, node as u64, purpose.tag()]);
        RandomStream {
            seed,
            node,
            purpose,
            rng: ChaCha8Rng::seed_from_u64(derived),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn identity(&self) -> (u32, Purpose) {
        (self.node, self.purpose)
    }

    /// Uniform integer in `[lo, hi]`.
    ///
    /// # Panics
    ///
    /// Panics if `lo > hi`.
    pub fn draw_uniform_int(&mut self, lo: u64, hi: u64) -> u64 {
        assert!(lo <= hi, "empty range [{lo}, {hi}]");
        self.rng.random_range(lo..=hi)
    }

    /// Exponential sample with the given mean, rounded to whole microseconds.
    pub fn draw_exponential(&mut self, mean: SimTime) -> Result<SimTime, SimError> {
        if mean == SimTime::ZERO {
            return Err(SimError::InvalidMean);
        }
        let exp = Exp::new(1.0 / mean.as_micros() as f64).map_err(|_| SimError::InvalidMean)?;
        let x: f64 = exp.sample(&mut self.rng);
        Ok(SimTime::from_micros(x.round() as u64))
    }

    pub fn fill_bytes(&mut self, buf: &mut [u8]) {
        self.rng.fill(buf);
    }
}
