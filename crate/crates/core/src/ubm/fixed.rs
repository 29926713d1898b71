//! Saturating fixed-width counters matching the stat-store field widths.

use serde::{Deserialize, Serialize};

pub const MLP_FRAC_BITS: u32 = 10;
pub const MLP_ONE: u32 = 1 << MLP_FRAC_BITS;
pub const MLP_ACC_BITS: u32 = 25;
pub const MLP_ACC_MAX: u32 = (1 << MLP_ACC_BITS) - 1;
pub const MLP_WEIGHT_MAX: u16 = (1 << 15) - 1;
pub const MISS_COUNT_MAX: u8 = u8::MAX;

/// `m / n` as a 10-fractional-bit quotient, rounded to nearest.
pub fn quotient(m: u32, n: u32) -> u32 {
    debug_assert!(n > 0);
    ((m as u64 * MLP_ONE as u64 * 2 + n as u64) / (2 * n as u64)) as u32
}

/// Accumulator/weight pair for one access kind: `acc` holds the sum of
/// `m/N` in 15.10 fixed point, `weight` the sum of `m`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpCounter {
    acc: u32,
    weight: u16,
}

impl MlpCounter {
    pub fn from_raw(acc: u32, weight: u16) -> Self {
        MlpCounter {
            acc: acc.min(MLP_ACC_MAX),
            weight: weight.min(MLP_WEIGHT_MAX),
        }
    }

    pub fn acc_raw(&self) -> u32 {
        self.acc
    }

    pub fn acc(&self) -> f64 {
        self.acc as f64 / MLP_ONE as f64
    }

    pub fn weight(&self) -> u16 {
        self.weight
    }

    pub fn is_empty(&self) -> bool {
        self.weight == 0
    }

    /// Adds one sample with `m` outstanding page requests out of the
    /// application's `n`. The weight saturates at 15 bits; the accumulator
    /// only takes the share of the sample that still fits, so the ratio
    /// stays consistent.
    pub fn sample(&mut self, m: u32, n: u32) {
        if m == 0 || n == 0 {
            return;
        }
        let room = (MLP_WEIGHT_MAX - self.weight) as u32;
        let taken = m.min(room);
        if taken == 0 {
            return;
        }
        self.weight += taken as u16;
        self.acc = (self.acc + quotient(taken, n)).min(MLP_ACC_MAX);
    }

    /// Adds another counter into this one with the same saturation rule.
    pub fn merge(&mut self, other: &MlpCounter) {
        if other.weight == 0 {
            return;
        }
        let room = (MLP_WEIGHT_MAX - self.weight) as u32;
        let taken = (other.weight as u32).min(room);
        if taken == 0 {
            return;
        }
        let acc = if taken == other.weight as u32 {
            other.acc
        } else {
            (other.acc as u64 * taken as u64 / other.weight as u64) as u32
        };
        self.weight += taken as u16;
        self.acc = (self.acc + acc).min(MLP_ACC_MAX);
    }

    /// Halves both fields (optional per-quantum decay).
    pub fn halve(&mut self) {
        self.acc /= 2;
        self.weight /= 2;
    }
}

/// 8-bit saturating increment.
pub fn bump(c: &mut u8) {
    *c = c.saturating_add(1);
}

/// Speedup held in 8 bits: raw value `v` means `(v + 1) / 256`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredSpeedup(pub u8);

impl StoredSpeedup {
    pub const ONE: StoredSpeedup = StoredSpeedup(u8::MAX);

    pub fn encode(speedup: f64) -> Self {
        let v = (speedup * 256.0).round() - 1.0;
        StoredSpeedup(v.clamp(0.0, 255.0) as u8)
    }

    pub fn value(&self) -> f64 {
        (self.0 as f64 + 1.0) / 256.0
    }
}

impl Default for StoredSpeedup {
    fn default() -> Self {
        Self::ONE
    }
}
