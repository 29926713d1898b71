//! Closed-form pieces of the page-utility model, generic over the scalar.

use serde::{Deserialize, Serialize};

use crate::device::{service_latency, AccessKind, DevTiming, RowOutcome};
use crate::scalar::Scalar;

/// Per-row-miss latency saved by serving a request from DRAM instead of NVM,
/// in simulation cycles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyDelta<T> {
    pub read: T,
    pub write: T,
}

impl<T: Scalar> LatencyDelta<T> {
    /// `clock_ratio` converts device cycles to simulation cycles.
    pub fn from_devices(dram: &DevTiming, nvm: &DevTiming, clock_ratio: u64) -> Self {
        let delta = |kind| {
            let n = service_latency(nvm, kind, RowOutcome::RowMiss) as f64;
            let d = service_latency(dram, kind, RowOutcome::RowMiss) as f64;
            T::lit(((n - d) * clock_ratio as f64).max(0.0))
        };
        LatencyDelta {
            read: delta(AccessKind::Read),
            write: delta(AccessKind::Write),
        }
    }
}

/// Weighted-average MLP ratio: `acc / weight`, or 0 with no samples.
pub fn avg_mlp_ratio<T: Scalar>(acc: T, weight: T) -> T {
    if weight > T::zero() {
        acc / weight
    } else {
        T::zero()
    }
}

/// Total read and write latency reduction from the row-miss counts.
pub fn latency_reduction<T: Scalar>(read_misses: u32, write_misses: u32, delta: &LatencyDelta<T>) -> (T, T) {
    (
        T::from_count(read_misses as u64) * delta.read,
        T::from_count(write_misses as u64) * delta.write,
    )
}

/// Inputs of the stall-time-reduction estimate for one (page, app) pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StallInputs<T> {
    pub read_misses: u32,
    pub write_misses: u32,
    pub read_ratio: T,
    pub write_ratio: T,
}

/// Expected stall cycles saved: each latency reduction scaled by the exposed
/// fraction (MLP ratio); writes additionally by their criticality `p`.
pub fn stall_time_reduction<T: Scalar>(inputs: &StallInputs<T>, delta: &LatencyDelta<T>, write_criticality: T) -> T {
    let (read, write) = latency_reduction(inputs.read_misses, inputs.write_misses, delta);
    read * inputs.read_ratio + write_criticality * write * inputs.write_ratio
}

/// Change in weighted speedup per cycle of the app's stall time.
pub fn sensitivity<T: Scalar>(speedup: T, t_shared: T) -> T {
    speedup / t_shared
}

pub fn utility<T: Scalar>(stall_reduction: T, sensitivity: T) -> T {
    stall_reduction * sensitivity
}

/// Speedup estimate from one quantum of counters. The share of stall time
/// caused by other apps is taken to be the share of request delay that
/// interference accounts for. Result is clamped to `[floor, 1]`.
pub fn estimate_speedup<T: Scalar>(t_stall: u64, t_interference: u64, t_delay: u64, quantum: u64, floor: T) -> T {
    if t_delay == 0 || quantum == 0 {
        return T::one();
    }
    let excess = T::from_count(t_stall) * T::from_count(t_interference) / T::from_count(t_delay);
    let s = T::one() - excess / T::from_count(quantum);
    s.max(floor).min(T::one())
}

/// Exact speedup gain when shared execution time shrinks by `dt`.
pub fn speedup_gain_exact<T: Scalar>(t_alone: T, t_shared: T, dt: T) -> T {
    t_alone / (t_shared - dt) - t_alone / t_shared
}

/// First-order speedup gain: `speedup * dt / t_shared`.
pub fn speedup_gain_linear<T: Scalar>(t_alone: T, t_shared: T, dt: T) -> T {
    (t_alone / t_shared) * (dt / t_shared)
}
