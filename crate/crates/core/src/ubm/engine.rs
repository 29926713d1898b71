use serde::{Deserialize, Serialize};

use super::fixed::StoredSpeedup;
use super::formulas::{self, LatencyDelta, StallInputs};
use super::hot_pages::HotPages;
use super::stat_store::{PageStats, StatStore};
use crate::controller::AppId;
use crate::cpu::AppCounters;
use crate::device::{AccessKind, RowOutcome};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UbmConfig {
    pub stat_sets: usize,
    pub stat_ways: usize,
    pub hot_capacity: usize,
    pub sampling_period: u64,
    /// Probability that a write lies on the critical path.
    pub write_criticality: f64,
    /// Threshold step is the quantum's mean nonzero metric divided by this.
    pub step_divisor: f64,
    /// Halve every stat-store counter at each quantum boundary.
    pub decay_each_quantum: bool,
}

impl Default for UbmConfig {
    fn default() -> Self {
        UbmConfig {
            stat_sets: 64,
            stat_ways: 32,
            hot_capacity: 96,
            sampling_period: 30,
            write_criticality: 1.0,
            step_divisor: 16.0,
            decay_each_quantum: false,
        }
    }
}

impl UbmConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.stat_sets == 0 || self.stat_ways == 0 {
            return Err("stat store geometry must be non-zero".into());
        }
        if self.sampling_period == 0 {
            return Err("sampling_period must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.write_criticality) {
            return Err("write_criticality must be in [0, 1]".into());
        }
        if !(self.step_divisor > 0.0) {
            return Err("step_divisor must be > 0".into());
        }
        Ok(())
    }
}

/// Utility decomposition of one stat-store entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityRow {
    pub page_id: u64,
    pub app_id: AppId,
    pub accesses: u8,
    pub read_miss: u8,
    pub write_miss: u8,
    pub read_mlp_ratio: f64,
    pub write_mlp_ratio: f64,
    pub stall_reduction: f64,
    pub sensitivity: f64,
    pub utility: f64,
    pub page_utility: f64,
}

pub struct UbmEngine<T> {
    pub cfg: UbmConfig,
    pub store: StatStore,
    pub hot: HotPages,
    pub delta: LatencyDelta<T>,
    speedups: Vec<StoredSpeedup>,
    quantum: u64,
}

impl<T: Scalar> UbmEngine<T> {
    pub fn new(cfg: UbmConfig, delta: LatencyDelta<T>, num_apps: usize, quantum: u64) -> Self {
        UbmEngine {
            store: StatStore::new(cfg.stat_sets, cfg.stat_ways),
            hot: HotPages::new(cfg.hot_capacity),
            cfg,
            delta,
            speedups: vec![StoredSpeedup::ONE; num_apps],
            quantum,
        }
    }

    /// Row-buffer outcome of an NVM demand access, known at issue.
    pub fn on_issue(&mut self, page: u64, app: AppId, kind: AccessKind, outcome: RowOutcome) {
        self.store.entry(page, app).record_access(kind, outcome);
    }

    pub fn on_inject(&mut self, page: u64, app: AppId, kind: AccessKind) {
        self.hot.inject(page, app, kind);
    }

    /// Returns true when the page's temporary counters were folded.
    pub fn on_complete(&mut self, page: u64, app: AppId, kind: AccessKind) -> bool {
        match self.hot.complete(page, app, kind) {
            Some((r, w)) => {
                if !(r.is_empty() && w.is_empty()) {
                    self.store.entry(page, app).fold(&r, &w);
                }
                true
            }
            None => false,
        }
    }

    pub fn sample(&mut self, outstanding: impl FnMut(AppId) -> (usize, usize)) {
        self.hot.sample(outstanding);
    }

    pub fn speedup(&self, app: AppId) -> T {
        self.speedups
            .get(app as usize)
            .map_or(T::one(), |s| T::lit(s.value()))
    }

    pub fn sensitivity(&self, app: AppId) -> T {
        formulas::sensitivity(self.speedup(app), T::from_count(self.quantum))
    }

    pub fn stall_reduction(&self, e: &PageStats) -> T {
        let (rr, rw) = e.mlp_ratios();
        let inputs = StallInputs {
            read_misses: e.read_miss as u32,
            write_misses: e.write_miss as u32,
            read_ratio: T::lit(rr),
            write_ratio: T::lit(rw),
        };
        formulas::stall_time_reduction(&inputs, &self.delta, T::lit(self.cfg.write_criticality))
    }

    /// Stall reduction summed over every application sharing the page.
    pub fn page_stall_reduction(&self, page: u64) -> T {
        self.store
            .entries_for_page(page)
            .fold(T::zero(), |acc, e| acc + self.stall_reduction(e))
    }

    pub fn page_utility(&self, page: u64) -> T {
        self.store.entries_for_page(page).fold(T::zero(), |acc, e| {
            acc + formulas::utility(self.stall_reduction(e), self.sensitivity(e.app_id))
        })
    }

    /// Updates each application's speedup estimate from its quantum counters.
    pub fn end_quantum(&mut self, counters: &[AppCounters]) -> Vec<T> {
        let floor = T::lit(1.0 / 256.0);
        let est: Vec<T> = counters
            .iter()
            .map(|c| formulas::estimate_speedup(c.t_stall, c.t_interference, c.t_delay, self.quantum, floor))
            .collect();
        for (slot, s) in self.speedups.iter_mut().zip(&est) {
            *slot = StoredSpeedup::encode(s.as_f64());
        }
        if self.cfg.decay_each_quantum {
            self.store.decay();
        }
        est
    }

    pub fn invalidate(&mut self, page: u64) {
        self.store.invalidate_page(page);
    }

    /// Entries of the `k` pages with the highest utility, best first.
    pub fn top_pages(&self, k: usize) -> Vec<UtilityRow> {
        let mut pages: Vec<u64> = self.store.iter().map(|e| e.page_id).collect();
        pages.sort_unstable();
        pages.dedup();
        let mut scored: Vec<(f64, u64)> = pages.iter().map(|&p| (self.page_utility(p).as_f64(), p)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut rows = Vec::new();
        for &(page_utility, page) in scored.iter().take(k) {
            let mut entries: Vec<&PageStats> = self.store.entries_for_page(page).collect();
            entries.sort_by_key(|e| e.app_id);
            for e in entries {
                let (rr, rw) = e.mlp_ratios();
                let st = self.stall_reduction(e);
                let sens = self.sensitivity(e.app_id);
                rows.push(UtilityRow {
                    page_id: page,
                    app_id: e.app_id,
                    accesses: e.accesses,
                    read_miss: e.read_miss,
                    write_miss: e.write_miss,
                    read_mlp_ratio: rr,
                    write_mlp_ratio: rw,
                    stall_reduction: st.as_f64(),
                    sensitivity: sens.as_f64(),
                    utility: (st * sens).as_f64(),
                    page_utility,
                });
            }
        }
        rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn engine() -> UbmEngine<f64> {
        let delta = LatencyDelta { read: 140.0, write: 580.0 };
        UbmEngine::new(UbmConfig::default(), delta, 2, 1_000_000)
    }

    #[test]
    fn isolated_page_scores_full_latency() {
        let mut u = engine();
        for _ in 0..10 {
            u.on_inject(3, 0, AccessKind::Read);
            u.on_issue(3, 0, AccessKind::Read, RowOutcome::RowMiss);
            u.sample(|_| (1, 0));
            assert!(u.on_complete(3, 0, AccessKind::Read));
        }
        assert_eq!(u.page_stall_reduction(3), 1400.0);
        assert_eq!(u.page_utility(3), 1400.0 / 1e6);
    }

    #[test]
    fn shared_page_sums_apps() {
        let mut u = engine();
        for app in 0..2 {
            u.on_inject(9, app, AccessKind::Read);
            u.on_issue(9, app, AccessKind::Read, RowOutcome::RowMiss);
            u.sample(|_| (2, 0));
        }
        // One of two outstanding reads for app 0; app 1 has both its reads here.
        u.on_complete(9, 0, AccessKind::Read);
        u.on_complete(9, 1, AccessKind::Read);
        let e0 = *u.store.get(9, 0).unwrap();
        let e1 = *u.store.get(9, 1).unwrap();
        let total = u.page_utility(9);
        let parts = u.stall_reduction(&e0) * u.sensitivity(0) + u.stall_reduction(&e1) * u.sensitivity(1);
        assert_eq!(total, parts);
        assert_eq!(u.page_stall_reduction(9), 2.0 * 70.0);
    }

    #[test]
    fn speedup_feeds_sensitivity() {
        let mut u = engine();
        assert_eq!(u.sensitivity(1), 1e-6);
        let c = AppCounters {
            t_stall: 600_000,
            t_delay: 600_000,
            t_interference: 300_000,
            retired: 0,
        };
        let est = u.end_quantum(&[AppCounters::default(), c]);
        assert_eq!(est[1], 0.7);
        assert!((u.speedup(1) - 0.7).abs() <= 1.0 / 256.0);
        assert!(u.sensitivity(0) > u.sensitivity(1));
    }
}
