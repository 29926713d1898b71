//! Page placement policies. Every policy is consulted when an NVM demand
//! request completes and either promotes the page or leaves it in NVM.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::ubm::{Direction, ThresholdState, UbmEngine};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Promote every page touched in NVM.
    All,
    /// Promote pages whose access count exceeds the threshold.
    Freq,
    /// Promote pages whose row-buffer miss count exceeds the threshold.
    Rbla,
    /// Promote pages whose estimated stall-time reduction exceeds the threshold.
    UbmSt,
    /// Promote pages whose utility (stall reduction times sensitivity)
    /// exceeds the threshold.
    Ubm,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::All,
        PolicyKind::Freq,
        PolicyKind::Rbla,
        PolicyKind::UbmSt,
        PolicyKind::Ubm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::All => "all",
            PolicyKind::Freq => "freq",
            PolicyKind::Rbla => "rbla",
            PolicyKind::UbmSt => "ubm-st",
            PolicyKind::Ubm => "ubm",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown policy `{s}` (expected all, freq, rbla, ubm-st or ubm)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Promote,
    Stay,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDecision {
    pub page_id: u64,
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Management epoch in cycles.
    pub quantum: u64,
    pub initial_threshold: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            kind: PolicyKind::Ubm,
            quantum: 1_000_000,
            initial_threshold: 0.0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.quantum == 0 {
            return Err("quantum must be > 0".into());
        }
        if !(self.initial_threshold >= 0.0) {
            return Err("initial_threshold must be >= 0".into());
        }
        Ok(())
    }
}

/// Threshold comparison shared by every counting policy.
pub fn threshold_decision<T: Scalar>(page_id: u64, metric: T, threshold: T) -> PolicyDecision {
    PolicyDecision {
        page_id,
        action: if metric > threshold { Action::Promote } else { Action::Stay },
    }
}

pub struct Policy<T> {
    pub kind: PolicyKind,
    pub threshold: ThresholdState<T>,
}

impl<T: Scalar> Policy<T> {
    pub fn new(cfg: &PolicyConfig, step_divisor: f64) -> Self {
        Policy {
            kind: cfg.kind,
            threshold: ThresholdState::new(T::lit(cfg.initial_threshold), T::lit(step_divisor)),
        }
    }

    /// The quantity compared against the threshold.
    pub fn metric(&self, ubm: &UbmEngine<T>, page: u64) -> T {
        let store = &ubm.store;
        match self.kind {
            PolicyKind::All => T::one(),
            PolicyKind::Freq => T::from_count(store.entries_for_page(page).map(|e| e.accesses as u64).sum()),
            PolicyKind::Rbla => T::from_count(store.entries_for_page(page).map(|e| e.row_misses() as u64).sum()),
            PolicyKind::UbmSt => ubm.page_stall_reduction(page),
            PolicyKind::Ubm => ubm.page_utility(page),
        }
    }

    /// `eligible` is false for pages already in DRAM, migrating or queued.
    pub fn decide(&mut self, ubm: &UbmEngine<T>, page: u64, eligible: bool) -> PolicyDecision {
        let stay = PolicyDecision {
            page_id: page,
            action: Action::Stay,
        };
        if !eligible {
            return stay;
        }
        if self.kind == PolicyKind::All {
            return PolicyDecision {
                page_id: page,
                action: Action::Promote,
            };
        }
        let m = self.metric(ubm, page);
        self.threshold.observe(m);
        threshold_decision(page, m, self.threshold.threshold)
    }

    /// Feeds the quantum's total stall time to the threshold controller.
    pub fn end_quantum(&mut self, total_stall: u64) -> Option<Direction> {
        if self.kind == PolicyKind::All {
            return None;
        }
        self.threshold.add_stall(total_stall);
        Some(self.threshold.adjust())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{AccessKind, RowOutcome};
    use crate::ubm::{LatencyDelta, UbmConfig};

    fn engine() -> UbmEngine<f64> {
        UbmEngine::new(UbmConfig::default(), LatencyDelta { read: 140.0, write: 580.0 }, 2, 1000)
    }

    fn policy(kind: PolicyKind, threshold: f64) -> Policy<f64> {
        let cfg = PolicyConfig {
            kind,
            initial_threshold: threshold,
            ..PolicyConfig::default()
        };
        Policy::new(&cfg, 16.0)
    }

    #[test]
    fn names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.to_string().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("lru".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn all_promotes_eligible_only() {
        let u = engine();
        let mut p = policy(PolicyKind::All, 0.0);
        assert_eq!(p.decide(&u, 1, true).action, Action::Promote);
        assert_eq!(p.decide(&u, 1, false).action, Action::Stay);
        assert_eq!(p.end_quantum(10), None);
    }

    #[test]
    fn freq_is_strict() {
        let mut u = engine();
        for _ in 0..5 {
            u.on_issue(1, 0, AccessKind::Read, RowOutcome::RowHit);
        }
        for _ in 0..10 {
            u.on_issue(2, 0, AccessKind::Read, RowOutcome::RowHit);
        }
        let mut p = policy(PolicyKind::Freq, 5.0);
        assert_eq!(p.decide(&u, 1, true).action, Action::Stay);
        assert_eq!(p.decide(&u, 2, true).action, Action::Promote);
        for _ in 0..300 {
            u.on_issue(3, 0, AccessKind::Read, RowOutcome::RowHit);
        }
        let mut p = policy(PolicyKind::Freq, 254.0);
        assert_eq!(p.decide(&u, 3, true).action, Action::Promote);
    }

    #[test]
    fn rbla_ignores_row_hits() {
        let mut u = engine();
        for _ in 0..8 {
            u.on_issue(1, 0, AccessKind::Read, RowOutcome::RowMiss);
        }
        for _ in 0..200 {
            u.on_issue(2, 0, AccessKind::Read, RowOutcome::RowHit);
        }
        let mut p = policy(PolicyKind::Rbla, 4.0);
        assert_eq!(p.decide(&u, 1, true).action, Action::Promote);
        assert_eq!(p.decide(&u, 2, true).action, Action::Stay);
        let mut p = policy(PolicyKind::Rbla, 0.0);
        assert_eq!(p.decide(&u, 9, true).action, Action::Stay);
    }

    #[test]
    fn ubm_st_prefers_isolated_page() {
        let mut u = engine();
        for _ in 0..4 {
            // Page 0 alone; pages 1 and 2 always outstanding together.
            u.on_inject(0, 0, AccessKind::Read);
            u.on_issue(0, 0, AccessKind::Read, RowOutcome::RowMiss);
            u.sample(|_| (1, 0));
            u.on_complete(0, 0, AccessKind::Read);
            for p in [1, 2] {
                u.on_inject(p, 0, AccessKind::Read);
                u.on_issue(p, 0, AccessKind::Read, RowOutcome::RowMiss);
            }
            u.sample(|_| (2, 0));
            u.on_complete(1, 0, AccessKind::Read);
            u.on_complete(2, 0, AccessKind::Read);
        }
        let p = policy(PolicyKind::UbmSt, 0.0);
        assert!(p.metric(&u, 0) > p.metric(&u, 1));
        assert_eq!(p.metric(&u, 0), 2.0 * p.metric(&u, 1));
        let mut p = policy(PolicyKind::UbmSt, 0.0);
        assert_eq!(p.decide(&u, 7, true).action, Action::Stay);
    }

    #[test]
    fn ubm_matches_ubm_st_under_equal_sensitivity() {
        let mut u = engine();
        for page in 0..6u64 {
            for _ in 0..page {
                u.on_inject(page, (page % 2) as u32, AccessKind::Read);
                u.on_issue(page, (page % 2) as u32, AccessKind::Read, RowOutcome::RowMiss);
                u.sample(|_| (1, 0));
                u.on_complete(page, (page % 2) as u32, AccessKind::Read);
            }
        }
        let st = policy(PolicyKind::UbmSt, 300.0);
        let ubm = policy(PolicyKind::Ubm, 300.0 / 1000.0);
        for page in 0..6 {
            let a = threshold_decision(page, st.metric(&u, page), 300.0).action;
            let b = threshold_decision(page, ubm.metric(&u, page), 0.3).action;
            assert_eq!(a, b, "page {page}");
        }
    }
}
