//! Multiprogrammed performance metrics and the run report.

use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::controller::ControllerStats;
use crate::migration::MigrationCounters;
use crate::policy::PolicyKind;
use crate::scalar::Scalar;
use crate::sim::{EnergyBreakdown, QuantumRecord, SimResult, UtilityDump};

pub const SCHEMA_VERSION: u32 = 1;

/// Speedups above `1 + SPEEDUP_SLACK` are flagged in reports.
pub const SPEEDUP_SLACK: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no alone-run IPC for application {0}")]
    MissingAloneRun(usize),
    #[error("application {0} has a non-positive IPC")]
    NonPositiveIpc(usize),
    #[error("no applications")]
    Empty,
}

/// Shared and alone IPC of one application.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IpcPair<T> {
    pub shared: T,
    pub alone: Option<T>,
}

impl<T: Scalar> IpcPair<T> {
    pub fn new(shared: T, alone: T) -> Self {
        IpcPair {
            shared,
            alone: Some(alone),
        }
    }
}

fn checked<T: Scalar>(pairs: &[IpcPair<T>]) -> Result<Vec<(T, T)>, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let alone = p.alone.ok_or(MetricsError::MissingAloneRun(i))?;
            if !(alone > T::zero()) || !(p.shared > T::zero()) {
                return Err(MetricsError::NonPositiveIpc(i));
            }
            Ok((p.shared, alone))
        })
        .collect()
}

/// Sum of per-application speedups.
pub fn weighted_speedup<T: Scalar>(pairs: &[IpcPair<T>]) -> Result<T, MetricsError> {
    Ok(checked(pairs)?.into_iter().fold(T::zero(), |acc, (s, a)| acc + s / a))
}

/// Harmonic mean of per-application speedups.
pub fn harmonic_speedup<T: Scalar>(pairs: &[IpcPair<T>]) -> Result<T, MetricsError> {
    let v = checked(pairs)?;
    let denom = v.iter().fold(T::zero(), |acc, &(s, a)| acc + a / s);
    Ok(T::from_count(v.len() as u64) / denom)
}

/// Maximum slowdown.
pub fn unfairness<T: Scalar>(pairs: &[IpcPair<T>]) -> Result<T, MetricsError> {
    Ok(checked(pairs)?
        .into_iter()
        .fold(T::zero(), |acc, (s, a)| acc.max(a / s)))
}

/// Weighted speedup per watt of average memory power.
pub fn perf_per_watt<T: Scalar>(weighted_speedup: T, energy_j: T, seconds: T) -> T {
    weighted_speedup / (energy_j / seconds)
}

/// Hex SHA-256 of the canonical JSON form of `value`.
pub fn config_hash<S: Serialize>(value: &S) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(json))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppReport {
    pub app_id: u32,
    pub name: String,
    pub trace_hash: String,
    pub instructions: u64,
    pub cycles: u64,
    pub ipc_shared: f64,
    pub ipc_alone: Option<f64>,
    pub speedup: Option<f64>,
    pub stall_cycles: u64,
    pub interference_cycles: u64,
    pub completed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub weighted_speedup: Option<f64>,
    pub harmonic_speedup: Option<f64>,
    pub unfairness: Option<f64>,
    pub total_stall_cycles: u64,
    pub energy_j: f64,
    pub perf_per_watt: Option<f64>,
    /// Weighted speedup divided by the baseline policy's.
    pub normalized_weighted_speedup: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub policy: PolicyKind,
    pub baseline_policy: PolicyKind,
    pub apps: Vec<AppReport>,
    pub totals: Totals,
    pub energy: EnergyBreakdown,
    pub migration: MigrationCounters,
    pub dram: ControllerStats,
    pub nvm: ControllerStats,
    pub cycles: u64,
    pub truncated: bool,
    pub warnings: Vec<String>,
    #[serde(default)]
    pub quanta: Vec<QuantumRecord>,
    #[serde(default)]
    pub utility: Vec<UtilityDump>,
}

impl SimReport {
    /// Builds a report from a shared run and the matching alone-run IPCs.
    pub fn build<C: Serialize>(
        config: &C,
        policy: PolicyKind,
        baseline_policy: PolicyKind,
        result: &SimResult,
        alone: &[Option<f64>],
    ) -> SimReport {
        let mut warnings = Vec::new();
        let pairs: Vec<IpcPair<f64>> = result
            .apps
            .iter()
            .enumerate()
            .map(|(i, a)| IpcPair {
                shared: a.ipc,
                alone: alone.get(i).copied().flatten(),
            })
            .collect();
        let apps: Vec<AppReport> = result
            .apps
            .iter()
            .zip(&pairs)
            .map(|(a, p)| {
                let speedup = p.alone.filter(|&x| x > 0.0).map(|x| a.ipc / x);
                if let Some(s) = speedup {
                    if s > 1.0 + SPEEDUP_SLACK {
                        warnings.push(format!("{}: speedup {s:.3} exceeds 1 by more than {SPEEDUP_SLACK}", a.name));
                    }
                }
                if !a.completed {
                    warnings.push(format!("{}: instruction budget not reached", a.name));
                }
                AppReport {
                    app_id: a.app_id,
                    name: a.name.clone(),
                    trace_hash: a.trace_hash.clone(),
                    instructions: a.instructions,
                    cycles: a.cycles,
                    ipc_shared: a.ipc,
                    ipc_alone: p.alone,
                    speedup,
                    stall_cycles: a.stall_cycles,
                    interference_cycles: a.interference_cycles,
                    completed: a.completed,
                }
            })
            .collect();
        let ws = weighted_speedup(&pairs).ok();
        let energy_j = result.energy.total_j();
        let ppw = ws.filter(|_| energy_j > 0.0).map(|w| perf_per_watt(w, energy_j, result.energy.seconds));
        SimReport {
            schema_version: SCHEMA_VERSION,
            config_hash: config_hash(config),
            config: serde_json::to_value(config).expect("config serializes"),
            policy,
            baseline_policy,
            totals: Totals {
                weighted_speedup: ws,
                harmonic_speedup: harmonic_speedup(&pairs).ok(),
                unfairness: unfairness(&pairs).ok(),
                total_stall_cycles: result.apps.iter().map(|a| a.stall_cycles).sum(),
                energy_j,
                perf_per_watt: ppw,
                normalized_weighted_speedup: None,
            },
            apps,
            energy: result.energy.clone(),
            migration: result.migration,
            dram: result.dram.clone(),
            nvm: result.nvm.clone(),
            cycles: result.cycles,
            truncated: result.truncated,
            warnings,
            quanta: result.quanta.clone(),
            utility: result.utility.clone(),
        }
    }

    pub fn normalize_to(&mut self, baseline: &SimReport) {
        self.totals.normalized_weighted_speedup = match (self.totals.weighted_speedup, baseline.totals.weighted_speedup) {
            (Some(a), Some(b)) if b > 0.0 => Some(a / b),
            _ => None,
        };
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<SimReport> {
        serde_json::from_str(text)
    }

    /// One row per application followed by a totals row.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for a in &self.apps {
            w.write_record([
                self.policy.name().to_string(),
                a.app_id.to_string(),
                a.name.clone(),
                a.ipc_shared.to_string(),
                opt(a.ipc_alone),
                opt(a.speedup),
                a.stall_cycles.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                self.config_hash.clone(),
            ])?;
        }
        let t = &self.totals;
        w.write_record([
            self.policy.name().to_string(),
            "total".to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            t.total_stall_cycles.to_string(),
            opt(t.weighted_speedup),
            opt(t.harmonic_speedup),
            opt(t.unfairness),
            t.energy_j.to_string(),
            opt(t.perf_per_watt),
            opt(t.normalized_weighted_speedup),
            self.migration.promoted.to_string(),
            self.config_hash.clone(),
        ])?;
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory csv");
        String::from_utf8(buf).expect("utf-8 csv")
    }

    /// Per-quantum counters as CSV.
    pub fn quanta_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "quantum",
            "end_cycle",
            "threshold",
            "direction",
            "app",
            "t_stall",
            "t_delay",
            "t_interference",
            "retired",
            "speedup_estimate",
            "dram_reads",
            "dram_writes",
            "dram_row_hit_rate",
            "dram_avg_queue_latency",
            "nvm_reads",
            "nvm_writes",
            "nvm_row_hit_rate",
            "nvm_avg_queue_latency",
            "promoted",
            "evicted",
            "migration_bytes",
            "dram_hit_rate",
        ])
        .expect("in-memory csv");
        for q in &self.quanta {
            for (i, a) in q.apps.iter().enumerate() {
                let dir = q.direction.map(|d| format!("{d:?}").to_lowercase()).unwrap_or_default();
                w.write_record([
                    q.index.to_string(),
                    q.end_cycle.to_string(),
                    q.threshold.to_string(),
                    dir,
                    i.to_string(),
                    a.t_stall.to_string(),
                    a.t_delay.to_string(),
                    a.t_interference.to_string(),
                    a.retired.to_string(),
                    q.speedup_estimates.get(i).map(|s| s.to_string()).unwrap_or_default(),
                    q.dram.reads.to_string(),
                    q.dram.writes.to_string(),
                    q.dram.row_hit_rate().to_string(),
                    q.dram.avg_queue_latency().to_string(),
                    q.nvm.reads.to_string(),
                    q.nvm.writes.to_string(),
                    q.nvm.row_hit_rate().to_string(),
                    q.nvm.avg_queue_latency().to_string(),
                    q.migration.promoted.to_string(),
                    q.migration.evicted.to_string(),
                    q.migration.traffic_bytes().to_string(),
                    q.dram_hit_rate.to_string(),
                ])
                .expect("in-memory csv");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }

    /// Top-K utility dump as CSV.
    pub fn utility_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "quantum",
            "page_id",
            "app_id",
            "accesses",
            "read_miss",
            "write_miss",
            "read_mlp_ratio",
            "write_mlp_ratio",
            "stall_reduction",
            "sensitivity",
            "utility",
            "page_utility",
        ])
        .expect("in-memory csv");
        for d in &self.utility {
            let r = &d.row;
            w.write_record([
                d.quantum.to_string(),
                r.page_id.to_string(),
                r.app_id.to_string(),
                r.accesses.to_string(),
                r.read_miss.to_string(),
                r.write_miss.to_string(),
                r.read_mlp_ratio.to_string(),
                r.write_mlp_ratio.to_string(),
                r.stall_reduction.to_string(),
                r.sensitivity.to_string(),
                r.utility.to_string(),
                r.page_utility.to_string(),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }
}

pub const CSV_HEADER: [&str; 15] = [
    "policy",
    "app",
    "name",
    "ipc_shared",
    "ipc_alone",
    "speedup",
    "stall_cycles",
    "weighted_speedup",
    "harmonic_speedup",
    "unfairness",
    "energy_j",
    "perf_per_watt",
    "normalized_weighted_speedup",
    "pages_promoted",
    "config_hash",
];
