//! Whole-system simulation: cores, the two memory controllers, the DRAM
//! directory with its migration engine, and the placement policy, advanced
//! together one core cycle at a time.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{AppId, Controller, ControllerConfig, ControllerStats, MemRequest, RequestTag};
use crate::cpu::{AppCounters, Core, CoreConfig};
use crate::device::{
    service_latency, standby_energy_j, AccessKind, DevTiming, DeviceGeometry, DeviceKind, RowOutcome, BLOCK_BYTES,
};
use crate::migration::{MigrationConfig, MigrationCounters, MigrationDirection, MigrationEngine, Route};
use crate::policy::{Action, Policy, PolicyConfig};
use crate::scalar::Scalar;
use crate::trace::Trace;
use crate::ubm::{Direction, LatencyDelta, UbmConfig, UbmEngine, UtilityRow};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no traces given")]
    NoTraces,
    #[error("invariant violated at cycle {cycle}: {msg}")]
    Invariant { cycle: u64, msg: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dram: DevTiming,
    pub nvm: DevTiming,
    pub dram_capacity: u64,
    pub nvm_capacity: u64,
    pub page_size: u64,
    pub associativity: usize,
    /// Core cycles per memory device cycle.
    pub clock_ratio: u64,
    /// Core cycles spent in the DRAM tag lookup before a request is queued.
    pub lookup_latency: u64,
    pub controller: ControllerConfig,
    pub core: CoreConfig,
    pub policy: PolicyConfig,
    pub ubm: UbmConfig,
    pub migration: MigrationConfig,
    pub warmup_instructions: u64,
    pub measured_instructions: u64,
    /// Hard stop; cores that have not finished are closed at this cycle.
    pub max_cycles: u64,
    /// Restart traces from the beginning when they run out.
    pub repeat_traces: bool,
    pub migrations_enabled: bool,
    /// All applications address one physical page space instead of each
    /// getting a private slice of NVM.
    pub shared_address_space: bool,
    /// Pages per quantum written to the utility dump; 0 disables it.
    pub top_k: usize,
    pub record_quanta: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dram: DevTiming::dram_baseline(),
            nvm: DevTiming::nvm_baseline(),
            dram_capacity: 512 << 20,
            nvm_capacity: 16 << 30,
            page_size: 8192,
            associativity: 16,
            clock_ratio: 5,
            lookup_latency: 6,
            controller: ControllerConfig::default(),
            core: CoreConfig::default(),
            policy: PolicyConfig::default(),
            ubm: UbmConfig::default(),
            migration: MigrationConfig::default(),
            warmup_instructions: 5_000_000,
            measured_instructions: 20_000_000,
            max_cycles: u64::MAX,
            repeat_traces: true,
            migrations_enabled: true,
            shared_address_space: false,
            top_k: 0,
            record_quanta: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let err = |m: String| Err(SimError::Config(m));
        self.dram.validate().map_err(|e| SimError::Config(format!("dram: {e}")))?;
        self.nvm.validate().map_err(|e| SimError::Config(format!("nvm: {e}")))?;
        for (name, cap) in [("dram", self.dram_capacity), ("nvm", self.nvm_capacity)] {
            let mut g = DeviceGeometry::with_capacity(cap);
            g.page_size = self.page_size;
            g.row_size = self.page_size;
            g.validate().map_err(|e| SimError::Config(format!("{name}: {e}")))?;
        }
        if !self.page_size.is_power_of_two() || self.page_size < BLOCK_BYTES {
            return err(format!("page_size {} must be a power of two >= {BLOCK_BYTES}", self.page_size));
        }
        let frames = self.dram_capacity / self.page_size;
        if self.associativity == 0 || !frames.is_multiple_of(self.associativity as u64) {
            return err(format!("associativity {} must divide {frames} DRAM frames", self.associativity));
        }
        if self.clock_ratio == 0 {
            return err("clock_ratio must be > 0".into());
        }
        if self.measured_instructions == 0 {
            return err("measured_instructions must be > 0".into());
        }
        if self.core.width == 0 || self.core.rob_capacity == 0 || self.core.mshr_capacity == 0 {
            return err("core width, rob and mshr sizes must be > 0".into());
        }
        self.controller.validate().map_err(SimError::Config)?;
        self.policy.validate().map_err(SimError::Config)?;
        self.ubm.validate().map_err(SimError::Config)?;
        self.migration.validate().map_err(SimError::Config)?;
        Ok(())
    }

    pub fn dram_frames(&self) -> u64 {
        self.dram_capacity / self.page_size
    }

    pub fn nvm_frames(&self) -> u64 {
        self.nvm_capacity / self.page_size
    }

    fn geometry(&self, capacity: u64) -> DeviceGeometry {
        let mut g = DeviceGeometry::with_capacity(capacity);
        g.page_size = self.page_size;
        g.row_size = self.page_size;
        g
    }
}

/// Per-application outcome of the measured region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppResult {
    pub app_id: AppId,
    pub name: String,
    pub trace_hash: String,
    pub instructions: u64,
    pub cycles: u64,
    pub ipc: f64,
    pub stall_cycles: u64,
    /// Interference cycles charged to the application over the whole run.
    pub interference_cycles: u64,
    /// Sum of per-request interference delays over the whole run.
    pub request_interference: u64,
    /// False when the instruction budget was not reached.
    pub completed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub dram_dynamic_j: f64,
    pub nvm_dynamic_j: f64,
    pub dram_standby_j: f64,
    pub nvm_standby_j: f64,
    pub seconds: f64,
}

impl EnergyBreakdown {
    pub fn total_j(&self) -> f64 {
        self.dram_dynamic_j + self.nvm_dynamic_j + self.dram_standby_j + self.nvm_standby_j
    }

    pub fn power_w(&self) -> f64 {
        if self.seconds > 0.0 {
            self.total_j() / self.seconds
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantumRecord {
    pub index: u64,
    pub end_cycle: u64,
    pub threshold: f64,
    pub direction: Option<Direction>,
    pub apps: Vec<AppCounters>,
    pub speedup_estimates: Vec<f64>,
    pub dram: ControllerStats,
    pub nvm: ControllerStats,
    pub migration: MigrationCounters,
    /// Fraction of demand accesses served by DRAM or the migration buffer.
    pub dram_hit_rate: f64,
    pub stat_store_entries: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityDump {
    pub quantum: u64,
    pub row: UtilityRow,
}

/// Exact per-page statistics collected for analysis, independent of the
/// capacity-limited hardware structures.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PageProfile {
    pub page_id: u64,
    pub app_id: AppId,
    pub accesses: u64,
    /// NVM row-buffer outcomes per kind.
    pub read_hits: u64,
    pub read_misses: u64,
    pub write_hits: u64,
    pub write_misses: u64,
    /// Per kind, the sum over samples of outstanding requests to the page
    /// divided by the application's outstanding requests of that kind.
    pub read_mlp_sum: f64,
    pub write_mlp_sum: f64,
    /// Per kind, the sum over samples of outstanding requests to the page.
    pub read_mlp_weight: u64,
    pub write_mlp_weight: u64,
    /// Core stall cycles with a request to this page at the reorder-buffer head.
    pub stall_cycles: u64,
}

impl PageProfile {
    pub fn row_misses(&self) -> u64 {
        self.read_misses + self.write_misses
    }

    /// Average read MLP ratio; 1 without samples.
    pub fn read_mlp_ratio(&self) -> f64 {
        ratio_or_one(self.read_mlp_sum, self.read_mlp_weight)
    }

    pub fn write_mlp_ratio(&self) -> f64 {
        ratio_or_one(self.write_mlp_sum, self.write_mlp_weight)
    }

    /// Device latency of the page's NVM accesses, per kind.
    pub fn latency(&self, nvm: &DevTiming) -> (f64, f64) {
        let lat = |kind, hits: u64, misses: u64| {
            (hits * service_latency(nvm, kind, RowOutcome::RowHit)
                + misses * service_latency(nvm, kind, RowOutcome::RowMiss)) as f64
        };
        (
            lat(AccessKind::Read, self.read_hits, self.read_misses),
            lat(AccessKind::Write, self.write_hits, self.write_misses),
        )
    }
}

fn ratio_or_one(sum: f64, weight: u64) -> f64 {
    if weight == 0 {
        1.0
    } else {
        sum / weight as f64
    }
}

#[derive(Default)]
struct Profiler {
    pages: BTreeMap<(u64, AppId), PageProfile>,
    /// Outstanding (reads, writes) per page.
    outstanding: BTreeMap<(u64, AppId), (u32, u32)>,
}

impl Profiler {
    fn entry(&mut self, page: u64, app: AppId) -> &mut PageProfile {
        self.pages.entry((page, app)).or_insert_with(|| PageProfile {
            page_id: page,
            app_id: app,
            ..PageProfile::default()
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub apps: Vec<AppResult>,
    pub cycles: u64,
    /// Cycles from the point every core finished warming up to the end.
    pub region_cycles: u64,
    pub energy: EnergyBreakdown,
    /// Migration activity inside the measured region.
    pub migration: MigrationCounters,
    pub dram: ControllerStats,
    pub nvm: ControllerStats,
    pub quanta: Vec<QuantumRecord>,
    pub utility: Vec<UtilityDump>,
    pub profile: Option<Vec<PageProfile>>,
    pub stat_store_peak: usize,
    pub truncated: bool,
}

struct BufferHit {
    at: u64,
    app: usize,
    slot: u64,
    kind: AccessKind,
    page: u64,
}

#[derive(Clone, Copy, Default)]
struct Snapshot {
    cycle: u64,
    dram_pj: f64,
    nvm_pj: f64,
    migration: MigrationCounters,
}

pub struct System<T> {
    cfg: SimConfig,
    names: Vec<String>,
    hashes: Vec<String>,
    pub cores: Vec<Core>,
    pub dram: Controller,
    pub nvm: Controller,
    dram_geom: DeviceGeometry,
    nvm_geom: DeviceGeometry,
    pub migration: MigrationEngine,
    pub ubm: UbmEngine<T>,
    pub policy: Policy<T>,
    buffer: VecDeque<BufferHit>,
    cycle: u64,
    next_id: u64,
    rr: usize,
    page_shift: u32,
    frames_per_app: u64,
    quantum_index: u64,
    quanta: Vec<QuantumRecord>,
    utility: Vec<UtilityDump>,
    dram_total: ControllerStats,
    nvm_total: ControllerStats,
    migration_at_quantum: MigrationCounters,
    demand_dram: u64,
    demand_nvm: u64,
    interference: Vec<u64>,
    request_interference: Vec<u64>,
    region_start: Option<Snapshot>,
    profiler: Option<Profiler>,
    stat_store_peak: usize,
    truncated: bool,
}

fn add_stats(total: &mut ControllerStats, s: &ControllerStats) {
    total.reads += s.reads;
    total.writes += s.writes;
    total.row_hits += s.row_hits;
    total.queue_cycles += s.queue_cycles;
    total.migration_requests += s.migration_requests;
}

fn counters_since(now: &MigrationCounters, then: &MigrationCounters) -> MigrationCounters {
    MigrationCounters {
        promoted: now.promoted - then.promoted,
        evicted: now.evicted - then.evicted,
        requested: now.requested - then.requested,
        dropped: now.dropped - then.dropped,
        dram_reads: now.dram_reads - then.dram_reads,
        dram_writes: now.dram_writes - then.dram_writes,
        nvm_reads: now.nvm_reads - then.nvm_reads,
        nvm_writes: now.nvm_writes - then.nvm_writes,
    }
}

impl<T: Scalar> System<T> {
    pub fn new(cfg: SimConfig, traces: &[Trace]) -> Result<Self, SimError> {
        cfg.validate()?;
        if traces.is_empty() {
            return Err(SimError::NoTraces);
        }
        let n = traces.len();
        let frames_per_app = cfg.nvm_frames() / n as u64;
        if frames_per_app == 0 {
            return Err(SimError::Config("NVM too small for the number of applications".into()));
        }
        let cores = traces
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut c = Core::new(i as AppId, cfg.core.clone(), Arc::clone(&t.events), cfg.repeat_traces);
                c.set_region(cfg.warmup_instructions, cfg.measured_instructions);
                c
            })
            .collect();
        let dram = Controller::new(
            DeviceKind::Dram,
            0,
            cfg.dram.clone(),
            cfg.geometry(cfg.dram_capacity).total_banks(),
            cfg.clock_ratio,
            cfg.controller.clone(),
            n,
        );
        let nvm = Controller::new(
            DeviceKind::Nvm,
            0,
            cfg.nvm.clone(),
            cfg.geometry(cfg.nvm_capacity).total_banks(),
            cfg.clock_ratio,
            cfg.controller.clone(),
            n,
        );
        let delta = LatencyDelta::from_devices(&cfg.dram, &cfg.nvm, cfg.clock_ratio);
        Ok(System {
            names: traces.iter().map(|t| t.name().to_string()).collect(),
            hashes: traces.iter().map(|t| t.content_hash()).collect(),
            cores,
            dram,
            nvm,
            dram_geom: cfg.geometry(cfg.dram_capacity),
            nvm_geom: cfg.geometry(cfg.nvm_capacity),
            migration: MigrationEngine::new(cfg.migration.clone(), cfg.dram_frames(), cfg.associativity, cfg.page_size),
            ubm: UbmEngine::new(cfg.ubm.clone(), delta, n, cfg.policy.quantum),
            policy: Policy::new(&cfg.policy, cfg.ubm.step_divisor),
            buffer: VecDeque::new(),
            cycle: 0,
            next_id: 0,
            rr: 0,
            page_shift: cfg.page_size.trailing_zeros(),
            frames_per_app,
            quantum_index: 0,
            quanta: Vec::new(),
            utility: Vec::new(),
            dram_total: ControllerStats::default(),
            nvm_total: ControllerStats::default(),
            migration_at_quantum: MigrationCounters::default(),
            demand_dram: 0,
            demand_nvm: 0,
            interference: vec![0; n],
            request_interference: vec![0; n],
            region_start: None,
            profiler: None,
            stat_store_peak: 0,
            truncated: false,
            cfg,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    /// Physical page of an application address.
    pub fn page_of(&self, app: usize, address: u64) -> u64 {
        let local = address >> self.page_shift;
        if self.cfg.shared_address_space {
            local % self.cfg.nvm_frames()
        } else {
            app as u64 * self.frames_per_app + local % self.frames_per_app
        }
    }

    /// Places the page holding `address` of application `app` in DRAM.
    pub fn preload(&mut self, app: usize, address: u64) -> bool {
        let page = self.page_of(app, address);
        self.migration.preload(page)
    }

    /// Collects exact per-page statistics for the whole run.
    pub fn enable_profiling(&mut self) {
        for c in &mut self.cores {
            c.track_page_stalls(self.page_shift);
        }
        self.profiler = Some(Profiler::default());
    }

    fn block_of(&self, address: u64) -> usize {
        ((address & (self.cfg.page_size - 1)) / BLOCK_BYTES) as usize
    }

    fn make_request(&mut self, app: usize, slot: u64, kind: AccessKind, page: u64, device: DeviceKind, frame: u64) -> MemRequest {
        let loc = match device {
            DeviceKind::Dram => self.dram_geom.locate(frame),
            DeviceKind::Nvm => self.nvm_geom.locate(frame),
        };
        let id = self.next_id;
        self.next_id += 1;
        MemRequest {
            id,
            app_id: app as AppId,
            page_id: page,
            bank: loc.bank,
            row_id: loc.row,
            kind,
            device,
            tag: RequestTag::Demand { slot },
            arrival_cycle: self.cycle + self.cfg.lookup_latency,
            issue_cycle: 0,
            completion_cycle: 0,
            outcome: None,
            interference_delay: 0,
        }
    }

    /// Sends the core's pending memory operations until one is refused.
    fn send(&mut self, app: usize) {
        for _ in 0..self.cfg.core.width {
            let Some(op) = self.cores[app].next_unsent() else { break };
            let page = self.page_of(app, op.address);
            let block = self.block_of(op.address);
            match self.migration.route(page, block) {
                Route::Buffer => {
                    self.buffer.push_back(BufferHit {
                        at: self.cycle + self.cfg.lookup_latency + self.cfg.migration.buffer_latency * self.cfg.clock_ratio,
                        app,
                        slot: op.slot,
                        kind: op.kind,
                        page,
                    });
                    self.demand_dram += 1;
                }
                Route::Dram { frame } => {
                    let req = self.make_request(app, op.slot, op.kind, page, DeviceKind::Dram, frame);
                    if self.dram.try_enqueue(req).is_err() {
                        self.next_id -= 1;
                        break;
                    }
                    let _ = self.migration.touch(page);
                    self.demand_dram += 1;
                }
                Route::Nvm => {
                    let req = self.make_request(app, op.slot, op.kind, page, DeviceKind::Nvm, page);
                    if self.nvm.try_enqueue(req).is_err() {
                        self.next_id -= 1;
                        break;
                    }
                    self.ubm.on_inject(page, app as AppId, op.kind);
                    self.demand_nvm += 1;
                }
            }
            if let Some(p) = &mut self.profiler {
                p.entry(page, app as AppId).accesses += 1;
                let n = p.outstanding.entry((page, app as AppId)).or_insert((0, 0));
                match op.kind {
                    AccessKind::Read => n.0 += 1,
                    AccessKind::Write => n.1 += 1,
                }
            }
            self.cores[app].mark_sent(op.slot);
        }
    }

    fn profile_done(&mut self, page: u64, app: AppId, kind: AccessKind) {
        if let Some(p) = &mut self.profiler {
            if let Some(n) = p.outstanding.get_mut(&(page, app)) {
                match kind {
                    AccessKind::Read => n.0 -= 1,
                    AccessKind::Write => n.1 -= 1,
                }
                if *n == (0, 0) {
                    p.outstanding.remove(&(page, app));
                }
            }
        }
    }

    fn on_demand_complete(&mut self, req: MemRequest) {
        let RequestTag::Demand { slot } = req.tag else { unreachable!() };
        let app = req.app_id as usize;
        self.request_interference[app] += req.interference_delay;
        self.cores[app].complete(slot, req.kind, req.completion_cycle, req.interference_delay);
        self.profile_done(req.page_id, req.app_id, req.kind);
        if req.device == DeviceKind::Nvm {
            self.ubm.on_complete(req.page_id, req.app_id, req.kind);
            let eligible = self.cfg.migrations_enabled && self.migration.can_promote(req.page_id);
            let decision = self.policy.decide(&self.ubm, req.page_id, eligible);
            if decision.action == Action::Promote {
                // Errors are impossible for an eligible page; a full queue drops the request.
                let _ = self.migration.request(req.page_id, MigrationDirection::Promote);
            }
        }
    }

    fn on_migration_complete(&mut self, req: MemRequest) {
        if let Some(f) = self.migration.on_complete(&req) {
            if f.direction == MigrationDirection::Promote {
                self.ubm.invalidate(f.page);
            }
        }
    }

    fn drain_completions(&mut self) {
        let cycle = self.cycle;
        loop {
            let req = match self.dram.pop_completed(cycle) {
                Some(r) => r,
                None => match self.nvm.pop_completed(cycle) {
                    Some(r) => r,
                    None => break,
                },
            };
            match req.tag {
                RequestTag::Demand { .. } => self.on_demand_complete(req),
                RequestTag::Migration { .. } => self.on_migration_complete(req),
                RequestTag::Probe => {}
            }
        }
        while self.buffer.front().is_some_and(|b| b.at <= cycle) {
            let b = self.buffer.pop_front().unwrap();
            self.cores[b.app].complete(b.slot, b.kind, b.at, 0);
            self.profile_done(b.page, b.app as AppId, b.kind);
        }
    }

    fn sample(&mut self) {
        let cores = &self.cores;
        self.ubm.sample(|app| cores[app as usize].count_outstanding());
        if let Some(p) = &mut self.profiler {
            for (&(page, app), &(mr, mw)) in &p.outstanding {
                let (nr, nw) = cores[app as usize].count_outstanding();
                let e = p.pages.get_mut(&(page, app)).expect("profiled page");
                if mr > 0 && nr > 0 {
                    e.read_mlp_sum += mr as f64 / nr as f64;
                    e.read_mlp_weight += mr as u64;
                }
                if mw > 0 && nw > 0 {
                    e.write_mlp_sum += mw as f64 / nw as f64;
                    e.write_mlp_weight += mw as u64;
                }
            }
        }
    }

    fn end_quantum(&mut self) {
        let counters: Vec<AppCounters> = self.cores.iter_mut().map(|c| c.take_quantum()).collect();
        for (i, c) in counters.iter().enumerate() {
            self.interference[i] += c.t_interference;
        }
        let total_stall = counters.iter().map(|c| c.t_stall).sum();
        let direction = self.policy.end_quantum(total_stall);
        let est = self.ubm.end_quantum(&counters);
        let dram = self.dram.take_stats();
        let nvm = self.nvm.take_stats();
        add_stats(&mut self.dram_total, &dram);
        add_stats(&mut self.nvm_total, &nvm);
        let now = self.migration.counters;
        let migration = counters_since(&now, &self.migration_at_quantum);
        self.migration_at_quantum = now;
        let demand = self.demand_dram + self.demand_nvm;
        let dram_hit_rate = if demand == 0 {
            0.0
        } else {
            self.demand_dram as f64 / demand as f64
        };
        self.demand_dram = 0;
        self.demand_nvm = 0;
        if self.cfg.top_k > 0 {
            for row in self.ubm.top_pages(self.cfg.top_k) {
                self.utility.push(UtilityDump {
                    quantum: self.quantum_index,
                    row,
                });
            }
        }
        if self.cfg.record_quanta {
            self.quanta.push(QuantumRecord {
                index: self.quantum_index,
                end_cycle: self.cycle,
                threshold: self.policy.threshold.threshold.as_f64(),
                direction,
                apps: counters,
                speedup_estimates: est.iter().map(|s| s.as_f64()).collect(),
                dram,
                nvm,
                migration,
                dram_hit_rate,
                stat_store_entries: self.ubm.store.len(),
            });
        }
        self.quantum_index += 1;
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            cycle: self.cycle,
            dram_pj: self.dram.energy.dynamic_pj,
            nvm_pj: self.nvm.energy.dynamic_pj,
            migration: self.migration.counters,
        }
    }

    /// Advances the whole system by one core cycle.
    pub fn step(&mut self) {
        let cycle = self.cycle;
        if cycle.is_multiple_of(self.cfg.clock_ratio) {
            self.dram.tick(cycle);
            if let Some(issued) = self.nvm.tick(cycle) {
                if let RequestTag::Demand { .. } = issued.tag {
                    self.ubm.on_issue(issued.page_id, issued.app_id, issued.kind, issued.outcome);
                    if let Some(p) = &mut self.profiler {
                        let e = p.entry(issued.page_id, issued.app_id);
                        *match (issued.kind, issued.outcome) {
                            (AccessKind::Read, RowOutcome::RowHit) => &mut e.read_hits,
                            (AccessKind::Read, RowOutcome::RowMiss) => &mut e.read_misses,
                            (AccessKind::Write, RowOutcome::RowHit) => &mut e.write_hits,
                            (AccessKind::Write, RowOutcome::RowMiss) => &mut e.write_misses,
                        } += 1;
                    }
                }
            }
        }
        self.drain_completions();
        if cycle.is_multiple_of(self.cfg.clock_ratio) {
            self.migration.pump(
                cycle,
                &mut self.next_id,
                &mut self.dram,
                &mut self.nvm,
                &self.dram_geom,
                &self.nvm_geom,
            );
        }
        if cycle.is_multiple_of(self.cfg.ubm.sampling_period) {
            self.sample();
        }
        let n = self.cores.len();
        for k in 0..n {
            let app = (self.rr + k) % n;
            let core = &mut self.cores[app];
            if core.is_exhausted() {
                core.close_measurement(cycle);
                continue;
            }
            core.advance(cycle);
            core.dispatch();
            self.send(app);
        }
        self.rr = (self.rr + 1) % n;
        for c in &mut self.cores {
            c.update_delay();
        }
        self.stat_store_peak = self.stat_store_peak.max(self.ubm.store.len());
        if self.region_start.is_none() && self.cores.iter().all(|c| c.measurement.start_cycle.is_some()) {
            self.region_start = Some(self.snapshot());
        }
        self.cycle += 1;
        if self.cycle.is_multiple_of(self.cfg.policy.quantum) {
            self.end_quantum();
        }
    }

    pub fn is_done(&self) -> bool {
        self.cores.iter().all(|c| c.is_measured() || c.is_exhausted())
    }

    pub fn check_invariants(&self) -> Result<(), SimError> {
        let fail = |msg: String| SimError::Invariant { cycle: self.cycle, msg };
        self.migration.check_invariants().map_err(fail)?;
        if self.ubm.store.len() > self.ubm.store.capacity() {
            return Err(fail(format!("stat store holds {} entries", self.ubm.store.len())));
        }
        for e in self.ubm.store.iter() {
            let (r, w) = e.mlp_ratios();
            for (v, c) in [(r, &e.read_mlp), (w, &e.write_mlp)] {
                let ok = if c.weight() > 0 { v > 0.0 && v <= 1.0 } else { v == 0.0 };
                if !ok {
                    return Err(fail(format!("page {:#x} has MLP ratio {v}", e.page_id)));
                }
            }
        }
        Ok(())
    }

    /// Steps until every core has finished its measured region or the cycle
    /// limit is hit. The system can still be inspected afterwards.
    pub fn run_to_end(&mut self) {
        while !self.is_done() {
            if self.cycle >= self.cfg.max_cycles {
                self.truncated = true;
                break;
            }
            self.step();
        }
    }

    pub fn run(mut self) -> SimResult {
        self.run_to_end();
        self.finish()
    }

    /// Like [`System::run`], checking invariants every `every` cycles.
    pub fn run_checked(mut self, every: u64) -> Result<SimResult, SimError> {
        let every = every.max(1);
        while !self.is_done() {
            if self.cycle >= self.cfg.max_cycles {
                self.truncated = true;
                break;
            }
            self.step();
            if self.cycle.is_multiple_of(every) {
                self.check_invariants()?;
            }
        }
        self.check_invariants()?;
        Ok(self.finish())
    }

    pub fn finish(mut self) -> SimResult {
        let cycle = self.cycle;
        let completed: Vec<bool> = self.cores.iter().map(|c| c.is_measured()).collect();
        for c in &mut self.cores {
            c.close_measurement(cycle);
            let q = c.take_quantum();
            self.interference[c.app_id as usize] += q.t_interference;
        }
        add_stats(&mut self.dram_total, &self.dram.take_stats());
        add_stats(&mut self.nvm_total, &self.nvm.take_stats());
        let start = self.region_start.unwrap_or_default();
        let end = self.snapshot();
        let seconds = (end.cycle - start.cycle) as f64 * self.cfg.dram.clock_period * 1e-9 / self.cfg.clock_ratio as f64;
        let energy = EnergyBreakdown {
            dram_dynamic_j: (end.dram_pj - start.dram_pj) * 1e-12,
            nvm_dynamic_j: (end.nvm_pj - start.nvm_pj) * 1e-12,
            dram_standby_j: standby_energy_j(&self.cfg.dram, self.cfg.dram_capacity, seconds),
            nvm_standby_j: standby_energy_j(&self.cfg.nvm, self.cfg.nvm_capacity, seconds),
            seconds,
        };
        let apps = self
            .cores
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let m = &c.measurement;
                let cycles = m.cycles().unwrap_or(0);
                AppResult {
                    app_id: i as AppId,
                    name: self.names[i].clone(),
                    trace_hash: self.hashes[i].clone(),
                    instructions: m.instructions,
                    cycles,
                    ipc: m.ipc().unwrap_or(0.0),
                    stall_cycles: m.stall(),
                    interference_cycles: self.interference[i],
                    request_interference: self.request_interference[i],
                    completed: completed[i],
                }
            })
            .collect();
        let profile = self.profiler.take().map(|mut p| {
            for (i, c) in self.cores.iter().enumerate() {
                if let Some(stalls) = c.page_stalls() {
                    let mut stalls: Vec<(u64, u64)> = stalls.iter().map(|(&k, &v)| (k, v)).collect();
                    stalls.sort_unstable();
                    for (local, s) in stalls {
                        let page = self.page_of(i, local << self.page_shift);
                        p.entry(page, i as AppId).stall_cycles += s;
                    }
                }
            }
            p.pages.into_values().collect()
        });
        SimResult {
            apps,
            cycles: cycle,
            region_cycles: end.cycle - start.cycle,
            energy,
            migration: counters_since(&end.migration, &start.migration),
            dram: self.dram_total,
            nvm: self.nvm_total,
            quanta: self.quanta,
            utility: self.utility,
            profile,
            stat_store_peak: self.stat_store_peak,
            truncated: self.truncated,
        }
    }
}

/// Runs one simulation to completion.
pub fn simulate<T: Scalar>(cfg: &SimConfig, traces: &[Trace]) -> Result<SimResult, SimError> {
    Ok(System::<T>::new(cfg.clone(), traces)?.run())
}
