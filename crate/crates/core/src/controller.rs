//! Per-channel memory controller: read queue, write buffer, FR-FCFS
//! scheduling, batched write drains and per-request interference attribution.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::device::{
    service_latency, AccessKind, Bank, DevTiming, DeviceKind, EnergyAccumulator, RowOutcome,
    BLOCK_BITS,
};

pub type AppId = u32;

/// Owner id of migration traffic. Requests carrying it never count toward any
/// application's stall, MLP or interference accounting.
pub const SYSTEM_APP: AppId = u32::MAX;

/// What a request is for, so completions can be routed back.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RequestTag {
    /// Demand access from a core; `slot` identifies the reorder-buffer entry.
    Demand { slot: u64 },
    /// One cache block of a page migration.
    Migration { job: u64, block: u16 },
    /// Serviced by a test harness.
    Probe,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemRequest {
    pub id: u64,
    pub app_id: AppId,
    pub page_id: u64,
    pub bank: u32,
    pub row_id: u64,
    pub kind: AccessKind,
    pub device: DeviceKind,
    pub tag: RequestTag,
    pub arrival_cycle: u64,
    pub issue_cycle: u64,
    pub completion_cycle: u64,
    pub outcome: Option<RowOutcome>,
    pub interference_delay: u64,
}

impl MemRequest {
    pub fn is_system(&self) -> bool {
        self.app_id == SYSTEM_APP
    }

    pub fn latency(&self) -> u64 {
        self.completion_cycle - self.arrival_cycle
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub read_queue_capacity: usize,
    pub write_buffer_capacity: usize,
    pub drain_high_watermark: f64,
    pub drain_low_watermark: f64,
    /// Device cycles the data bus is held by one 64 B transfer.
    pub burst_cycles: u64,
    /// Issue buffered writes when no read is issuable, even outside a drain.
    pub opportunistic_writes: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            read_queue_capacity: 64,
            write_buffer_capacity: 32,
            drain_high_watermark: 0.75,
            drain_low_watermark: 0.25,
            burst_cycles: 4,
            opportunistic_writes: true,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), String> {
        let (lo, hi) = (self.drain_low_watermark, self.drain_high_watermark);
        if !(0.0 < lo && lo < hi && hi <= 1.0) {
            return Err(format!("drain watermarks must satisfy 0 < low < high <= 1, got {lo}, {hi}"));
        }
        if self.read_queue_capacity == 0 || self.write_buffer_capacity == 0 {
            return Err("queue capacities must be > 0".into());
        }
        if self.burst_cycles == 0 {
            return Err("burst_cycles must be > 0".into());
        }
        Ok(())
    }
}

/// FR-FCFS pick among `queue`: issuable requests (arrived, bank free) that hit
/// the open row first, then the oldest. Returns the queue index.
pub fn schedule(queue: &[MemRequest], banks: &[Bank], cycle: u64) -> Option<usize> {
    let mut oldest: Option<usize> = None;
    let mut oldest_hit: Option<usize> = None;
    let older = |a: &MemRequest, b: &MemRequest| (a.arrival_cycle, a.id) < (b.arrival_cycle, b.id);
    for (i, req) in queue.iter().enumerate() {
        let bank = &banks[req.bank as usize];
        if req.arrival_cycle > cycle || bank.busy_until > cycle {
            continue;
        }
        if oldest.is_none_or(|j| older(req, &queue[j])) {
            oldest = Some(i);
        }
        if bank.open_row == Some(req.row_id) && oldest_hit.is_none_or(|j| older(req, &queue[j])) {
            oldest_hit = Some(i);
        }
    }
    oldest_hit.or(oldest)
}

/// Watermark hysteresis for write drains.
pub fn drain_writes(draining: bool, occupancy: usize, capacity: usize, high: f64, low: f64) -> bool {
    let occ = occupancy as f64;
    let cap = capacity as f64;
    if draining {
        occ > low * cap
    } else {
        occ >= high * cap
    }
}

/// Counters exported at every quantum boundary.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControllerStats {
    pub reads: u64,
    pub writes: u64,
    pub row_hits: u64,
    pub queue_cycles: u64,
    pub migration_requests: u64,
}

impl ControllerStats {
    pub fn row_hit_rate(&self) -> f64 {
        let n = self.reads + self.writes;
        if n == 0 {
            0.0
        } else {
            self.row_hits as f64 / n as f64
        }
    }

    pub fn avg_queue_latency(&self) -> f64 {
        let n = self.reads + self.writes;
        if n == 0 {
            0.0
        } else {
            self.queue_cycles as f64 / n as f64
        }
    }
}

/// Record of a command issued this cycle.
#[derive(Clone, Debug)]
pub struct Issued {
    pub id: u64,
    pub app_id: AppId,
    pub page_id: u64,
    pub kind: AccessKind,
    pub outcome: RowOutcome,
    pub tag: RequestTag,
}

struct InFlight(MemRequest);

impl PartialEq for InFlight {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for InFlight {}
impl PartialOrd for InFlight {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for InFlight {
    // Min-heap on (completion, id).
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.completion_cycle, other.0.id).cmp(&(self.0.completion_cycle, self.0.id))
    }
}

/// Device latencies converted to simulation (core) cycles.
#[derive(Clone, Copy, Debug)]
struct CycleTiming {
    cl: u64,
    rcd: u64,
    rp: u64,
    wr: u64,
    burst: u64,
}

pub struct Controller {
    pub kind: DeviceKind,
    pub channel: u32,
    timing: DevTiming,
    cycles: CycleTiming,
    clock_ratio: u64,
    cfg: ControllerConfig,
    banks: Vec<Bank>,
    bus_free_at: u64,
    bus_owner: Option<AppId>,
    read_q: Vec<MemRequest>,
    write_q: Vec<MemRequest>,
    draining: bool,
    in_flight: BinaryHeap<InFlight>,
    /// Row each app would have open in each bank had it run alone.
    shadow_rows: Vec<Vec<Option<u64>>>,
    pub energy: EnergyAccumulator,
    pub stats: ControllerStats,
}

impl Controller {
    /// `clock_ratio` is the number of simulation cycles per device cycle.
    pub fn new(
        kind: DeviceKind,
        channel: u32,
        timing: DevTiming,
        banks: u32,
        clock_ratio: u64,
        cfg: ControllerConfig,
        num_apps: usize,
    ) -> Self {
        let cycles = CycleTiming {
            cl: timing.cl_cycles() * clock_ratio,
            rcd: timing.rcd_cycles() * clock_ratio,
            rp: timing.rp_cycles() * clock_ratio,
            wr: timing.wr_cycles() * clock_ratio,
            burst: cfg.burst_cycles * clock_ratio,
        };
        Controller {
            kind,
            channel,
            timing,
            cycles,
            clock_ratio,
            banks: vec![Bank::default(); banks as usize],
            bus_free_at: 0,
            bus_owner: None,
            read_q: Vec::with_capacity(cfg.read_queue_capacity),
            write_q: Vec::with_capacity(cfg.write_buffer_capacity),
            draining: false,
            in_flight: BinaryHeap::new(),
            shadow_rows: vec![vec![None; banks as usize]; num_apps],
            cfg,
            energy: EnergyAccumulator::default(),
            stats: ControllerStats::default(),
        }
    }

    pub fn timing(&self) -> &DevTiming {
        &self.timing
    }

    pub fn banks(&self) -> &[Bank] {
        &self.banks
    }

    pub fn is_draining(&self) -> bool {
        self.draining
    }

    pub fn read_queue_len(&self) -> usize {
        self.read_q.len()
    }

    pub fn write_buffer_len(&self) -> usize {
        self.write_q.len()
    }

    /// Free slots for `kind`, keeping `reserve` slots back.
    pub fn has_space(&self, kind: AccessKind, reserve: usize) -> bool {
        match kind {
            AccessKind::Read => self.read_q.len() + reserve < self.cfg.read_queue_capacity,
            AccessKind::Write => self.write_q.len() + reserve < self.cfg.write_buffer_capacity,
        }
    }

    pub fn is_idle(&self) -> bool {
        self.read_q.is_empty() && self.write_q.is_empty() && self.in_flight.is_empty()
    }

    /// Queues a request, or hands it back when the queue is full.
    pub fn try_enqueue(&mut self, req: MemRequest) -> Result<(), MemRequest> {
        if !self.has_space(req.kind, 0) {
            return Err(req);
        }
        match req.kind {
            AccessKind::Read => self.read_q.push(req),
            AccessKind::Write => self.write_q.push(req),
        }
        Ok(())
    }

    /// Advances one device cycle. `cycle` is in simulation cycles and must be a
    /// multiple of the clock ratio.
    pub fn tick(&mut self, cycle: u64) -> Option<Issued> {
        debug_assert_eq!(cycle % self.clock_ratio, 0);
        if self.read_q.is_empty() && self.write_q.is_empty() {
            self.draining = false;
            return None;
        }
        self.draining = drain_writes(
            self.draining,
            self.write_q.len(),
            self.cfg.write_buffer_capacity,
            self.cfg.drain_high_watermark,
            self.cfg.drain_low_watermark,
        );
        let pick = if self.draining {
            schedule(&self.write_q, &self.banks, cycle)
                .map(|i| (AccessKind::Write, i))
                .or_else(|| schedule(&self.read_q, &self.banks, cycle).map(|i| (AccessKind::Read, i)))
        } else {
            let read = schedule(&self.read_q, &self.banks, cycle).map(|i| (AccessKind::Read, i));
            if read.is_none() && self.cfg.opportunistic_writes {
                schedule(&self.write_q, &self.banks, cycle).map(|i| (AccessKind::Write, i))
            } else {
                read
            }
        };
        let (kind, idx) = pick?;
        let req = match kind {
            AccessKind::Read => self.read_q.remove(idx),
            AccessKind::Write => self.write_q.remove(idx),
        };
        Some(self.issue(req, cycle))
    }

    fn issue(&mut self, mut req: MemRequest, cycle: u64) -> Issued {
        let t = self.cycles;
        let b = req.bank as usize;
        let outcome = self.banks[b].classify(req.row_id);
        let foreign = |owner: Option<AppId>, app: AppId| {
            app != SYSTEM_APP && owner.is_some_and(|o| o != app && o != SYSTEM_APP)
        };

        let column_start = match outcome {
            RowOutcome::RowHit => cycle,
            RowOutcome::RowMiss => {
                let pre_start = cycle.max(self.banks[b].precharge_ready);
                if foreign(self.banks[b].owner, req.app_id) {
                    req.interference_delay += pre_start - cycle;
                }
                pre_start + t.rp + t.rcd
            }
        };
        let data_ready = column_start + t.cl;
        let data_start = data_ready.max(self.bus_free_at);
        if foreign(self.bus_owner, req.app_id) {
            req.interference_delay += data_start - data_ready;
        }
        let data_end = data_start + t.burst;
        self.bus_free_at = data_end;
        self.bus_owner = Some(req.app_id);

        let completion = match req.kind {
            AccessKind::Read => data_end,
            AccessKind::Write => data_end + t.wr,
        };

        // Row-buffer interference: this app would have hit had another app not
        // closed its row in between.
        if req.app_id != SYSTEM_APP {
            let app = req.app_id as usize;
            if outcome == RowOutcome::RowMiss
                && self.shadow_rows.get(app).and_then(|r| r[b]) == Some(req.row_id)
            {
                let miss = service_latency(&self.timing, req.kind, RowOutcome::RowMiss);
                let hit = service_latency(&self.timing, req.kind, RowOutcome::RowHit);
                req.interference_delay += (miss - hit) * self.clock_ratio;
            }
            if let Some(rows) = self.shadow_rows.get_mut(app) {
                rows[b] = Some(req.row_id);
            }
        } else {
            // Migration traffic would have closed the row in a solo run too.
            for rows in &mut self.shadow_rows {
                rows[b] = None;
            }
        }

        let bank = &mut self.banks[b];
        bank.open_row = Some(req.row_id);
        bank.occupy(column_start + t.burst);
        if req.kind == AccessKind::Write {
            bank.precharge_ready = bank.precharge_ready.max(data_end + t.wr);
        }
        bank.owner = Some(req.app_id);
        let busy_until = bank.busy_until;

        // Requests of other apps still waiting behind this one.
        if req.app_id != SYSTEM_APP {
            let issuer = req.app_id;
            let banks = &self.banks;
            for q in self.read_q.iter_mut().chain(self.write_q.iter_mut()) {
                if q.app_id == issuer || q.app_id == SYSTEM_APP || q.arrival_cycle > cycle {
                    continue;
                }
                if q.bank as usize == b {
                    q.interference_delay += busy_until - cycle;
                } else if banks[q.bank as usize].busy_until <= cycle {
                    // Lost the command slot this cycle.
                    q.interference_delay += self.clock_ratio;
                }
            }
        }

        self.energy.account(&self.timing, BLOCK_BITS, req.kind, outcome);
        match req.kind {
            AccessKind::Read => self.stats.reads += 1,
            AccessKind::Write => self.stats.writes += 1,
        }
        if outcome == RowOutcome::RowHit {
            self.stats.row_hits += 1;
        }
        if req.is_system() {
            self.stats.migration_requests += 1;
        }
        self.stats.queue_cycles += cycle - req.arrival_cycle;

        req.issue_cycle = cycle;
        req.completion_cycle = completion;
        req.outcome = Some(outcome);
        let issued = Issued {
            id: req.id,
            app_id: req.app_id,
            page_id: req.page_id,
            kind: req.kind,
            outcome,
            tag: req.tag,
        };
        self.in_flight.push(InFlight(req));
        issued
    }

    /// Pops one request whose completion cycle is `<= cycle`.
    pub fn pop_completed(&mut self, cycle: u64) -> Option<MemRequest> {
        if self.in_flight.peek()?.0.completion_cycle > cycle {
            return None;
        }
        let mut req = self.in_flight.pop()?.0;
        req.interference_delay = req.interference_delay.min(req.latency());
        Some(req)
    }

    /// Earliest cycle at which something in flight completes.
    pub fn next_completion(&self) -> Option<u64> {
        self.in_flight.peek().map(|f| f.0.completion_cycle)
    }

    pub fn take_stats(&mut self) -> ControllerStats {
        std::mem::take(&mut self.stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(id: u64, app: AppId, bank: u32, row: u64, arrival: u64) -> MemRequest {
        MemRequest {
            id,
            app_id: app,
            page_id: row,
            bank,
            row_id: row,
            kind: AccessKind::Read,
            device: DeviceKind::Dram,
            tag: RequestTag::Probe,
            arrival_cycle: arrival,
            issue_cycle: 0,
            completion_cycle: 0,
            outcome: None,
            interference_delay: 0,
        }
    }

    fn banks_with_open(row: Option<u64>) -> Vec<Bank> {
        vec![
            Bank {
                open_row: row,
                ..Bank::default()
            };
            8
        ]
    }

    #[test]
    fn frfcfs_prefers_hit_then_oldest() {
        let banks = banks_with_open(Some(3));
        let q = vec![req(0, 0, 0, 1, 5), req(1, 0, 0, 3, 9)];
        assert_eq!(schedule(&q, &banks, 10), Some(1));
        let q = vec![req(0, 0, 0, 3, 5), req(1, 0, 0, 3, 9)];
        assert_eq!(schedule(&q, &banks, 10), Some(0));
        assert_eq!(schedule(&[], &banks, 10), None);
    }

    #[test]
    fn frfcfs_skips_busy_and_future() {
        let mut banks = banks_with_open(Some(3));
        banks[0].busy_until = 20;
        let q = vec![req(0, 0, 0, 3, 1), req(1, 0, 1, 7, 2), req(2, 0, 2, 3, 50)];
        assert_eq!(schedule(&q, &banks, 10), Some(1));
    }

    #[test]
    fn drain_watermarks() {
        assert!(drain_writes(false, 32, 32, 0.8, 0.25));
        assert!(!drain_writes(false, 0, 32, 0.75, 0.25));
        assert!(!drain_writes(false, 23, 32, 0.75, 0.25));
        assert!(drain_writes(false, 24, 32, 0.75, 0.25));
        assert!(drain_writes(false, 25, 32, 0.75, 0.25));
        // Hysteresis: stay draining until at or below the low mark.
        assert!(drain_writes(true, 9, 32, 0.75, 0.25));
        assert!(!drain_writes(true, 8, 32, 0.75, 0.25));
    }

    fn controller(apps: usize) -> Controller {
        Controller::new(
            DeviceKind::Dram,
            0,
            DevTiming::dram_baseline(),
            8,
            1,
            ControllerConfig::default(),
            apps,
        )
    }

    fn run_until_done(c: &mut Controller, until: u64) -> Vec<MemRequest> {
        let mut done = Vec::new();
        for cycle in 0..until {
            c.tick(cycle);
            while let Some(r) = c.pop_completed(cycle) {
                done.push(r);
            }
        }
        done
    }

    #[test]
    fn solo_app_sees_no_interference() {
        let mut c = controller(1);
        for i in 0..20 {
            c.try_enqueue(req(i, 0, (i % 3) as u32, i % 5, i)).unwrap();
        }
        let done = run_until_done(&mut c, 5000);
        assert_eq!(done.len(), 20);
        assert!(done.iter().all(|r| r.interference_delay == 0));
    }

    #[test]
    fn own_queueing_is_not_interference() {
        let mut c = controller(2);
        c.try_enqueue(req(0, 0, 0, 1, 0)).unwrap();
        c.try_enqueue(req(1, 0, 0, 2, 0)).unwrap();
        let done = run_until_done(&mut c, 500);
        assert!(done[1].issue_cycle >= 10);
        assert_eq!(done[1].interference_delay, 0);
    }

    /// Replays app 0 reading row 5 twice, with and without app 1 touching
    /// row 9 of the same bank in between.
    #[test]
    fn row_conflict_by_other_app_matches_replay() {
        let second_latency = |interferer: bool| {
            let mut c = controller(2);
            c.try_enqueue(req(0, 0, 0, 5, 0)).unwrap();
            if interferer {
                c.try_enqueue(req(1, 1, 0, 9, 100)).unwrap();
            }
            c.try_enqueue(req(2, 0, 0, 5, 200)).unwrap();
            let done = run_until_done(&mut c, 1000);
            done.into_iter().find(|r| r.id == 2).unwrap()
        };
        let alone = second_latency(false);
        let shared = second_latency(true);
        assert_eq!(alone.outcome, Some(RowOutcome::RowHit));
        assert_eq!(shared.outcome, Some(RowOutcome::RowMiss));
        assert_eq!(alone.interference_delay, 0);
        assert_eq!(shared.interference_delay, shared.latency() - alone.latency());
    }

    #[test]
    fn capacity_backpressure() {
        let mut c = controller(1);
        for i in 0..64 {
            c.try_enqueue(req(i, 0, 0, 0, 0)).unwrap();
        }
        assert!(c.try_enqueue(req(64, 0, 0, 0, 0)).is_err());
        assert_eq!(c.read_queue_len(), 64);
    }

    #[test]
    fn write_completion_includes_restore() {
        let mut c = controller(1);
        let mut w = req(0, 0, 0, 1, 0);
        w.kind = AccessKind::Write;
        c.try_enqueue(w).unwrap();
        let done = run_until_done(&mut c, 200);
        // rp + rcd + cl + burst + wr = 8 + 8 + 8 + 4 + 8
        assert_eq!(done[0].completion_cycle, 36);
        assert_eq!(c.banks()[0].precharge_ready, 36);
    }
}
