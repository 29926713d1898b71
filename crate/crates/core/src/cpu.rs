//! Trace-driven core: an in-order-retire reorder buffer that turns memory
//! latency into stall time and tracks the counters needed for speedup and
//! MLP estimation.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::controller::AppId;
use crate::device::AccessKind;
use crate::trace::TraceEvent;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoreConfig {
    pub rob_capacity: usize,
    pub width: u32,
    pub mshr_capacity: usize,
}

impl Default for CoreConfig {
    fn default() -> Self {
        CoreConfig {
            rob_capacity: 128,
            width: 3,
            mshr_capacity: 32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum MemState {
    Unsent,
    Outstanding,
    Done,
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Alu(u32),
    Mem {
        kind: AccessKind,
        address: u64,
        state: MemState,
    },
}

/// Per-quantum counters. Reset by the owner at quantum boundaries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppCounters {
    pub t_stall: u64,
    pub t_delay: u64,
    pub t_interference: u64,
    pub retired: u64,
}

/// Cycle and stall snapshots taken when the core crosses its warmup and
/// measurement instruction marks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Measurement {
    pub start_cycle: Option<u64>,
    pub end_cycle: Option<u64>,
    pub stall_at_start: u64,
    pub stall_at_end: u64,
    pub instructions: u64,
}

impl Measurement {
    pub fn cycles(&self) -> Option<u64> {
        Some(self.end_cycle? - self.start_cycle?)
    }

    pub fn stall(&self) -> u64 {
        self.stall_at_end - self.stall_at_start
    }

    pub fn ipc(&self) -> Option<f64> {
        let c = self.cycles()?;
        (c > 0).then(|| self.instructions as f64 / c as f64)
    }
}

/// A memory operation waiting to be sent to the memory system.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PendingOp {
    pub slot: u64,
    pub kind: AccessKind,
    pub address: u64,
}

pub struct Core {
    pub app_id: AppId,
    cfg: CoreConfig,
    trace: Arc<[TraceEvent]>,
    cursor: usize,
    repeat: bool,
    /// Event being dispatched and the non-memory instructions still ahead of it.
    current: Option<(TraceEvent, u32)>,
    rob: VecDeque<Slot>,
    rob_insts: usize,
    head_seq: u64,
    unsent: VecDeque<u64>,
    outstanding_reads: usize,
    outstanding_writes: usize,
    pub quantum: AppCounters,
    total_stall: u64,
    retired_total: u64,
    interference_covered_until: u64,
    warmup: u64,
    measured: u64,
    pub measurement: Measurement,
    page_shift: u32,
    stall_by_page: Option<HashMap<u64, u64>>,
}

impl Core {
    pub fn new(app_id: AppId, cfg: CoreConfig, trace: Arc<[TraceEvent]>, repeat: bool) -> Self {
        let mut core = Core {
            app_id,
            rob: VecDeque::with_capacity(cfg.rob_capacity),
            cfg,
            trace,
            cursor: 0,
            repeat,
            current: None,
            rob_insts: 0,
            head_seq: 0,
            unsent: VecDeque::new(),
            outstanding_reads: 0,
            outstanding_writes: 0,
            quantum: AppCounters::default(),
            total_stall: 0,
            retired_total: 0,
            interference_covered_until: 0,
            warmup: 0,
            measured: u64::MAX,
            measurement: Measurement::default(),
            page_shift: 13,
            stall_by_page: None,
        };
        core.fetch_next();
        core
    }

    /// Sets the warmup and measured instruction budgets.
    pub fn set_region(&mut self, warmup: u64, measured: u64) {
        self.warmup = warmup;
        self.measured = measured;
        if warmup == 0 {
            self.measurement.start_cycle = Some(0);
        }
    }

    /// Enables per-page attribution of stall cycles.
    pub fn track_page_stalls(&mut self, page_shift: u32) {
        self.page_shift = page_shift;
        self.stall_by_page = Some(HashMap::new());
    }

    pub fn page_stalls(&self) -> Option<&HashMap<u64, u64>> {
        self.stall_by_page.as_ref()
    }

    pub fn config(&self) -> &CoreConfig {
        &self.cfg
    }

    pub fn retired(&self) -> u64 {
        self.retired_total
    }

    pub fn total_stall(&self) -> u64 {
        self.total_stall
    }

    pub fn rob_occupancy(&self) -> usize {
        self.rob_insts
    }

    pub fn is_measured(&self) -> bool {
        self.measurement.end_cycle.is_some()
    }

    /// True once the trace is used up and the reorder buffer has drained.
    pub fn is_exhausted(&self) -> bool {
        self.current.is_none() && self.rob.is_empty()
    }

    fn fetch_next(&mut self) {
        if self.cursor >= self.trace.len() {
            if !self.repeat || self.trace.is_empty() {
                self.current = None;
                return;
            }
            self.cursor = 0;
        }
        let e = self.trace[self.cursor];
        self.cursor += 1;
        self.current = Some((e, e.inst_gap));
    }

    /// Retire stage for one cycle. Returns the instructions retired.
    pub fn advance(&mut self, cycle: u64) -> u32 {
        let mut budget = self.cfg.width;
        let mut retired = 0u32;
        let mut blocked_on: Option<u64> = None;
        while budget > 0 {
            match self.rob.front_mut() {
                None => break,
                Some(Slot::Alu(n)) => {
                    let k = (*n).min(budget);
                    *n -= k;
                    budget -= k;
                    retired += k;
                    if *n == 0 {
                        self.rob.pop_front();
                        self.head_seq += 1;
                    }
                }
                Some(Slot::Mem { state: MemState::Done, .. }) => {
                    self.rob.pop_front();
                    self.head_seq += 1;
                    budget -= 1;
                    retired += 1;
                }
                Some(Slot::Mem { address, .. }) => {
                    blocked_on = Some(*address);
                    break;
                }
            }
        }
        self.rob_insts -= retired as usize;
        if retired == 0 {
            if let Some(addr) = blocked_on {
                self.quantum.t_stall += 1;
                self.total_stall += 1;
                if let Some(map) = &mut self.stall_by_page {
                    *map.entry(addr >> self.page_shift).or_insert(0) += 1;
                }
            }
        }
        self.quantum.retired += retired as u64;
        self.note_retired(retired as u64, cycle);
        retired
    }

    fn note_retired(&mut self, n: u64, cycle: u64) {
        let before = self.retired_total;
        self.retired_total += n;
        if self.measurement.start_cycle.is_none() && before < self.warmup && self.retired_total >= self.warmup {
            self.measurement.start_cycle = Some(cycle + 1);
            self.measurement.stall_at_start = self.total_stall;
        }
        let end = self.warmup.saturating_add(self.measured);
        if self.measurement.end_cycle.is_none() && self.retired_total >= end {
            self.measurement.end_cycle = Some(cycle + 1);
            self.measurement.stall_at_end = self.total_stall;
            self.measurement.instructions = self.measured;
        }
    }

    /// Ends the measured region now if the instruction budget was not
    /// reached, for traces that run out first.
    pub fn close_measurement(&mut self, cycle: u64) {
        if self.measurement.end_cycle.is_some() {
            return;
        }
        if self.measurement.start_cycle.is_none() {
            self.measurement.start_cycle = Some(cycle);
            self.measurement.stall_at_start = self.total_stall;
        }
        self.measurement.end_cycle = Some(cycle);
        self.measurement.stall_at_end = self.total_stall;
        self.measurement.instructions = self.retired_total.saturating_sub(self.warmup);
    }

    /// Dispatch stage: moves up to `width` instructions from the trace into the
    /// reorder buffer.
    pub fn dispatch(&mut self) {
        let mut budget = self.cfg.width;
        while budget > 0 && self.rob_insts < self.cfg.rob_capacity {
            let Some((event, gap_left)) = self.current.as_mut() else { break };
            if *gap_left > 0 {
                let room = (self.cfg.rob_capacity - self.rob_insts) as u32;
                let k = (*gap_left).min(budget).min(room);
                *gap_left -= k;
                budget -= k;
                self.rob_insts += k as usize;
                match self.rob.back_mut() {
                    Some(Slot::Alu(n)) => *n += k,
                    _ => self.rob.push_back(Slot::Alu(k)),
                }
                continue;
            }
            let seq = self.head_seq + self.rob.len() as u64;
            self.rob.push_back(Slot::Mem {
                kind: event.kind,
                address: event.address,
                state: MemState::Unsent,
            });
            self.unsent.push_back(seq);
            self.rob_insts += 1;
            budget -= 1;
            self.fetch_next();
        }
    }

    fn slot_mut(&mut self, seq: u64) -> &mut Slot {
        let idx = (seq - self.head_seq) as usize;
        &mut self.rob[idx]
    }

    /// Oldest memory operation not yet accepted by the memory system. Reads
    /// are held back while all MSHRs are busy.
    pub fn next_unsent(&self) -> Option<PendingOp> {
        let &seq = self.unsent.front()?;
        let idx = (seq - self.head_seq) as usize;
        match self.rob[idx] {
            Slot::Mem { kind, address, .. } => {
                if kind == AccessKind::Read && self.outstanding_reads >= self.cfg.mshr_capacity {
                    return None;
                }
                Some(PendingOp { slot: seq, kind, address })
            }
            Slot::Alu(_) => unreachable!("unsent queue points at a non-memory slot"),
        }
    }

    /// The memory system accepted the front unsent operation. Stores commit
    /// as soon as they are buffered.
    pub fn mark_sent(&mut self, slot: u64) {
        debug_assert_eq!(self.unsent.front(), Some(&slot));
        self.unsent.pop_front();
        if let Slot::Mem { kind, state, .. } = self.slot_mut(slot) {
            let kind = *kind;
            *state = match kind {
                AccessKind::Read => MemState::Outstanding,
                AccessKind::Write => MemState::Done,
            };
            match kind {
                AccessKind::Read => self.outstanding_reads += 1,
                AccessKind::Write => self.outstanding_writes += 1,
            }
        }
    }

    /// A request of this core completed at `completion` having suffered
    /// `interference` cycles of delay caused by other applications.
    pub fn complete(&mut self, slot: u64, kind: AccessKind, completion: u64, interference: u64) {
        match kind {
            AccessKind::Read => {
                if let Slot::Mem { state, .. } = self.slot_mut(slot) {
                    debug_assert_eq!(*state, MemState::Outstanding);
                    *state = MemState::Done;
                }
                self.outstanding_reads -= 1;
            }
            AccessKind::Write => self.outstanding_writes -= 1,
        }
        // Interference is charged as the window just before completion; the
        // union over requests stays inside the outstanding periods.
        let from = completion
            .saturating_sub(interference)
            .max(self.interference_covered_until);
        if completion > from {
            self.quantum.t_interference += completion - from;
        }
        self.interference_covered_until = self.interference_covered_until.max(completion);
    }

    /// (N_read, N_write) at this instant.
    pub fn count_outstanding(&self) -> (usize, usize) {
        (self.outstanding_reads, self.outstanding_writes)
    }

    /// Counts this cycle toward T_delay if anything is outstanding.
    pub fn update_delay(&mut self) {
        if self.outstanding_reads + self.outstanding_writes > 0 {
            self.quantum.t_delay += 1;
        }
    }

    pub fn take_quantum(&mut self) -> AppCounters {
        std::mem::take(&mut self.quantum)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn core(events: Vec<TraceEvent>) -> Core {
        Core::new(0, CoreConfig::default(), events.into(), false)
    }

    #[test]
    fn retires_three_alu_per_cycle() {
        let mut c = core(vec![TraceEvent::read(10, 0)]);
        c.dispatch();
        c.dispatch();
        assert_eq!(c.advance(0), 3);
        assert_eq!(c.quantum.t_stall, 0);
    }

    #[test]
    fn outstanding_read_at_head_stalls() {
        let mut c = core(vec![TraceEvent::read(0, 0x40)]);
        c.dispatch();
        let op = c.next_unsent().unwrap();
        c.mark_sent(op.slot);
        assert_eq!(c.advance(0), 0);
        assert_eq!(c.quantum.t_stall, 1);
        assert_eq!(c.count_outstanding(), (1, 0));
        c.complete(op.slot, AccessKind::Read, 5, 0);
        assert_eq!(c.count_outstanding(), (0, 0));
        assert_eq!(c.advance(6), 1);
    }

    #[test]
    fn exhausted_core_does_not_stall() {
        let mut c = core(vec![]);
        c.dispatch();
        assert!(c.is_exhausted());
        assert_eq!(c.advance(0), 0);
        assert_eq!(c.quantum.t_stall, 0);
    }

    #[test]
    fn store_commits_when_buffered() {
        let mut c = core(vec![TraceEvent::write(0, 0x80)]);
        c.dispatch();
        // Unbuffered store blocks retirement.
        assert_eq!(c.advance(0), 0);
        assert_eq!(c.quantum.t_stall, 1);
        let op = c.next_unsent().unwrap();
        c.mark_sent(op.slot);
        assert_eq!(c.advance(1), 1);
        assert_eq!(c.count_outstanding(), (0, 1));
    }

    #[test]
    fn outstanding_counts() {
        let ev: Vec<_> = (0..4).map(|i| TraceEvent::read(0, i * 64)).chain([TraceEvent::write(0, 0x1000)]).collect();
        let mut c = core(ev);
        c.dispatch();
        c.dispatch();
        while let Some(op) = c.next_unsent() {
            c.mark_sent(op.slot);
        }
        assert_eq!(c.count_outstanding(), (4, 1));
    }

    #[test]
    fn delay_is_wall_clock() {
        let mut c = core(vec![TraceEvent::read(0, 0), TraceEvent::read(0, 64)]);
        c.dispatch();
        while let Some(op) = c.next_unsent() {
            c.mark_sent(op.slot);
        }
        for _ in 0..100 {
            c.update_delay();
        }
        assert_eq!(c.quantum.t_delay, 100);
        let mut idle = core(vec![]);
        idle.update_delay();
        assert_eq!(idle.quantum.t_delay, 0);
    }

    #[test]
    fn mshr_limit_holds_reads() {
        let cfg = CoreConfig {
            mshr_capacity: 2,
            ..CoreConfig::default()
        };
        let ev: Vec<_> = (0..3).map(|i| TraceEvent::read(0, i * 64)).collect();
        let mut c = Core::new(0, cfg, ev.into(), false);
        c.dispatch();
        let mut sent = 0;
        while let Some(op) = c.next_unsent() {
            c.mark_sent(op.slot);
            sent += 1;
        }
        assert_eq!(sent, 2);
    }

    #[test]
    fn interference_union_bounded_by_lifetime() {
        let mut c = core(vec![TraceEvent::read(0, 0), TraceEvent::read(0, 64)]);
        c.dispatch();
        let a = c.next_unsent().unwrap();
        c.mark_sent(a.slot);
        let b = c.next_unsent().unwrap();
        c.mark_sent(b.slot);
        c.complete(a.slot, AccessKind::Read, 100, 50);
        c.complete(b.slot, AccessKind::Read, 110, 50);
        // [50,100) and [60,110) overlap: union is 60 cycles.
        assert_eq!(c.quantum.t_interference, 60);
    }

    #[test]
    fn measurement_marks() {
        let mut c = core(vec![TraceEvent::read(30, 0)]);
        c.set_region(3, 6);
        let mut cycle = 0;
        while !c.is_measured() && cycle < 100 {
            c.dispatch();
            c.advance(cycle);
            cycle += 1;
        }
        assert_eq!(c.measurement.start_cycle, Some(1));
        assert_eq!(c.measurement.end_cycle, Some(3));
        assert_eq!(c.measurement.ipc(), Some(3.0));
    }
}
