//! DRAM tag store over NVM, migration buffer and page migration as explicit
//! block-by-block memory traffic.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{Controller, MemRequest, RequestTag, SYSTEM_APP};
use crate::device::{AccessKind, DeviceGeometry, DeviceKind, BLOCK_BYTES};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MigrationError {
    #[error("page {0:#x} is already migrating")]
    MigrationInFlight(u64),
    #[error("page {0:#x} is not resident in DRAM")]
    NotResident(u64),
    #[error("page {0:#x} is already resident in DRAM")]
    AlreadyResident(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockLoc {
    InNvm,
    InBuffer,
    InDram,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MigrationDirection {
    Promote,
    Evict,
}

/// Where a page lives right now.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Residency {
    Dram { frame: u64 },
    Nvm,
    Migrating {
        direction: MigrationDirection,
        frame: u64,
        blocks: Vec<BlockLoc>,
    },
}

/// Where one block access must be sent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    Dram { frame: u64 },
    Nvm,
    Buffer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum WayState {
    Free,
    Resident(u64),
    /// Reserved for a page being promoted into this frame.
    Filling(u64),
    /// Holds a page that is being written back to NVM.
    Evicting(u64),
}

#[derive(Clone, Copy, Debug)]
struct Way {
    state: WayState,
    stamp: u64,
}

/// 16-way set-associative page cache directory with LRU replacement.
#[derive(Clone, Debug)]
pub struct TagStore {
    sets: u64,
    ways: usize,
    slots: Vec<Way>,
    clock: u64,
    frames: HashMap<u64, u64>,
}

impl TagStore {
    pub fn new(frames: u64, ways: usize) -> Self {
        let sets = (frames / ways as u64).max(1);
        TagStore {
            sets,
            ways,
            slots: vec![
                Way {
                    state: WayState::Free,
                    stamp: 0
                };
                (sets * ways as u64) as usize
            ],
            clock: 0,
            frames: HashMap::new(),
        }
    }

    pub fn sets(&self) -> u64 {
        self.sets
    }

    pub fn ways(&self) -> usize {
        self.ways
    }

    pub fn set_of(&self, page: u64) -> u64 {
        page % self.sets
    }

    /// Device frame number of a directory slot. Ways are laid out in
    /// consecutive blocks of `sets` frames, so a page maps to the same bank
    /// in DRAM as in NVM.
    pub fn physical_frame(&self, slot: u64) -> u64 {
        let ways = self.ways as u64;
        (slot % ways) * self.sets + slot / ways
    }

    fn set_frames(&self, page: u64) -> std::ops::Range<u64> {
        let s = self.set_of(page) * self.ways as u64;
        s..s + self.ways as u64
    }

    /// Frame currently holding (or reserved for) `page`.
    pub fn frame_of(&self, page: u64) -> Option<u64> {
        self.frames.get(&page).copied()
    }

    pub fn is_resident(&self, page: u64) -> bool {
        self.frame_of(page)
            .is_some_and(|f| self.slots[f as usize].state == WayState::Resident(page))
    }

    pub fn resident_count(&self) -> usize {
        self.slots
            .iter()
            .filter(|w| matches!(w.state, WayState::Resident(_)))
            .count()
    }

    pub fn touch(&mut self, page: u64) -> Result<(), MigrationError> {
        if !self.is_resident(page) {
            return Err(MigrationError::NotResident(page));
        }
        self.clock += 1;
        let f = self.frames[&page];
        self.slots[f as usize].stamp = self.clock;
        Ok(())
    }

    /// Resident pages of `page`'s set, least recently used first.
    pub fn lru_order(&self, page: u64) -> Vec<u64> {
        let mut v: Vec<(u64, u64)> = self
            .set_frames(page)
            .filter_map(|f| match self.slots[f as usize].state {
                WayState::Resident(p) => Some((self.slots[f as usize].stamp, p)),
                _ => None,
            })
            .collect();
        v.sort_unstable();
        v.into_iter().map(|(_, p)| p).collect()
    }

    /// Installs `page` directly in a free way (initial placement).
    pub fn insert(&mut self, page: u64) -> Option<u64> {
        if self.frames.contains_key(&page) {
            return None;
        }
        let f = self
            .set_frames(page)
            .find(|&f| self.slots[f as usize].state == WayState::Free)?;
        self.clock += 1;
        self.slots[f as usize] = Way {
            state: WayState::Resident(page),
            stamp: self.clock,
        };
        self.frames.insert(page, f);
        Some(f)
    }

    /// Picks a frame for `page`: a free way, else the least recently used
    /// resident way whose page becomes the victim.
    fn reserve(&mut self, page: u64) -> Option<(u64, Option<u64>)> {
        let frames = self.set_frames(page);
        if let Some(f) = frames
            .clone()
            .find(|&f| self.slots[f as usize].state == WayState::Free)
        {
            self.slots[f as usize].state = WayState::Filling(page);
            self.frames.insert(page, f);
            return Some((f, None));
        }
        let f = frames
            .filter(|&f| matches!(self.slots[f as usize].state, WayState::Resident(_)))
            .min_by_key(|&f| self.slots[f as usize].stamp)?;
        let WayState::Resident(victim) = self.slots[f as usize].state else { unreachable!() };
        self.slots[f as usize].state = WayState::Evicting(victim);
        Some((f, Some(victim)))
    }

    fn begin_evict(&mut self, page: u64) -> Result<u64, MigrationError> {
        if !self.is_resident(page) {
            return Err(MigrationError::NotResident(page));
        }
        let f = self.frames[&page];
        self.slots[f as usize].state = WayState::Evicting(page);
        Ok(f)
    }

    fn finish_evict(&mut self, frame: u64, then_fill: Option<u64>) {
        let WayState::Evicting(victim) = self.slots[frame as usize].state else {
            panic!("frame {frame} is not evicting");
        };
        self.frames.remove(&victim);
        self.slots[frame as usize].state = match then_fill {
            Some(p) => {
                self.frames.insert(p, frame);
                WayState::Filling(p)
            }
            None => WayState::Free,
        };
    }

    fn finish_fill(&mut self, frame: u64) {
        let WayState::Filling(page) = self.slots[frame as usize].state else {
            panic!("frame {frame} is not filling");
        };
        self.clock += 1;
        self.slots[frame as usize] = Way {
            state: WayState::Resident(page),
            stamp: self.clock,
        };
    }

    /// Structural checks: one frame per page, map and ways agree, distinct
    /// LRU stamps within every set.
    pub fn check(&self) -> Result<(), String> {
        for (&page, &f) in &self.frames {
            match self.slots.get(f as usize).map(|w| w.state) {
                Some(WayState::Resident(p) | WayState::Filling(p) | WayState::Evicting(p)) if p == page => {}
                other => return Err(format!("page {page:#x} maps to frame {f} holding {other:?}")),
            }
        }
        let mapped = self
            .slots
            .iter()
            .filter(|w| w.state != WayState::Free)
            .count();
        // A way being filled over an evicting victim holds only the victim.
        if mapped != self.frames.len() {
            return Err(format!("{mapped} occupied ways but {} mapped pages", self.frames.len()));
        }
        for set in 0..self.sets {
            let base = (set * self.ways as u64) as usize;
            let mut stamps: Vec<u64> = self.slots[base..base + self.ways]
                .iter()
                .filter(|w| matches!(w.state, WayState::Resident(_)))
                .map(|w| w.stamp)
                .collect();
            let n = stamps.len();
            stamps.sort_unstable();
            stamps.dedup();
            if stamps.len() != n {
                return Err(format!("set {set} has duplicate LRU ranks"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MigrationConfig {
    /// Pages migrating at once.
    pub max_active: usize,
    /// Promotion requests waiting for a migration slot; further requests are dropped.
    pub queue_limit: usize,
    /// Blocks of one page whose source read is issued but whose destination
    /// write has not completed.
    pub window: usize,
    /// Read queue slots left free for demand requests.
    pub read_reserve: usize,
    /// Write buffer slots left free for demand requests.
    pub write_reserve: usize,
    /// Device cycles to serve a demand access from the migration buffer.
    pub buffer_latency: u64,
}

impl Default for MigrationConfig {
    fn default() -> Self {
        MigrationConfig {
            max_active: 4,
            queue_limit: 64,
            window: 16,
            read_reserve: 16,
            write_reserve: 8,
            buffer_latency: 1,
        }
    }
}

impl MigrationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_active == 0 || self.window == 0 {
            return Err("max_active and window must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationCounters {
    pub promoted: u64,
    pub evicted: u64,
    pub requested: u64,
    pub dropped: u64,
    pub dram_reads: u64,
    pub dram_writes: u64,
    pub nvm_reads: u64,
    pub nvm_writes: u64,
}

impl MigrationCounters {
    pub fn traffic_bytes(&self) -> u64 {
        (self.dram_reads + self.dram_writes + self.nvm_reads + self.nvm_writes) * BLOCK_BYTES
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Phase {
    page: u64,
    direction: MigrationDirection,
}

#[derive(Clone, Debug)]
struct Job {
    phases: Vec<Phase>,
    current: usize,
    frame: u64,
    blocks: Vec<BlockLoc>,
    next_read: usize,
    in_window: usize,
    writes_ready: VecDeque<u16>,
    writes_done: usize,
}

impl Job {
    fn phase(&self) -> Phase {
        self.phases[self.current]
    }

    fn start_blocks(dir: MigrationDirection, n: usize) -> Vec<BlockLoc> {
        match dir {
            MigrationDirection::Promote => vec![BlockLoc::InNvm; n],
            MigrationDirection::Evict => vec![BlockLoc::InDram; n],
        }
    }
}

/// A phase that finished on this completion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Finished {
    pub page: u64,
    pub direction: MigrationDirection,
}

pub struct MigrationEngine {
    pub cfg: MigrationConfig,
    pub tags: TagStore,
    blocks_per_page: usize,
    pending: VecDeque<(u64, MigrationDirection)>,
    queued: HashSet<u64>,
    jobs: BTreeMap<u64, Job>,
    next_job: u64,
    /// Page currently moving -> job id.
    moving: HashMap<u64, u64>,
    pub counters: MigrationCounters,
    preloaded: u64,
}

impl MigrationEngine {
    pub fn new(cfg: MigrationConfig, dram_frames: u64, associativity: usize, page_size: u64) -> Self {
        MigrationEngine {
            cfg,
            tags: TagStore::new(dram_frames, associativity),
            blocks_per_page: (page_size / BLOCK_BYTES) as usize,
            pending: VecDeque::new(),
            queued: HashSet::new(),
            jobs: BTreeMap::new(),
            next_job: 0,
            moving: HashMap::new(),
            counters: MigrationCounters::default(),
            preloaded: 0,
        }
    }

    pub fn blocks_per_page(&self) -> usize {
        self.blocks_per_page
    }

    pub fn active_jobs(&self) -> usize {
        self.jobs.len()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Places a page in DRAM before simulation starts.
    pub fn preload(&mut self, page: u64) -> bool {
        let ok = self.tags.insert(page).is_some();
        self.preloaded += ok as u64;
        ok
    }

    pub fn lookup(&self, page: u64) -> Residency {
        if let Some(job) = self.moving.get(&page).map(|j| &self.jobs[j]) {
            return Residency::Migrating {
                direction: job.phase().direction,
                frame: self.tags.physical_frame(job.frame),
                blocks: job.blocks.clone(),
            };
        }
        match self.tags.frame_of(page) {
            Some(slot) if self.tags.is_resident(page) => Residency::Dram {
                frame: self.tags.physical_frame(slot),
            },
            _ => Residency::Nvm,
        }
    }

    pub fn route(&self, page: u64, block: usize) -> Route {
        if let Some(job) = self.moving.get(&page).map(|j| &self.jobs[j]) {
            return match job.blocks[block] {
                BlockLoc::InNvm => Route::Nvm,
                BlockLoc::InBuffer => Route::Buffer,
                BlockLoc::InDram => Route::Dram {
                    frame: self.tags.physical_frame(job.frame),
                },
            };
        }
        match self.tags.frame_of(page) {
            Some(slot) if self.tags.is_resident(page) => Route::Dram {
                frame: self.tags.physical_frame(slot),
            },
            _ => Route::Nvm,
        }
    }

    /// True when the page is neither in DRAM nor involved in a migration.
    pub fn can_promote(&self, page: u64) -> bool {
        !self.queued.contains(&page) && self.tags.frame_of(page).is_none()
    }

    pub fn touch(&mut self, page: u64) -> Result<(), MigrationError> {
        self.tags.touch(page)
    }

    /// Queues a migration. Returns `Ok(false)` when the queue is full and the
    /// request was dropped.
    pub fn request(&mut self, page: u64, direction: MigrationDirection) -> Result<bool, MigrationError> {
        if self.queued.contains(&page) {
            return Err(MigrationError::MigrationInFlight(page));
        }
        match direction {
            MigrationDirection::Promote if self.tags.frame_of(page).is_some() => {
                return Err(MigrationError::AlreadyResident(page))
            }
            MigrationDirection::Evict if !self.tags.is_resident(page) => {
                return Err(MigrationError::NotResident(page))
            }
            _ => {}
        }
        self.counters.requested += 1;
        if self.pending.len() >= self.cfg.queue_limit {
            self.counters.dropped += 1;
            return Ok(false);
        }
        self.pending.push_back((page, direction));
        self.queued.insert(page);
        Ok(true)
    }

    fn activate(&mut self) {
        let mut i = 0;
        while self.jobs.len() < self.cfg.max_active && i < self.pending.len() {
            let (page, dir) = self.pending[i];
            let phases = match dir {
                MigrationDirection::Promote => match self.tags.reserve(page) {
                    None => {
                        i += 1;
                        continue;
                    }
                    Some((frame, victim)) => {
                        let mut phases = Vec::new();
                        if let Some(v) = victim {
                            phases.push(Phase {
                                page: v,
                                direction: MigrationDirection::Evict,
                            });
                            self.queued.insert(v);
                        }
                        phases.push(Phase {
                            page,
                            direction: MigrationDirection::Promote,
                        });
                        (frame, phases)
                    }
                },
                MigrationDirection::Evict => match self.tags.begin_evict(page) {
                    Ok(frame) => (
                        frame,
                        vec![Phase {
                            page,
                            direction: MigrationDirection::Evict,
                        }],
                    ),
                    Err(_) => {
                        // Evicted by a promotion in the meantime.
                        self.queued.remove(&page);
                        self.pending.remove(i);
                        continue;
                    }
                },
            };
            self.pending.remove(i);
            let (frame, phases) = phases;
            let id = self.next_job;
            self.next_job += 1;
            let first = phases[0];
            self.moving.insert(first.page, id);
            self.jobs.insert(
                id,
                Job {
                    blocks: Job::start_blocks(first.direction, self.blocks_per_page),
                    phases,
                    current: 0,
                    frame,
                    next_read: 0,
                    in_window: 0,
                    writes_ready: VecDeque::new(),
                    writes_done: 0,
                },
            );
        }
    }

    /// Starts queued migrations and issues as much block traffic as the
    /// controllers accept.
    pub fn pump(
        &mut self,
        cycle: u64,
        next_id: &mut u64,
        dram: &mut Controller,
        nvm: &mut Controller,
        dram_geom: &DeviceGeometry,
        nvm_geom: &DeviceGeometry,
    ) {
        self.activate();
        let bpp = self.blocks_per_page;
        for (&id, job) in self.jobs.iter_mut() {
            let phase = job.phase();
            let (src, dst) = match phase.direction {
                MigrationDirection::Promote => (DeviceKind::Nvm, DeviceKind::Dram),
                MigrationDirection::Evict => (DeviceKind::Dram, DeviceKind::Nvm),
            };
            let frame = self.tags.physical_frame(job.frame);
            let make = |kind: AccessKind, device: DeviceKind, block: u16, id_slot: &mut u64| {
                let loc = match device {
                    DeviceKind::Dram => dram_geom.locate(frame),
                    DeviceKind::Nvm => nvm_geom.locate(phase.page),
                };
                let rid = *id_slot;
                *id_slot += 1;
                MemRequest {
                    id: rid,
                    app_id: SYSTEM_APP,
                    page_id: phase.page,
                    bank: loc.bank,
                    row_id: loc.row,
                    kind,
                    device,
                    tag: RequestTag::Migration { job: id, block },
                    arrival_cycle: cycle,
                    issue_cycle: 0,
                    completion_cycle: 0,
                    outcome: None,
                    interference_delay: 0,
                }
            };
            while let Some(&block) = job.writes_ready.front() {
                let ctrl = match dst {
                    DeviceKind::Dram => &mut *dram,
                    DeviceKind::Nvm => &mut *nvm,
                };
                if !ctrl.has_space(AccessKind::Write, self.cfg.write_reserve) {
                    break;
                }
                let req = make(AccessKind::Write, dst, block, next_id);
                ctrl.try_enqueue(req).expect("space checked");
                job.writes_ready.pop_front();
                match dst {
                    DeviceKind::Dram => self.counters.dram_writes += 1,
                    DeviceKind::Nvm => self.counters.nvm_writes += 1,
                }
            }
            while job.next_read < bpp && job.in_window < self.cfg.window {
                let ctrl = match src {
                    DeviceKind::Dram => &mut *dram,
                    DeviceKind::Nvm => &mut *nvm,
                };
                if !ctrl.has_space(AccessKind::Read, self.cfg.read_reserve) {
                    break;
                }
                let req = make(AccessKind::Read, src, job.next_read as u16, next_id);
                ctrl.try_enqueue(req).expect("space checked");
                job.next_read += 1;
                job.in_window += 1;
                match src {
                    DeviceKind::Dram => self.counters.dram_reads += 1,
                    DeviceKind::Nvm => self.counters.nvm_reads += 1,
                }
            }
        }
    }

    /// Handles a completed migration request. Returns the phase that
    /// finished, if any.
    pub fn on_complete(&mut self, req: &MemRequest) -> Option<Finished> {
        let RequestTag::Migration { job: id, block } = req.tag else {
            return None;
        };
        let bpp = self.blocks_per_page;
        let job = self.jobs.get_mut(&id).expect("completion for unknown migration job");
        let phase = job.phase();
        match req.kind {
            AccessKind::Read => {
                job.blocks[block as usize] = BlockLoc::InBuffer;
                job.writes_ready.push_back(block);
                return None;
            }
            AccessKind::Write => {
                job.blocks[block as usize] = match phase.direction {
                    MigrationDirection::Promote => BlockLoc::InDram,
                    MigrationDirection::Evict => BlockLoc::InNvm,
                };
                job.in_window -= 1;
                job.writes_done += 1;
            }
        }
        if job.writes_done < bpp {
            return None;
        }
        // Phase complete.
        self.moving.remove(&phase.page);
        self.queued.remove(&phase.page);
        let next = job.phases.get(job.current + 1).copied();
        let frame = job.frame;
        match phase.direction {
            MigrationDirection::Evict => {
                self.tags.finish_evict(frame, next.map(|p| p.page));
                self.counters.evicted += 1;
            }
            MigrationDirection::Promote => {
                self.tags.finish_fill(frame);
                self.counters.promoted += 1;
            }
        }
        match next {
            Some(p) => {
                job.current += 1;
                job.blocks = Job::start_blocks(p.direction, bpp);
                job.next_read = 0;
                job.in_window = 0;
                job.writes_done = 0;
                self.moving.insert(p.page, id);
            }
            None => {
                self.jobs.remove(&id);
            }
        }
        Some(Finished {
            page: phase.page,
            direction: phase.direction,
        })
    }

    /// Residency and bookkeeping invariants.
    pub fn check_invariants(&self) -> Result<(), String> {
        self.tags.check()?;
        let resident = self.tags.resident_count() as u64;
        let evicting = self.jobs.values().filter(|j| j.phase().direction == MigrationDirection::Evict).count() as u64;
        // Every completed promotion adds a page, every completed eviction
        // removes one; pages mid-eviction are no longer counted as resident.
        let expected = self.preloaded + self.counters.promoted - self.counters.evicted;
        if resident + evicting != expected {
            return Err(format!(
                "resident {resident} + evicting {evicting} != preloaded {} + promoted {} - evicted {}",
                self.preloaded, self.counters.promoted, self.counters.evicted
            ));
        }
        for (&page, &id) in &self.moving {
            let job = self.jobs.get(&id).ok_or_else(|| format!("page {page:#x} moving in missing job {id}"))?;
            if job.phase().page != page {
                return Err(format!("page {page:#x} registered under job {id} moving {:#x}", job.phase().page));
            }
            let order = |b: BlockLoc| match (job.phase().direction, b) {
                (MigrationDirection::Promote, BlockLoc::InNvm) | (MigrationDirection::Evict, BlockLoc::InDram) => 0,
                (_, BlockLoc::InBuffer) => 1,
                _ => 2,
            };
            let done = job.blocks.iter().filter(|&&b| order(b) == 2).count();
            if done != job.writes_done {
                return Err(format!("job {id}: {done} blocks moved but {} writes completed", job.writes_done));
            }
        }
        if self.moving.len() != self.jobs.len() {
            return Err("every job must move exactly one page".into());
        }
        Ok(())
    }
}
