//! Set-associative per-(page, application) statistics store with LRU
//! replacement.

use serde::{Deserialize, Serialize};

use super::fixed::{bump, MlpCounter};
use crate::controller::AppId;
use crate::device::{AccessKind, RowOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageStats {
    pub page_id: u64,
    pub app_id: AppId,
    pub read_miss: u8,
    pub write_miss: u8,
    /// NVM demand accesses, used by the frequency policy.
    pub accesses: u8,
    pub read_mlp: MlpCounter,
    pub write_mlp: MlpCounter,
}

impl PageStats {
    pub fn new(page_id: u64, app_id: AppId) -> Self {
        PageStats {
            page_id,
            app_id,
            read_miss: 0,
            write_miss: 0,
            accesses: 0,
            read_mlp: MlpCounter::default(),
            write_mlp: MlpCounter::default(),
        }
    }

    pub fn record_access(&mut self, kind: AccessKind, outcome: RowOutcome) {
        bump(&mut self.accesses);
        if outcome == RowOutcome::RowMiss {
            match kind {
                AccessKind::Read => bump(&mut self.read_miss),
                AccessKind::Write => bump(&mut self.write_miss),
            }
        }
    }

    pub fn row_misses(&self) -> u32 {
        self.read_miss as u32 + self.write_miss as u32
    }

    /// Average (read, write) MLP ratios; 0 where no samples exist.
    pub fn mlp_ratios(&self) -> (f64, f64) {
        let r = |c: &MlpCounter| {
            if c.is_empty() {
                0.0
            } else {
                c.acc() / c.weight() as f64
            }
        };
        (r(&self.read_mlp), r(&self.write_mlp))
    }

    pub fn fold(&mut self, read: &MlpCounter, write: &MlpCounter) {
        self.read_mlp.merge(read);
        self.write_mlp.merge(write);
    }
}

#[derive(Clone, Debug)]
struct Way {
    stats: Option<PageStats>,
    stamp: u64,
}

#[derive(Clone, Debug)]
pub struct StatStore {
    sets: usize,
    ways: usize,
    slots: Vec<Way>,
    clock: u64,
    len: usize,
    pub evictions: u64,
}

impl StatStore {
    pub fn new(sets: usize, ways: usize) -> Self {
        assert!(sets > 0 && ways > 0);
        StatStore {
            sets,
            ways,
            slots: vec![Way { stats: None, stamp: 0 }; sets * ways],
            clock: 0,
            len: 0,
            evictions: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.sets * self.ways
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Set index; all applications' entries for a page share a set.
    pub fn set_of(&self, page: u64) -> usize {
        let h = page ^ (page >> 6) ^ (page >> 12) ^ (page >> 18) ^ (page >> 24);
        (h % self.sets as u64) as usize
    }

    fn set_range(&self, page: u64) -> std::ops::Range<usize> {
        let s = self.set_of(page) * self.ways;
        s..s + self.ways
    }

    fn find(&self, page: u64, app: AppId) -> Option<usize> {
        self.set_range(page).find(|&i| {
            self.slots[i]
                .stats
                .is_some_and(|s| s.page_id == page && s.app_id == app)
        })
    }

    pub fn get(&self, page: u64, app: AppId) -> Option<&PageStats> {
        self.find(page, app).and_then(|i| self.slots[i].stats.as_ref())
    }

    /// Entry for (page, app), allocated over the set's LRU entry when absent.
    /// The entry becomes most recently used.
    pub fn entry(&mut self, page: u64, app: AppId) -> &mut PageStats {
        self.clock += 1;
        let idx = match self.find(page, app) {
            Some(i) => i,
            None => {
                let range = self.set_range(page);
                let i = range
                    .clone()
                    .find(|&i| self.slots[i].stats.is_none())
                    .unwrap_or_else(|| {
                        self.evictions += 1;
                        self.len -= 1;
                        range.min_by_key(|&i| self.slots[i].stamp).unwrap()
                    });
                self.slots[i].stats = Some(PageStats::new(page, app));
                self.len += 1;
                i
            }
        };
        self.slots[idx].stamp = self.clock;
        self.slots[idx].stats.as_mut().unwrap()
    }

    pub fn entries_for_page(&self, page: u64) -> impl Iterator<Item = &PageStats> + '_ {
        self.slots[self.set_range(page)]
            .iter()
            .filter_map(move |w| w.stats.as_ref().filter(|s| s.page_id == page))
    }

    pub fn invalidate_page(&mut self, page: u64) {
        let range = self.set_range(page);
        for w in &mut self.slots[range] {
            if w.stats.is_some_and(|s| s.page_id == page) {
                w.stats = None;
                self.len -= 1;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &PageStats> + '_ {
        self.slots.iter().filter_map(|w| w.stats.as_ref())
    }

    /// Least recently used entry of `page`'s set, if the set is full.
    pub fn victim_for(&self, page: u64) -> Option<&PageStats> {
        let range = self.set_range(page);
        if self.slots[range.clone()].iter().any(|w| w.stats.is_none()) {
            return None;
        }
        range
            .min_by_key(|&i| self.slots[i].stamp)
            .and_then(|i| self.slots[i].stats.as_ref())
    }

    /// Halves every counter.
    pub fn decay(&mut self) {
        for s in self.slots.iter_mut().filter_map(|w| w.stats.as_mut()) {
            s.read_miss /= 2;
            s.write_miss /= 2;
            s.accesses /= 2;
            s.read_mlp.halve();
            s.write_mlp.halve();
        }
    }
}

impl Default for StatStore {
    fn default() -> Self {
        StatStore::new(64, 32)
    }
}
