//! Temporary MLP counters for pages with outstanding NVM requests.

use std::collections::BTreeMap;

use super::fixed::MlpCounter;
use crate::controller::AppId;
use crate::device::AccessKind;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct HotEntry {
    pub reads: u32,
    pub writes: u32,
    /// False when the entry was created while the table was full; such
    /// entries only track outstanding counts and are never sampled.
    pub tracked: bool,
    pub read_mlp: MlpCounter,
    pub write_mlp: MlpCounter,
}

#[derive(Clone, Debug)]
pub struct HotPages {
    capacity: usize,
    tracked: usize,
    entries: BTreeMap<(u64, AppId), HotEntry>,
}

impl HotPages {
    pub fn new(capacity: usize) -> Self {
        HotPages {
            capacity,
            tracked: 0,
            entries: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Entries holding temporary counters.
    pub fn tracked(&self) -> usize {
        self.tracked
    }

    pub fn get(&self, page: u64, app: AppId) -> Option<&HotEntry> {
        self.entries.get(&(page, app))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(u64, AppId), &HotEntry)> {
        self.entries.iter()
    }

    pub fn inject(&mut self, page: u64, app: AppId, kind: AccessKind) {
        let tracked = self.tracked < self.capacity;
        let e = self.entries.entry((page, app)).or_insert_with(|| HotEntry {
            tracked,
            ..HotEntry::default()
        });
        if e.reads + e.writes == 0 && e.tracked {
            self.tracked += 1;
        }
        match kind {
            AccessKind::Read => e.reads += 1,
            AccessKind::Write => e.writes += 1,
        }
    }

    /// Marks one request complete. Returns the page's temporary counters
    /// when its last outstanding request finishes.
    pub fn complete(&mut self, page: u64, app: AppId, kind: AccessKind) -> Option<(MlpCounter, MlpCounter)> {
        let e = self.entries.get_mut(&(page, app))?;
        match kind {
            AccessKind::Read => e.reads -= 1,
            AccessKind::Write => e.writes -= 1,
        }
        if e.reads + e.writes > 0 {
            return None;
        }
        let e = self.entries.remove(&(page, app)).unwrap();
        if e.tracked {
            self.tracked -= 1;
            Some((e.read_mlp, e.write_mlp))
        } else {
            None
        }
    }

    /// One sampling step. `outstanding(app)` gives the application's total
    /// (reads, writes) in flight.
    pub fn sample(&mut self, mut outstanding: impl FnMut(AppId) -> (usize, usize)) {
        for (&(_, app), e) in self.entries.iter_mut().filter(|(_, e)| e.tracked) {
            let (n_read, n_write) = outstanding(app);
            debug_assert!(e.reads as usize <= n_read && e.writes as usize <= n_write);
            e.read_mlp.sample(e.reads, n_read as u32);
            e.write_mlp.sample(e.writes, n_write as u32);
        }
    }
}

impl Default for HotPages {
    fn default() -> Self {
        HotPages::new(96)
    }
}
