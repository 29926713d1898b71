//! Synthetic trace generator with controllable access frequency, row-buffer
//! locality, memory-level parallelism and memory intensity.
//!
//! Pages are grouped into classes. The generator emits *bursts*: a burst
//! takes `burst` consecutive pages of one class from a random start, which
//! fall in different banks, and issues *rounds* of one request to each page,
//! back to back (zero instruction gap) so they are outstanding together.
//! Every round after the first walks to the next block of each page, hitting
//! the row opened by the previous round; rounds continue with the class's
//! row-hit probability. Rounds are separated by non-memory instructions
//! sized to meet the target MPKI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Trace, TraceEvent};
use crate::device::{AccessKind, BLOCK_BYTES};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PageClass {
    pub pages: u64,
    /// Relative probability that a burst is drawn from this class.
    pub weight: f64,
    pub row_hit_prob: f64,
    /// Distinct pages accessed back to back per burst.
    pub burst: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub name: String,
    pub instructions: u64,
    pub target_mpki: f64,
    pub classes: Vec<PageClass>,
    pub read_fraction: f64,
    pub page_size: u64,
    pub seed: u64,
    /// Relative jitter of the gap between bursts, in [0, 1).
    #[serde(default = "default_jitter")]
    pub gap_jitter: f64,
}

fn default_jitter() -> f64 {
    0.5
}

/// Memory-intensity cut between the intensive and non-intensive classes.
pub const INTENSIVE_MPKI: f64 = 3.6;

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.instructions == 0 {
            return bad("instructions must be > 0".into());
        }
        if !(self.target_mpki > 0.0 && self.target_mpki < 1000.0) {
            return bad(format!("target MPKI {} out of (0, 1000)", self.target_mpki));
        }
        if !(0.0..=1.0).contains(&self.read_fraction) {
            return bad(format!("read fraction {} out of [0, 1]", self.read_fraction));
        }
        if !(0.0..1.0).contains(&self.gap_jitter) {
            return bad(format!("gap jitter {} out of [0, 1)", self.gap_jitter));
        }
        if self.page_size < BLOCK_BYTES || !self.page_size.is_multiple_of(BLOCK_BYTES) {
            return bad(format!("page size {} is not a multiple of {BLOCK_BYTES}", self.page_size));
        }
        if self.classes.is_empty() {
            return bad("at least one page class is required".into());
        }
        for (i, c) in self.classes.iter().enumerate() {
            if c.pages == 0 {
                return bad(format!("class {i}: pages must be > 0"));
            }
            if c.burst == 0 || c.burst as u64 > c.pages {
                return bad(format!("class {i}: burst {} must be in 1..={}", c.burst, c.pages));
            }
            if !(0.0..=1.0).contains(&c.row_hit_prob) {
                return bad(format!("class {i}: row-hit probability {} out of [0, 1]", c.row_hit_prob));
            }
            if !(c.weight > 0.0) {
                return bad(format!("class {i}: weight must be > 0"));
            }
        }
        Ok(())
    }

    pub fn is_intensive(&self) -> bool {
        self.target_mpki >= INTENSIVE_MPKI
    }

    /// First page index of each class.
    pub fn class_bases(&self) -> Vec<u64> {
        self.classes
            .iter()
            .scan(0u64, |base, c| {
                let b = *base;
                *base += c.pages;
                Some(b)
            })
            .collect()
    }

    pub fn total_pages(&self) -> u64 {
        self.classes.iter().map(|c| c.pages).sum()
    }

    pub fn generate(&self) -> Result<Trace, SynthError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let blocks = self.page_size / BLOCK_BYTES;
        let bases = self.class_bases();
        let total_w: f64 = self.classes.iter().map(|c| c.weight).sum();
        let inst_per_req = 1000.0 / self.target_mpki;

        let mut events = Vec::new();
        let mut instructions = 0u64;
        while instructions < self.instructions {
            let mut pick = rng.gen::<f64>() * total_w;
            let mut ci = 0;
            while ci + 1 < self.classes.len() && pick >= self.classes[ci].weight {
                pick -= self.classes[ci].weight;
                ci += 1;
            }
            let class = &self.classes[ci];
            let start = rng.gen_range(0..class.pages);
            let mut pages: Vec<(u64, u64)> = (0..class.burst as u64)
                .map(|j| (bases[ci] + (start + j) % class.pages, rng.gen_range(0..blocks)))
                .collect();
            let round_gap = (inst_per_req - 1.0).max(0.0) * class.burst as f64;
            for round in 1.. {
                let jitter = 1.0 + self.gap_jitter * (2.0 * rng.gen::<f64>() - 1.0);
                let mut gap = (round_gap * jitter).round().min(u32::MAX as f64) as u32;
                for (page, block) in &mut pages {
                    let kind = if rng.gen::<f64>() < self.read_fraction {
                        AccessKind::Read
                    } else {
                        AccessKind::Write
                    };
                    events.push(TraceEvent {
                        inst_gap: gap,
                        address: *page * self.page_size + *block * BLOCK_BYTES,
                        kind,
                    });
                    instructions += gap as u64 + 1;
                    gap = 0;
                    *block = (*block + 1) % blocks;
                }
                if round >= blocks || !(rng.gen::<f64>() < class.row_hit_prob) {
                    break;
                }
            }
        }
        let mut trace = Trace::new(self.name.clone(), events);
        trace.header.address_space = (self.total_pages() * self.page_size).next_power_of_two();
        Ok(trace)
    }

    /// A single-class spec.
    pub fn uniform(name: &str, instructions: u64, mpki: f64, pages: u64, row_hit: f64, burst: u32, seed: u64) -> Self {
        SynthSpec {
            name: name.to_string(),
            instructions,
            target_mpki: mpki,
            classes: vec![PageClass {
                pages,
                weight: 1.0,
                row_hit_prob: row_hit,
                burst,
            }],
            read_fraction: 0.8,
            page_size: 8192,
            seed,
            gap_jitter: 0.5,
        }
    }

    /// Random mix of page classes spanning low/high frequency, row-buffer
    /// locality and parallelism.
    pub fn randomized(name: &str, instructions: u64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5_eed0_fc1a_55e5);
        let n_classes = rng.gen_range(4..=8);
        let classes = (0..n_classes)
            .map(|_| {
                let burst = rng.gen_range(1..=6);
                PageClass {
                    pages: rng.gen_range(burst as u64 * 4..=64),
                    weight: rng.gen_range(0.2..2.0),
                    row_hit_prob: rng.gen_range(0.0..0.8),
                    burst,
                }
            })
            .collect();
        SynthSpec {
            name: name.to_string(),
            instructions,
            target_mpki: rng.gen_range(8.0..30.0),
            classes,
            read_fraction: rng.gen_range(0.7..1.0),
            page_size: 8192,
            seed,
            gap_jitter: 0.5,
        }
    }
}
