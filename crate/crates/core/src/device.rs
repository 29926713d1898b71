//! DRAM and NVM device model: timing presets, banks with row buffers, address
//! mapping and per-access energy accounting.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bytes moved by one memory request (one last-level cache block).
pub const BLOCK_BYTES: u64 = 64;
/// Bits moved by one memory request.
pub const BLOCK_BITS: u64 = BLOCK_BYTES * 8;

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("unknown device preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid timing parameter `{field}`: {value} (must be > 0)")]
    NonPositive { field: &'static str, value: f64 },
    #[error("cannot parse timing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot read timing config: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid geometry: {0}")]
    Geometry(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowOutcome {
    RowHit,
    RowMiss,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Dram,
    Nvm,
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeviceKind::Dram => f.write_str("dram"),
            DeviceKind::Nvm => f.write_str("nvm"),
        }
    }
}

/// Timing and energy parameters of one memory device. Times are in ns,
/// energies in pJ/bit, standby power in uW/bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevTiming {
    pub clock_period: f64,
    pub t_cl: f64,
    pub t_rcd: f64,
    pub t_rp: f64,
    pub t_wr: f64,
    pub array_read_energy: f64,
    pub array_write_energy: f64,
    pub rb_read_energy: f64,
    pub rb_write_energy: f64,
    pub standby_power: f64,
}

impl DevTiming {
    pub fn dram_baseline() -> Self {
        DevTiming {
            clock_period: 1.875,
            t_cl: 15.0,
            t_rcd: 15.0,
            t_rp: 15.0,
            t_wr: 15.0,
            array_read_energy: 1.17,
            array_write_energy: 0.39,
            rb_read_energy: 0.93,
            rb_write_energy: 1.02,
            standby_power: 21.0,
        }
    }

    pub fn nvm_baseline() -> Self {
        DevTiming {
            clock_period: 1.875,
            t_cl: 15.0,
            t_rcd: 67.5,
            t_rp: 15.0,
            t_wr: 180.0,
            array_read_energy: 2.47,
            array_write_energy: 16.82,
            rb_read_energy: 0.93,
            rb_write_energy: 1.02,
            standby_power: 21.0,
        }
    }

    pub fn preset(name: &str) -> Result<Self, DeviceError> {
        match name {
            "dram-baseline" => Ok(Self::dram_baseline()),
            "nvm-baseline" => Ok(Self::nvm_baseline()),
            other => Err(DeviceError::UnknownPreset(other.to_string())),
        }
    }

    /// NVM variant whose activation and write-recovery times are the given
    /// multiples of `dram`'s.
    pub fn nvm_scaled(dram: &DevTiming, rcd_multiplier: f64, wr_multiplier: f64) -> Self {
        DevTiming {
            t_rcd: dram.t_rcd * rcd_multiplier,
            t_wr: dram.t_wr * wr_multiplier,
            ..Self::nvm_baseline()
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let fields = [
            ("clock_period", self.clock_period),
            ("t_cl", self.t_cl),
            ("t_rcd", self.t_rcd),
            ("t_rp", self.t_rp),
            ("t_wr", self.t_wr),
            ("array_read_energy", self.array_read_energy),
            ("array_write_energy", self.array_write_energy),
            ("rb_read_energy", self.rb_read_energy),
            ("rb_write_energy", self.rb_write_energy),
            ("standby_power", self.standby_power),
        ];
        for (field, value) in fields {
            if !(value > 0.0) {
                return Err(DeviceError::NonPositive { field, value });
            }
        }
        Ok(())
    }

    /// Parses a `key = value` timing file. An optional `preset` key selects the
    /// starting point; every other key overrides one field.
    pub fn parse_config(text: &str) -> Result<Self, DeviceError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Overrides {
            preset: Option<String>,
            #[serde(alias = "t_clk")]
            clock_period: Option<f64>,
            t_cl: Option<f64>,
            t_rcd: Option<f64>,
            t_rp: Option<f64>,
            t_wr: Option<f64>,
            array_read_energy: Option<f64>,
            array_write_energy: Option<f64>,
            rb_read_energy: Option<f64>,
            rb_write_energy: Option<f64>,
            standby_power: Option<f64>,
        }
        let o: Overrides = toml::from_str(text)?;
        let mut t = match o.preset.as_deref() {
            Some(name) => Self::preset(name)?,
            None => Self::dram_baseline(),
        };
        macro_rules! apply {
            ($($f:ident),*) => { $( if let Some(v) = o.$f { t.$f = v; } )* };
        }
        apply!(
            clock_period,
            t_cl,
            t_rcd,
            t_rp,
            t_wr,
            array_read_energy,
            array_write_energy,
            rb_read_energy,
            rb_write_energy,
            standby_power
        );
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, DeviceError> {
        Self::parse_config(&std::fs::read_to_string(path)?)
    }

    fn ns_to_cycles(&self, ns: f64) -> u64 {
        // Small epsilon so that exact multiples do not round up.
        (ns / self.clock_period - 1e-9).ceil().max(0.0) as u64
    }

    pub fn cl_cycles(&self) -> u64 {
        self.ns_to_cycles(self.t_cl)
    }

    pub fn rcd_cycles(&self) -> u64 {
        self.ns_to_cycles(self.t_rcd)
    }

    pub fn rp_cycles(&self) -> u64 {
        self.ns_to_cycles(self.t_rp)
    }

    pub fn wr_cycles(&self) -> u64 {
        self.ns_to_cycles(self.t_wr)
    }
}

impl FromStr for DevTiming {
    type Err = DeviceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::preset(s)
    }
}

/// Latency in device clock cycles of one access.
///
/// Reads: a hit costs `t_CL`, a miss precharges and activates first. Writes
/// additionally hold the bank for `t_WR` of array restore before they are
/// considered complete.
pub fn service_latency(timing: &DevTiming, kind: AccessKind, outcome: RowOutcome) -> u64 {
    let access = match outcome {
        RowOutcome::RowHit => timing.cl_cycles(),
        RowOutcome::RowMiss => timing.rp_cycles() + timing.rcd_cycles() + timing.cl_cycles(),
    };
    match kind {
        AccessKind::Read => access,
        AccessKind::Write => access + timing.wr_cycles(),
    }
}

/// One bank and its row buffer.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Bank {
    pub open_row: Option<u64>,
    /// Earliest cycle at which the next column command may issue.
    pub busy_until: u64,
    /// Earliest cycle at which the open row may be precharged (write recovery).
    pub precharge_ready: u64,
    /// App that last opened or wrote the row; used for interference attribution.
    pub owner: Option<u32>,
}

impl Bank {
    pub fn classify(&self, row: u64) -> RowOutcome {
        classify_access(self, row)
    }

    pub fn occupy(&mut self, until: u64) {
        debug_assert!(until >= self.busy_until);
        self.busy_until = self.busy_until.max(until);
    }
}

pub fn classify_access(bank: &Bank, row: u64) -> RowOutcome {
    if bank.open_row == Some(row) {
        RowOutcome::RowHit
    } else {
        RowOutcome::RowMiss
    }
}

/// Device organisation. Pages are mapped to banks row-interleaved: consecutive
/// page frames land in consecutive banks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceGeometry {
    pub capacity: u64,
    pub channels: u32,
    pub ranks_per_channel: u32,
    pub banks_per_rank: u32,
    pub row_size: u64,
    pub page_size: u64,
}

/// Location of one page frame inside a device.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameLocation {
    pub channel: u32,
    pub bank: u32,
    pub row: u64,
}

impl DeviceGeometry {
    pub fn with_capacity(capacity: u64) -> Self {
        DeviceGeometry {
            capacity,
            channels: 1,
            ranks_per_channel: 1,
            banks_per_rank: 8,
            row_size: 8 * 1024,
            page_size: 8 * 1024,
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        if self.channels == 0 || self.ranks_per_channel == 0 || self.banks_per_rank == 0 {
            return Err(DeviceError::Geometry("channel/rank/bank counts must be > 0".into()));
        }
        if self.page_size == 0 || self.row_size == 0 || !self.row_size.is_multiple_of(self.page_size) {
            return Err(DeviceError::Geometry(format!(
                "page size {} must divide row size {}",
                self.page_size, self.row_size
            )));
        }
        let stripe = self.row_size * self.total_banks() as u64;
        if self.capacity == 0 || !self.capacity.is_multiple_of(stripe) {
            return Err(DeviceError::Geometry(format!(
                "capacity {} is not a multiple of one row across all banks ({stripe})",
                self.capacity
            )));
        }
        Ok(())
    }

    pub fn banks_per_channel(&self) -> u32 {
        self.ranks_per_channel * self.banks_per_rank
    }

    pub fn total_banks(&self) -> u32 {
        self.channels * self.banks_per_channel()
    }

    pub fn rows_per_bank(&self) -> u64 {
        self.capacity / self.row_size / self.total_banks() as u64
    }

    pub fn page_frames(&self) -> u64 {
        self.capacity / self.page_size
    }

    pub fn locate(&self, frame: u64) -> FrameLocation {
        let row_unit = frame / (self.row_size / self.page_size);
        let channel = (row_unit % self.channels as u64) as u32;
        let rest = row_unit / self.channels as u64;
        let banks = self.banks_per_channel() as u64;
        FrameLocation {
            channel,
            bank: (rest % banks) as u32,
            row: rest / banks,
        }
    }
}

/// Dynamic energy in pJ, accumulated per access.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyAccumulator {
    pub dynamic_pj: f64,
    pub reads: u64,
    pub writes: u64,
}

impl EnergyAccumulator {
    pub fn account(&mut self, timing: &DevTiming, bits: u64, kind: AccessKind, outcome: RowOutcome) {
        debug_assert!(bits > 0);
        let (array, buffer) = match kind {
            AccessKind::Read => (timing.array_read_energy, timing.rb_read_energy),
            AccessKind::Write => (timing.array_write_energy, timing.rb_write_energy),
        };
        let per_bit = match outcome {
            RowOutcome::RowMiss => array + buffer,
            RowOutcome::RowHit => buffer,
        };
        self.dynamic_pj += per_bit * bits as f64;
        match kind {
            AccessKind::Read => self.reads += 1,
            AccessKind::Write => self.writes += 1,
        }
    }
}

/// Standby energy in joules for `capacity_bytes` held over `seconds`.
pub fn standby_energy_j(timing: &DevTiming, capacity_bytes: u64, seconds: f64) -> f64 {
    timing.standby_power * 1e-6 * (capacity_bytes * 8) as f64 * seconds
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank(open: Option<u64>) -> Bank {
        Bank {
            open_row: open,
            ..Bank::default()
        }
    }

    #[test]
    fn classify_cases() {
        assert_eq!(classify_access(&bank(Some(7)), 7), RowOutcome::RowHit);
        assert_eq!(classify_access(&bank(Some(7)), 9), RowOutcome::RowMiss);
        assert_eq!(classify_access(&bank(None), 7), RowOutcome::RowMiss);
    }

    #[test]
    fn baseline_latencies() {
        let dram = DevTiming::dram_baseline();
        let nvm = DevTiming::nvm_baseline();
        // (15 + 15 + 15) ns / 1.875 ns
        assert_eq!(service_latency(&dram, AccessKind::Read, RowOutcome::RowMiss), 24);
        // (15 + 67.5 + 15) ns / 1.875 ns
        assert_eq!(service_latency(&nvm, AccessKind::Read, RowOutcome::RowMiss), 52);
        assert_eq!(
            service_latency(&dram, AccessKind::Read, RowOutcome::RowHit),
            service_latency(&nvm, AccessKind::Read, RowOutcome::RowHit)
        );
        // Write miss adds t_WR: 24 + 8 and 52 + 96.
        assert_eq!(service_latency(&dram, AccessKind::Write, RowOutcome::RowMiss), 32);
        assert_eq!(service_latency(&nvm, AccessKind::Write, RowOutcome::RowMiss), 148);
    }

    #[test]
    fn nvm_slower_on_miss() {
        let dram = DevTiming::dram_baseline();
        let nvm = DevTiming::nvm_baseline();
        assert!(nvm.t_rcd > dram.t_rcd && nvm.t_wr > dram.t_wr);
        for kind in [AccessKind::Read, AccessKind::Write] {
            assert!(
                service_latency(&nvm, kind, RowOutcome::RowMiss)
                    > service_latency(&dram, kind, RowOutcome::RowMiss)
            );
        }
    }

    #[test]
    fn energy_examples() {
        let mut acc = EnergyAccumulator::default();
        acc.account(&DevTiming::nvm_baseline(), 512, AccessKind::Write, RowOutcome::RowMiss);
        assert!((acc.dynamic_pj - 512.0 * (16.82 + 1.02)).abs() < 1e-9);

        let mut acc = EnergyAccumulator::default();
        acc.account(&DevTiming::dram_baseline(), 512, AccessKind::Read, RowOutcome::RowHit);
        assert!((acc.dynamic_pj - 512.0 * 0.93).abs() < 1e-9);

        assert_eq!(standby_energy_j(&DevTiming::dram_baseline(), 1 << 20, 0.0), 0.0);
    }

    #[test]
    fn config_overrides_preset() {
        let t = DevTiming::parse_config("preset = \"nvm-baseline\"\nt_rcd = 45.0 # ns\n").unwrap();
        assert_eq!(t.t_rcd, 45.0);
        assert_eq!(t.t_wr, 180.0);
        assert!(DevTiming::parse_config("t_cl = 0.0").is_err());
        assert!(DevTiming::parse_config("bogus = 1.0").is_err());
        assert!(matches!(
            DevTiming::preset("sram"),
            Err(DeviceError::UnknownPreset(_))
        ));
    }

    #[test]
    fn scaled_nvm_matches_preset() {
        let dram = DevTiming::dram_baseline();
        let nvm = DevTiming::nvm_scaled(&dram, 4.5, 12.0);
        assert_eq!(nvm, DevTiming::nvm_baseline());
    }

    #[test]
    fn geometry_mapping() {
        let g = DeviceGeometry::with_capacity(512 << 20);
        g.validate().unwrap();
        assert_eq!(g.page_frames(), 65536);
        assert_eq!(g.locate(0), FrameLocation { channel: 0, bank: 0, row: 0 });
        assert_eq!(g.locate(9), FrameLocation { channel: 0, bank: 1, row: 1 });
        assert_eq!(g.rows_per_bank() * g.total_banks() as u64 * g.row_size, g.capacity);
        assert!(DeviceGeometry { page_size: 3000, ..g.clone() }.validate().is_err());
    }
}
