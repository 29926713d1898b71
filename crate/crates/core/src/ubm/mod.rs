//! Utility-based page placement: per-page statistics, MLP sampling,
//! stall-time-reduction and sensitivity estimation, and the adaptive
//! migration threshold.

mod engine;
pub mod fixed;
pub mod formulas;
mod hot_pages;
mod stat_store;
mod threshold;

pub use engine::{UbmConfig, UbmEngine, UtilityRow};
pub use fixed::{MlpCounter, StoredSpeedup};
pub use formulas::{LatencyDelta, StallInputs};
pub use hot_pages::{HotEntry, HotPages};
pub use stat_store::{PageStats, StatStore};
pub use threshold::{Direction, ThresholdState};
