//! Dataset ingestion, batch execution, reports and configuration.

pub mod batch;
pub mod config;
pub mod manifest;
pub mod report;
pub mod synthetic;

pub use batch::{run_batch, Backends, Captioner, RetrievalCaptioner};
pub use config::{BackendConfig, BackendKind, HarnessConfig, RunConfig, SurrogateConfig};
pub use manifest::{load_manifest, DatasetRecord, Manifest};
pub use report::{write_report, RecordMetrics, RecordResult, RecordStatus, RunReport};

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for record `index` under `master`; depends on nothing else.
pub fn derive_seed(master: u64, index: usize) -> u64 {
    splitmix64(master.wrapping_add((index as u64).wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}
