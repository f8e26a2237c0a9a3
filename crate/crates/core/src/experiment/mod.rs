//! Config-driven experiment runner: grid planning, staged commands and named bundles.

pub mod artifacts;
pub mod bundles;
pub mod runner;
pub mod schedule;
pub mod spec;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub use bundles::{bundle_spec, BUNDLE_NAMES};
pub use runner::{
    cmd_assess, cmd_combine, cmd_fit, cmd_predict, cmd_reproduce, plan_cells, Cell, CellStatus, Plan, RunOptions,
    StageReport,
};
pub use spec::{CombineSpec, DatasetKind, DatasetSpec, ExperimentSpec, InferenceSpec, ModelGrid, SplitChoice};

/// SplitMix64 finaliser applied to `master` advanced by `index` steps.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// First 16 hex digits of the SHA-256 of the value's JSON encoding.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    let digest = Sha256::digest(&bytes);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
