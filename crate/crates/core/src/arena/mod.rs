//! The experiment harness: configuration, seeded worlds, the per-seed
//! pipeline, result records and report tables.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod world;

pub use config::ArenaConfig;
pub use pipeline::{
    accuser_claim, adi_forgery, calibrate, forged_claim, hardened_suspect, run, run_seed, run_world, screening_policy, Calibration,
    Case, ForgeStats, HonestClaim, RunRecord,
};
pub use report::{load_records, save_records, Report};
pub use world::{World, WorldData};
