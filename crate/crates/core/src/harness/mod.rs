//! Case handling, initialization, experiments.

pub mod case;
pub mod init;
pub mod powerflow;
pub mod experiments;
pub mod scenario;

pub use case::{load_case, parse_case, BusKind, CaseFile};
pub use init::{apply_disturbance, init_equilibrium, machine_equilibrium, Equilibrium};
pub use powerflow::{power_flow, power_mismatch, PowerFlowSolution};
pub use scenario::{machine_index, Disturbance, Scenario};

use std::path::PathBuf;

/// Location of the shipped data directory.
pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

/// Path of the shipped 9-bus case.
pub fn ieee9_case_path() -> PathBuf {
    data_dir().join("ieee9.json")
}

/// Directory of the shipped trained networks.
pub fn weights_dir() -> PathBuf {
    data_dir().join("weights")
}
