//! Simulator for quantum error correction and sensing on unresolvable spin
//! ensembles.
//!
//! An ensemble that can only be controlled and measured collectively admits a
//! compact description over total-angular-momentum blocks with all degeneracy
//! averaged out. This crate provides:
//!
//! * exact multiplicity bookkeeping and the logical qudit mapping ([`state`]);
//! * precomputed jump amplitudes for collective, single-spin, and spin-loss
//!   channels, verified against an exact small-ensemble model ([`coeff`],
//!   [`oracle`]);
//! * quantum-trajectory and master-equation evolution ([`dynamics`]);
//! * code construction, Knill-Laflamme checking, and code search ([`codes`]);
//! * syndrome measurement, collective-unitary recovery, and teleport
//!   hand-off, with a full memory experiment ([`recovery`]);
//! * Ramsey-style sensing with decay-tolerant probes ([`sensing`]).
//!
//! The `piqec` binary exposes the experiments; the `examples/` directory
//! shows each capability through the library API.

pub mod codes;
pub mod coeff;
pub mod config;
pub mod degeneracy;
pub mod dynamics;
pub mod error;
pub mod half;
pub mod linalg;
pub mod oracle;
pub mod output;
pub mod recovery;
pub mod sensing;
pub mod state;

pub use codes::{build_two_level_code, code_search, kl_check, QecCode};
pub use coeff::CoefficientTable;
pub use dynamics::{evolve_master, evolve_trajectory, NoiseModel};
pub use error::{Error, Result};
pub use half::Half;
pub use state::{PiDensityState, TrajectoryState};
