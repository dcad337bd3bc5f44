//! Sparse EEG source localization on volumetric source grids.
//!
//! The crate covers the full loop of a distributed-dipole localization study:
//!
//! * [`headmodel`] builds spherical lead fields (electrode cap, source grid,
//!   forward gain matrix) and reads/writes them on disk,
//! * [`simulate`] synthesizes ERP-driven measurements with colored noise,
//! * [`solvers`] hosts the inverse solvers (minimum-norm family, FOCUSS,
//!   mixed-norm estimates, sparse Bayesian learning),
//! * [`scanners`] hosts subspace scanning (TRAP-MUSIC) and total-variation
//!   regularized solvers (VB-SCCD / SISSY),
//! * [`carss`] reduces the solution space from scalp-map signatures before
//!   any solver runs,
//! * [`metrics`] scores estimates against ground truth,
//! * [`bench`] runs seeded Monte-Carlo campaigns and writes reports.
//!
//! All randomness flows through [`rng`]: a campaign seed plus an index path
//! derive independent substreams, so results are reproducible regardless of
//! worker count. The `parallel` feature (on by default) enables a rayon
//! thread pool; without it every loop runs sequentially with identical
//! output.

pub mod bench;
pub mod carss;
pub mod error;
pub mod headmodel;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod rng;
pub mod scanners;
pub mod simulate;
pub mod solvers;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use model::{
    ElectrodeArray, LeadField, Measurements, OrientationModel, Scenario, SourceEstimate,
    SourceSpace, Validate,
};
