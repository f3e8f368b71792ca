//! Deterministic simulator and library for differentially private online
//! federated learning with temporally correlated noise.
//!
//! The library is organized around five subsystems:
//!
//! - [`factorization`]: the prefix-sum workload matrix and its factorizations
//!   `A = BC` with normalized sensitivity, including the closed-form
//!   lower-triangular square root and a projected-gradient refinement.
//! - [`privacy`]: exact Gaussian noise calibration for the correlated
//!   mechanism and the independent zCDP baseline, the deterministic noise
//!   sampler, and the brute-force sensitivity checker.
//! - [`data`]: synthetic heterogeneous logistic-regression streams, the
//!   clipped logistic loss/gradient, and CSV caching.
//! - [`sim`]: the online federated learning loop with local updates,
//!   correlated or independent server noise, and online verification of the
//!   virtual-iterate, stacked-form, and drift identities.
//! - [`metrics`]: offline optimization oracles, dynamic/static regret, and
//!   the loss-error series used by the experiment harness.
//!
//! The experiment harness ([`experiments`], [`config`], [`properties`]) runs
//! repeated seeded trials, aggregates mean/std curves, and emits plot-ready
//! CSV files. Everything is a pure function of `(config, master seed)`:
//! reruns produce byte-identical output.

pub mod config;
pub mod csvio;
pub mod data;
pub mod error;
pub mod experiments;
pub mod factorization;
pub mod mathx;
pub mod metrics;
pub mod privacy;
pub mod properties;
pub mod seed;
pub mod sim;

pub use error::{Error, Result};
