//! Hard-disk collision simulator and birth–death Markov chain surrogate for
//! the number of disks per subdomain of a 3×3-partitioned square.
//!
//! Pipeline: [`dynamics`] produces occupancy series, [`occupancy`] tallies
//! them into counters and pooled probabilities, [`chain`] assembles and
//! solves the per-kind transition matrices, [`fitstats`] fits truncated
//! normals and regressions, and [`harness`] runs whole experiments.

pub mod chain;
pub mod domain;
pub mod dynamics;
pub mod fitstats;
pub mod harness;
pub mod occupancy;

pub use domain::{SimConfig, SubdomainKind};
