//! Stable throughput region of a cognitive radio link in which the secondary
//! user relays primary packets through a finite buffer.
//!
//! * [`dtmc`] evaluates a cooperation policy analytically.
//! * [`lp`] and [`optimize`] search the policy space through the occupancy
//!   LP and assemble region curves.
//! * [`sim`] runs the slotted protocol to check the analysis empirically.
//! * [`cli`] holds the manifest format and the artifact writers behind the
//!   `cogrelay` binary.

// Comparisons are negated on purpose so that NaN inputs fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dtmc;
pub mod error;
pub mod lp;
pub mod model;
pub mod optimize;
pub mod sim;

pub use error::{Error, Result};
pub use model::{ChannelModel, OperatingPoint, PolicyProfile, RegionCurve, RegionPoint, StationaryDistribution};
