//! Space-domain eco-driving planner for vehicle platoons on rolling terrain.
//!
//! The platoon is described in the space domain: every vehicle carries its
//! arrival time and slowness (inverse speed) at each spatial step, and the
//! planner picks per-vehicle accelerations that trade gap keeping, a
//! power-based fuel proxy and control effort against on-time arrival. The
//! resulting constrained optimal-control problem is solved with differential
//! dynamic programming wrapped in an augmented Lagrangian loop.
//!
//! Supporting modules provide a constant-time-gap CACC baseline, a VT-micro
//! fuel meter, a string-stability harness and the scenario plumbing used by
//! the `ecoplatoon` binary.

// Range checks are written `!(x > 0.0)` on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod constraints;
pub mod cost;
pub mod error;
pub mod experiment;
pub mod fuel;
pub mod output;
pub mod platoon;
pub mod receding;
pub mod scenario;
pub mod solver;
pub mod stability;
pub mod terrain;

pub use error::{Error, Result};
