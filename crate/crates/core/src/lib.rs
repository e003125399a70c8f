//! Two-stage cascade object detection at desk scale.
//!
//! The crate trains and runs a pair of detection cascades on tiny synthetic
//! benchmarks, entirely in 64-bit floats on the CPU:
//!
//! * proposal cascade — a sliding-window region network whose output is
//!   re-classified and re-regressed by a binary region head
//!   ([`proposer`]);
//! * classification cascade — an (N+1)-way region classifier whose
//!   non-background detections are re-scored by N one-vs-rest binary heads,
//!   category by category ([`classifier`]).
//!
//! Supporting modules: exact box arithmetic ([`geometry`]), anchor grids
//! ([`anchors`]), IoU-threshold label assignment and minibatch sampling
//! ([`sampling`]), a minimal differentiable network stack ([`tinynet`]),
//! deterministic synthetic datasets ([`synthdata`]) and recall/AP/confusion
//! metrics ([`eval`]).
//!
//! The crate is `no_std` + `alloc`; every operation is deterministic given
//! its seeds. File formats, checkpoints and the experiment driver live in
//! the companion `cascadet-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod anchors;
pub mod classifier;

pub mod eval;
pub mod proposer;
mod fmath;
pub mod geometry;

pub mod rngutil;
pub mod sampling;
pub mod synthdata;
pub mod tinynet;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;
