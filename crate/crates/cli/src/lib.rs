//! File formats, experiment configuration and the stagewise pipeline behind
//! the `cascadet` binary.

pub mod assertion;
pub mod checkpoint;
pub mod config;
pub mod dataset_io;
pub mod pipeline;
pub mod proposals_io;
pub mod reports;
