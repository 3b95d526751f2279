//! Analytical performance models for Transformer and CNN inference on a
//! parameterized spatial accelerator.
//!
//! The crate is organized bottom-up:
//!
//! * [`workload`] builds operator lists and ideal FLOPs / MOPs / arithmetic
//!   intensity profiles.
//! * [`hwmodel`] estimates latency, energy and DRAM traffic of tiled execution
//!   on a `W x W` PE array with a scratchpad, accumulator and SFU.
//! * [`mapspace`] represents, samples, enumerates and costs loop-nest mappings.
//! * [`fusion`] compares fused and non-fused matmul + normalization schedules.
//! * [`archsearch`] runs the evolutionary hardware-aware architecture search.
//! * [`report`] is the tabular report format shared by the CLI and bindings.

pub mod archsearch;
pub mod error;
pub mod fusion;
pub mod hwmodel;
pub mod mapspace;
pub mod report;
pub mod rng;
pub mod workload;

pub use error::{Error, Result};
