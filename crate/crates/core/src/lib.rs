//! Map-anchored driving-scenario staging.

pub mod bridge;
pub mod cli;
pub mod frames;
pub mod harness;
pub mod localization;
pub mod pointcloud;
pub mod scenario;
