//! Building blocks for estimating the limb pose of infants from depth video.
//!
//! The pipeline runs a detection network that produces binary affinity maps,
//! a regression network that refines them into confidence maps, and a
//! geometric linker that turns confidence maps into per-limb joint chains.
//! This crate holds everything except the networks themselves:
//!
//! - [`skeleton`]: the fixed 12-joint / 8-connection limb model and the
//!   channel convention of the 20-map stacks.
//! - [`dataset`]: depth-frame loading, annotation CSV I/O and data splits.
//! - [`clips`]: sliding-window assembly of temporal clips.
//! - [`targets`]: ground-truth affinity and confidence map generation.
//! - [`linker`]: non-maximum suppression and line-integral joint matching.
//! - [`metrics`]: DSC, recall, RMSD, paired t-test and report aggregation.
//! - [`synth`]: synthetic "puppet" sequences with exact ground truth.

pub mod clips;
pub mod dataset;
mod error;
pub mod geometry;
pub mod linker;
pub mod metrics;
pub mod skeleton;
pub mod synth;
pub mod targets;

pub use error::{Error, Result};
pub use geometry::Point;
pub use skeleton::{Limb, SkeletonModel, NUM_CONNECTIONS, NUM_JOINTS, NUM_MAPS};
