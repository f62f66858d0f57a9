//! Indoor semantic region mapping: egocentric projection of depth scans,
//! fused categorical maps, contrastive region classifiers and frontier
//! exploration in simulated floorplans.

pub mod classifier;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod grid;
pub mod navigation;
pub mod projection;
pub mod simulator;

pub use error::{Error, Result};
pub use grid::{
    Action, CategoricalCell, CellGrid, CellIndex, EgocentricMap, GlobalMap, Pose, RegionLabelSet,
};
