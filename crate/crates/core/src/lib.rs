//! Instruction-driven volumetric analysis with a language agent.

pub mod voxelcore;
pub mod tensor;
pub mod visionnet;
pub mod agent;
pub mod runtime;
pub mod taskgen;
pub mod training;
pub mod cli;
