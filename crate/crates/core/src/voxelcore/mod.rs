//! Volumetric geometry, intensity, I/O and ROI-metric primitives.
//!
//! Every image carried through the framework is a [`VoxelGrid`]: a dense
//! 3D array of `f32` values plus a 4×4 voxel-to-world affine in mm. After
//! [`conform_ras`] the voxel axes point toward +R, +A, +S and axis 2 is
//! treated as the slice axis.

mod affine;
mod grid;
pub mod io;
mod metrics;
mod ops;

pub use affine::Affine;
pub use grid::{flat_index, BinaryMask, Spacing, VoxelGrid};
pub use io::{load_volume, save_volume, ParseError, VolumeFormat};
pub use metrics::{dice, roi_report, RoiReport};
pub use ops::{
    conform_for_network, conform_mask_ras, conform_ras, crop_margin, extract_box, mask_bbox, normalize01, resample,
    resample_spacing, resample_to_geometry, sample_point, Interp,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VoxelError {
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("domain error: {0}")]
    Domain(String),
}
