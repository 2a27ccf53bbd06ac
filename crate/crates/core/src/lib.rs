//! Rotation estimation for omnidirectional cameras.
//!
//! Consecutive omni-images are unwrapped into panoramas, split into tiles,
//! and each tile pair is registered with a Fourier-Mellin similarity
//! estimator. Every accepted tile contributes one pixel correspondence,
//! which is lifted to a pair of camera rays; relative rotation then comes
//! from a robust essential-matrix (or rotation-only) fit.
//!
//! Module map:
//! - [`calib`]: polynomial omni-camera model and its file format.
//! - [`unwrap`]: omni-image to panorama resampling.
//! - [`specreg`]: Fourier-Mellin tile registration.
//! - [`flowfield`]: tiling and tile motion to pixel correspondences.
//! - [`pose`]: relative pose from ray correspondences.
//! - [`synthgen`]: synthetic omni sequences with exact ground truth.
//! - [`pipeline`]: pair/sequence orchestration, evaluation, CLI.

pub mod calib;
pub mod flowfield;
pub mod image;
pub mod pipeline;
pub mod pose;
pub mod specreg;
pub mod synthgen;
pub mod unwrap;

pub use calib::{Affine, CameraModel, Ray};
pub use image::Image;
pub use unwrap::{PanoramaMap, PanoramaSpec};
