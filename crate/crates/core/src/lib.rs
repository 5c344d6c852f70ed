//! Multispectral RGB / thermal / UV / depth camera toolkit.
//!
//! The crate covers the whole path from calibration images to a fused point
//! cloud:
//!
//! * [`camera`]: pinhole + Brown–Conrady camera model and rigid poses.
//! * [`rig`]: a synthetic multi-camera rig that renders the circle-grid
//!   calibration target and test scenes with exact ground truth.
//! * [`detect`]: circle-center detection and grid ordering.
//! * [`calib`]: homographies, closed-form intrinsics, planar pose,
//!   Levenberg–Marquardt refinement and relative extrinsics.
//! * [`registration`]: depth-driven alignment of thermal and UV images onto
//!   the RGB frame.
//! * [`fusion`]: threshold highlighting and multispectral point clouds.
//! * [`io`] and [`ply`]: raster and point-cloud file formats.

// `!(x > 0.0)` deliberately treats NaN as a failed check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calib;
pub mod camera;
pub mod detect;
pub mod fusion;
pub mod io;
pub mod ply;
pub mod raster;
pub mod registration;
pub mod rig;

pub use calib::{CalibrationResult, CameraCalibration, RelativeExtrinsics};
pub use camera::{CameraError, CameraIntrinsics, DistortionCoefficients, PixelCoord, RigidPose, WorldPoint};
pub use detect::GridObservation;
pub use fusion::{FusionConfig, MultispectralPointCloud};
pub use raster::{Raster, Rgb8};
pub use registration::{AlignedFrame, PixelMapping};
pub use rig::{CameraId, MultispectralFrame, RigConfig, SceneSpec, TargetSpec};
