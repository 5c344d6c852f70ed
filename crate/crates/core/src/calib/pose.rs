//! Target pose from a plane homography and known intrinsics.

use nalgebra::{Matrix3, Vector3};

use super::CalibError;
use crate::camera::{CameraIntrinsics, RigidPose};

/// Decomposes `H ~ K·[r1 r2 t]` into a target→camera pose.
///
/// The rotation is projected onto SO(3) and the sign is chosen so that the
/// target lies in front of the camera.
pub fn estimate_pose(intr: &CameraIntrinsics, h: &Matrix3<f64>) -> Result<RigidPose, CalibError> {
    let k_inv = intr
        .matrix()
        .try_inverse()
        .ok_or_else(|| CalibError::IllConditioned("camera matrix is singular".into()))?;
    let m = k_inv * h;
    let (h1, h2, h3) = (m.column(0), m.column(1), m.column(2));
    let norm = h1.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(CalibError::DegenerateConfiguration("homography has a null first column".into()));
    }
    let mut lambda = 1.0 / norm;
    if h3.z * lambda < 0.0 {
        lambda = -lambda;
    }
    let r1: Vector3<f64> = h1 * lambda;
    let r2: Vector3<f64> = h2 * lambda;
    let r3 = r1.cross(&r2);
    let t: Vector3<f64> = h3 * lambda;
    Ok(RigidPose::from_approximate_rotation(
        &Matrix3::from_columns(&[r1, r2, r3]),
        t,
    ))
}
