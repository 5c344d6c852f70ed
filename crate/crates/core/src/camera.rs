//! Pinhole camera with Brown–Conrady lens distortion, and rigid transforms.
//!
//! Conventions used throughout the crate:
//!
//! * Camera frame: `x` right, `y` down, `z` forward along the optical axis.
//! * Pixel centers sit on integer coordinates; `(0, 0)` is the center of the
//!   top-left pixel.
//! * Distortion acts on normalized coordinates `(x/z, y/z)`:
//!
//! ```text
//! r² = x² + y²
//! L  = 1 + k1·r² + k2·r⁴ + k3·r⁶
//! xd = L·x + 2·p1·x·y + p2·(r² + 2x²)
//! yd = L·y + p1·(r² + 2y²) + 2·p2·x·y
//! u  = fx·xd + skew·yd + cx
//! v  = fy·yd + cy
//! ```

use nalgebra::{Matrix2, Matrix3, Matrix4, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum iterations of the undistortion solver.
pub const UNDISTORT_MAX_ITERATIONS: usize = 20;
/// Step tolerance of the undistortion solver, in normalized coordinates.
pub const UNDISTORT_TOLERANCE: f64 = 1e-10;
/// Tolerance on `RᵀR = I` and `det R = 1` accepted by [`RigidPose::new`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CameraError {
    #[error("point has non-positive depth z = {z}")]
    NonPositiveDepth { z: f64 },
    #[error("undistortion did not converge for pixel ({u}, {v})")]
    NoConvergence { u: f64, v: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid rigid pose: {0}")]
    InvalidPose(String),
}

/// Sub-pixel image coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

impl PixelCoord {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &PixelCoord) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }
}

/// 3D point in meters, expressed in whatever frame the caller states.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl WorldPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn scaled(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl From<Vector3<f64>> for WorldPoint {
    fn from(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

/// Brown–Conrady coefficients (OpenCV ordering `k1, k2, p1, p2, k3`).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DistortionCoefficients {
    pub k1: f64,
    pub k2: f64,
    pub p1: f64,
    pub p2: f64,
    pub k3: f64,
}

impl DistortionCoefficients {
    pub const ZERO: Self = Self {
        k1: 0.0,
        k2: 0.0,
        p1: 0.0,
        p2: 0.0,
        k3: 0.0,
    };

    pub fn radial(k1: f64, k2: f64, k3: f64) -> Self {
        Self {
            k1,
            k2,
            k3,
            ..Self::ZERO
        }
    }

    /// Coefficients in `[k1, k2, p1, p2, k3]` order.
    pub fn to_array(&self) -> [f64; 5] {
        [self.k1, self.k2, self.p1, self.p2, self.k3]
    }

    pub fn from_array(c: [f64; 5]) -> Self {
        Self {
            k1: c[0],
            k2: c[1],
            p1: c[2],
            p2: c[3],
            k3: c[4],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.to_array().iter().all(|c| *c == 0.0)
    }

    fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }

    /// Maps undistorted normalized coordinates to distorted ones.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        let xd = radial * x + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
        let yd = radial * y + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
        (xd, yd)
    }

    /// Jacobian of [`apply`](Self::apply) with respect to `(x, y)`.
    pub fn jacobian(&self, x: f64, y: f64) -> Matrix2<f64> {
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        // dL/d(r²)
        let dradial = self.k1 + r2 * (2.0 * self.k2 + 3.0 * self.k3 * r2);
        let dxdx = radial + 2.0 * x * x * dradial + 2.0 * self.p1 * y + 6.0 * self.p2 * x;
        let cross = 2.0 * x * y * dradial + 2.0 * self.p1 * x + 2.0 * self.p2 * y;
        let dydy = radial + 2.0 * y * y * dradial + 6.0 * self.p1 * y + 2.0 * self.p2 * x;
        Matrix2::new(dxdx, cross, cross, dydy)
    }

    /// Jacobian of [`apply`](Self::apply) with respect to the coefficients,
    /// columns in `[k1, k2, p1, p2, k3]` order.
    pub fn coefficient_jacobian(&self, x: f64, y: f64) -> SMatrix<f64, 2, 5> {
        let r2 = x * x + y * y;
        let r4 = r2 * r2;
        let r6 = r4 * r2;
        SMatrix::<f64, 2, 5>::from_row_slice(&[
            x * r2,
            x * r4,
            2.0 * x * y,
            r2 + 2.0 * x * x,
            x * r6,
            y * r2,
            y * r4,
            r2 + 2.0 * y * y,
            2.0 * x * y,
            y * r6,
        ])
    }

    /// Inverts [`apply`](Self::apply) with Newton iterations.
    ///
    /// Returns `None` when the iteration does not settle within
    /// [`UNDISTORT_MAX_ITERATIONS`] steps or hits a singular Jacobian.
    pub fn remove(&self, xd: f64, yd: f64) -> Option<(f64, f64)> {
        if self.is_zero() {
            return Some((xd, yd));
        }
        let (mut x, mut y) = (xd, yd);
        for _ in 0..UNDISTORT_MAX_ITERATIONS {
            let (fx, fy) = self.apply(x, y);
            let residual = Vector2::new(fx - xd, fy - yd);
            let step = self.jacobian(x, y).try_inverse()? * residual;
            x -= step.x;
            y -= step.y;
            if !(x.is_finite() && y.is_finite()) {
                return None;
            }
            if step.amax() < UNDISTORT_TOLERANCE {
                // A root past the fold of the lens model is not a valid inverse.
                return (self.jacobian(x, y).determinant() > 0.0).then_some((x, y));
            }
        }
        None
    }
}

#[derive(Deserialize)]
struct RawIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    #[serde(default)]
    skew: f64,
    width: u32,
    height: u32,
    #[serde(default)]
    distortion: DistortionCoefficients,
}

impl TryFrom<RawIntrinsics> for CameraIntrinsics {
    type Error = CameraError;

    fn try_from(r: RawIntrinsics) -> Result<Self, Self::Error> {
        CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy, r.skew, r.width, r.height, r.distortion)
    }
}

/// Pinhole matrix, sensor size and lens distortion of one camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawIntrinsics")]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub skew: f64,
    pub width: u32,
    pub height: u32,
    pub distortion: DistortionCoefficients,
}

impl CameraIntrinsics {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        skew: f64,
        width: u32,
        height: u32,
        distortion: DistortionCoefficients,
    ) -> Result<Self, CameraError> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            skew,
            width,
            height,
            distortion,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Ideal pinhole camera without skew or distortion.
    pub fn pinhole(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, CameraError> {
        Self::new(fx, fy, cx, cy, 0.0, width, height, DistortionCoefficients::ZERO)
    }

    /// Square-pixel camera with the principal point at the image center,
    /// sized from its horizontal field of view.
    pub fn from_horizontal_fov(
        hfov_deg: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, CameraError> {
        if !(hfov_deg > 0.0 && hfov_deg < 180.0) {
            return Err(CameraError::InvalidIntrinsics(format!(
                "horizontal field of view {hfov_deg} outside (0, 180)"
            )));
        }
        let f = 0.5 * f64::from(width) / (0.5 * hfov_deg.to_radians()).tan();
        Self::pinhole(
            f,
            f,
            0.5 * f64::from(width) - 0.5,
            0.5 * f64::from(height) - 0.5,
            width,
            height,
        )
    }

    pub fn with_distortion(mut self, distortion: DistortionCoefficients) -> Self {
        self.distortion = distortion;
        self
    }

    /// Same camera with distortion removed.
    pub fn undistorted(&self) -> Self {
        self.with_distortion(DistortionCoefficients::ZERO)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let bad = |msg: String| Err(CameraError::InvalidIntrinsics(msg));
        if !(self.fx > 0.0 && self.fx.is_finite() && self.fy > 0.0 && self.fy.is_finite()) {
            return bad(format!("focal lengths must be positive, got ({}, {})", self.fx, self.fy));
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be non-zero".into());
        }
        if !(self.cx >= 0.0 && self.cx < f64::from(self.width)) {
            return bad(format!("cx = {} outside [0, {})", self.cx, self.width));
        }
        if !(self.cy >= 0.0 && self.cy < f64::from(self.height)) {
            return bad(format!("cy = {} outside [0, {})", self.cy, self.height));
        }
        if !self.skew.is_finite() || !self.distortion.is_finite() {
            return bad("skew and distortion coefficients must be finite".into());
        }
        Ok(())
    }

    /// The 3×3 pinhole matrix `K`.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, self.skew, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Builds intrinsics from a pinhole matrix, keeping size and distortion
    /// of `self`.
    pub fn with_matrix(&self, k: &Matrix3<f64>) -> Result<Self, CameraError> {
        let (k00, k01, k02, k11, k12) = (k[(0, 0)], k[(0, 1)], k[(0, 2)], k[(1, 1)], k[(1, 2)]);
        Self::new(k00, k11, k02, k12, k01, self.width, self.height, self.distortion)
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width as usize, self.height as usize)
    }

    /// Whether `pixel` lies inside the region where bilinear sampling has
    /// all four neighbours, i.e. `[0, w-1] × [0, h-1]`.
    pub fn contains(&self, pixel: PixelCoord) -> bool {
        pixel.u >= 0.0
            && pixel.v >= 0.0
            && pixel.u <= f64::from(self.width) - 1.0
            && pixel.v <= f64::from(self.height) - 1.0
    }

    /// Normalized (already distorted) coordinates to pixels.
    #[inline]
    pub fn normalized_to_pixel(&self, xd: f64, yd: f64) -> PixelCoord {
        PixelCoord::new(self.fx * xd + self.skew * yd + self.cx, self.fy * yd + self.cy)
    }

    /// Pixels to normalized coordinates (no distortion handling).
    #[inline]
    pub fn pixel_to_normalized(&self, pixel: PixelCoord) -> (f64, f64) {
        let y = (pixel.v - self.cy) / self.fy;
        let x = (pixel.u - self.cx - self.skew * y) / self.fx;
        (x, y)
    }

    /// Projects a camera-frame point to a (distorted) pixel.
    pub fn project(&self, point: WorldPoint) -> Result<PixelCoord, CameraError> {
        if !(point.z > 0.0) {
            return Err(CameraError::NonPositiveDepth { z: point.z });
        }
        let (xd, yd) = self.distortion.apply(point.x / point.z, point.y / point.z);
        Ok(self.normalized_to_pixel(xd, yd))
    }

    /// Back-projects an undistorted pixel at metric z-depth `depth`.
    ///
    /// This is `K⁻¹·[u v 1]ᵀ` scaled by the depth; distortion is ignored, so
    /// callers holding raw pixels must run [`undistort_pixel`](Self::undistort_pixel) first.
    pub fn unproject(&self, pixel: PixelCoord, depth: f64) -> Result<WorldPoint, CameraError> {
        if !(depth > 0.0) {
            return Err(CameraError::NonPositiveDepth { z: depth });
        }
        let (x, y) = self.pixel_to_normalized(pixel);
        Ok(WorldPoint::new(x * depth, y * depth, depth))
    }

    /// Applies lens distortion to an ideal (undistorted) pixel.
    pub fn distort_pixel(&self, pixel: PixelCoord) -> PixelCoord {
        let (x, y) = self.pixel_to_normalized(pixel);
        let (xd, yd) = self.distortion.apply(x, y);
        self.normalized_to_pixel(xd, yd)
    }

    /// Undistorted normalized coordinates of a raw pixel.
    pub fn undistort_normalized(&self, pixel: PixelCoord) -> Result<(f64, f64), CameraError> {
        let (xd, yd) = self.pixel_to_normalized(pixel);
        self.distortion.remove(xd, yd).ok_or(CameraError::NoConvergence {
            u: pixel.u,
            v: pixel.v,
        })
    }

    /// Removes lens distortion from a raw pixel; inverse of [`distort_pixel`](Self::distort_pixel).
    pub fn undistort_pixel(&self, pixel: PixelCoord) -> Result<PixelCoord, CameraError> {
        if self.distortion.is_zero() {
            return Ok(pixel);
        }
        let (x, y) = self.undistort_normalized(pixel)?;
        Ok(self.normalized_to_pixel(x, y))
    }
}

/// Rotation followed by translation: `x ↦ R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, CameraError> {
        if !translation.iter().all(|t| t.is_finite()) {
            return Err(CameraError::InvalidPose("translation is not finite".into()));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if !(ortho <= ROTATION_TOLERANCE) {
            return Err(CameraError::InvalidPose(format!(
                "rotation is not orthonormal (max |RᵀR - I| = {ortho:e})"
            )));
        }
        let det = rotation.determinant();
        if !((det - 1.0).abs() <= ROTATION_TOLERANCE) {
            return Err(CameraError::InvalidPose(format!("det(R) = {det}, expected +1")));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation given as an axis scaled by its angle in radians.
    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: nalgebra::Rotation3::new(axis_angle).into_inner(),
            translation,
        }
    }

    /// Projects an arbitrary 3×3 matrix onto the nearest rotation before
    /// building the pose.
    pub fn from_approximate_rotation(m: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: nearest_rotation(m),
            translation,
        }
    }

    /// From a 4×4 homogeneous matrix `[R t; 0 1]`.
    pub fn from_homogeneous(m: &Matrix4<f64>) -> Result<Self, CameraError> {
        let bottom = m.fixed_view::<1, 4>(3, 0);
        if (bottom - nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0)).amax() > ROTATION_TOLERANCE {
            return Err(CameraError::InvalidPose("bottom row must be [0 0 0 1]".into()));
        }
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn axis_angle(&self) -> Vector3<f64> {
        nalgebra::Rotation3::from_matrix_unchecked(self.rotation).scaled_axis()
    }

    pub fn transform(&self, point: WorldPoint) -> WorldPoint {
        WorldPoint::from(self.transform_vector(&point.to_vector()))
    }

    #[inline]
    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidPose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Angle in radians of the rotation taking `self` to `other`.
    pub fn rotation_angle_to(&self, other: &RigidPose) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Center of the frame that `self` maps into, expressed in the source frame.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

/// Closest rotation matrix in the Frobenius sense (`U·Vᵀ` of the SVD, with
/// the sign of the last singular direction fixed so that `det = +1`).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -1.0;
        r = u * d * v_t;
    }
    r
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PoseRepr {
    Matrix {
        rotation: [[f64; 3]; 3],
        translation: [f64; 3],
    },
    AxisAngleDeg {
        axis_angle_deg: [f64; 3],
        translation: [f64; 3],
    },
}

impl Serialize for RigidPose {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let r = &self.rotation;
        let rotation = [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]);
        PoseRepr::Matrix {
            rotation,
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RigidPose {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match PoseRepr::deserialize(deserializer)? {
            PoseRepr::Matrix {
                rotation,
                translation,
            } => {
                let r = Matrix3::from_fn(|i, j| rotation[i][j]);
                RigidPose::new(r, Vector3::from(translation)).map_err(serde::de::Error::custom)
            }
            PoseRepr::AxisAngleDeg {
                axis_angle_deg,
                translation,
            } => Ok(RigidPose::from_axis_angle(
                Vector3::from(axis_angle_deg).map(f64::to_radians),
                Vector3::from(translation),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::pinhole(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn close(a: PixelCoord, b: PixelCoord, tol: f64) -> bool {
        (a.u - b.u).abs() <= tol && (a.v - b.v).abs() <= tol
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let p = cam().project(WorldPoint::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(p, PixelCoord::new(320.0, 240.0));
    }

    #[test]
    fn lateral_point_projects_linearly() {
        let p = cam().project(WorldPoint::new(0.1, 0.0, 1.0)).unwrap();
        assert!(close(p, PixelCoord::new(370.0, 240.0), 1e-12));
    }

    #[test]
    fn radial_distortion_matches_hand_evaluation() {
        let c = cam().with_distortion(DistortionCoefficients::radial(0.1, 0.0, 0.0));
        let p = c.project(WorldPoint::new(0.2, 0.0, 1.0)).unwrap();
        // 500·0.2·(1 + 0.1·0.04) + 320
        let expected_u: f64 = 500.0 * 0.2 * (1.0 + 0.1 * 0.2 * 0.2) + 320.0;
        assert!((expected_u - 420.4).abs() < 1e-12);
        assert!(close(p, PixelCoord::new(420.4, 240.0), 1e-9));
    }

    #[test]
    fn project_rejects_points_behind_camera() {
        assert!(matches!(
            cam().project(WorldPoint::new(0.0, 0.0, 0.0)),
            Err(CameraError::NonPositiveDepth { .. })
        ));
        assert!(cam().project(WorldPoint::new(0.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn unproject_examples() {
        let c = cam();
        let w = c.unproject(PixelCoord::new(320.0, 240.0), 2.0).unwrap();
        assert_eq!(w, WorldPoint::new(0.0, 0.0, 2.0));
        let w = c.unproject(PixelCoord::new(420.0, 240.0), 1.0).unwrap();
        assert!((w.x - 0.2).abs() < 1e-15 && w.y == 0.0 && w.z == 1.0);
        assert!(matches!(
            c.unproject(PixelCoord::new(1.0, 1.0), 0.0),
            Err(CameraError::NonPositiveDepth { .. })
        ));
    }

    #[test]
    fn undistort_identity_without_coefficients() {
        let p = PixelCoord::new(123.4, 56.7);
        assert_eq!(cam().undistort_pixel(p).unwrap(), p);
    }

    #[test]
    fn undistort_inverts_the_projection_example() {
        let c = cam().with_distortion(DistortionCoefficients::radial(0.1, 0.0, 0.0));
        let p = c.undistort_pixel(PixelCoord::new(420.4, 240.0)).unwrap();
        assert!(close(p, PixelCoord::new(420.0, 240.0), 1e-9), "{p:?}");
    }

    #[test]
    fn undistort_round_trips_on_grid() {
        let c = cam().with_distortion(DistortionCoefficients::radial(0.1, 0.0, 0.0));
        for i in 0..10 {
            for j in 0..10 {
                let p = PixelCoord::new(10.0 + 62.0 * i as f64, 10.0 + 46.0 * j as f64);
                let back = c.undistort_pixel(c.distort_pixel(p)).unwrap();
                assert!(close(back, p, 1e-6), "{p:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn undistort_reports_failure_on_pathological_coefficients() {
        // Distortion folds over well inside this radius, there is no inverse.
        let c = cam().with_distortion(DistortionCoefficients::radial(-5.0, 0.0, 0.0));
        assert!(matches!(
            c.undistort_pixel(PixelCoord::new(639.0, 479.0)),
            Err(CameraError::NoConvergence { .. })
        ));
    }

    #[test]
    fn distortion_jacobians_match_finite_differences() {
        let d = DistortionCoefficients {
            k1: 0.12,
            k2: -0.05,
            p1: 0.002,
            p2: -0.003,
            k3: 0.01,
        };
        let (x, y) = (0.31, -0.27);
        let h = 1e-6;
        let j = d.jacobian(x, y);
        let (ax, ay) = d.apply(x + h, y);
        let (bx, by) = d.apply(x - h, y);
        assert!((j[(0, 0)] - (ax - bx) / (2.0 * h)).abs() < 1e-8);
        assert!((j[(1, 0)] - (ay - by) / (2.0 * h)).abs() < 1e-8);
        let (ax, ay) = d.apply(x, y + h);
        let (bx, by) = d.apply(x, y - h);
        assert!((j[(0, 1)] - (ax - bx) / (2.0 * h)).abs() < 1e-8);
        assert!((j[(1, 1)] - (ay - by) / (2.0 * h)).abs() < 1e-8);

        let jc = d.coefficient_jacobian(x, y);
        for k in 0..5 {
            let mut plus = d.to_array();
            let mut minus = d.to_array();
            plus[k] += h;
            minus[k] -= h;
            let (ax, ay) = DistortionCoefficients::from_array(plus).apply(x, y);
            let (bx, by) = DistortionCoefficients::from_array(minus).apply(x, y);
            assert!((jc[(0, k)] - (ax - bx) / (2.0 * h)).abs() < 1e-8);
            assert!((jc[(1, k)] - (ay - by) / (2.0 * h)).abs() < 1e-8);
        }
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::pinhole(0.0, 1.0, 1.0, 1.0, 10, 10).is_err());
        assert!(CameraIntrinsics::pinhole(1.0, 1.0, 10.0, 1.0, 10, 10).is_err());
        assert!(CameraIntrinsics::pinhole(1.0, 1.0, 1.0, -0.1, 10, 10).is_err());
        let json = r#"{"fx":-1,"fy":1,"cx":1,"cy":1,"width":4,"height":4}"#;
        assert!(serde_json::from_str::<CameraIntrinsics>(json).is_err());
    }

    #[test]
    fn pose_examples() {
        let p = WorldPoint::new(1.0, 2.0, 3.0);
        assert_eq!(RigidPose::identity().transform(p), p);
        let t = RigidPose::from_translation(Vector3::new(0.0, 0.0, 0.1));
        let q = t.transform(WorldPoint::new(0.0, 0.0, 1.0));
        assert!((q.z - 1.1).abs() < 1e-15);
        let rz = RigidPose::from_axis_angle(
            Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2),
            Vector3::zeros(),
        );
        let q = rz.transform(WorldPoint::new(1.0, 0.0, 0.0));
        assert!(q.x.abs() < 1e-12 && (q.y - 1.0).abs() < 1e-12 && q.z.abs() < 1e-12);
    }

    #[test]
    fn pose_rejects_non_rotations() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = -1.0;
        assert!(RigidPose::new(m, Vector3::zeros()).is_err());
        m[(0, 0)] = 1.01;
        assert!(RigidPose::new(m, Vector3::zeros()).is_err());
    }

    #[test]
    fn pose_json_round_trip_and_axis_angle_input() {
        let pose = RigidPose::from_axis_angle(Vector3::new(0.1, -0.2, 0.3), Vector3::new(1.0, 2.0, 3.0));
        let json = serde_json::to_string(&pose).unwrap();
        let back: RigidPose = serde_json::from_str(&json).unwrap();
        assert_eq!(pose, back);

        let back: RigidPose =
            serde_json::from_str(r#"{"axis_angle_deg":[0,0,90],"translation":[0,0,0]}"#).unwrap();
        let q = back.transform(WorldPoint::new(1.0, 0.0, 0.0));
        assert!((q.y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nearest_rotation_repairs_noise() {
        let r = nalgebra::Rotation3::new(Vector3::new(0.3, 0.2, -0.1)).into_inner();
        let noisy = r + Matrix3::from_fn(|i, j| 1e-4 * ((i * 3 + j) as f64 - 4.0));
        let fixed = nearest_rotation(&noisy);
        assert!((fixed.transpose() * fixed - Matrix3::identity()).amax() < 1e-12);
        assert!((fixed.determinant() - 1.0).abs() < 1e-12);
        assert!((fixed - r).amax() < 1e-3);
    }

    fn arb_pose() -> impl Strategy<Value = RigidPose> {
        (prop::array::uniform3(-3.0..3.0f64), prop::array::uniform3(-5.0..5.0f64))
            .prop_map(|(w, t)| RigidPose::from_axis_angle(Vector3::from(w), Vector3::from(t)))
    }

    proptest! {
        #[test]
        fn unproject_then_project_is_identity(u in 0.0..639.0f64, v in 0.0..479.0f64, d in 0.05..50.0f64) {
            let c = cam();
            let w = c.unproject(PixelCoord::new(u, v), d).unwrap();
            let p = c.project(w).unwrap();
            prop_assert!(close(p, PixelCoord::new(u, v), 1e-9));
        }

        #[test]
        fn undistort_inverts_distort(x in -0.55..0.55f64, y in -0.55..0.55f64) {
            prop_assume!(x.hypot(y) < 0.8);
            let c = cam().with_distortion(DistortionCoefficients { k1: 0.1, k2: -0.03, p1: 0.001, p2: -0.002, k3: 0.004 });
            let p = c.normalized_to_pixel(x, y);
            let back = c.undistort_pixel(c.distort_pixel(p)).unwrap();
            prop_assert!(close(back, p, 1e-6));
        }

        #[test]
        fn projection_is_scale_invariant(x in -1.0..1.0f64, y in -1.0..1.0f64, z in 0.1..5.0f64, s in 0.01..100.0f64) {
            let c = cam().with_distortion(DistortionCoefficients::radial(0.05, -0.01, 0.0));
            let p = WorldPoint::new(x, y, z);
            let a = c.project(p).unwrap();
            let b = c.project(p.scaled(s)).unwrap();
            prop_assert!(close(a, b, 1e-9));
        }

        #[test]
        fn composition_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let left = a.compose(&b).compose(&c).to_homogeneous();
            let right = a.compose(&b.compose(&c)).to_homogeneous();
            prop_assert!((left - right).amax() < 1e-12);
        }

        #[test]
        fn inverse_composes_to_identity(a in arb_pose(), x in prop::array::uniform3(-10.0..10.0f64)) {
            let id = a.inverse().compose(&a);
            prop_assert!((id.to_homogeneous() - Matrix4::identity()).amax() < 1e-9);
            let p = WorldPoint::new(x[0], x[1], x[2]);
            let q = a.inverse().transform(a.transform(p));
            prop_assert!((q.to_vector() - p.to_vector()).amax() < 1e-9);
        }
    }
}
