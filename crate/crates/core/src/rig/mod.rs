//! Synthetic multispectral rig: the ground-truth stand-in for the physical
//! RGB-D, thermal and UV cameras and for the circle-grid calibration target.
//!
//! The rig frame coincides with the RGB camera frame in the default
//! configuration. Every camera pose stored here maps rig coordinates into
//! that camera's frame. The depth camera is registered to RGB and shares its
//! intrinsics and pose.

mod scene;
mod target;

use std::fmt;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraError, CameraIntrinsics, DistortionCoefficients, PixelCoord, RigidPose};
use crate::raster::{Raster, Rgb8};

pub use scene::{patch_footprint, render_scene, Albedo, Patch, ScenePlane, SceneSpec, SpectralNoise};
pub use target::{render_target_depth, render_target_view, Contrast, SpectralContrast, TargetSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RigError {
    #[error("calibration target lies entirely behind the camera")]
    TargetBehindCamera,
    #[error("scene has no planes")]
    EmptyScene,
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("point does not map into the target camera")]
    BadPoint,
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

/// The four cameras of the rig.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraId {
    Rgb,
    Thermal,
    Uv,
    Depth,
}

impl CameraId {
    /// Cameras that see the calibration target (depth is registered to RGB).
    pub const IMAGING: [CameraId; 3] = [CameraId::Rgb, CameraId::Thermal, CameraId::Uv];

    pub fn as_str(&self) -> &'static str {
        match self {
            CameraId::Rgb => "rgb",
            CameraId::Thermal => "thermal",
            CameraId::Uv => "uv",
            CameraId::Depth => "depth",
        }
    }

    pub fn spectrum(&self) -> Option<Spectrum> {
        match self {
            CameraId::Rgb => Some(Spectrum::Visible),
            CameraId::Thermal => Some(Spectrum::Thermal),
            CameraId::Uv => Some(Spectrum::Ultraviolet),
            CameraId::Depth => None,
        }
    }
}

impl fmt::Display for CameraId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CameraId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rgb" => Ok(CameraId::Rgb),
            "thermal" => Ok(CameraId::Thermal),
            "uv" => Ok(CameraId::Uv),
            "depth" => Ok(CameraId::Depth),
            other => Err(format!("unknown camera id `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spectrum {
    Visible,
    Thermal,
    Ultraviolet,
}

/// Intrinsics plus the rig→camera pose of one camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSetup {
    pub intrinsics: CameraIntrinsics,
    /// Maps rig-frame points into this camera's frame.
    pub pose: RigidPose,
}

/// Ground-truth configuration of the RGB-D / thermal / UV rig.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigConfig {
    pub rgb: CameraSetup,
    pub thermal: CameraSetup,
    pub uv: CameraSetup,
}

impl Default for RigConfig {
    /// Resolutions and horizontal fields of view of the reference hardware:
    /// RGB-D 640×480 at 74°, UV 640×480 at 55°, thermal 160×120 at 57°.
    /// The secondary cameras sit 3 cm either side of the RGB camera with
    /// small mounting rotations.
    fn default() -> Self {
        #[allow(clippy::too_many_arguments)]
        fn setup(
            hfov: f64,
            w: u32,
            h: u32,
            fy_scale: f64,
            pp_offset: (f64, f64),
            distortion: DistortionCoefficients,
            center: Vector3<f64>,
            rot_deg: Vector3<f64>,
        ) -> CameraSetup {
            let base = CameraIntrinsics::from_horizontal_fov(hfov, w, h).expect("valid default");
            let intrinsics = CameraIntrinsics::new(
                base.fx,
                base.fx * fy_scale,
                base.cx + pp_offset.0,
                base.cy + pp_offset.1,
                0.0,
                w,
                h,
                distortion,
            )
            .expect("valid default");
            let rotation = RigidPose::from_axis_angle(rot_deg.map(f64::to_radians), Vector3::zeros());
            let translation = -(rotation.rotation() * center);
            CameraSetup {
                intrinsics,
                pose: RigidPose::from_axis_angle(rot_deg.map(f64::to_radians), translation),
            }
        }

        RigConfig {
            rgb: CameraSetup {
                pose: RigidPose::identity(),
                ..setup(
                    74.0,
                    640,
                    480,
                    1.002,
                    (2.4, -2.9),
                    DistortionCoefficients {
                        k1: 0.045,
                        k2: -0.035,
                        p1: 4e-4,
                        p2: -3e-4,
                        k3: 0.006,
                    },
                    Vector3::zeros(),
                    Vector3::zeros(),
                )
            },
            uv: setup(
                55.0,
                640,
                480,
                0.998,
                (-1.8, 3.5),
                DistortionCoefficients {
                    k1: -0.11,
                    k2: 0.09,
                    p1: -6e-4,
                    p2: 5e-4,
                    k3: -0.02,
                },
                Vector3::new(0.03, 0.002, 0.0),
                Vector3::new(0.6, -1.2, 0.4),
            ),
            thermal: setup(
                57.0,
                160,
                120,
                1.0,
                (0.9, -1.4),
                DistortionCoefficients {
                    k1: -0.06,
                    k2: 0.03,
                    p1: 8e-4,
                    p2: -5e-4,
                    k3: 0.0,
                },
                Vector3::new(-0.03, -0.001, 0.001),
                Vector3::new(-0.9, 1.5, -0.3),
            ),
        }
    }
}

impl RigConfig {
    pub fn camera(&self, id: CameraId) -> &CameraSetup {
        match id {
            CameraId::Rgb | CameraId::Depth => &self.rgb,
            CameraId::Thermal => &self.thermal,
            CameraId::Uv => &self.uv,
        }
    }

    /// Ground-truth transform taking `src` camera coordinates to `dst`.
    pub fn relative_pose(&self, src: CameraId, dst: CameraId) -> RigidPose {
        self.camera(dst).pose.compose(&self.camera(src).pose.inverse())
    }

    /// Pose of the target in camera `id`, given the target→rig pose.
    pub fn target_in_camera(&self, id: CameraId, target_to_rig: &RigidPose) -> RigidPose {
        self.camera(id).pose.compose(target_to_rig)
    }
}

/// Placement of the calibration target for one synthetic view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    /// Rotation of the target (axis-angle, degrees) about its own center.
    pub tilt_deg: [f64; 3],
    /// Position of the target center in the rig frame, meters.
    pub center: [f64; 3],
}

impl ViewSpec {
    /// Target→rig pose that puts the grid center at `center`.
    pub fn target_to_rig(&self, target: &TargetSpec) -> RigidPose {
        let rot = RigidPose::from_axis_angle(
            Vector3::from(self.tilt_deg).map(f64::to_radians),
            Vector3::zeros(),
        );
        let grid_center = target.grid_center();
        let t = Vector3::from(self.center) - rot.rotation() * grid_center;
        RigidPose::from_axis_angle(rot.axis_angle(), t)
    }
}

/// Ten target placements visible to all three cameras. The board is moved
/// towards each image corner and edge so that the distortion model is
/// constrained over most of the field of view, not just its center.
pub fn default_views() -> Vec<ViewSpec> {
    let v = |t: [f64; 3], c: [f64; 3]| ViewSpec {
        tilt_deg: t,
        center: c,
    };
    vec![
        v([25.0, 0.0, 0.0], [0.0, 0.0, 0.40]),
        v([0.0, -30.0, 5.0], [0.0, 0.0, 0.42]),
        v([20.0, 20.0, 0.0], [-0.06, -0.045, 0.40]),
        v([-20.0, 20.0, 10.0], [-0.06, 0.045, 0.40]),
        v([20.0, -20.0, -10.0], [0.06, -0.045, 0.40]),
        v([-20.0, -20.0, 0.0], [0.06, 0.045, 0.40]),
        v([0.0, 30.0, 0.0], [-0.07, 0.0, 0.42]),
        v([0.0, -30.0, 0.0], [0.07, 0.0, 0.42]),
        v([30.0, 0.0, 5.0], [0.0, -0.05, 0.42]),
        v([-30.0, 0.0, -5.0], [0.0, 0.05, 0.42]),
    ]
}

/// Rendered target images of one calibration view, normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationView {
    pub view: usize,
    pub target_to_rig: RigidPose,
    pub rgb: Raster<f64>,
    pub thermal: Raster<f64>,
    pub uv: Raster<f64>,
    /// Millimeters, registered to `rgb`.
    pub depth: Raster<u16>,
}

impl CalibrationView {
    /// Image of an imaging camera; `Depth` has no target image.
    pub fn image(&self, id: CameraId) -> Option<&Raster<f64>> {
        match id {
            CameraId::Rgb => Some(&self.rgb),
            CameraId::Thermal => Some(&self.thermal),
            CameraId::Uv => Some(&self.uv),
            CameraId::Depth => None,
        }
    }
}

/// Renders every view for every camera of the rig. Image noise is seeded
/// per view and camera from `seed`.
pub fn render_calibration_views(
    rig: &RigConfig,
    target: &TargetSpec,
    views: &[ViewSpec],
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<CalibrationView>, RigError> {
    target.validate()?;
    views
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let target_to_rig = v.target_to_rig(target);
            let render = |id: CameraId, salt: u64| {
                let cam = rig.camera(id);
                let pose = rig.target_in_camera(id, &target_to_rig);
                let spectrum = id.spectrum().expect("imaging camera");
                let view_seed = seed.wrapping_add(4 * i as u64 + salt);
                render_target_view(&cam.intrinsics, &pose, target, spectrum, noise_sigma, view_seed)
            };
            let depth_pose = rig.target_in_camera(CameraId::Depth, &target_to_rig);
            Ok(CalibrationView {
                view: i,
                target_to_rig,
                rgb: render(CameraId::Rgb, 0)?,
                thermal: render(CameraId::Thermal, 1)?,
                uv: render(CameraId::Uv, 2)?,
                depth: render_target_depth(&rig.camera(CameraId::Depth).intrinsics, &depth_pose, target)?,
            })
        })
        .collect()
}

/// Exact projections of the circle centers (row-major), the oracle that
/// detection is checked against.
pub fn project_target_centers(
    intr: &CameraIntrinsics,
    target_to_camera: &RigidPose,
    target: &TargetSpec,
) -> Result<Vec<PixelCoord>, RigError> {
    target
        .object_points()
        .iter()
        .map(|p| {
            let pc = target_to_camera.transform_vector(&Vector3::new(p[0], p[1], 0.0));
            Ok(intr.project(pc.into())?)
        })
        .collect()
}

/// Maps an RGB pixel with known metric depth into `target_camera` using
/// only ground-truth parameters of the rig.
///
/// Depth `<= 0` yields [`RigError::NonPositiveDepth`]; a point that lands
/// behind or outside the target camera yields [`RigError::BadPoint`].
pub fn ground_truth_map(
    rig: &RigConfig,
    pixel: PixelCoord,
    depth: f64,
    target_camera: CameraId,
) -> Result<PixelCoord, RigError> {
    if !(depth > 0.0) {
        return Err(RigError::NonPositiveDepth(depth));
    }
    let rgb = rig.camera(CameraId::Rgb);
    let (x, y) = rgb.intrinsics.undistort_normalized(pixel)?;
    let in_rgb = Vector3::new(x * depth, y * depth, depth);
    let in_rig = rgb.pose.inverse().transform_vector(&in_rgb);
    let dst = rig.camera(target_camera);
    let in_dst = dst.pose.transform_vector(&in_rig);
    if in_dst.z <= 0.0 {
        return Err(RigError::BadPoint);
    }
    let p = dst.intrinsics.project(in_dst.into())?;
    if !dst.intrinsics.contains(p) {
        return Err(RigError::BadPoint);
    }
    Ok(p)
}

/// Adds isotropic Gaussian noise (pixels) to detected points, seeded.
pub fn jitter_points(points: &[PixelCoord], sigma: f64, seed: u64) -> Vec<PixelCoord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    points
        .iter()
        .map(|p| PixelCoord::new(p.u + normal.sample(&mut rng), p.v + normal.sample(&mut rng)))
        .collect()
}

/// Adds seeded Gaussian noise to a normalized image and clamps to `[0, 1]`.
pub(crate) fn add_image_noise(img: &mut Raster<f64>, sigma: f64, seed: u64) {
    if sigma <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for v in img.data_mut() {
        *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
    }
}

/// Normalized intensity to 8 bits.
pub fn quantize_u8(img: &Raster<f64>) -> Raster<u8> {
    img.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// Normalized intensity to 16 bits.
pub fn quantize_u16(img: &Raster<f64>) -> Raster<u16> {
    img.map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
}

/// Normalized gray intensity to an 8-bit RGB raster with equal channels.
pub fn gray_to_rgb8(img: &Raster<f64>) -> Raster<Rgb8> {
    quantize_u8(img).map(|g| [g, g, g])
}

/// One synchronized set of rasters from the rig.
#[derive(Debug, Clone, PartialEq)]
pub struct MultispectralFrame {
    pub rgb: Raster<Rgb8>,
    /// Arbitrary radiometric units, hotter is brighter.
    pub thermal: Raster<u16>,
    pub uv: Raster<u8>,
    /// Millimeters, registered to `rgb`; 0 marks invalid depth.
    pub depth: Raster<u16>,
    pub timestamp: u64,
}

impl MultispectralFrame {
    /// Checks raster sizes against the rig.
    pub fn validate(&self, rig: &RigConfig) -> Result<(), RigError> {
        let check = |id: CameraId, dims: (usize, usize)| {
            let want = rig.camera(id).intrinsics.size();
            if want == dims {
                Ok(())
            } else {
                Err(RigError::InvalidSpec(format!(
                    "{id} raster is {}x{}, camera expects {}x{}",
                    dims.0, dims.1, want.0, want.1
                )))
            }
        };
        check(CameraId::Rgb, self.rgb.dimensions())?;
        check(CameraId::Thermal, self.thermal.dimensions())?;
        check(CameraId::Uv, self.uv.dimensions())?;
        check(CameraId::Depth, self.depth.dimensions())
    }
}
