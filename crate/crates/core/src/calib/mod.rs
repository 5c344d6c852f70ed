//! Per-camera calibration (homographies, closed-form intrinsics, planar
//! pose, Levenberg–Marquardt refinement) and camera-to-camera extrinsics.
//!
//! Target poses map plate coordinates (meters, `z = 0`) into the camera
//! frame. Relative extrinsics map points from the source camera frame to
//! the destination camera frame.

mod extrinsics;
mod homography;
mod pose;
mod refine;
mod zhang;

use std::path::Path;

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraError, CameraIntrinsics, RigidPose};
use crate::detect::GridObservation;
use crate::rig::CameraId;

pub use extrinsics::{average_extrinsics, relative_extrinsics, relative_pose, ExtrinsicSpread, RelativeExtrinsics};
pub use homography::{estimate_homography, Homography, DEGENERACY_TOLERANCE};
pub use pose::estimate_pose;
pub use refine::{
    intrinsic_params, pose_params, project_point, refine, RefineOptions, RefineReport, INTRINSIC_PARAMS, POSE_PARAMS,
};
pub use zhang::{zhang_intrinsics, CONIC_CONDITION_LIMIT, MIN_VIEWS};

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("insufficient views: {found} usable, at least {required} required")]
    InsufficientViews { found: usize, required: usize },
    #[error("ill-conditioned: {0}")]
    IllConditioned(String),
    #[error("refinement diverged after {iterations} iterations")]
    DivergedRefinement { iterations: usize },
    #[error("no view is shared by {from} and {to}")]
    NoSharedViews { from: CameraId, to: CameraId },
    #[error("no observation of view {view} for camera {camera}")]
    MissingView { camera: CameraId, view: usize },
    #[error("{camera}: {source}")]
    InCamera {
        camera: CameraId,
        #[source]
        source: Box<CalibError>,
    },
    #[error("invalid calibration file {path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Camera(#[from] CameraError),
}

impl CalibError {
    /// The innermost error, with camera context removed.
    pub fn root(&self) -> &CalibError {
        match self {
            CalibError::InCamera { source, .. } => source.root(),
            other => other,
        }
    }

    fn in_camera(self, camera: CameraId) -> Self {
        CalibError::InCamera {
            camera,
            source: Box::new(self),
        }
    }
}

/// Target pose (plate → camera) of one view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewPose {
    pub view: usize,
    pub pose: RigidPose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedView {
    pub view: usize,
    pub reason: String,
}

/// Calibration of one camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraCalibration {
    pub camera: CameraId,
    pub intrinsics: CameraIntrinsics,
    pub views: Vec<ViewPose>,
    /// Root mean square reprojection distance over all used points.
    pub rms_px: f64,
    #[serde(default)]
    pub rejected_views: Vec<RejectedView>,
}

impl CameraCalibration {
    pub fn pose(&self, view: usize) -> Option<&RigidPose> {
        self.views.iter().find(|v| v.view == view).map(|v| &v.pose)
    }

    fn pose_list(&self) -> Vec<(usize, RigidPose)> {
        self.views.iter().map(|v| (v.view, v.pose)).collect()
    }
}

/// Everything the registration stage needs: intrinsics and target poses of
/// every camera plus extrinsics from the reference camera to the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub reference: CameraId,
    pub cameras: Vec<CameraCalibration>,
    pub extrinsics: Vec<RelativeExtrinsics>,
}

impl CalibrationResult {
    pub fn camera(&self, id: CameraId) -> Option<&CameraCalibration> {
        self.cameras.iter().find(|c| c.camera == id)
    }

    /// Pose from `source` to `destination`, inverting a stored pair if needed.
    pub fn extrinsics(&self, source: CameraId, destination: CameraId) -> Option<RigidPose> {
        if source == destination {
            return Some(RigidPose::identity());
        }
        self.extrinsics.iter().find_map(|e| {
            if e.source == source && e.destination == destination {
                Some(e.pose)
            } else if e.source == destination && e.destination == source {
                Some(e.pose.inverse())
            } else {
                None
            }
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, CalibError> {
        let format = |message: String| CalibError::Format {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| format(e.to_string()))?;
        Self::from_json(&text).map_err(|e| format(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationOptions {
    pub refine: RefineOptions,
    /// Cameras whose `k3` stays at zero; the 160×120 thermal sensor barely
    /// constrains high-order radial terms.
    pub freeze_k3: Vec<CameraId>,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            refine: RefineOptions::default(),
            freeze_k3: vec![CameraId::Thermal],
        }
    }
}

/// Calibrates one camera from its grid observations.
///
/// Views whose homography is degenerate are listed in `rejected_views`;
/// fewer than [`MIN_VIEWS`] usable views is an error.
pub fn calibrate_camera(
    camera: CameraId,
    width: u32,
    height: u32,
    observations: &[GridObservation],
    options: &CalibrationOptions,
) -> Result<(CameraCalibration, RefineReport), CalibError> {
    let run = || {
        let mut rejected = Vec::new();
        let mut usable = Vec::new();
        for obs in observations.iter().filter(|o| o.camera == camera) {
            match estimate_homography(&obs.object_points, &obs.image_points) {
                Ok(h) => usable.push((obs, h.matrix)),
                Err(e) => rejected.push(RejectedView {
                    view: obs.view,
                    reason: e.to_string(),
                }),
            }
        }
        if usable.len() < MIN_VIEWS {
            return Err(CalibError::InsufficientViews {
                found: usable.len(),
                required: MIN_VIEWS,
            });
        }
        let hs: Vec<Matrix3<f64>> = usable.iter().map(|(_, h)| *h).collect();
        let intrinsics = zhang_intrinsics(&hs, width, height)?;
        let views = usable
            .iter()
            .map(|(obs, h)| {
                Ok(ViewPose {
                    view: obs.view,
                    pose: estimate_pose(&intrinsics, h)?,
                })
            })
            .collect::<Result<Vec<_>, CalibError>>()?;
        let initial = CameraCalibration {
            camera,
            intrinsics,
            views,
            rms_px: f64::NAN,
            rejected_views: rejected,
        };
        let refine_options = RefineOptions {
            freeze_k3: options.refine.freeze_k3 || options.freeze_k3.contains(&camera),
            ..options.refine
        };
        refine(&initial, observations, &refine_options)
    };
    run().map_err(|e| e.in_camera(camera))
}

/// Calibrates every listed camera (in parallel) and relates each of them
/// to `cameras[0]`, the reference camera.
pub fn calibrate_rig(
    cameras: &[(CameraId, u32, u32)],
    observations: &[GridObservation],
    options: &CalibrationOptions,
) -> Result<CalibrationResult, CalibError> {
    let calibrations = cameras
        .par_iter()
        .map(|&(id, w, h)| calibrate_camera(id, w, h, observations, options).map(|(c, _)| c))
        .collect::<Result<Vec<_>, _>>()?;
    let reference = &calibrations[0];
    let extrinsics = calibrations[1..]
        .iter()
        .map(|other| average_extrinsics(reference.camera, other.camera, &reference.pose_list(), &other.pose_list()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CalibrationResult {
        reference: reference.camera,
        cameras: calibrations,
        extrinsics,
    })
}
