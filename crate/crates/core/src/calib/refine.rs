//! Levenberg–Marquardt refinement of intrinsics, distortion and per-view
//! target poses against observed circle centers.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use super::{CalibError, CameraCalibration, ViewPose};
use crate::camera::{CameraIntrinsics, DistortionCoefficients, PixelCoord, RigidPose};
use crate::detect::GridObservation;

/// `[fx, fy, cx, cy, k1, k2, p1, p2, k3]`.
pub const INTRINSIC_PARAMS: usize = 9;
/// Axis-angle rotation followed by translation.
pub const POSE_PARAMS: usize = 6;
const K3_INDEX: usize = 8;

/// Refinement schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineOptions {
    pub initial_lambda: f64,
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub relative_tolerance: f64,
    /// Keep `k3` at its initial value.
    pub freeze_k3: bool,
    /// Consecutive rising trial costs that abort the refinement.
    pub divergence_window: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            initial_lambda: 1e-3,
            max_iterations: 100,
            relative_tolerance: 1e-12,
            freeze_k3: false,
            divergence_window: 10,
        }
    }
}

/// Damping beyond which no step can change the cost in double precision.
const LAMBDA_CEILING: f64 = 1e16;

pub fn intrinsic_params(intr: &CameraIntrinsics) -> [f64; INTRINSIC_PARAMS] {
    let d = intr.distortion;
    [intr.fx, intr.fy, intr.cx, intr.cy, d.k1, d.k2, d.p1, d.p2, d.k3]
}

pub fn pose_params(pose: &RigidPose) -> [f64; POSE_PARAMS] {
    let w = pose.axis_angle();
    let t = pose.translation();
    [w.x, w.y, w.z, t.x, t.y, t.z]
}

/// Right Jacobian of the rotation exponential map.
fn right_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < 1e-4 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    let wx = w.cross_matrix();
    Matrix3::identity() - a * wx + b * wx * wx
}

/// Pixel of a plate point `(x, y, 0)` and its Jacobian with respect to the
/// nine intrinsic parameters followed by the six pose parameters.
///
/// Fails when the point is not in front of the camera.
pub fn project_point(
    intrinsics: &[f64; INTRINSIC_PARAMS],
    pose: &[f64; POSE_PARAMS],
    object: [f64; 2],
) -> Result<(PixelCoord, SMatrix<f64, 2, 15>), CalibError> {
    let [fx, fy, cx, cy, k1, k2, p1, p2, k3] = *intrinsics;
    let w = Vector3::new(pose[0], pose[1], pose[2]);
    let rot = nalgebra::Rotation3::new(w).into_inner();
    let x_obj = Vector3::new(object[0], object[1], 0.0);
    let pc = rot * x_obj + Vector3::new(pose[3], pose[4], pose[5]);
    if !(pc.z > 0.0) {
        return Err(CalibError::Camera(crate::camera::CameraError::NonPositiveDepth { z: pc.z }));
    }
    let (x, y) = (pc.x / pc.z, pc.y / pc.z);
    let dist = DistortionCoefficients { k1, k2, p1, p2, k3 };
    let (xd, yd) = dist.apply(x, y);
    let pixel = PixelCoord::new(fx * xd + cx, fy * yd + cy);

    let mut j = SMatrix::<f64, 2, 15>::zeros();
    j[(0, 0)] = xd;
    j[(1, 1)] = yd;
    j[(0, 2)] = 1.0;
    j[(1, 3)] = 1.0;
    let dc = dist.coefficient_jacobian(x, y);
    for c in 0..5 {
        j[(0, 4 + c)] = fx * dc[(0, c)];
        j[(1, 4 + c)] = fy * dc[(1, c)];
    }
    let f = nalgebra::Matrix2::new(fx, 0.0, 0.0, fy);
    let iz = 1.0 / pc.z;
    let dproj = SMatrix::<f64, 2, 3>::new(iz, 0.0, -x * iz, 0.0, iz, -y * iz);
    let dpix_dpc = f * dist.jacobian(x, y) * dproj;
    // d(R·X)/dω = -R·[X]ₓ·J_r(ω)
    let drot = -rot * x_obj.cross_matrix() * right_jacobian(&w);
    let dw = dpix_dpc * drot;
    for r in 0..2 {
        for c in 0..3 {
            j[(r, 9 + c)] = dw[(r, c)];
            j[(r, 12 + c)] = dpix_dpc[(r, c)];
        }
    }
    Ok((pixel, j))
}

struct Problem<'a> {
    observations: &'a [&'a GridObservation],
    active: Vec<bool>,
}

struct Linearization {
    cost: f64,
    jtj: DMatrix<f64>,
    jtr: DVector<f64>,
}

impl Problem<'_> {
    fn len(&self) -> usize {
        INTRINSIC_PARAMS + POSE_PARAMS * self.observations.len()
    }

    fn split(params: &DVector<f64>, view: usize) -> ([f64; INTRINSIC_PARAMS], [f64; POSE_PARAMS]) {
        let mut intr = [0.0; INTRINSIC_PARAMS];
        intr.copy_from_slice(&params.as_slice()[..INTRINSIC_PARAMS]);
        let start = INTRINSIC_PARAMS + POSE_PARAMS * view;
        let mut pose = [0.0; POSE_PARAMS];
        pose.copy_from_slice(&params.as_slice()[start..start + POSE_PARAMS]);
        (intr, pose)
    }

    /// Half the sum of squared residuals; infinite if any point falls behind
    /// the camera.
    fn cost(&self, params: &DVector<f64>) -> f64 {
        let mut sum = 0.0;
        for (view, obs) in self.observations.iter().enumerate() {
            let (intr, pose) = Self::split(params, view);
            for (o, p) in obs.object_points.iter().zip(&obs.image_points) {
                match project_point(&intr, &pose, *o) {
                    Ok((q, _)) => sum += (q.u - p.u).powi(2) + (q.v - p.v).powi(2),
                    Err(_) => return f64::INFINITY,
                }
            }
        }
        0.5 * sum
    }

    fn linearize(&self, params: &DVector<f64>) -> Result<Linearization, CalibError> {
        let n = self.len();
        let mut jtj = DMatrix::<f64>::zeros(n, n);
        let mut jtr = DVector::<f64>::zeros(n);
        let mut sum = 0.0;
        let mut idx = [0usize; 15];
        for (view, obs) in self.observations.iter().enumerate() {
            let (intr, pose) = Self::split(params, view);
            for (k, slot) in idx.iter_mut().enumerate() {
                *slot = if k < INTRINSIC_PARAMS {
                    k
                } else {
                    INTRINSIC_PARAMS + POSE_PARAMS * view + k - INTRINSIC_PARAMS
                };
            }
            for (o, p) in obs.object_points.iter().zip(&obs.image_points) {
                let (q, j) = project_point(&intr, &pose, *o)?;
                let r = [q.u - p.u, q.v - p.v];
                sum += r[0] * r[0] + r[1] * r[1];
                for a in 0..15 {
                    let ia = idx[a];
                    jtr[ia] += j[(0, a)] * r[0] + j[(1, a)] * r[1];
                    for b in a..15 {
                        let v = j[(0, a)] * j[(0, b)] + j[(1, a)] * j[(1, b)];
                        jtj[(ia, idx[b])] += v;
                    }
                }
            }
        }
        // Only the upper triangle of each local block was accumulated; the
        // global indices are monotone in the local ones, so mirror it.
        for r in 0..n {
            for c in 0..r {
                jtj[(r, c)] = jtj[(c, r)];
            }
        }
        for (k, active) in self.active.iter().enumerate() {
            if !active {
                jtj.row_mut(k).fill(0.0);
                jtj.column_mut(k).fill(0.0);
                jtj[(k, k)] = 1.0;
                jtr[k] = 0.0;
            }
        }
        Ok(Linearization {
            cost: 0.5 * sum,
            jtj,
            jtr,
        })
    }
}

/// Outcome of one refinement run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineReport {
    pub iterations: usize,
    pub initial_rms_px: f64,
    pub final_rms_px: f64,
}

fn rms(cost: f64, points: usize) -> f64 {
    (2.0 * cost / points.max(1) as f64).sqrt()
}

/// Refines `initial` against the observations of the views it covers.
///
/// Every observation must belong to `initial.camera` and to one of its
/// posed views.
pub fn refine(
    initial: &CameraCalibration,
    observations: &[GridObservation],
    options: &RefineOptions,
) -> Result<(CameraCalibration, RefineReport), CalibError> {
    let mut used = Vec::with_capacity(initial.views.len());
    let mut poses = Vec::with_capacity(initial.views.len());
    for vp in &initial.views {
        let obs = observations
            .iter()
            .find(|o| o.view == vp.view && o.camera == initial.camera)
            .ok_or(CalibError::MissingView {
                camera: initial.camera,
                view: vp.view,
            })?;
        used.push(obs);
        poses.push(vp.pose);
    }
    let points: usize = used.iter().map(|o| o.image_points.len()).sum();
    let mut active = vec![true; INTRINSIC_PARAMS + POSE_PARAMS * used.len()];
    active[K3_INDEX] = !options.freeze_k3;
    let problem = Problem {
        observations: &used,
        active,
    };

    let mut params = DVector::<f64>::zeros(problem.len());
    params.as_mut_slice()[..INTRINSIC_PARAMS].copy_from_slice(&intrinsic_params(&initial.intrinsics));
    for (v, pose) in poses.iter().enumerate() {
        let start = INTRINSIC_PARAMS + POSE_PARAMS * v;
        params.as_mut_slice()[start..start + POSE_PARAMS].copy_from_slice(&pose_params(pose));
    }

    let mut lin = problem.linearize(&params)?;
    let initial_cost = lin.cost;
    let mut lambda = options.initial_lambda;
    let mut iterations = 0;
    let mut rising = 0;
    let mut last_trial = f64::NAN;
    while iterations < options.max_iterations && lin.cost > 0.0 && lambda < LAMBDA_CEILING {
        iterations += 1;
        let mut a = lin.jtj.clone();
        for k in 0..a.nrows() {
            // Marquardt scaling; the floor keeps unobservable directions damped.
            a[(k, k)] += lambda * lin.jtj[(k, k)].max(1e-12);
        }
        let step = a.cholesky().map(|c| c.solve(&(-&lin.jtr)));
        let trial_cost = match &step {
            Some(step) => problem.cost(&(&params + step)),
            None => f64::INFINITY,
        };
        if trial_cost < lin.cost {
            let relative = (lin.cost - trial_cost) / lin.cost;
            params += step.expect("finite trial implies a step");
            lin = problem.linearize(&params)?;
            lambda /= 10.0;
            rising = 0;
            last_trial = f64::NAN;
            if relative < options.relative_tolerance {
                break;
            }
        } else {
            lambda *= 10.0;
            rising = if trial_cost > last_trial { rising + 1 } else { 1 };
            last_trial = trial_cost;
            if rising >= options.divergence_window {
                return Err(CalibError::DivergedRefinement { iterations });
            }
        }
    }

    let p = params.as_slice();
    let intrinsics = CameraIntrinsics::new(
        p[0],
        p[1],
        p[2],
        p[3],
        0.0,
        initial.intrinsics.width,
        initial.intrinsics.height,
        DistortionCoefficients::from_array([p[4], p[5], p[6], p[7], p[8]]),
    )
    .map_err(|e| CalibError::IllConditioned(format!("refined intrinsics are invalid: {e}")))?;
    let views = initial
        .views
        .iter()
        .enumerate()
        .map(|(v, vp)| {
            let s = INTRINSIC_PARAMS + POSE_PARAMS * v;
            ViewPose {
                view: vp.view,
                pose: RigidPose::from_axis_angle(
                    Vector3::new(p[s], p[s + 1], p[s + 2]),
                    Vector3::new(p[s + 3], p[s + 4], p[s + 5]),
                ),
            }
        })
        .collect();
    let report = RefineReport {
        iterations,
        initial_rms_px: rms(initial_cost, points),
        final_rms_px: rms(lin.cost, points),
    };
    Ok((
        CameraCalibration {
            camera: initial.camera,
            intrinsics,
            views,
            rms_px: report.final_rms_px,
            rejected_views: initial.rejected_views.clone(),
        },
        report,
    ))
}
