//! Camera-to-camera poses from target poses seen in the same views.

use nalgebra::{Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::CalibError;
use crate::camera::RigidPose;
use crate::rig::CameraId;

/// Spread of the per-view estimates around their average.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ExtrinsicSpread {
    /// Largest rotation, in degrees, between one view's estimate and the mean.
    pub max_rotation_deg: f64,
    /// Largest translation distance, in meters, from the mean.
    pub max_translation_m: f64,
    pub rms_rotation_deg: f64,
    pub rms_translation_m: f64,
}

/// Pose taking points from the `source` camera frame to `destination`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeExtrinsics {
    pub source: CameraId,
    pub destination: CameraId,
    pub pose: RigidPose,
    /// Views the estimate was averaged over.
    #[serde(default)]
    pub views: Vec<usize>,
    #[serde(default)]
    pub spread: ExtrinsicSpread,
}

/// `A → B` from target poses `world → A` and `world → B` of one view:
/// `C = T_B · T_A⁻¹`.
pub fn relative_pose(pose_a: &RigidPose, pose_b: &RigidPose) -> RigidPose {
    pose_b.compose(&pose_a.inverse())
}

/// Single-view relative extrinsics.
pub fn relative_extrinsics(
    source: CameraId,
    destination: CameraId,
    pose_a: &RigidPose,
    pose_b: &RigidPose,
) -> RelativeExtrinsics {
    RelativeExtrinsics {
        source,
        destination,
        pose: relative_pose(pose_a, pose_b),
        views: Vec::new(),
        spread: ExtrinsicSpread::default(),
    }
}

/// Averages per-view relative poses over every view in which both cameras
/// have a target pose.
///
/// Rotations are averaged as sign-aligned quaternions, translations
/// arithmetically.
pub fn average_extrinsics(
    source: CameraId,
    destination: CameraId,
    poses_a: &[(usize, RigidPose)],
    poses_b: &[(usize, RigidPose)],
) -> Result<RelativeExtrinsics, CalibError> {
    let mut views = Vec::new();
    let mut estimates = Vec::new();
    for (view, pa) in poses_a {
        if let Some((_, pb)) = poses_b.iter().find(|(v, _)| v == view) {
            views.push(*view);
            estimates.push(relative_pose(pa, pb));
        }
    }
    if estimates.is_empty() {
        return Err(CalibError::NoSharedViews {
            from: source,
            to: destination,
        });
    }
    let quats: Vec<UnitQuaternion<f64>> = estimates
        .iter()
        .map(|p| UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*p.rotation())))
        .collect();
    let first = quats[0];
    let sum = quats.iter().fold(Quaternion::new(0.0, 0.0, 0.0, 0.0), |acc, q| {
        let q = if q.coords.dot(&first.coords) < 0.0 {
            -q.into_inner()
        } else {
            q.into_inner()
        };
        acc + q
    });
    let mean_q = UnitQuaternion::from_quaternion(sum);
    let mean_t = estimates.iter().map(|p| *p.translation()).sum::<Vector3<f64>>() / estimates.len() as f64;
    let pose = RigidPose::from_approximate_rotation(mean_q.to_rotation_matrix().matrix(), mean_t);

    let n = estimates.len() as f64;
    let mut spread = ExtrinsicSpread::default();
    let (mut sq_rot, mut sq_t) = (0.0, 0.0);
    for e in &estimates {
        let rot = pose.rotation_angle_to(e).to_degrees();
        let dt = (e.translation() - pose.translation()).norm();
        spread.max_rotation_deg = spread.max_rotation_deg.max(rot);
        spread.max_translation_m = spread.max_translation_m.max(dt);
        sq_rot += rot * rot;
        sq_t += dt * dt;
    }
    spread.rms_rotation_deg = (sq_rot / n).sqrt();
    spread.rms_translation_m = (sq_t / n).sqrt();
    Ok(RelativeExtrinsics {
        source,
        destination,
        pose,
        views,
        spread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::WorldPoint;
    use proptest::prelude::*;

    fn pose(w: [f64; 3], t: [f64; 3]) -> RigidPose {
        RigidPose::from_axis_angle(Vector3::from(w), Vector3::from(t))
    }

    #[test]
    fn same_pose_gives_identity() {
        let p = pose([0.3, -0.2, 0.1], [0.05, 0.01, 0.5]);
        let rel = relative_pose(&p, &p);
        assert!((rel.to_homogeneous() - nalgebra::Matrix4::identity()).amax() < 1e-12);
    }

    #[test]
    fn pure_translation() {
        let rel = relative_extrinsics(
            CameraId::Rgb,
            CameraId::Uv,
            &RigidPose::identity(),
            &RigidPose::from_translation(Vector3::new(0.03, 0.0, 0.0)),
        );
        assert_eq!(*rel.pose.translation(), Vector3::new(0.03, 0.0, 0.0));
        assert_eq!(*rel.pose.rotation(), nalgebra::Matrix3::identity());
    }

    #[test]
    fn averaging_noisy_views() {
        let truth = pose([0.01, -0.02, 0.005], [0.03, 0.002, 0.0]);
        let mut a = Vec::new();
        let mut b = Vec::new();
        for v in 0..8 {
            let s = v as f64;
            let world_to_a = pose([0.2 * s.sin(), 0.1 * s, -0.05], [0.01 * s, 0.0, 0.5]);
            // Deterministic per-view error around the true relative pose.
            let wobble = pose(
                [1e-3 * (s * 1.7).sin(), 1e-3 * (s * 2.3).cos(), 0.0],
                [1e-4 * (s * 0.7).cos(), 0.0, 1e-4 * s.sin()],
            );
            a.push((v, world_to_a));
            b.push((v, wobble.compose(&truth).compose(&world_to_a)));
        }
        // One extra view seen only by `a` must be ignored.
        a.push((99, pose([0.0; 3], [0.0, 0.0, 1.0])));
        let avg = average_extrinsics(CameraId::Rgb, CameraId::Uv, &a, &b).unwrap();
        assert_eq!(avg.views, (0..8).collect::<Vec<_>>());
        assert!(avg.pose.rotation_angle_to(&truth).to_degrees() < 0.1);
        assert!((avg.pose.translation() - truth.translation()).norm() < 5e-4);
        assert!(avg.spread.max_rotation_deg > 0.0 && avg.spread.max_rotation_deg < 0.2);
    }

    #[test]
    fn sign_flipped_quaternions_average_correctly() {
        // Rotations near 180° have quaternions on both sides of the sign flip.
        let axis = Vector3::new(0.0, 0.0, 1.0);
        let a = vec![(0, RigidPose::identity()), (1, RigidPose::identity())];
        let b = vec![
            (0, pose((axis * (std::f64::consts::PI - 0.01)).into(), [0.0; 3])),
            (1, pose((axis * -(std::f64::consts::PI - 0.01)).into(), [0.0; 3])),
        ];
        let avg = average_extrinsics(CameraId::Rgb, CameraId::Uv, &a, &b).unwrap();
        let half_turn = pose((axis * std::f64::consts::PI).into(), [0.0; 3]);
        assert!(avg.pose.rotation_angle_to(&half_turn) < 1e-6);
    }

    #[test]
    fn disjoint_views_are_an_error() {
        let a = vec![(0, RigidPose::identity())];
        let b = vec![(1, RigidPose::identity())];
        assert!(matches!(
            average_extrinsics(CameraId::Rgb, CameraId::Thermal, &a, &b),
            Err(CalibError::NoSharedViews { .. })
        ));
    }

    fn arb_pose() -> impl Strategy<Value = RigidPose> {
        (prop::array::uniform3(-2.0..2.0f64), prop::array::uniform3(-1.0..1.0f64))
            .prop_map(|(w, t)| pose(w, t))
    }

    proptest! {
        #[test]
        fn forward_and_backward_compose_to_identity(p in arb_pose(), q in arb_pose()) {
            let fwd = relative_pose(&p, &q);
            let back = relative_pose(&q, &p);
            let id = back.compose(&fwd).to_homogeneous();
            prop_assert!((id - nalgebra::Matrix4::identity()).amax() < 1e-9);
        }

        #[test]
        fn relative_pose_chains_world_points(
            p in arb_pose(),
            q in arb_pose(),
            x in prop::array::uniform3(-1.0..1.0f64),
        ) {
            let x = WorldPoint::new(x[0], x[1], x[2]);
            let via = relative_pose(&p, &q).transform(p.transform(x)).to_vector();
            let direct = q.transform(x).to_vector();
            prop_assert!((via - direct).amax() < 1e-9);
        }
    }
}
