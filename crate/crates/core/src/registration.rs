//! Depth-driven alignment of the thermal and UV images onto the RGB frame.
//!
//! Every RGB pixel with valid depth is undistorted, lifted to 3D, moved
//! into the secondary camera and projected there with its lens model. The
//! secondary image is then sampled bilinearly at that position. Pixels that
//! cannot be mapped are bad points.

use rayon::prelude::*;
use thiserror::Error;

use crate::calib::CalibrationResult;
use crate::camera::{CameraIntrinsics, PixelCoord, RigidPose, WorldPoint};
use crate::raster::{Raster, Rgb8};
use crate::rig::{CameraId, MultispectralFrame};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistrationError {
    #[error("{what} is {found:?}, expected {expected:?}")]
    DimensionMismatch {
        what: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("calibration has no {0} camera")]
    MissingCamera(CameraId),
    #[error("calibration has no extrinsics from {0} to {1}")]
    MissingExtrinsics(CameraId, CameraId),
}

/// One RGB pixel carried into a secondary camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappedPixel {
    /// Position in the secondary image.
    pub target: PixelCoord,
    /// The 3D point (RGB camera frame, meters) that was projected.
    pub point: WorldPoint,
}

/// RGB → secondary correspondence for every RGB pixel; `None` is a bad point.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMapping {
    entries: Raster<Option<MappedPixel>>,
    secondary_size: (usize, usize),
}

impl PixelMapping {
    pub fn dimensions(&self) -> (usize, usize) {
        self.entries.dimensions()
    }

    pub fn secondary_size(&self) -> (usize, usize) {
        self.secondary_size
    }

    pub fn get(&self, x: usize, y: usize) -> Option<MappedPixel> {
        self.entries.get(x, y)
    }

    pub fn entries(&self) -> &Raster<Option<MappedPixel>> {
        &self.entries
    }

    pub fn bad_points(&self) -> Raster<bool> {
        self.entries.map(|e| e.is_none())
    }

    pub fn valid_count(&self) -> usize {
        self.entries.data().iter().filter(|e| e.is_some()).count()
    }
}

/// Maps every RGB pixel into a secondary camera.
///
/// `depth` is in millimeters and registered to the RGB image; `rgb_to_secondary`
/// takes RGB-frame points into the secondary frame. Depth 0, a failed
/// undistortion, a point behind the secondary camera or a projection outside
/// `[0, w-1] × [0, h-1]` all give a bad point.
pub fn build_mapping(
    depth: &Raster<u16>,
    intr_rgb: &CameraIntrinsics,
    intr_sec: &CameraIntrinsics,
    rgb_to_secondary: &RigidPose,
) -> Result<PixelMapping, RegistrationError> {
    if depth.dimensions() != intr_rgb.size() {
        return Err(RegistrationError::DimensionMismatch {
            what: "depth raster".into(),
            expected: intr_rgb.size(),
            found: depth.dimensions(),
        });
    }
    let (w, h) = depth.dimensions();
    let entries: Vec<Option<MappedPixel>> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            (0..w).map(move |x| {
                let d = depth.get(x, y);
                if d == 0 {
                    return None;
                }
                let z = f64::from(d) * 1e-3;
                let (nx, ny) = intr_rgb
                    .undistort_normalized(PixelCoord::new(x as f64, y as f64))
                    .ok()?;
                let point = WorldPoint::new(nx * z, ny * z, z);
                let moved = rgb_to_secondary.transform(point);
                if !(moved.z > 0.0) {
                    return None;
                }
                let target = intr_sec.project(moved).ok()?;
                intr_sec.contains(target).then_some(MappedPixel { target, point })
            })
        })
        .collect();
    Ok(PixelMapping {
        entries: Raster::from_vec(w, h, entries).expect("mapping size"),
        secondary_size: intr_sec.size(),
    })
}

/// Resamples a secondary image into RGB geometry; bad points read 0.
pub fn sample_secondary(secondary: &Raster<f64>, mapping: &PixelMapping) -> Result<Raster<f64>, RegistrationError> {
    if secondary.dimensions() != mapping.secondary_size {
        return Err(RegistrationError::DimensionMismatch {
            what: "secondary raster".into(),
            expected: mapping.secondary_size,
            found: secondary.dimensions(),
        });
    }
    let (w, h) = mapping.dimensions();
    let data: Vec<f64> = mapping
        .entries
        .data()
        .par_iter()
        .map(|e| e.map_or(0.0, |m| secondary.bilinear(m.target.u, m.target.v)))
        .collect();
    Ok(Raster::from_vec(w, h, data).expect("sample size"))
}

/// Separable Gaussian blur with replicated borders. `sigma <= 0` on an axis
/// leaves that axis untouched.
pub fn gaussian_blur(image: &Raster<f64>, sigma_x: f64, sigma_y: f64) -> Raster<f64> {
    fn kernel(sigma: f64) -> Vec<f64> {
        let radius = (3.0 * sigma).ceil() as isize;
        let k: Vec<f64> = (-radius..=radius)
            .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
            .collect();
        let sum: f64 = k.iter().sum();
        k.into_iter().map(|v| v / sum).collect()
    }
    let (w, h) = image.dimensions();
    let mut out = image.clone();
    if sigma_x > 0.0 {
        let k = kernel(sigma_x);
        let r = (k.len() / 2) as isize;
        let src = out.clone();
        out = Raster::from_fn(w, h, |x, y| {
            k.iter()
                .enumerate()
                .map(|(i, kv)| kv * src.get_clamped(x as isize + i as isize - r, y as isize))
                .sum()
        });
    }
    if sigma_y > 0.0 {
        let k = kernel(sigma_y);
        let r = (k.len() / 2) as isize;
        let src = out.clone();
        out = Raster::from_fn(w, h, |x, y| {
            k.iter()
                .enumerate()
                .map(|(i, kv)| kv * src.get_clamped(x as isize, y as isize + i as isize - r))
                .sum()
        });
    }
    out
}

/// Resizes with a Gaussian anti-alias filter followed by bilinear sampling.
///
/// On an axis shrunk by `ratio = src / dst > 1` the blur has
/// `sigma = 0.5·ratio`; enlarged or unchanged axes are not blurred. Pixel
/// centers are aligned, so output pixel `x` samples source position
/// `(x + 0.5)·ratio - 0.5` (clamped to the image).
pub fn harmonize_resolution(image: &Raster<f64>, target_w: usize, target_h: usize) -> Raster<f64> {
    assert!(target_w > 0 && target_h > 0, "target size must be positive");
    let (w, h) = image.dimensions();
    if (w, h) == (target_w, target_h) {
        return image.clone();
    }
    let rx = w as f64 / target_w as f64;
    let ry = h as f64 / target_h as f64;
    let sigma = |ratio: f64| if ratio > 1.0 { 0.5 * ratio } else { 0.0 };
    let blurred = gaussian_blur(image, sigma(rx), sigma(ry));
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;
    Raster::from_fn(target_w, target_h, |x, y| {
        let sx = ((x as f64 + 0.5) * rx - 0.5).clamp(0.0, max_x);
        let sy = ((y as f64 + 0.5) * ry - 0.5).clamp(0.0, max_y);
        blurred.bilinear(sx, sy)
    })
}

/// Thermal and UV images resampled onto the RGB pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedFrame {
    pub rgb: Raster<Rgb8>,
    /// Thermal intensity in the units of the source raster; 0 at bad points.
    pub thermal: Raster<f64>,
    /// UV intensity in the units of the source raster; 0 at bad points.
    pub uv: Raster<f64>,
    /// True where depth is invalid or either secondary camera cannot see
    /// the point.
    pub bad_points: Raster<bool>,
}

/// Registers a frame with the calibrated rig (extrinsics relative to RGB).
pub fn align_frame(frame: &MultispectralFrame, calib: &CalibrationResult) -> Result<AlignedFrame, RegistrationError> {
    let intr = |id: CameraId| {
        calib
            .camera(id)
            .map(|c| c.intrinsics)
            .ok_or(RegistrationError::MissingCamera(id))
    };
    let rel = |id: CameraId| {
        calib
            .extrinsics(CameraId::Rgb, id)
            .ok_or(RegistrationError::MissingExtrinsics(CameraId::Rgb, id))
    };
    let rgb = intr(CameraId::Rgb)?;
    if frame.rgb.dimensions() != rgb.size() {
        return Err(RegistrationError::DimensionMismatch {
            what: "rgb raster".into(),
            expected: rgb.size(),
            found: frame.rgb.dimensions(),
        });
    }
    let thermal_map = build_mapping(&frame.depth, &rgb, &intr(CameraId::Thermal)?, &rel(CameraId::Thermal)?)?;
    let uv_map = build_mapping(&frame.depth, &rgb, &intr(CameraId::Uv)?, &rel(CameraId::Uv)?)?;
    let thermal = sample_secondary(&frame.thermal.to_f64(), &thermal_map)?;
    let uv = sample_secondary(&frame.uv.to_f64(), &uv_map)?;
    let (w, h) = frame.rgb.dimensions();
    let bad_points = Raster::from_fn(w, h, |x, y| thermal_map.get(x, y).is_none() || uv_map.get(x, y).is_none());
    Ok(AlignedFrame {
        rgb: frame.rgb.clone(),
        thermal,
        uv,
        bad_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rig::{ground_truth_map, RigConfig};
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn k500() -> CameraIntrinsics {
        CameraIntrinsics::pinhole(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn identity_mapping() {
        let k = k500();
        let depth = Raster::filled(640, 480, 1000u16);
        let map = build_mapping(&depth, &k, &k, &RigidPose::identity()).unwrap();
        assert_eq!(map.valid_count(), 640 * 480);
        for (x, y) in [(0, 0), (639, 479), (123, 45), (320, 240)] {
            let m = map.get(x, y).unwrap();
            assert!((m.target.u - x as f64).abs() < 1e-9 && (m.target.v - y as f64).abs() < 1e-9);
        }
        let img = Raster::from_fn(640, 480, |x, y| (x * 3 + y * 7) as f64);
        assert_eq!(sample_secondary(&img, &map).unwrap(), img);
    }

    #[test]
    fn zero_depth_is_all_bad() {
        let k = k500();
        let map = build_mapping(&Raster::filled(640, 480, 0u16), &k, &k, &RigidPose::identity()).unwrap();
        assert_eq!(map.valid_count(), 0);
        assert!(map.bad_points().data().iter().all(|b| *b));
        let out = sample_secondary(&Raster::filled(640, 480, 9.0), &map).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn baseline_shift_and_bounds() {
        let k = k500();
        // Secondary camera 2 cm to the right: points move left by fx·b/z.
        let rel = RigidPose::from_translation(Vector3::new(-0.02, 0.0, 0.0));
        let map = build_mapping(&Raster::filled(640, 480, 1000u16), &k, &k, &rel).unwrap();
        let m = map.get(320, 240).unwrap();
        assert!((m.target.u - 310.0).abs() < 1e-9);
        // The leftmost ten columns leave the secondary image.
        assert!(map.get(9, 100).is_none());
        assert!(map.get(10, 100).is_some());
    }

    #[test]
    fn constant_secondary_stays_constant() {
        let rig = RigConfig::default();
        let depth = Raster::from_fn(640, 480, |x, y| 600 + ((x * 13 + y * 7) % 900) as u16);
        let map = build_mapping(
            &depth,
            &rig.rgb.intrinsics,
            &rig.thermal.intrinsics,
            &rig.relative_pose(CameraId::Rgb, CameraId::Thermal),
        )
        .unwrap();
        let out = sample_secondary(&Raster::filled(160, 120, 42.0), &map).unwrap();
        for (v, e) in out.data().iter().zip(map.entries().data()) {
            if e.is_some() {
                assert!((v - 42.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_ground_truth_map() {
        let rig = RigConfig::default();
        let depth = Raster::from_fn(640, 480, |x, y| 400 + ((x * 31 + y * 17) % 1200) as u16);
        for id in [CameraId::Thermal, CameraId::Uv] {
            let map = build_mapping(
                &depth,
                &rig.rgb.intrinsics,
                &rig.camera(id).intrinsics,
                &rig.relative_pose(CameraId::Rgb, id),
            )
            .unwrap();
            for y in (0..480).step_by(7) {
                for x in (0..640).step_by(5) {
                    let d = f64::from(depth.get(x, y)) * 1e-3;
                    let truth = ground_truth_map(&rig, PixelCoord::new(x as f64, y as f64), d, id).ok();
                    match (map.get(x, y), truth) {
                        (Some(m), Some(t)) => assert!(m.target.distance(&t) < 1e-6),
                        (None, None) => {}
                        (m, t) => panic!("({x},{y}) {id}: {m:?} vs {t:?}"),
                    }
                }
            }
        }
    }

    #[test]
    fn wrong_sizes_are_rejected() {
        let k = k500();
        assert!(build_mapping(&Raster::filled(10, 10, 1u16), &k, &k, &RigidPose::identity()).is_err());
        let map = build_mapping(&Raster::filled(640, 480, 1u16), &k, &k, &RigidPose::identity()).unwrap();
        assert!(sample_secondary(&Raster::filled(160, 120, 0.0), &map).is_err());
    }

    #[test]
    fn harmonize_identity_is_exact() {
        let img = Raster::from_fn(64, 48, |x, y| ((x * 37 + y * 11) % 255) as f64);
        assert_eq!(harmonize_resolution(&img, 64, 48), img);
    }

    #[test]
    fn harmonize_preserves_constants() {
        let img = Raster::filled(160, 120, 77.0);
        let up = harmonize_resolution(&img, 640, 480);
        assert_eq!(up.dimensions(), (640, 480));
        assert!(up.data().iter().all(|v| (v - 77.0).abs() <= 1.0));
        let down = harmonize_resolution(&up, 160, 120);
        assert!(down.data().iter().all(|v| (v - 77.0).abs() < 1e-9));
    }

    #[test]
    fn downsampled_impulse_keeps_its_energy() {
        // Output sum times the area ratio against the input sum. A single
        // impulse aliases by up to ~1.4% depending on its phase against the
        // 4-pixel output grid; over the four phases the error cancels.
        let mut totals = Vec::new();
        for (cx, cy) in [(64, 48), (65, 49), (66, 50), (67, 51)] {
            let mut img = Raster::filled(128, 96, 0.0);
            img.set(cx, cy, 1000.0);
            let down = harmonize_resolution(&img, 32, 24);
            let total: f64 = down.data().iter().sum::<f64>() * 16.0;
            assert!((total / 1000.0 - 1.0).abs() < 0.015, "impulse at ({cx},{cy}): {total}");
            totals.push(total);
        }
        let mean = totals.iter().sum::<f64>() / totals.len() as f64;
        assert!((mean / 1000.0 - 1.0).abs() < 1e-3, "{totals:?}");
        // A spread-out source, such as a disk, is conserved within 1%.
        let img = Raster::from_fn(128, 96, |x, y| {
            if (x as f64 - 60.3).hypot(y as f64 - 50.7) < 6.0 { 100.0 } else { 0.0 }
        });
        let before: f64 = img.data().iter().sum();
        let after: f64 = harmonize_resolution(&img, 32, 24).data().iter().sum::<f64>() * 16.0;
        assert!((after / before - 1.0).abs() < 0.01, "{before} vs {after}");
    }

    #[test]
    fn upsampling_does_not_blur() {
        let img = Raster::from_fn(4, 4, |x, _| if x < 2 { 0.0 } else { 100.0 });
        let up = harmonize_resolution(&img, 8, 8);
        // Far from the edge the values are untouched.
        assert_eq!(up.get(0, 3), 0.0);
        assert_eq!(up.get(7, 3), 100.0);
    }

    proptest! {
        #[test]
        fn valid_entries_stay_in_bounds(seed in 0u64..1000, dx in -0.2..0.2f64, rot in -0.2..0.2f64) {
            let rig = RigConfig::default();
            let depth = Raster::from_fn(64, 48, |x, y| {
                let h = (x as u64 * 7919 + y as u64 * 104729 + seed * 31).wrapping_mul(2654435761) % 5000;
                if h < 500 { 0 } else { h as u16 }
            });
            let k_rgb = CameraIntrinsics::from_horizontal_fov(74.0, 64, 48).unwrap()
                .with_distortion(rig.rgb.intrinsics.distortion);
            let k_sec = CameraIntrinsics::from_horizontal_fov(57.0, 16, 12).unwrap()
                .with_distortion(rig.thermal.intrinsics.distortion);
            let rel = RigidPose::from_axis_angle(Vector3::new(0.0, rot, 0.0), Vector3::new(dx, 0.0, 0.0));
            let map = build_mapping(&depth, &k_rgb, &k_sec, &rel).unwrap();
            for e in map.entries().data().iter().flatten() {
                prop_assert!(k_sec.contains(e.target));
            }
            // Invalidating more depth never creates valid entries.
            let mut fewer = depth.clone();
            for v in fewer.data_mut().iter_mut().step_by(3) { *v = 0; }
            let map2 = build_mapping(&fewer, &k_rgb, &k_sec, &rel).unwrap();
            for (a, b) in map.entries().data().iter().zip(map2.entries().data()) {
                prop_assert!(!(a.is_none() && b.is_some()));
            }
        }
    }
}
