//! Planar test scenes with spectrum-specific hidden patches.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{add_image_noise, quantize_u16, quantize_u8, CameraId, MultispectralFrame, RigConfig, RigError};
use crate::camera::{CameraIntrinsics, PixelCoord, RigidPose};
use crate::raster::{Raster, Rgb8};

/// Visible-light reflectance of a plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Albedo {
    Uniform { rgb: [f64; 3] },
    Checker { a: [f64; 3], b: [f64; 3], cell: f64 },
}

impl Albedo {
    fn at(&self, x: f64, y: f64) -> [f64; 3] {
        match *self {
            Albedo::Uniform { rgb } => rgb,
            Albedo::Checker { a, b, cell } => {
                let i = (x / cell).floor() as i64 + (y / cell).floor() as i64;
                if i.rem_euclid(2) == 0 {
                    a
                } else {
                    b
                }
            }
        }
    }
}

/// Rectangular plane centered on its local origin, normal along local `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePlane {
    /// Maps plane coordinates into the rig frame.
    pub pose: RigidPose,
    /// Half width and half height, meters.
    pub half_extent: [f64; 2],
    pub albedo: Albedo,
    /// Base UV reflectance, normalized.
    pub uv: f64,
    /// Base thermal level, normalized.
    pub thermal: f64,
}

/// Axis-aligned rectangle on a plane that changes one spectrum only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    /// Index into [`SceneSpec::planes`].
    pub plane: usize,
    pub center: [f64; 2],
    pub half_size: [f64; 2],
    /// Normalized intensity inside the patch.
    pub intensity: f64,
}

impl Patch {
    fn contains(&self, x: f64, y: f64) -> bool {
        (x - self.center[0]).abs() <= self.half_size[0] && (y - self.center[1]).abs() <= self.half_size[1]
    }

    /// Patch corners in plane coordinates, counter-clockwise in the plane.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let [cx, cy] = self.center;
        let [hx, hy] = self.half_size;
        [[cx - hx, cy - hy], [cx + hx, cy - hy], [cx + hx, cy + hy], [cx - hx, cy + hy]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpectralNoise {
    pub rgb: f64,
    pub thermal: f64,
    pub uv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub planes: Vec<ScenePlane>,
    /// Bright in UV only (a titanium-dioxide painted region).
    #[serde(default)]
    pub hidden_uv_patches: Vec<Patch>,
    /// Hot in thermal only (a covered heater).
    #[serde(default)]
    pub hidden_thermal_patches: Vec<Patch>,
    #[serde(default)]
    pub noise: SpectralNoise,
    /// Supersampling per axis for the intensity rasters.
    #[serde(default = "default_samples")]
    pub samples_per_axis: usize,
}

fn default_samples() -> usize {
    4
}

impl Default for SceneSpec {
    /// A fronto-parallel checkered test board 0.8 m in front of the rig that
    /// fills the RGB view, with one UV-only and one thermal-only patch inside
    /// the overlap of all three cameras.
    fn default() -> Self {
        SceneSpec {
            planes: vec![ScenePlane {
                pose: RigidPose::from_translation(Vector3::new(0.0, 0.0, 0.8)),
                half_extent: [1.5, 1.2],
                albedo: Albedo::Checker {
                    a: [0.75, 0.62, 0.45],
                    b: [0.35, 0.42, 0.55],
                    cell: 0.05,
                },
                uv: 0.25,
                thermal: 0.35,
            }],
            hidden_uv_patches: vec![Patch {
                plane: 0,
                center: [-0.14, -0.05],
                half_size: [0.09, 0.08],
                intensity: 0.9,
            }],
            hidden_thermal_patches: vec![Patch {
                plane: 0,
                center: [0.13, 0.06],
                half_size: [0.09, 0.07],
                intensity: 0.85,
            }],
            noise: SpectralNoise::default(),
            samples_per_axis: 4,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), RigError> {
        if self.planes.is_empty() {
            return Err(RigError::EmptyScene);
        }
        if self.samples_per_axis == 0 {
            return Err(RigError::InvalidSpec("samples_per_axis must be >= 1".into()));
        }
        for plane in &self.planes {
            if !(plane.half_extent[0] > 0.0 && plane.half_extent[1] > 0.0) {
                return Err(RigError::InvalidSpec("plane extents must be positive".into()));
            }
        }
        for patch in self.hidden_uv_patches.iter().chain(&self.hidden_thermal_patches) {
            let plane = self.planes.get(patch.plane).ok_or_else(|| {
                RigError::InvalidSpec(format!("patch refers to missing plane {}", patch.plane))
            })?;
            let [hx, hy] = plane.half_extent;
            if patch.corners().iter().any(|c| c[0].abs() > hx || c[1].abs() > hy) {
                return Err(RigError::InvalidSpec(format!(
                    "patch at {:?} extends past plane {}",
                    patch.center, patch.plane
                )));
            }
        }
        Ok(())
    }

    /// Nearest plane hit along the ray `origin + s·dir` (rig frame).
    /// Returns `(s, plane index, plane-frame x, y)`.
    fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize, f64, f64)> {
        let mut best: Option<(f64, usize, f64, f64)> = None;
        for (idx, plane) in self.planes.iter().enumerate() {
            let inv = plane.pose.inverse();
            let o = inv.transform_vector(origin);
            let d = inv.rotation() * dir;
            if d.z.abs() < 1e-15 {
                continue;
            }
            let s = -o.z / d.z;
            if s <= 0.0 || best.is_some_and(|b| b.0 <= s) {
                continue;
            }
            let (x, y) = (o.x + s * d.x, o.y + s * d.y);
            if x.abs() <= plane.half_extent[0] && y.abs() <= plane.half_extent[1] {
                best = Some((s, idx, x, y));
            }
        }
        best
    }

    fn uv_at(&self, plane: usize, x: f64, y: f64) -> f64 {
        self.hidden_uv_patches
            .iter()
            .rev()
            .find(|p| p.plane == plane && p.contains(x, y))
            .map(|p| p.intensity)
            .unwrap_or(self.planes[plane].uv)
    }

    fn thermal_at(&self, plane: usize, x: f64, y: f64) -> f64 {
        self.hidden_thermal_patches
            .iter()
            .rev()
            .find(|p| p.plane == plane && p.contains(x, y))
            .map(|p| p.intensity)
            .unwrap_or(self.planes[plane].thermal)
    }
}

/// Camera center and rig-frame direction of the ray through a raw pixel.
/// The direction is scaled so its camera-frame `z` component is 1.
fn pixel_ray(intr: &CameraIntrinsics, pose: &RigidPose, u: f64, v: f64) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let (x, y) = intr.undistort_normalized(PixelCoord::new(u, v)).ok()?;
    Some((pose.center(), pose.rotation().transpose() * Vector3::new(x, y, 1.0)))
}

/// Supersampled render of one spectrum as normalized intensity.
fn render_channel<const N: usize>(
    scene: &SceneSpec,
    intr: &CameraIntrinsics,
    pose: &RigidPose,
    shade: impl Fn(usize, f64, f64) -> [f64; N] + Sync,
) -> Vec<[f64; N]> {
    let (w, h) = intr.size();
    let n = scene.samples_per_axis;
    let offsets: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) / n as f64 - 0.5).collect();
    (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let (offsets, shade) = (&offsets, &shade);
            (0..w).map(move |x| {
                let mut acc = [0.0; N];
                for dy in offsets {
                    for dx in offsets {
                        let hit = pixel_ray(intr, pose, x as f64 + dx, y as f64 + dy)
                            .and_then(|(o, d)| scene.cast(&o, &d));
                        if let Some((_, idx, px, py)) = hit {
                            let s = shade(idx, px, py);
                            for (a, v) in acc.iter_mut().zip(s) {
                                *a += v;
                            }
                        }
                    }
                }
                acc.map(|a| a / (n * n) as f64)
            })
        })
        .collect()
}

/// Ray-casts the scene into every camera of the rig.
///
/// Depth is sampled at RGB pixel centers and stored as z-depth in
/// millimeters; misses and out-of-range depths are 0. Intensity rasters are
/// supersampled; misses are black. `seed` drives the per-spectrum noise.
pub fn render_scene(scene: &SceneSpec, rig: &RigConfig, seed: u64) -> Result<MultispectralFrame, RigError> {
    scene.validate()?;
    let rgb_cam = rig.camera(CameraId::Rgb);
    let (w, h) = rgb_cam.intrinsics.size();

    let rgb = render_channel::<3>(scene, &rgb_cam.intrinsics, &rgb_cam.pose, |i, x, y| {
        scene.planes[i].albedo.at(x, y)
    });
    let mut channels: Vec<Raster<f64>> = (0..3)
        .map(|c| Raster::from_vec(w, h, rgb.iter().map(|p| p[c]).collect()).expect("size"))
        .collect();
    for (c, ch) in channels.iter_mut().enumerate() {
        add_image_noise(ch, scene.noise.rgb, seed.wrapping_add(c as u64));
    }
    let [r, g, b] = [0, 1, 2].map(|c| quantize_u8(&channels[c]));
    let rgb: Raster<Rgb8> = Raster::from_fn(w, h, |x, y| [r.get(x, y), g.get(x, y), b.get(x, y)]);

    let gray = |id: CameraId, f: &(dyn Fn(usize, f64, f64) -> f64 + Sync), sigma: f64, salt: u64| {
        let cam = rig.camera(id);
        let (cw, ch) = cam.intrinsics.size();
        let data = render_channel::<1>(scene, &cam.intrinsics, &cam.pose, |i, x, y| [f(i, x, y)]);
        let mut img = Raster::from_vec(cw, ch, data.into_iter().map(|[v]| v).collect()).expect("size");
        add_image_noise(&mut img, sigma, seed.wrapping_add(salt));
        img
    };
    let uv = quantize_u8(&gray(CameraId::Uv, &|i, x, y| scene.uv_at(i, x, y), scene.noise.uv, 10));
    let thermal = quantize_u16(&gray(
        CameraId::Thermal,
        &|i, x, y| scene.thermal_at(i, x, y),
        scene.noise.thermal,
        20,
    ));

    let depth_data = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            (0..w).map(move |x| {
                pixel_ray(&rgb_cam.intrinsics, &rgb_cam.pose, x as f64, y as f64)
                    .and_then(|(o, d)| scene.cast(&o, &d))
                    .map(|(s, ..)| (s * 1000.0).round())
                    .filter(|mm| *mm >= 1.0 && *mm <= f64::from(u16::MAX))
                    .map_or(0, |mm| mm as u16)
            })
        })
        .collect();

    Ok(MultispectralFrame {
        rgb,
        thermal,
        uv,
        depth: Raster::from_vec(w, h, depth_data).expect("size"),
        timestamp: 0,
    })
}

/// Ground-truth footprint of a patch in camera `id`, computed in the
/// forward direction: the patch outline is densely sampled on its plane,
/// projected through the camera (with distortion), and the resulting
/// polygon is filled at pixel centers. Occlusion by other planes is not
/// considered.
pub fn patch_footprint(
    scene: &SceneSpec,
    patch: &Patch,
    rig: &RigConfig,
    id: CameraId,
) -> Result<Raster<bool>, RigError> {
    const SAMPLES_PER_EDGE: usize = 256;
    let plane = scene
        .planes
        .get(patch.plane)
        .ok_or_else(|| RigError::InvalidSpec(format!("missing plane {}", patch.plane)))?;
    let cam = rig.camera(id);
    let to_cam = cam.pose.compose(&plane.pose);
    let corners = patch.corners();
    let mut polygon = Vec::with_capacity(4 * SAMPLES_PER_EDGE);
    for k in 0..4 {
        let (a, b) = (corners[k], corners[(k + 1) % 4]);
        for s in 0..SAMPLES_PER_EDGE {
            let t = s as f64 / SAMPLES_PER_EDGE as f64;
            let p = Vector3::new(a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), 0.0);
            polygon.push(cam.intrinsics.project(to_cam.transform_vector(&p).into())?);
        }
    }
    let (w, h) = cam.intrinsics.size();
    Ok(Raster::from_fn(w, h, |x, y| point_in_polygon(&polygon, x as f64, y as f64)))
}

/// Even-odd rule.
fn point_in_polygon(poly: &[PixelCoord], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a.v > y) != (b.v > y) && x < (b.u - a.u) * (y - a.v) / (b.v - a.v) + a.u {
            inside = !inside;
        }
        j = i;
    }
    inside
}
