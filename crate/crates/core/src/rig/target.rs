//! Circle-grid calibration target: geometry and per-spectrum rendering.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{add_image_noise, RigError, Spectrum};
use crate::camera::{CameraIntrinsics, PixelCoord, RigidPose};
use crate::raster::Raster;

/// Supersampling factor per axis for pixels whose rays cannot be undistorted
/// at the corners.
const SUPERSAMPLE: usize = 8;

/// Edge pixels are split into quadrants up to this depth (1/8 pixel cells).
/// Leaf cells crossed by a single circle rim use the exact area cut off by
/// the locally linearized rim; other leaves take their center sample.
const MAX_SUBDIVISION: u32 = 3;

/// Plate, hole and surrounding intensities of one spectrum, normalized to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub plate: f64,
    pub hole: f64,
    /// Intensity outside the plate; defaults to the plate intensity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<f64>,
}

impl Contrast {
    pub const fn new(plate: f64, hole: f64) -> Self {
        Self {
            plate,
            hole,
            background: None,
        }
    }

    fn background(&self) -> f64 {
        self.background.unwrap_or(self.plate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralContrast {
    pub rgb: Contrast,
    pub thermal: Contrast,
    pub uv: Contrast,
}

impl SpectralContrast {
    pub fn get(&self, spectrum: Spectrum) -> &Contrast {
        match spectrum {
            Spectrum::Visible => &self.rgb,
            Spectrum::Thermal => &self.thermal,
            Spectrum::Ultraviolet => &self.uv,
        }
    }
}

/// Heated plate with a regular grid of holes opening into a dark cavity.
///
/// Target coordinates: the first circle center is the origin, `x` runs
/// along columns and `y` along rows, the plate is the `z = 0` plane.
/// Missing fields take their default values when deserialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetSpec {
    pub rows: usize,
    pub cols: usize,
    /// Center-to-center spacing, meters.
    pub pitch: f64,
    /// Hole radius, meters.
    pub radius: f64,
    /// Plate border beyond the outermost circle centers, meters.
    pub margin: f64,
    pub contrast: SpectralContrast,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self {
            rows: 5,
            cols: 7,
            pitch: 0.03,
            radius: 0.009,
            margin: 0.025,
            contrast: SpectralContrast {
                rgb: Contrast::new(0.92, 0.08),
                thermal: Contrast::new(0.85, 0.25),
                uv: Contrast::new(0.80, 0.10),
            },
        }
    }
}

impl TargetSpec {
    pub fn validate(&self) -> Result<(), RigError> {
        self.validate_geometry()?;
        for (name, c) in [
            ("rgb", self.contrast.rgb),
            ("thermal", self.contrast.thermal),
            ("uv", self.contrast.uv),
        ] {
            let in_range = |v: f64| (0.0..=1.0).contains(&v);
            if !(in_range(c.plate) && in_range(c.hole) && in_range(c.background())) {
                return Err(RigError::InvalidSpec(format!("{name} intensities must lie in [0, 1]")));
            }
            if c.plate <= c.hole {
                return Err(RigError::InvalidSpec(format!(
                    "{name}: plate ({}) must be brighter than holes ({})",
                    c.plate, c.hole
                )));
            }
        }
        Ok(())
    }

    fn validate_geometry(&self) -> Result<(), RigError> {
        if self.rows < 3 || self.cols < 3 {
            return Err(RigError::InvalidSpec(format!(
                "grid must be at least 3x3, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.pitch > 0.0 && self.radius > 0.0 && self.radius < 0.5 * self.pitch) {
            return Err(RigError::InvalidSpec(
                "need 0 < radius < pitch / 2".to_string(),
            ));
        }
        if !(self.margin > self.radius) {
            return Err(RigError::InvalidSpec("plate margin must exceed the radius".into()));
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.rows * self.cols
    }

    /// Circle centers on the plate, row-major.
    pub fn object_points(&self) -> Vec<[f64; 2]> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| [c as f64 * self.pitch, r as f64 * self.pitch]))
            .collect()
    }

    pub fn grid_center(&self) -> Vector3<f64> {
        Vector3::new(
            0.5 * (self.cols - 1) as f64 * self.pitch,
            0.5 * (self.rows - 1) as f64 * self.pitch,
            0.0,
        )
    }

    /// Plate rectangle as `(x_min, x_max, y_min, y_max)`.
    pub fn plate_bounds(&self) -> (f64, f64, f64, f64) {
        (
            -self.margin,
            (self.cols - 1) as f64 * self.pitch + self.margin,
            -self.margin,
            (self.rows - 1) as f64 * self.pitch + self.margin,
        )
    }

    pub fn plate_corners(&self) -> [[f64; 2]; 4] {
        let (x0, x1, y0, y1) = self.plate_bounds();
        [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
    }

    fn nearest_center(&self, x: f64, y: f64) -> (f64, f64) {
        let c = (x / self.pitch).round().clamp(0.0, (self.cols - 1) as f64);
        let r = (y / self.pitch).round().clamp(0.0, (self.rows - 1) as f64);
        (c * self.pitch, r * self.pitch)
    }

    /// Intensity at a plate-frame point.
    fn intensity_at(&self, x: f64, y: f64, contrast: &Contrast) -> f64 {
        let (x0, x1, y0, y1) = self.plate_bounds();
        if x < x0 || x > x1 || y < y0 || y > y1 {
            return contrast.background();
        }
        let (cx, cy) = self.nearest_center(x, y);
        if (x - cx).hypot(y - cy) < self.radius {
            contrast.hole
        } else {
            contrast.plate
        }
    }

    /// Signed distance to the rim of the nearest circle (negative inside),
    /// tagged with the circle's grid index, when no other boundary lies
    /// within `reach` of the point.
    fn isolated_rim_distance(&self, x: f64, y: f64, reach: f64) -> Option<((i64, i64), f64)> {
        let (x0, x1, y0, y1) = self.plate_bounds();
        let edge = (x - x0).min(x1 - x).min(y - y0).min(y1 - y);
        if edge <= reach || 0.5 * self.pitch - self.radius <= reach {
            return None;
        }
        let (cx, cy) = self.nearest_center(x, y);
        let index = ((cx / self.pitch).round() as i64, (cy / self.pitch).round() as i64);
        Some((index, (x - cx).hypot(y - cy) - self.radius))
    }

    /// Lower bound on the distance from a plate-frame point to any
    /// intensity discontinuity (circle rims and plate edges).
    fn boundary_distance(&self, x: f64, y: f64) -> f64 {
        let (x0, x1, y0, y1) = self.plate_bounds();
        let edge = (x - x0).abs().min((x - x1).abs()).min((y - y0).abs()).min((y - y1).abs());
        let (cx, cy) = self.nearest_center(x, y);
        let rim = ((x - cx).hypot(y - cy) - self.radius).abs();
        edge.min(rim)
    }
}

/// Undistorted normalized ray `(x, y, 1)` through a raw pixel.
fn pixel_ray(intr: &CameraIntrinsics, u: f64, v: f64) -> Option<(f64, f64)> {
    intr.undistort_normalized(PixelCoord::new(u, v)).ok()
}

/// Intersection of a normalized camera ray with the target plane, in target
/// coordinates. `None` if the ray misses the plane in front of the camera.
fn ray_plane_hit(
    camera_in_target: &Vector3<f64>,
    camera_to_target: &nalgebra::Matrix3<f64>,
    ray: (f64, f64),
) -> Option<(f64, f64)> {
    let dir = camera_to_target * Vector3::new(ray.0, ray.1, 1.0);
    if dir.z.abs() < 1e-15 {
        return None;
    }
    let s = -camera_in_target.z / dir.z;
    if s <= 0.0 {
        return None;
    }
    Some((camera_in_target.x + s * dir.x, camera_in_target.y + s * dir.y))
}

fn check_in_front(target: &TargetSpec, target_to_camera: &RigidPose) -> Result<(), RigError> {
    let any_in_front = target.plate_corners().iter().any(|c| {
        target_to_camera
            .transform_vector(&Vector3::new(c[0], c[1], 0.0))
            .z
            > 0.0
    });
    if any_in_front {
        Ok(())
    } else {
        Err(RigError::TargetBehindCamera)
    }
}

/// Renders one spectrum's view of the calibration target as normalized
/// intensities in `[0, 1]`.
///
/// Pixels well inside a uniform region take that region's value directly;
/// pixels crossed by a circle rim or plate edge are split into quadrants
/// down to 1/8 pixel, where the covered area of a single rim is computed
/// from a straight-line approximation of the boundary.
/// Gaussian noise with standard deviation `noise_sigma` (normalized units)
/// is added afterwards from `seed`.
pub fn render_target_view(
    intr: &CameraIntrinsics,
    target_to_camera: &RigidPose,
    target: &TargetSpec,
    spectrum: Spectrum,
    noise_sigma: f64,
    seed: u64,
) -> Result<Raster<f64>, RigError> {
    target.validate_geometry()?;
    check_in_front(target, target_to_camera)?;
    let contrast = *target.contrast.get(spectrum);
    let inv = target_to_camera.inverse();
    let origin = *inv.translation();
    let rot = *inv.rotation();
    let (w, h) = intr.size();

    // Undistorted rays through pixel corners, (w+1)×(h+1). Inside a pixel
    // the rays are interpolated bilinearly; the residual distortion
    // curvature over one pixel is far below the sampling resolution.
    let rays: Vec<Option<(f64, f64)>> = (0..=h)
        .into_par_iter()
        .flat_map_iter(|j| (0..=w).map(move |i| pixel_ray(intr, i as f64 - 0.5, j as f64 - 0.5)))
        .collect();
    let ray = |i: usize, j: usize| rays[j * (w + 1) + i];
    let hit = |r: (f64, f64)| ray_plane_hit(&origin, &rot, r);

    let offsets: Vec<f64> = (0..SUPERSAMPLE)
        .map(|k| (k as f64 + 0.5) / SUPERSAMPLE as f64)
        .collect();

    let data: Vec<f64> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let offsets = &offsets;
            (0..w).map(move |x| {
                let quad = [ray(x, y), ray(x + 1, y), ray(x, y + 1), ray(x + 1, y + 1)];
                let [Some(r00), Some(r10), Some(r01), Some(r11)] = quad else {
                    // Rays through this pixel cannot all be undistorted; sample
                    // it directly.
                    let mut sum = 0.0;
                    for dy in offsets {
                        for dx in offsets {
                            let r = pixel_ray(intr, x as f64 - 0.5 + dx, y as f64 - 0.5 + dy);
                            sum += match r.and_then(hit) {
                                Some((px, py)) => target.intensity_at(px, py, &contrast),
                                None => contrast.background(),
                            };
                        }
                    }
                    return sum / (SUPERSAMPLE * SUPERSAMPLE) as f64;
                };
                let quad = Quad { r00, r10, r01, r11 };
                let corners = [hit(r00), hit(r10), hit(r01), hit(r11)];
                cell_intensity(target, &contrast, &quad, &hit, corners, (0.0, 0.0), 1.0, MAX_SUBDIVISION)
            })
        })
        .collect();

    let mut img = Raster::from_vec(w, h, data).expect("raster size");
    add_image_noise(&mut img, noise_sigma, seed);
    Ok(img)
}

/// Undistorted rays through the four corners of a pixel.
struct Quad {
    r00: (f64, f64),
    r10: (f64, f64),
    r01: (f64, f64),
    r11: (f64, f64),
}

impl Quad {
    /// Ray at fractional pixel position `(fx, fy)`, interpolated bilinearly.
    fn at(&self, fx: f64, fy: f64) -> (f64, f64) {
        let lerp = |a: (f64, f64), b: (f64, f64), t: f64| (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        lerp(lerp(self.r00, self.r01, fy), lerp(self.r10, self.r11, fy), fx)
    }
}

type Hit = Option<(f64, f64)>;

/// Mean intensity over the square cell at `origin` with side `size`
/// (fractions of a pixel) whose corners hit the plate at `corners`
/// (`[top-left, top-right, bottom-left, bottom-right]`). Cells that may
/// contain a boundary are split into quadrants; leaves take the intensity at
/// their center.
#[allow(clippy::too_many_arguments)]
fn cell_intensity(
    target: &TargetSpec,
    contrast: &Contrast,
    quad: &Quad,
    hit: &impl Fn((f64, f64)) -> Hit,
    corners: [Hit; 4],
    origin: (f64, f64),
    size: f64,
    depth: u32,
) -> f64 {
    if let [Some(a), Some(b), Some(c), Some(d)] = corners {
        let diameter = dist(a, d).max(dist(b, c));
        let clear = [a, b, c, d]
            .iter()
            .all(|p| target.boundary_distance(p.0, p.1) > diameter);
        if clear {
            return target.intensity_at(a.0, a.1, contrast);
        }
    }
    let (x0, y0) = origin;
    let half = 0.5 * size;
    let center = hit(quad.at(x0 + half, y0 + half));
    if depth == 0 {
        if let [Some(a), Some(b), Some(c), Some(d)] = corners {
            let reach = dist(a, d).max(dist(b, c));
            let rims = [a, b, c, d].map(|p| target.isolated_rim_distance(p.0, p.1, reach));
            if let [Some((ca, fa)), Some((cb, fb)), Some((cc, fc)), Some((cd, fd))] = rims {
                if ca == cb && ca == cc && ca == cd {
                    let hole = linear_cut_area([fa, fb, fc, fd]);
                    return hole * contrast.hole + (1.0 - hole) * contrast.plate;
                }
            }
        }
        return match center {
            Some((px, py)) => target.intensity_at(px, py, contrast),
            None => contrast.background(),
        };
    }
    let [tl, tr, bl, br] = corners;
    let top = hit(quad.at(x0 + half, y0));
    let bottom = hit(quad.at(x0 + half, y0 + size));
    let left = hit(quad.at(x0, y0 + half));
    let right = hit(quad.at(x0 + size, y0 + half));
    let mut sum = 0.0;
    for (c, o) in [
        ([tl, top, left, center], (x0, y0)),
        ([top, tr, center, right], (x0 + half, y0)),
        ([left, center, bl, bottom], (x0, y0 + half)),
        ([center, right, bottom, br], (x0 + half, y0 + half)),
    ] {
        sum += cell_intensity(target, contrast, quad, hit, c, o, half, depth - 1);
    }
    0.25 * sum
}

/// Area of the unit square where the least-squares plane through the corner
/// values `[f(0,0), f(1,0), f(0,1), f(1,1)]` is negative.
fn linear_cut_area(f: [f64; 4]) -> f64 {
    let gx = 0.5 * ((f[1] - f[0]) + (f[3] - f[2]));
    let gy = 0.5 * ((f[2] - f[0]) + (f[3] - f[1]));
    let f0 = 0.25 * f.iter().sum::<f64>() - 0.5 * (gx + gy);
    let value = |p: (f64, f64)| f0 + gx * p.0 + gy * p.1;
    // Clip the square against the half-plane `value < 0`.
    let square = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
    let mut poly = Vec::with_capacity(5);
    for k in 0..4 {
        let (p, q) = (square[k], square[(k + 1) % 4]);
        let (vp, vq) = (value(p), value(q));
        if vp < 0.0 {
            poly.push(p);
        }
        if (vp < 0.0) != (vq < 0.0) {
            let t = vp / (vp - vq);
            poly.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
        }
    }
    let n = poly.len();
    let twice: f64 = (0..n)
        .map(|k| {
            let (a, b) = (poly[k], poly[(k + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    (0.5 * twice).abs()
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Z-depth in millimeters of the plate as seen from a camera (0 off-plate).
pub fn render_target_depth(
    intr: &CameraIntrinsics,
    target_to_camera: &RigidPose,
    target: &TargetSpec,
) -> Result<Raster<u16>, RigError> {
    target.validate_geometry()?;
    check_in_front(target, target_to_camera)?;
    let inv = target_to_camera.inverse();
    let (origin, rot) = (*inv.translation(), *inv.rotation());
    let (x0, x1, y0, y1) = target.plate_bounds();
    let (w, h) = intr.size();
    let data = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            (0..w).map(move |x| {
                let Ok((nx, ny)) = intr.undistort_normalized(PixelCoord::new(x as f64, y as f64)) else {
                    return 0;
                };
                let dir = rot * Vector3::new(nx, ny, 1.0);
                let s = -origin.z / dir.z;
                let (px, py) = (origin.x + s * dir.x, origin.y + s * dir.y);
                if !(s > 0.0) || px < x0 || px > x1 || py < y0 || py > y1 {
                    return 0;
                }
                // Ray direction has unit z in the camera frame, so s is the z-depth.
                let mm = (s * 1000.0).round();
                if mm >= 1.0 && mm <= f64::from(u16::MAX) {
                    mm as u16
                } else {
                    0
                }
            })
        })
        .collect();
    Ok(Raster::from_vec(w, h, data).expect("raster size"))
}
