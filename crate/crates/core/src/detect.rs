//! Circle-center detection on single-spectrum target images and ordering of
//! the detections into the target's row-major lattice.

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::PixelCoord;
use crate::raster::Raster;
use crate::rig::{CameraId, TargetSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectError {
    #[error("image is empty")]
    EmptyImage,
    #[error("expected {expected} blobs, found {found}")]
    WrongBlobCount { expected: usize, found: usize },
    #[error("need exactly {expected} points for the grid, got {found}")]
    PointCountMismatch { expected: usize, found: usize },
    #[error("cannot split points into a regular grid: {0}")]
    AmbiguousGrid(String),
}

/// Ordered circle centers of one target view seen by one camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridObservation {
    pub view: usize,
    pub camera: CameraId,
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `rows * cols` entries.
    pub image_points: Vec<PixelCoord>,
    /// Plate coordinates (meters, `z = 0`) matching `image_points`.
    pub object_points: Vec<[f64; 2]>,
}

impl GridObservation {
    /// Pairs ordered image points with the target lattice.
    pub fn new(
        view: usize,
        camera: CameraId,
        image_points: Vec<PixelCoord>,
        target: &TargetSpec,
    ) -> Result<Self, DetectError> {
        if image_points.len() != target.count() {
            return Err(DetectError::PointCountMismatch {
                expected: target.count(),
                found: image_points.len(),
            });
        }
        Ok(Self {
            view,
            camera,
            rows: target.rows,
            cols: target.cols,
            image_points,
            object_points: target.object_points(),
        })
    }
}

/// Finds dark blobs and returns their sub-pixel centers.
///
/// Pixels darker than `mean - 0.5·stddev` are grouped into 8-connected
/// components. Components whose area is outside `[0.2, 5]` times the median
/// component area are dropped. Each center is the darkness-weighted
/// centroid over the component and a one-pixel ring around it, with
/// darkness measured against the local plate level so that anti-aliased
/// rim pixels contribute in proportion to their coverage.
pub fn detect_blobs(image: &Raster<f64>, expected_count: usize) -> Result<Vec<PixelCoord>, DetectError> {
    if image.is_empty() {
        return Err(DetectError::EmptyImage);
    }
    let (w, h) = image.dimensions();
    let n = image.len() as f64;
    let mean = image.data().iter().sum::<f64>() / n;
    let var = image.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var.sqrt() <= 1e-12 * mean.abs().max(1.0) {
        return fail(expected_count, 0);
    }
    let threshold = mean - 0.5 * var.sqrt();
    let dark: Vec<bool> = image.data().iter().map(|v| *v < threshold).collect();

    let (labels, components) = label_components(&dark, w, h);
    if components.is_empty() {
        return fail(expected_count, 0);
    }
    let mut areas: Vec<usize> = components.iter().map(Vec::len).collect();
    areas.sort_unstable();
    let median = areas[areas.len() / 2] as f64;

    let centers: Vec<PixelCoord> = components
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            let a = c.len() as f64;
            a >= 0.2 * median && a <= 5.0 * median
        })
        .map(|(id, pixels)| weighted_center(image, &labels, id, pixels, threshold))
        .collect();

    if centers.len() != expected_count {
        return fail(expected_count, centers.len());
    }
    Ok(centers)
}

fn fail<T>(expected: usize, found: usize) -> Result<T, DetectError> {
    Err(DetectError::WrongBlobCount { expected, found })
}

const NEIGHBORS: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// 8-connected labeling. Returns per-pixel labels (`usize::MAX` for
/// background) and the pixel indices of each component.
fn label_components(mask: &[bool], w: usize, h: usize) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut labels = vec![usize::MAX; mask.len()];
    let mut components = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut pixels = Vec::new();
        labels[start] = id;
        stack.push(start);
        while let Some(p) = stack.pop() {
            pixels.push(p);
            let (x, y) = ((p % w) as isize, (p / w) as isize);
            for (dx, dy) in NEIGHBORS {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if mask[q] && labels[q] == usize::MAX {
                    labels[q] = id;
                    stack.push(q);
                }
            }
        }
        components.push(pixels);
    }
    (labels, components)
}

fn weighted_center(
    image: &Raster<f64>,
    labels: &[usize],
    id: usize,
    pixels: &[usize],
    threshold: f64,
) -> PixelCoord {
    let w = image.width();
    let h = image.height();
    let data = image.data();

    // Component plus its one-pixel ring; outer ring (distance 2) gives the
    // local plate level.
    let mut region: Vec<usize> = pixels.to_vec();
    let mut in_region = std::collections::HashSet::with_capacity(pixels.len() * 2);
    in_region.extend(pixels.iter().copied());
    let grow = |src: &[usize], seen: &mut std::collections::HashSet<usize>| {
        let mut ring = Vec::new();
        for &p in src {
            let (x, y) = ((p % w) as isize, (p / w) as isize);
            for (dx, dy) in NEIGHBORS {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if (labels[q] == usize::MAX || labels[q] == id) && seen.insert(q) {
                    ring.push(q);
                }
            }
        }
        ring
    };
    let ring = grow(pixels, &mut in_region);
    region.extend_from_slice(&ring);
    let outer = grow(&ring, &mut in_region);

    let mut plate_samples: Vec<f64> = outer.iter().map(|&q| data[q]).filter(|v| *v >= threshold).collect();
    let plate = if plate_samples.is_empty() {
        threshold
    } else {
        plate_samples.sort_by(f64::total_cmp);
        plate_samples[plate_samples.len() / 2]
    };
    let hole = pixels.iter().map(|&p| data[p]).fold(f64::INFINITY, f64::min);
    let contrast = (plate - hole).max(f64::EPSILON);

    let (mut sw, mut su, mut sv) = (0.0, 0.0, 0.0);
    for &p in &region {
        let weight = ((plate - data[p]) / contrast).clamp(0.0, 1.0);
        sw += weight;
        su += weight * (p % w) as f64;
        sv += weight * (p / w) as f64;
    }
    PixelCoord::new(su / sw, sv / sw)
}

/// Orders `rows * cols` unordered centers into row-major lattice order.
///
/// Candidate lattice directions come from the principal axes of the point
/// covariance and from nearest-neighbour offsets. For each direction the
/// points are projected on its normal and split at the largest gaps into
/// bands of equal size; the direction whose bands are most clearly
/// separated wins. The labeling is made right-handed (columns run along +u
/// and rows along +v for an upright target) and, among the rotations the
/// grid shape allows, the one whose first point has the smallest `u + v`
/// is chosen.
pub fn order_grid(centroids: &[PixelCoord], rows: usize, cols: usize) -> Result<Vec<PixelCoord>, DetectError> {
    let count = rows * cols;
    if centroids.len() != count {
        return Err(DetectError::PointCountMismatch {
            expected: count,
            found: centroids.len(),
        });
    }
    if rows < 2 || cols < 2 {
        return Err(DetectError::AmbiguousGrid(format!("grid {rows}x{cols} is not two-dimensional")));
    }
    let pts: Vec<Vector2<f64>> = centroids.iter().map(|p| p.to_vector()).collect();

    let mut best: Option<(f64, Vec<Vec<usize>>, bool)> = None;
    for dir in candidate_directions(&pts) {
        for bands_are_rows in [true, false] {
            if !bands_are_rows && rows == cols {
                continue;
            }
            let (n_bands, per_band) = if bands_are_rows { (rows, cols) } else { (cols, rows) };
            if let Some((score, bands)) = split_bands(&pts, &dir, n_bands, per_band) {
                if best.as_ref().is_none_or(|b| score > b.0) {
                    best = Some((score, bands, bands_are_rows));
                }
            }
        }
    }
    let Some((_, bands, bands_are_rows)) = best else {
        return Err(DetectError::AmbiguousGrid(
            "no direction splits the points into equal bands".into(),
        ));
    };

    // grid[r][c] = point index
    let mut grid = vec![vec![0usize; cols]; rows];
    for (b, band) in bands.iter().enumerate() {
        for (k, &idx) in band.iter().enumerate() {
            if bands_are_rows {
                grid[b][k] = idx;
            } else {
                grid[k][b] = idx;
            }
        }
    }

    let axis = |g: &Vec<Vec<usize>>| {
        let mut col_dir = Vector2::zeros();
        let mut row_dir = Vector2::zeros();
        for r in 0..rows {
            col_dir += pts[g[r][cols - 1]] - pts[g[r][0]];
        }
        for c in 0..cols {
            row_dir += pts[g[rows - 1][c]] - pts[g[0][c]];
        }
        col_dir.x * row_dir.y - col_dir.y * row_dir.x
    };
    if axis(&grid) < 0.0 {
        for row in grid.iter_mut() {
            row.reverse();
        }
    }

    let mut labelings = vec![grid.clone(), rotate_180(&grid)];
    if rows == cols {
        let quarter = rotate_90(&grid);
        labelings.push(rotate_180(&quarter));
        labelings.push(quarter);
    }
    let first_sum = |g: &Vec<Vec<usize>>| {
        let p = pts[g[0][0]];
        p.x + p.y
    };
    let chosen = labelings
        .into_iter()
        .min_by(|a, b| first_sum(a).total_cmp(&first_sum(b)))
        .expect("non-empty");
    Ok(chosen.iter().flatten().map(|&i| centroids[i]).collect())
}

fn rotate_180(g: &[Vec<usize>]) -> Vec<Vec<usize>> {
    g.iter().rev().map(|row| row.iter().rev().copied().collect()).collect()
}

/// Square grids only: `g'[r][c] = g[n-1-c][r]`.
fn rotate_90(g: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = g.len();
    (0..n).map(|r| (0..n).map(|c| g[n - 1 - c][r]).collect()).collect()
}

/// Unit directions (modulo sign) along which lattice lines may run.
fn candidate_directions(pts: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let n = pts.len() as f64;
    let mean = pts.iter().sum::<Vector2<f64>>() / n;
    let cov = pts
        .iter()
        .map(|p| (p - mean) * (p - mean).transpose())
        .sum::<Matrix2<f64>>()
        / n;
    let eig = cov.symmetric_eigen();
    let mut dirs: Vec<Vector2<f64>> = vec![eig.eigenvectors.column(0).into(), eig.eigenvectors.column(1).into()];
    for (i, p) in pts.iter().enumerate() {
        let nearest = pts
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, q)| q - p)
            .min_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()));
        if let Some(d) = nearest {
            if d.norm() > 0.0 {
                dirs.push(d.normalize());
            }
        }
    }
    let mut unique: Vec<Vector2<f64>> = Vec::new();
    for d in dirs {
        // Same line direction if |cos| is within ~0.5° of 1.
        if !unique.iter().any(|u| u.dot(&d).abs() > 0.99996) {
            unique.push(d);
        }
    }
    unique
}

/// Splits points into `n_bands` bands of `per_band` points stacked along
/// the normal of `dir`. Returns a separation score and the bands, ordered
/// along the normal and sorted along `dir` inside each band.
fn split_bands(
    pts: &[Vector2<f64>],
    dir: &Vector2<f64>,
    n_bands: usize,
    per_band: usize,
) -> Option<(f64, Vec<Vec<usize>>)> {
    let normal = Vector2::new(-dir.y, dir.x);
    let mut order: Vec<usize> = (0..pts.len()).collect();
    let across = |i: usize| pts[i].dot(&normal);
    order.sort_by(|&a, &b| across(a).total_cmp(&across(b)));

    let mut gaps: Vec<(f64, usize)> = order
        .windows(2)
        .enumerate()
        .map(|(k, w)| (across(w[1]) - across(w[0]), k + 1))
        .collect();
    gaps.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut cuts: Vec<usize> = gaps.iter().take(n_bands - 1).map(|g| g.1).collect();
    cuts.sort_unstable();
    let min_gap = gaps.get(n_bands.saturating_sub(2)).map_or(f64::INFINITY, |g| g.0);

    let mut bands = Vec::with_capacity(n_bands);
    let mut start = 0;
    for end in cuts.into_iter().chain(std::iter::once(order.len())) {
        if end - start != per_band {
            return None;
        }
        bands.push(order[start..end].to_vec());
        start = end;
    }
    let spread = bands
        .iter()
        .map(|b| {
            let vals = b.iter().map(|&i| across(i));
            let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            hi - lo
        })
        .fold(0.0, f64::max);
    for band in bands.iter_mut() {
        band.sort_by(|&a, &b| pts[a].dot(dir).total_cmp(&pts[b].dot(dir)));
    }
    Some((min_gap / (spread + 1e-12), bands))
}

/// Detects, orders and labels the target circles in one image.
pub fn observe(
    image: &Raster<f64>,
    target: &TargetSpec,
    view: usize,
    camera: CameraId,
) -> Result<GridObservation, DetectError> {
    let blobs = detect_blobs(image, target.count())?;
    let ordered = order_grid(&blobs, target.rows, target.cols)?;
    GridObservation::new(view, camera, ordered, target)
}

/// A target image in which detection failed; the view is skipped for that
/// camera.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFailure {
    pub view: usize,
    pub camera: CameraId,
    pub error: DetectError,
}

/// Runs [`observe`] on every `(view, camera, image)` triple in parallel,
/// keeping the input order.
pub fn observe_all(
    images: &[(usize, CameraId, &Raster<f64>)],
    target: &TargetSpec,
) -> (Vec<GridObservation>, Vec<DetectionFailure>) {
    let results: Vec<_> = images
        .par_iter()
        .map(|&(view, camera, image)| {
            observe(image, target, view, camera).map_err(|error| DetectionFailure { view, camera, error })
        })
        .collect();
    let mut observations = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(o) => observations.push(o),
            Err(f) => failures.push(f),
        }
    }
    (observations, failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraIntrinsics, RigidPose};
    use crate::rig::{default_views, project_target_centers, render_target_view, RigConfig, Spectrum};
    use proptest::prelude::*;

    fn lattice(rows: usize, cols: usize, pitch: f64) -> Vec<PixelCoord> {
        (0..rows)
            .flat_map(|r| (0..cols).map(move |c| PixelCoord::new(50.0 + c as f64 * pitch, 40.0 + r as f64 * pitch)))
            .collect()
    }

    fn rotate(points: &[PixelCoord], deg: f64, center: PixelCoord) -> Vec<PixelCoord> {
        let (s, c) = deg.to_radians().sin_cos();
        points
            .iter()
            .map(|p| {
                let (du, dv) = (p.u - center.u, p.v - center.v);
                PixelCoord::new(center.u + c * du - s * dv, center.v + s * du + c * dv)
            })
            .collect()
    }

    fn shuffled(points: &[PixelCoord]) -> Vec<PixelCoord> {
        // Fixed permutation: stride through the list.
        let n = points.len();
        let stride = (1..n).rev().find(|s| gcd(*s, n) == 1).unwrap_or(1);
        (0..n).map(|i| points[(i * stride + 3) % n]).collect()
    }

    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }

    #[test]
    fn axis_aligned_lattice_is_row_major_from_top_left() {
        let pts = lattice(3, 3, 10.0);
        assert_eq!(order_grid(&shuffled(&pts), 3, 3).unwrap(), pts);
        let pts = lattice(5, 7, 12.0);
        assert_eq!(order_grid(&shuffled(&pts), 5, 7).unwrap(), pts);
    }

    #[test]
    fn rotated_lattice_keeps_logical_order() {
        for (rows, cols) in [(3, 3), (5, 7), (4, 6)] {
            let pts = lattice(rows, cols, 10.0);
            for deg in [-40.0, -30.0, -10.0, 10.0, 30.0, 40.0] {
                let rotated = rotate(&pts, deg, PixelCoord::new(80.0, 60.0));
                let ordered = order_grid(&shuffled(&rotated), rows, cols).unwrap();
                assert_eq!(ordered, rotated, "{rows}x{cols} at {deg}°");
            }
        }
    }

    #[test]
    fn wrong_point_count_is_rejected() {
        let pts = lattice(3, 3, 10.0);
        assert_eq!(
            order_grid(&pts[..8], 3, 3).unwrap_err(),
            DetectError::PointCountMismatch { expected: 9, found: 8 }
        );
    }

    #[test]
    fn irregular_points_are_ambiguous() {
        let mut pts = lattice(3, 3, 10.0);
        pts[4] = PixelCoord::new(200.0, 300.0);
        assert!(matches!(order_grid(&pts, 3, 3), Err(DetectError::AmbiguousGrid(_))));
    }

    #[test]
    fn constant_image_has_no_blobs() {
        let img = Raster::filled(64, 48, 0.7);
        assert_eq!(
            detect_blobs(&img, 4).unwrap_err(),
            DetectError::WrongBlobCount { expected: 4, found: 0 }
        );
        assert_eq!(detect_blobs(&Raster::filled(0, 0, 0.0), 1).unwrap_err(), DetectError::EmptyImage);
    }

    #[test]
    fn oversized_blobs_are_filtered_by_area() {
        // Four small squares and one huge dark region.
        let img = Raster::from_fn(100, 100, |x, y| {
            let small = [(10, 10), (30, 10), (10, 30), (30, 30)]
                .iter()
                .any(|(cx, cy)| x >= *cx && x < cx + 3 && y >= *cy && y < cy + 3);
            if small || (x >= 60 && y >= 60) {
                0.0
            } else {
                1.0
            }
        });
        let blobs = detect_blobs(&img, 4).unwrap();
        assert!((blobs[0].u - 11.0).abs() < 1e-12 && (blobs[0].v - 11.0).abs() < 1e-12);
    }

    /// Plate of intensity 1 with a dark disk, 16×16 supersampled.
    fn disk_image(w: usize, h: usize, center: (f64, f64), r: f64) -> Raster<f64> {
        const N: usize = 16;
        Raster::from_fn(w, h, |x, y| {
            let mut covered = 0;
            for i in 0..N {
                for j in 0..N {
                    let u = x as f64 - 0.5 + (i as f64 + 0.5) / N as f64;
                    let v = y as f64 - 0.5 + (j as f64 + 0.5) / N as f64;
                    if (u - center.0).hypot(v - center.1) <= r {
                        covered += 1;
                    }
                }
            }
            1.0 - covered as f64 / (N * N) as f64
        })
    }

    #[test]
    fn single_disk_center_is_subpixel_accurate() {
        let img = disk_image(200, 100, (100.5, 50.25), 6.0);
        let c = detect_blobs(&img, 1).unwrap()[0];
        assert!(c.distance(&PixelCoord::new(100.5, 50.25)) < 0.1, "{c:?}");
    }

    fn tilted_4x11() -> (TargetSpec, CameraIntrinsics, RigidPose) {
        let target = TargetSpec {
            rows: 4,
            cols: 11,
            pitch: 0.02,
            radius: 0.006,
            margin: 0.015,
            ..TargetSpec::default()
        };
        let rig = RigConfig::default();
        let view = crate::rig::ViewSpec {
            tilt_deg: [15.0, -20.0, 5.0],
            center: [0.01, -0.01, 0.45],
        };
        let pose = rig.target_in_camera(CameraId::Rgb, &view.target_to_rig(&target));
        (target, rig.rgb.intrinsics, pose)
    }

    fn center_errors(image: &Raster<f64>, target: &TargetSpec, truth: &[PixelCoord]) -> Vec<f64> {
        let obs = observe(image, target, 0, CameraId::Rgb).unwrap();
        obs.image_points.iter().zip(truth).map(|(a, b)| a.distance(b)).collect()
    }

    #[test]
    fn rendered_4x11_target_matches_projected_centers() {
        let (target, intr, pose) = tilted_4x11();
        let truth = project_target_centers(&intr, &pose, &target).unwrap();
        let img = render_target_view(&intr, &pose, &target, Spectrum::Visible, 0.0, 0).unwrap();
        let errors = center_errors(&img, &target, &truth);
        assert_eq!(errors.len(), 44);
        let worst = errors.iter().copied().fold(0.0, f64::max);
        assert!(worst < 0.1, "worst {worst}");
    }

    #[test]
    fn noisy_target_mean_error() {
        let (target, intr, pose) = tilted_4x11();
        let truth = project_target_centers(&intr, &pose, &target).unwrap();
        for seed in 0..3 {
            let img = render_target_view(&intr, &pose, &target, Spectrum::Visible, 2.0 / 255.0, seed).unwrap();
            let errors = center_errors(&img, &target, &truth);
            let mean = errors.iter().sum::<f64>() / errors.len() as f64;
            assert!(mean < 0.3, "seed {seed}: mean {mean}");
        }
    }

    /// Area centroid of the projected hole outline (shoelace formula over a
    /// dense polygon), the quantity an intensity-weighted centroid measures.
    fn projected_disk_centroid(intr: &CameraIntrinsics, pose: &RigidPose, center: [f64; 2], r: f64) -> PixelCoord {
        const N: usize = 2048;
        let pts: Vec<PixelCoord> = (0..N)
            .map(|k| {
                let a = k as f64 / N as f64 * std::f64::consts::TAU;
                let p = nalgebra::Vector3::new(center[0] + r * a.cos(), center[1] + r * a.sin(), 0.0);
                intr.project(pose.transform_vector(&p).into()).unwrap()
            })
            .collect();
        let (mut area, mut cu, mut cv) = (0.0, 0.0, 0.0);
        for k in 0..N {
            let (p, q) = (pts[k], pts[(k + 1) % N]);
            let cross = p.u * q.v - q.u * p.v;
            area += cross;
            cu += (p.u + q.u) * cross;
            cv += (p.v + q.v) * cross;
        }
        PixelCoord::new(cu / (3.0 * area), cv / (3.0 * area))
    }

    #[test]
    fn default_views_match_projected_disks_in_every_camera() {
        let target = TargetSpec::default();
        let rig = RigConfig::default();
        let (mut worst_disk, mut worst_center) = (0.0f64, 0.0f64);
        for (i, view) in default_views().iter().enumerate() {
            let t2r = view.target_to_rig(&target);
            for id in CameraId::IMAGING {
                let setup = rig.camera(id);
                let pose = rig.target_in_camera(id, &t2r);
                let img = render_target_view(&setup.intrinsics, &pose, &target, id.spectrum().unwrap(), 0.0, 0).unwrap();
                let centers = project_target_centers(&setup.intrinsics, &pose, &target).unwrap();
                let obs = observe(&img, &target, i, id).unwrap();
                for ((found, center), obj) in obs.image_points.iter().zip(&centers).zip(target.object_points()) {
                    let disk = projected_disk_centroid(&setup.intrinsics, &pose, obj, target.radius);
                    worst_disk = worst_disk.max(found.distance(&disk));
                    worst_center = worst_center.max(found.distance(center));
                }
            }
        }
        println!("worst vs disk centroid {worst_disk:.4} px, vs projected center {worst_center:.4} px");
        assert!(worst_disk < 0.05, "{worst_disk}");
    }

    proptest! {
        #[test]
        fn ordering_is_a_stable_permutation(
            deg in -40.0..40.0f64,
            scale in 0.2..5.0f64,
            du in -500.0..500.0f64,
            dv in -500.0..500.0f64,
        ) {
            let base = rotate(&lattice(5, 7, 11.0), deg, PixelCoord::new(80.0, 60.0));
            let ordered = order_grid(&shuffled(&base), 5, 7).unwrap();
            // Permutation of the input.
            let mut a: Vec<_> = ordered.iter().map(|p| (p.u.to_bits(), p.v.to_bits())).collect();
            let mut b: Vec<_> = base.iter().map(|p| (p.u.to_bits(), p.v.to_bits())).collect();
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
            // Stable under uniform scaling and translation.
            let moved: Vec<_> = base.iter().map(|p| PixelCoord::new(p.u * scale + du, p.v * scale + dv)).collect();
            let ordered_moved = order_grid(&shuffled(&moved), 5, 7).unwrap();
            for (p, q) in ordered.iter().zip(&ordered_moved) {
                prop_assert!((p.u * scale + du - q.u).abs() < 1e-9 && (p.v * scale + dv - q.v).abs() < 1e-9);
            }
        }
    }
}
