//! Plane-to-image homographies by normalized DLT.

use nalgebra::{DMatrix, Matrix3, Vector3};

use super::CalibError;
use crate::camera::PixelCoord;

/// Ratio below which the second-smallest singular value of the DLT system
/// counts as zero (the solution is not unique). Also the bound on
/// `|det H|` in normalized coordinates below which `H` is singular.
pub const DEGENERACY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    /// Maps homogeneous plate coordinates `(x, y, 1)` to pixels; `‖H‖_F = 1`.
    pub matrix: Matrix3<f64>,
    /// RMS distance in pixels between the inputs and the mapped plate points.
    pub transfer_rms: f64,
}

impl Homography {
    pub fn apply(&self, point: [f64; 2]) -> PixelCoord {
        apply(&self.matrix, point)
    }
}

pub(crate) fn apply(h: &Matrix3<f64>, p: [f64; 2]) -> PixelCoord {
    let q = h * Vector3::new(p[0], p[1], 1.0);
    PixelCoord::new(q.x / q.z, q.y / q.z)
}

/// Similarity taking the centroid to the origin and the mean distance to √2.
fn normalizer(points: impl Iterator<Item = (f64, f64)> + Clone) -> Result<Matrix3<f64>, CalibError> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let mean_dist = points.map(|(x, y)| (x - mx).hypot(y - my)).sum::<f64>() / n;
    if !(mean_dist > 0.0 && mean_dist.is_finite()) {
        return Err(CalibError::DegenerateConfiguration("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0))
}

/// Estimates `H` with `pixel ~ H·(x, y, 1)` from at least four
/// correspondences.
pub fn estimate_homography(object: &[[f64; 2]], image: &[PixelCoord]) -> Result<Homography, CalibError> {
    if object.len() != image.len() {
        return Err(CalibError::DegenerateConfiguration(format!(
            "{} plate points but {} image points",
            object.len(),
            image.len()
        )));
    }
    if object.len() < 4 {
        return Err(CalibError::DegenerateConfiguration(format!(
            "need at least 4 correspondences, got {}",
            object.len()
        )));
    }
    let t_obj = normalizer(object.iter().map(|p| (p[0], p[1])))?;
    let t_img = normalizer(image.iter().map(|p| (p.u, p.v)))?;

    // Zero rows keep the system at least 9 tall so the SVD exposes the full
    // right null space.
    let rows = (2 * object.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (o, p)) in object.iter().zip(image).enumerate() {
        let x = t_obj * Vector3::new(o[0], o[1], 1.0);
        let u = t_img * Vector3::new(p.u, p.v, 1.0);
        let (x, y) = (x.x, x.y);
        let (u, v) = (u.x, u.y);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("svd v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let sv = &svd.singular_values;
    let largest = sv[order[order.len() - 1]];
    if sv[order[1]] <= DEGENERACY_TOLERANCE * largest {
        return Err(CalibError::DegenerateConfiguration(
            "correspondences do not determine a unique homography (collinear points?)".into(),
        ));
    }
    let h = v_t.row(order[0]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    // A rank-deficient map squashes the plate onto a line or a point.
    if hn.determinant().abs() <= DEGENERACY_TOLERANCE {
        return Err(CalibError::DegenerateConfiguration(
            "image points are collinear; the plate maps to a line".into(),
        ));
    }
    let inv_img = t_img
        .try_inverse()
        .ok_or_else(|| CalibError::DegenerateConfiguration("singular image normalization".into()))?;
    let mut matrix = inv_img * hn * t_obj;
    let norm = matrix.norm();
    matrix /= norm;
    // Fix the overall sign so that plate points have positive homogeneous scale.
    let w = matrix[(2, 0)] * object[0][0] + matrix[(2, 1)] * object[0][1] + matrix[(2, 2)];
    if w < 0.0 {
        matrix = -matrix;
    }
    let sq: f64 = object
        .iter()
        .zip(image)
        .map(|(o, p)| {
            let q = apply(&matrix, *o);
            (q.u - p.u).powi(2) + (q.v - p.v).powi(2)
        })
        .sum();
    Ok(Homography {
        matrix,
        transfer_rms: (sq / object.len() as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> Vec<[f64; 2]> {
        (0..5)
            .flat_map(|r| (0..7).map(move |c| [c as f64 * 0.3 - 0.9, r as f64 * 0.3 - 0.6]))
            .collect()
    }

    fn scale_free_distance(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        let a = a / a.norm();
        let b = b / b.norm();
        (a - b).amax().min((a + b).amax())
    }

    #[test]
    fn identity_mapping_recovers_identity() {
        let obj = grid();
        let img: Vec<_> = obj.iter().map(|p| PixelCoord::new(p[0], p[1])).collect();
        let h = estimate_homography(&obj, &img).unwrap();
        assert!(scale_free_distance(&h.matrix, &Matrix3::identity()) < 1e-12);
        assert!(h.transfer_rms < 1e-10);
        assert!((h.matrix.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recovers_random_homographies() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let obj = grid();
        let mut tested = 0;
        while tested < 50 {
            let truth = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            // Skip draws that send part of the grid through the line at infinity.
            let ws: Vec<f64> = obj
                .iter()
                .map(|p| truth[(2, 0)] * p[0] + truth[(2, 1)] * p[1] + truth[(2, 2)])
                .collect();
            let min_w = ws.iter().fold(f64::INFINITY, |m, w| m.min(w.abs()));
            if min_w < 0.1 || ws.iter().any(|w| w.signum() != ws[0].signum()) || truth.determinant().abs() < 0.05 {
                continue;
            }
            let img: Vec<_> = obj.iter().map(|p| apply(&truth, *p)).collect();
            let h = estimate_homography(&obj, &img).unwrap();
            assert!(scale_free_distance(&h.matrix, &truth) < 1e-8, "{h:?} vs {truth}");
            tested += 1;
        }
    }

    #[test]
    fn four_points_are_enough() {
        let obj = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let img = [
            PixelCoord::new(10.0, 10.0),
            PixelCoord::new(110.0, 12.0),
            PixelCoord::new(105.0, 95.0),
            PixelCoord::new(8.0, 102.0),
        ];
        let h = estimate_homography(&obj, &img).unwrap();
        assert!(h.transfer_rms < 1e-9);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let obj = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]];
        let img: Vec<_> = obj.iter().map(|p| PixelCoord::new(3.0 * p[0] + 1.0, 2.0)).collect();
        assert!(matches!(
            estimate_homography(&obj, &img),
            Err(CalibError::DegenerateConfiguration(_))
        ));
        assert!(matches!(
            estimate_homography(&obj[..3], &img[..3]),
            Err(CalibError::DegenerateConfiguration(_))
        ));
    }
}
