//! Closed-form intrinsics from three or more plane homographies.

use nalgebra::{DMatrix, Matrix3, SVector};

use super::CalibError;
use crate::camera::{CameraIntrinsics, DistortionCoefficients};

pub const MIN_VIEWS: usize = 3;

/// Second-smallest to largest singular value ratio of the conic system below
/// which the views do not pin down the image of the absolute conic.
pub const CONIC_CONDITION_LIMIT: f64 = 1e-6;

/// Row `v_ij` of the conic system, `h_iᵀ·B·h_j = v_ijᵀ·b` with
/// `b = [B11, B12, B22, B13, B23, B33]`.
fn v(h: &Matrix3<f64>, i: usize, j: usize) -> SVector<f64, 6> {
    let (a, b) = (h.column(i), h.column(j));
    SVector::<f64, 6>::from_column_slice(&[
        a[0] * b[0],
        a[0] * b[1] + a[1] * b[0],
        a[1] * b[1],
        a[2] * b[0] + a[0] * b[2],
        a[2] * b[1] + a[1] * b[2],
        a[2] * b[2],
    ])
}

/// Solves for `K` (zero skew, zero distortion) given homographies mapping
/// plate coordinates to pixels of a `width × height` image.
pub fn zhang_intrinsics(homographies: &[Matrix3<f64>], width: u32, height: u32) -> Result<CameraIntrinsics, CalibError> {
    if homographies.len() < MIN_VIEWS {
        return Err(CalibError::InsufficientViews {
            found: homographies.len(),
            required: MIN_VIEWS,
        });
    }
    // Work in pixel coordinates scaled to roughly [-1, 1] so the six
    // unknowns of B have comparable magnitude.
    let s = 2.0 / f64::from(width + height);
    let n = Matrix3::new(
        s,
        0.0,
        -s * 0.5 * f64::from(width),
        0.0,
        s,
        -s * 0.5 * f64::from(height),
        0.0,
        0.0,
        1.0,
    );
    let mut system = DMatrix::<f64>::zeros(2 * homographies.len(), 6);
    for (k, h) in homographies.iter().enumerate() {
        let hn = n * h;
        let hn = hn / hn.norm();
        system.row_mut(2 * k).copy_from(&v(&hn, 0, 1).transpose());
        system
            .row_mut(2 * k + 1)
            .copy_from(&(v(&hn, 0, 0) - v(&hn, 1, 1)).transpose());
    }
    let svd = system.svd(false, true);
    let v_t = svd.v_t.expect("svd v_t");
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    if sv.len() < 6 || sv[order[1]] <= CONIC_CONDITION_LIMIT * sv[order[sv.len() - 1]] {
        return Err(CalibError::IllConditioned(
            "views do not constrain the camera (all target orientations alike?)".into(),
        ));
    }
    let mut b: Vec<f64> = v_t.row(order[0]).iter().copied().collect();
    if b[0] < 0.0 {
        b.iter_mut().for_each(|x| *x = -*x);
    }
    let [b11, b12, b22, b13, b23, b33] = [b[0], b[1], b[2], b[3], b[4], b[5]];
    let d = b11 * b22 - b12 * b12;
    if !(b11 > 0.0 && d > 0.0) {
        return Err(CalibError::IllConditioned("conic matrix is not positive definite".into()));
    }
    let v0 = (b12 * b13 - b11 * b23) / d;
    let lambda = b33 - (b13 * b13 + v0 * (b12 * b13 - b11 * b23)) / b11;
    if !(lambda > 0.0) {
        return Err(CalibError::IllConditioned("conic matrix is not positive definite".into()));
    }
    let alpha = (lambda / b11).sqrt();
    let beta = (lambda * b11 / d).sqrt();
    let gamma = -b12 * alpha * alpha * beta / lambda;
    let u0 = gamma * v0 / beta - b13 * alpha * alpha / lambda;
    let kn = Matrix3::new(alpha, gamma, u0, 0.0, beta, v0, 0.0, 0.0, 1.0);
    let k = n.try_inverse().expect("normalizer is invertible") * kn;
    CameraIntrinsics::new(
        k[(0, 0)],
        k[(1, 1)],
        k[(0, 2)],
        k[(1, 2)],
        0.0,
        width,
        height,
        DistortionCoefficients::ZERO,
    )
    .map_err(|e| CalibError::IllConditioned(format!("closed-form intrinsics are invalid: {e}")))
}
