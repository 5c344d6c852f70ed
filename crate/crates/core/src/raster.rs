//! Minimal row-major raster container shared by every pipeline stage.

use serde::{Deserialize, Serialize};

/// An 8-bit RGB pixel.
pub type Rgb8 = [u8; 3];

/// Row-major image with one `T` per pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Raster<T> {
    /// A raster filled with `value`.
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Builds a raster by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Wraps existing row-major data. Returns `None` if the length is wrong.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == width * height).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    /// Pixel access with coordinates clamped to the border (replicate padding).
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> T {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.get(xc, yc)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, T> {
        self.data.chunks_exact(self.width.max(1))
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    pub fn same_dimensions<U>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl Raster<f64> {
    /// Bilinear interpolation at a continuous position where pixel centers
    /// sit on integer coordinates. The caller guarantees
    /// `0 <= x <= width-1` and `0 <= y <= height-1`.
    pub fn bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(1));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(1));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

impl Raster<u8> {
    pub fn to_f64(&self) -> Raster<f64> {
        self.map(f64::from)
    }
}

impl Raster<u16> {
    pub fn to_f64(&self) -> Raster<f64> {
        self.map(f64::from)
    }
}

impl Raster<Rgb8> {
    /// Luma (Rec. 601) as floating point in 0..=255.
    pub fn to_gray_f64(&self) -> Raster<f64> {
        self.map(|[r, g, b]| 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_fn_is_row_major() {
        let r = Raster::from_fn(3, 2, |x, y| (y * 10 + x) as u8);
        assert_eq!(r.data(), &[0, 1, 2, 10, 11, 12]);
        assert_eq!(r.get(2, 1), 12);
    }

    #[test]
    fn bilinear_hits_pixel_centers_exactly() {
        let r = Raster::from_fn(4, 3, |x, y| (x * x + 3 * y) as f64);
        for y in 0..3 {
            for x in 0..4 {
                assert_eq!(r.bilinear(x as f64, y as f64), r.get(x, y));
            }
        }
        assert!((r.bilinear(0.5, 0.0) - 0.5).abs() < 1e-12);
        assert!((r.bilinear(3.0, 2.0) - 15.0).abs() < 1e-12);
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Raster::from_vec(2, 2, vec![0u8; 3]).is_none());
        assert!(Raster::from_vec(2, 2, vec![0u8; 4]).is_some());
    }
}
