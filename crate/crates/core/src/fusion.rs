//! Threshold highlighting of hot and UV-bright regions on the RGB image and
//! assembly of the multispectral point cloud.
//!
//! A pixel keeps its RGB color unless its aligned thermal or UV intensity is
//! strictly above the channel threshold; then it takes the channel's
//! colormap color. Bad points always keep their RGB color.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraIntrinsics, PixelCoord};
use crate::raster::{Raster, Rgb8};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error("every pixel is a bad point; a percentile threshold is undefined")]
    AllBadPoints,
    #[error("{what} is {found:?}, expected {expected:?}")]
    DimensionMismatch {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid threshold {0:?}: use a number or pNN with NN in 0..=100")]
    InvalidThreshold(String),
    #[error("invalid precedence {0:?}: use thermal_over_uv or uv_over_thermal")]
    InvalidPrecedence(String),
}

/// 3×3 Laplacian response `in ∗ [0 -1 0; -1 4 -1; 0 -1 0]` with replicated
/// borders.
pub fn laplacian(image: &Raster<f64>) -> Raster<f64> {
    let (w, h) = image.dimensions();
    Raster::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        4.0 * image.get_clamped(x, y)
            - image.get_clamped(x - 1, y)
            - image.get_clamped(x + 1, y)
            - image.get_clamped(x, y - 1)
            - image.get_clamped(x, y + 1)
    })
}

/// `in + alpha·(in ∗ L)` before clamping.
pub fn laplacian_sharpen_unclamped(image: &Raster<f64>, alpha: f64) -> Raster<f64> {
    let lap = laplacian(image);
    let (w, h) = image.dimensions();
    Raster::from_fn(w, h, |x, y| image.get(x, y) + alpha * lap.get(x, y))
}

/// High-pass sharpening, clamped to `[lo, hi]`.
pub fn laplacian_sharpen(image: &Raster<f64>, alpha: f64, lo: f64, hi: f64) -> Raster<f64> {
    laplacian_sharpen_unclamped(image, alpha).map(|v| v.clamp(lo, hi))
}

/// A channel threshold: a fixed intensity or a percentile of the valid pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdSpec {
    Absolute(f64),
    Percentile(f64),
}

impl ThresholdSpec {
    fn validate(self) -> Result<Self, FusionError> {
        match self {
            ThresholdSpec::Absolute(v) if v.is_finite() => Ok(self),
            ThresholdSpec::Percentile(p) if (0.0..=100.0).contains(&p) => Ok(self),
            other => Err(FusionError::InvalidThreshold(other.to_string())),
        }
    }
}

impl fmt::Display for ThresholdSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdSpec::Absolute(v) => write!(f, "{v}"),
            ThresholdSpec::Percentile(p) => write!(f, "p{p}"),
        }
    }
}

/// `"128"` is absolute, `"p95"` is the 95th percentile.
impl FromStr for ThresholdSpec {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FusionError::InvalidThreshold(s.to_string());
        let t = s.trim();
        let spec = match t.strip_prefix(['p', 'P']) {
            Some(p) => ThresholdSpec::Percentile(p.parse().map_err(|_| bad())?),
            None => ThresholdSpec::Absolute(t.parse().map_err(|_| bad())?),
        };
        spec.validate().map_err(|_| bad())
    }
}

impl Serialize for ThresholdSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ThresholdSpec::Absolute(v) => s.serialize_f64(*v),
            ThresholdSpec::Percentile(_) => s.serialize_str(&self.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for ThresholdSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Number(v) => ThresholdSpec::Absolute(v).validate(),
            Repr::Text(t) => t.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// Nearest-rank percentile: the value at rank `⌈p/100·N⌉` (at least 1) of
/// the sorted valid samples.
pub fn percentile(values: &mut [f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    Some(values[rank.clamp(1, n) - 1])
}

/// Resolves a threshold against a raster; percentiles ignore bad points.
pub fn resolve_threshold(
    raster: &Raster<f64>,
    bad_points: Option<&Raster<bool>>,
    spec: ThresholdSpec,
) -> Result<f64, FusionError> {
    match spec.validate()? {
        ThresholdSpec::Absolute(v) => Ok(v),
        ThresholdSpec::Percentile(p) => {
            let mut values: Vec<f64> = match bad_points {
                Some(mask) => {
                    check_dims("bad-point mask", raster.dimensions(), mask.dimensions())?;
                    raster
                        .data()
                        .iter()
                        .zip(mask.data())
                        .filter(|(_, bad)| !**bad)
                        .map(|(v, _)| *v)
                        .collect()
                }
                None => raster.data().to_vec(),
            };
            percentile(&mut values, p).ok_or(FusionError::AllBadPoints)
        }
    }
}

/// Linear color ramp; `at(0)` is `low`, `at(1)` is `high`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorRamp {
    pub low: Rgb8,
    pub high: Rgb8,
}

impl ColorRamp {
    /// Dark red to yellow.
    pub const WARM: ColorRamp = ColorRamp {
        low: [128, 0, 0],
        high: [255, 255, 0],
    };
    /// Dark blue to purple.
    pub const COOL: ColorRamp = ColorRamp {
        low: [0, 0, 128],
        high: [200, 0, 255],
    };

    pub fn at(&self, t: f64) -> Rgb8 {
        let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
        std::array::from_fn(|c| {
            let (a, b) = (f64::from(self.low[c]), f64::from(self.high[c]));
            (a + (b - a) * t).round() as u8
        })
    }
}

/// Which rule wins when a pixel is both hot and UV-bright.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precedence {
    #[default]
    ThermalOverUv,
    UvOverThermal,
}

impl FromStr for Precedence {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "thermal_over_uv" | "thermal" => Ok(Precedence::ThermalOverUv),
            "uv_over_thermal" | "uv" => Ok(Precedence::UvOverThermal),
            other => Err(FusionError::InvalidPrecedence(other.to_string())),
        }
    }
}

/// Intensity interval a colormap spans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityRange {
    pub min: f64,
    pub max: f64,
}

impl IntensityRange {
    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub threshold_uv: ThresholdSpec,
    pub threshold_thermal: ThresholdSpec,
    pub thermal_ramp: ColorRamp,
    pub uv_ramp: ColorRamp,
    /// Full range of the thermal raster (16-bit by default).
    pub thermal_range: IntensityRange,
    /// Full range of the UV raster (8-bit by default).
    pub uv_range: IntensityRange,
    pub precedence: Precedence,
    /// Sharpen the aligned UV image before thresholding.
    pub sharpen_uv: bool,
    pub sharpen_alpha: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            threshold_uv: ThresholdSpec::Percentile(95.0),
            threshold_thermal: ThresholdSpec::Percentile(95.0),
            thermal_ramp: ColorRamp::WARM,
            uv_ramp: ColorRamp::COOL,
            thermal_range: IntensityRange {
                min: 0.0,
                max: 65535.0,
            },
            uv_range: IntensityRange { min: 0.0, max: 255.0 },
            precedence: Precedence::ThermalOverUv,
            sharpen_uv: false,
            sharpen_alpha: 1.0,
        }
    }
}

/// Why a fused pixel has its color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelSource {
    #[default]
    Rgb,
    Thermal,
    Uv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Highlighted {
    pub image: Raster<Rgb8>,
    pub sources: Raster<PixelSource>,
    /// Resolved `(thermal, uv)` thresholds; `None` when every pixel is bad.
    pub thresholds: Option<(f64, f64)>,
}

fn check_dims(what: &'static str, expected: (usize, usize), found: (usize, usize)) -> Result<(), FusionError> {
    if expected == found {
        Ok(())
    } else {
        Err(FusionError::DimensionMismatch { what, expected, found })
    }
}

/// Recolors hot and UV-bright pixels; see [`highlight`].
pub fn highlight_with_sources(
    rgb: &Raster<Rgb8>,
    thermal: &Raster<f64>,
    uv: &Raster<f64>,
    bad_points: &Raster<bool>,
    cfg: &FusionConfig,
) -> Result<Highlighted, FusionError> {
    let dims = rgb.dimensions();
    check_dims("thermal raster", dims, thermal.dimensions())?;
    check_dims("uv raster", dims, uv.dimensions())?;
    check_dims("bad-point mask", dims, bad_points.dimensions())?;
    if bad_points.data().iter().all(|b| *b) {
        return Ok(Highlighted {
            image: rgb.clone(),
            sources: Raster::filled(dims.0, dims.1, PixelSource::Rgb),
            thresholds: None,
        });
    }
    let sharpened;
    let uv = if cfg.sharpen_uv {
        sharpened = laplacian_sharpen(uv, cfg.sharpen_alpha, cfg.uv_range.min, cfg.uv_range.max);
        &sharpened
    } else {
        uv
    };
    let t_thermal = resolve_threshold(thermal, Some(bad_points), cfg.threshold_thermal)?;
    let t_uv = resolve_threshold(uv, Some(bad_points), cfg.threshold_uv)?;
    let (pixels, sources): (Vec<Rgb8>, Vec<PixelSource>) = rgb
        .data()
        .par_iter()
        .zip(thermal.data())
        .zip(uv.data())
        .zip(bad_points.data())
        .map(|(((&color, &t), &u), &bad)| {
            if bad {
                return (color, PixelSource::Rgb);
            }
            let hot = t > t_thermal;
            let bright = u > t_uv;
            let source = match (hot, bright, cfg.precedence) {
                (true, true, Precedence::ThermalOverUv) | (true, false, _) => PixelSource::Thermal,
                (true, true, Precedence::UvOverThermal) | (false, true, _) => PixelSource::Uv,
                (false, false, _) => PixelSource::Rgb,
            };
            let out = match source {
                PixelSource::Rgb => color,
                PixelSource::Thermal => cfg.thermal_ramp.at(cfg.thermal_range.normalize(t)),
                PixelSource::Uv => cfg.uv_ramp.at(cfg.uv_range.normalize(u)),
            };
            (out, source)
        })
        .unzip();
    Ok(Highlighted {
        image: Raster::from_vec(dims.0, dims.1, pixels).expect("size"),
        sources: Raster::from_vec(dims.0, dims.1, sources).expect("size"),
        thresholds: Some((t_thermal, t_uv)),
    })
}

/// Threshold fusion: pixels above a channel threshold take that channel's
/// colormap color, everything else (and every bad point) keeps its RGB.
pub fn highlight(
    rgb: &Raster<Rgb8>,
    thermal: &Raster<f64>,
    uv: &Raster<f64>,
    bad_points: &Raster<bool>,
    cfg: &FusionConfig,
) -> Result<Raster<Rgb8>, FusionError> {
    highlight_with_sources(rgb, thermal, uv, bad_points, cfg).map(|h| h.image)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    /// Meters, RGB camera frame.
    pub position: [f64; 3],
    pub color: Rgb8,
    pub thermal: f64,
    pub uv: f64,
    /// RGB pixel the point came from.
    pub source: (u32, u32),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MultispectralPointCloud {
    pub points: Vec<CloudPoint>,
}

impl MultispectralPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One point per valid-depth RGB pixel, in row-major order.
///
/// The pixel is undistorted and lifted to its depth (millimeters → meters).
/// A pixel whose undistortion fails is skipped.
pub fn build_point_cloud(
    depth: &Raster<u16>,
    colors: &Raster<Rgb8>,
    thermal: &Raster<f64>,
    uv: &Raster<f64>,
    intr_rgb: &CameraIntrinsics,
) -> Result<MultispectralPointCloud, FusionError> {
    let dims = depth.dimensions();
    check_dims("depth raster", intr_rgb.size(), dims)?;
    check_dims("color raster", dims, colors.dimensions())?;
    check_dims("thermal raster", dims, thermal.dimensions())?;
    check_dims("uv raster", dims, uv.dimensions())?;
    let (w, h) = dims;
    let points = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            (0..w).filter_map(move |x| {
                let d = depth.get(x, y);
                if d == 0 {
                    return None;
                }
                let z = f64::from(d) * 1e-3;
                let (nx, ny) = intr_rgb
                    .undistort_normalized(PixelCoord::new(x as f64, y as f64))
                    .ok()?;
                Some(CloudPoint {
                    position: [nx * z, ny * z, z],
                    color: colors.get(x, y),
                    thermal: thermal.get(x, y),
                    uv: uv.get(x, y),
                    source: (x as u32, y as u32),
                })
            })
        })
        .collect();
    Ok(MultispectralPointCloud { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn laplacian_examples() {
        let flat = Raster::filled(5, 5, 80.0);
        assert_eq!(laplacian_sharpen(&flat, 1.0, 0.0, 255.0), flat);

        let mut impulse = Raster::filled(5, 5, 0.0);
        impulse.set(2, 2, 10.0);
        let out = laplacian_sharpen_unclamped(&impulse, 1.0);
        assert_eq!(out.get(2, 2), 50.0);
        for (x, y) in [(1, 2), (3, 2), (2, 1), (2, 3)] {
            assert_eq!(out.get(x, y), -10.0);
        }
        assert_eq!(out.get(1, 1), 0.0);
        assert_eq!(laplacian_sharpen(&impulse, 1.0, 0.0, 255.0).get(1, 2), 0.0);
    }

    #[test]
    fn step_edge_overshoots_symmetrically() {
        let img = Raster::from_fn(8, 3, |x, _| if x < 4 { 20.0 } else { 60.0 });
        let out = laplacian_sharpen_unclamped(&img, 1.0);
        assert_eq!(out.get(3, 1), 20.0 - 40.0);
        assert_eq!(out.get(4, 1), 60.0 + 40.0);
        // Mirror-image overshoot around the edge midpoint.
        assert_eq!(out.get(3, 1) - 20.0, -(out.get(4, 1) - 60.0));
        assert_eq!(out.get(0, 1), 20.0);
        assert_eq!(out.get(7, 1), 60.0);
    }

    #[test]
    fn percentile_examples() {
        let ramp = Raster::from_vec(255, 1, (0..255).map(f64::from).collect()).unwrap();
        assert_eq!(resolve_threshold(&ramp, None, ThresholdSpec::Percentile(95.0)).unwrap(), 242.0);
        assert_eq!(resolve_threshold(&ramp, None, ThresholdSpec::Percentile(100.0)).unwrap(), 254.0);
        assert_eq!(resolve_threshold(&ramp, None, ThresholdSpec::Percentile(0.0)).unwrap(), 0.0);
        assert_eq!(resolve_threshold(&ramp, None, ThresholdSpec::Absolute(128.0)).unwrap(), 128.0);
    }

    #[test]
    fn percentile_skips_bad_points() {
        let img = Raster::from_vec(4, 1, vec![1.0, 2.0, 3.0, 1000.0]).unwrap();
        let mask = Raster::from_vec(4, 1, vec![false, false, false, true]).unwrap();
        assert_eq!(resolve_threshold(&img, Some(&mask), ThresholdSpec::Percentile(100.0)).unwrap(), 3.0);
        let all = Raster::filled(4, 1, true);
        assert_eq!(
            resolve_threshold(&img, Some(&all), ThresholdSpec::Percentile(50.0)),
            Err(FusionError::AllBadPoints)
        );
    }

    #[test]
    fn threshold_parsing() {
        assert_eq!("p95".parse::<ThresholdSpec>().unwrap(), ThresholdSpec::Percentile(95.0));
        assert_eq!("128".parse::<ThresholdSpec>().unwrap(), ThresholdSpec::Absolute(128.0));
        assert!("p101".parse::<ThresholdSpec>().is_err());
        assert!("hot".parse::<ThresholdSpec>().is_err());
        let cfg = FusionConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"p95\""));
        assert_eq!(serde_json::from_str::<FusionConfig>(&text).unwrap(), cfg);
        let partial: FusionConfig = serde_json::from_str(r#"{"threshold_uv": 200, "precedence": "uv_over_thermal"}"#).unwrap();
        assert_eq!(partial.threshold_uv, ThresholdSpec::Absolute(200.0));
        assert_eq!(partial.precedence, Precedence::UvOverThermal);
    }

    #[test]
    fn ramps_are_monotone_in_luminance() {
        let luma = |c: Rgb8| 0.299 * f64::from(c[0]) + 0.587 * f64::from(c[1]) + 0.114 * f64::from(c[2]);
        for ramp in [ColorRamp::WARM, ColorRamp::COOL] {
            assert_eq!(ramp.at(0.0), ramp.low);
            assert_eq!(ramp.at(1.0), ramp.high);
            let mut prev = luma(ramp.at(0.0));
            for k in 1..=1000 {
                let l = luma(ramp.at(k as f64 / 1000.0));
                assert!(l >= prev);
                prev = l;
            }
        }
    }

    fn frame(w: usize, h: usize) -> (Raster<Rgb8>, Raster<f64>, Raster<f64>) {
        (
            Raster::from_fn(w, h, |x, y| [x as u8, y as u8, 7]),
            Raster::from_fn(w, h, |x, y| (x * 100 + y) as f64),
            Raster::from_fn(w, h, |x, y| ((x + y * 3) % 256) as f64),
        )
    }

    #[test]
    fn high_thresholds_keep_rgb() {
        let (rgb, t, u) = frame(20, 10);
        let cfg = FusionConfig {
            threshold_thermal: ThresholdSpec::Absolute(1e9),
            threshold_uv: ThresholdSpec::Absolute(1e9),
            ..FusionConfig::default()
        };
        let out = highlight(&rgb, &t, &u, &Raster::filled(20, 10, false), &cfg).unwrap();
        assert_eq!(out, rgb);
    }

    #[test]
    fn uv_everywhere_with_uv_precedence() {
        let (rgb, t, _) = frame(20, 10);
        let u = Raster::filled(20, 10, 200.0);
        let cfg = FusionConfig {
            threshold_thermal: ThresholdSpec::Absolute(0.0),
            threshold_uv: ThresholdSpec::Absolute(100.0),
            precedence: Precedence::UvOverThermal,
            ..FusionConfig::default()
        };
        let out = highlight(&rgb, &t, &u, &Raster::filled(20, 10, false), &cfg).unwrap();
        let expected = ColorRamp::COOL.at(200.0 / 255.0);
        assert!(out.data().iter().all(|c| *c == expected));
    }

    #[test]
    fn precedence_breaks_ties() {
        let (rgb, _, _) = frame(2, 1);
        let t = Raster::filled(2, 1, 60000.0);
        let u = Raster::filled(2, 1, 250.0);
        let mask = Raster::filled(2, 1, false);
        let base = FusionConfig {
            threshold_thermal: ThresholdSpec::Absolute(1.0),
            threshold_uv: ThresholdSpec::Absolute(1.0),
            ..FusionConfig::default()
        };
        let h = highlight_with_sources(&rgb, &t, &u, &mask, &base).unwrap();
        assert!(h.sources.data().iter().all(|s| *s == PixelSource::Thermal));
        let uv_first = FusionConfig {
            precedence: Precedence::UvOverThermal,
            ..base
        };
        let h = highlight_with_sources(&rgb, &t, &u, &mask, &uv_first).unwrap();
        assert!(h.sources.data().iter().all(|s| *s == PixelSource::Uv));
    }

    #[test]
    fn all_bad_points_keep_rgb() {
        let (rgb, t, u) = frame(6, 4);
        let out = highlight_with_sources(&rgb, &t, &u, &Raster::filled(6, 4, true), &FusionConfig::default()).unwrap();
        assert_eq!(out.image, rgb);
        assert_eq!(out.thresholds, None);
    }

    #[test]
    fn mismatched_rasters_are_rejected() {
        let (rgb, t, u) = frame(6, 4);
        let mask = Raster::filled(6, 4, false);
        let small = Raster::filled(3, 4, 0.0);
        assert!(matches!(
            highlight(&rgb, &small, &u, &mask, &FusionConfig::default()),
            Err(FusionError::DimensionMismatch { .. })
        ));
        assert!(highlight(&rgb, &t, &u, &Raster::filled(1, 1, false), &FusionConfig::default()).is_err());
    }

    #[test]
    fn point_cloud_examples() {
        let k = CameraIntrinsics::pinhole(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let colors = Raster::filled(640, 480, [1, 2, 3]);
        let zeros = Raster::filled(640, 480, 0.0);
        let none = build_point_cloud(&Raster::filled(640, 480, 0u16), &colors, &zeros, &zeros, &k).unwrap();
        assert!(none.is_empty());

        let mut depth = Raster::filled(640, 480, 0u16);
        depth.set(320, 240, 1000);
        let one = build_point_cloud(&depth, &colors, &zeros, &zeros, &k).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.points[0].position, [0.0, 0.0, 1.0]);
        assert_eq!(one.points[0].source, (320, 240));

        let full = build_point_cloud(&Raster::filled(640, 480, 800u16), &colors, &zeros, &zeros, &k).unwrap();
        assert_eq!(full.len(), 307_200);
        // Row-major order.
        assert_eq!(full.points[1].source, (1, 0));
        assert_eq!(full.points[640].source, (0, 1));
    }

    proptest! {
        #[test]
        fn below_threshold_and_bad_points_keep_rgb(
            seed in any::<u64>(),
            t_thr in 0.0..70000.0f64,
            u_thr in 0.0..260.0f64,
        ) {
            let (w, h) = (12, 9);
            let mut s = seed;
            let mut next = move || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); s >> 33 };
            let rgb = Raster::from_fn(w, h, |_, _| [next() as u8, next() as u8, next() as u8]);
            let t = Raster::from_fn(w, h, |_, _| (next() % 65536) as f64);
            let u = Raster::from_fn(w, h, |_, _| (next() % 256) as f64);
            let mask = Raster::from_fn(w, h, |_, _| next() % 5 == 0);
            let cfg = FusionConfig {
                threshold_thermal: ThresholdSpec::Absolute(t_thr),
                threshold_uv: ThresholdSpec::Absolute(u_thr),
                ..FusionConfig::default()
            };
            let out = highlight(&rgb, &t, &u, &mask, &cfg).unwrap();
            for y in 0..h {
                for x in 0..w {
                    if mask.get(x, y) || (t.get(x, y) <= t_thr && u.get(x, y) <= u_thr) {
                        prop_assert_eq!(out.get(x, y), rgb.get(x, y));
                    }
                }
            }
            // Recoloring touches only the RGB output, so a second pass is a no-op.
            let again = highlight(&out, &t, &u, &mask, &cfg).unwrap();
            prop_assert_eq!(again, out);
        }
    }
}
