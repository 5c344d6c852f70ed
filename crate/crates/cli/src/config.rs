//! The JSON pipeline configuration.
//!
//! Every field is optional. `rig`, `target` and `scene` may be given inline
//! or as a path to a JSON file, resolved against the directory of the
//! configuration file. Paths under `paths` are resolved against `--out`.
//!
//! ```json
//! {
//!   "seed": 0,
//!   "rig": "rig.json",
//!   "target": { "rows": 5, "cols": 7, ... },
//!   "scene": "scene.json",
//!   "views": [ { "tilt_deg": [20, 0, 0], "center": [0, 0, 0.4] } ],
//!   "calibration_noise": 0.0,
//!   "calibration": { "freeze_k3": ["thermal"] },
//!   "fusion": { "threshold_uv": "p95", "threshold_thermal": 40000 },
//!   "ply_format": "binary_little_endian",
//!   "paths": { "calib_frames": "calib", "scene_frame": "scene" }
//! }
//! ```

use std::path::{Path, PathBuf};

use multispec::calib::CalibrationOptions;
use multispec::fusion::FusionConfig;
use multispec::ply::PlyFormat;
use multispec::rig::{default_views, ViewSpec};
use multispec::{RigConfig, SceneSpec, TargetSpec};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::CliError;

/// A specification given inline or as a path to a JSON file.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SpecSource<T> {
    Path(PathBuf),
    Inline(T),
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlyEncoding {
    Ascii,
    #[default]
    BinaryLittleEndian,
}

impl From<PlyEncoding> for PlyFormat {
    fn from(e: PlyEncoding) -> Self {
        match e {
            PlyEncoding::Ascii => PlyFormat::Ascii,
            PlyEncoding::BinaryLittleEndian => PlyFormat::BinaryLittleEndian,
        }
    }
}

/// Locations of the stage artifacts, relative to the output directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub calib_frames: PathBuf,
    pub scene_frame: PathBuf,
    pub ground_truth: PathBuf,
    pub calibration: PathBuf,
    pub aligned: PathBuf,
    pub fused: PathBuf,
    pub cloud: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            calib_frames: "calib".into(),
            scene_frame: "scene".into(),
            ground_truth: "ground_truth.json".into(),
            calibration: "calibration.json".into(),
            aligned: "aligned".into(),
            fused: "fused.png".into(),
            cloud: "cloud.ply".into(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    rig: Option<SpecSource<RigConfig>>,
    target: Option<SpecSource<TargetSpec>>,
    scene: Option<SpecSource<SceneSpec>>,
    views: Option<Vec<ViewSpec>>,
    calibration_noise: f64,
    calibration: CalibrationOptions,
    fusion: FusionConfig,
    ply_format: PlyEncoding,
    paths: Paths,
}

/// Fully resolved configuration.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// The configuration file, or `<defaults>`; named in error messages.
    pub origin: PathBuf,
    pub seed: u64,
    pub rig: RigConfig,
    pub target: TargetSpec,
    pub scene: SceneSpec,
    pub views: Vec<ViewSpec>,
    /// Standard deviation of the calibration image noise, normalized units.
    pub calibration_noise: f64,
    pub calibration: CalibrationOptions,
    pub fusion: FusionConfig,
    pub ply_format: PlyFormat,
    /// Artifact paths, already joined onto the output directory.
    pub paths: Paths,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(path, e))
}

fn resolve<T: DeserializeOwned>(source: Option<SpecSource<T>>, base: &Path, default: T) -> Result<T, CliError> {
    match source {
        None => Ok(default),
        Some(SpecSource::Inline(v)) => Ok(v),
        Some(SpecSource::Path(p)) => read_json(&base.join(p)),
    }
}

impl PipelineConfig {
    /// Loads `config` (or the defaults when absent). `seed` overrides the
    /// configured seed.
    pub fn load(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<Self, CliError> {
        let (raw, base) = match config {
            Some(path) => (
                read_json::<RawConfig>(path)?,
                path.parent().map(Path::to_path_buf).unwrap_or_default(),
            ),
            None => (RawConfig::default(), PathBuf::new()),
        };
        let origin = config.map_or_else(|| PathBuf::from("<defaults>"), Path::to_path_buf);
        let invalid = |e: &dyn std::fmt::Display| CliError::config(&origin, e);

        let target = resolve(raw.target, &base, TargetSpec::default())?;
        target.validate().map_err(|e| invalid(&e))?;
        let scene = resolve(raw.scene, &base, SceneSpec::default())?;
        scene.validate().map_err(|e| invalid(&e))?;
        if !(raw.calibration_noise >= 0.0 && raw.calibration_noise.is_finite()) {
            return Err(invalid(&format!("calibration_noise must be >= 0, got {}", raw.calibration_noise)));
        }

        let p = raw.paths;
        let join = |q: PathBuf| out.join(q);
        Ok(Self {
            origin,
            seed: seed.or(raw.seed).unwrap_or(0),
            rig: resolve(raw.rig, &base, RigConfig::default())?,
            target,
            scene,
            views: raw.views.unwrap_or_else(default_views),
            calibration_noise: raw.calibration_noise,
            calibration: raw.calibration,
            fusion: raw.fusion,
            ply_format: raw.ply_format.into(),
            paths: Paths {
                calib_frames: join(p.calib_frames),
                scene_frame: join(p.scene_frame),
                ground_truth: join(p.ground_truth),
                calibration: join(p.calibration),
                aligned: join(p.aligned),
                fused: join(p.fused),
                cloud: join(p.cloud),
            },
        })
    }

    pub fn view_dir(&self, view: usize) -> PathBuf {
        self.paths.calib_frames.join(format!("view_{view:02}"))
    }
}
