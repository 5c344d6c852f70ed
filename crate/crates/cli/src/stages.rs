//! The pipeline stages. Each one reads its inputs from files and writes its
//! outputs to files, so stages can be rerun independently.
//!
//! Output layout under `--out` (default names):
//!
//! ```text
//! calib/view_XX/{rgb.png, thermal.pgm, uv.pgm, depth.pgm}   render
//! scene/{rgb.png, thermal.pgm, uv.pgm, depth.pgm}           render
//! ground_truth.json, ground_truth/*.pgm                     render
//! calibration.json                                          calibrate
//! aligned/{thermal.pgm, uv.pgm, bad_points.pgm,
//!          thermal_display.pgm}                             register
//! fused.png, cloud.ply                                      fuse
//! ```
//!
//! Thermal and depth rasters are 16-bit PGM, UV is 8-bit PGM, masks are
//! 8-bit PGM with 255 marking set pixels.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use multispec::calib::{calibrate_rig, CalibrationResult};
use multispec::detect::observe_all;
use multispec::fusion::{build_point_cloud, highlight_with_sources, FusionError};
use multispec::io::{read_pgm16, read_pgm8, read_rgb_png, write_pgm16, write_pgm8, write_rgb_png};
use multispec::ply::save_ply;
use multispec::registration::{align_frame, harmonize_resolution};
use multispec::rig::{
    gray_to_rgb8, patch_footprint, quantize_u16, quantize_u8, render_calibration_views, render_scene, Patch, ViewSpec,
};
use multispec::{CameraId, MultispectralFrame, Raster, RigConfig, RigidPose, SceneSpec, TargetSpec};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{ply_error, CliError};

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::config(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| CliError::config(path, e))
}

fn mask_to_u8(mask: &Raster<bool>) -> Raster<u8> {
    mask.map(|b| if b { 255 } else { 0 })
}

fn write_frame(dir: &Path, frame: &MultispectralFrame) -> Result<(), CliError> {
    create_dir(dir)?;
    write_rgb_png(&dir.join("rgb.png"), &frame.rgb)?;
    write_pgm16(&dir.join("thermal.pgm"), &frame.thermal)?;
    write_pgm8(&dir.join("uv.pgm"), &frame.uv)?;
    write_pgm16(&dir.join("depth.pgm"), &frame.depth)?;
    Ok(())
}

fn read_frame(dir: &Path) -> Result<MultispectralFrame, CliError> {
    Ok(MultispectralFrame {
        rgb: read_rgb_png(&dir.join("rgb.png"))?,
        thermal: read_pgm16(&dir.join("thermal.pgm"))?,
        uv: read_pgm8(&dir.join("uv.pgm"))?,
        depth: read_pgm16(&dir.join("depth.pgm"))?,
        timestamp: 0,
    })
}

#[derive(Serialize)]
struct GroundTruthView {
    view: usize,
    spec: ViewSpec,
    /// Target plate → rig.
    target_to_rig: RigidPose,
    /// Target plate → each camera.
    target_to_camera: BTreeMap<CameraId, RigidPose>,
}

#[derive(Serialize)]
struct GroundTruthExtrinsics {
    source: CameraId,
    destination: CameraId,
    pose: RigidPose,
}

#[derive(Serialize)]
struct Footprint {
    /// `uv` or `thermal`: the spectrum the patch shows up in.
    spectrum: CameraId,
    patch: usize,
    camera: CameraId,
    pixels: usize,
    /// 8-bit PGM mask, relative to the ground-truth file.
    mask: String,
}

#[derive(Serialize)]
struct GroundTruth<'a> {
    seed: u64,
    rig: &'a RigConfig,
    target: &'a TargetSpec,
    scene: &'a SceneSpec,
    extrinsics: Vec<GroundTruthExtrinsics>,
    views: Vec<GroundTruthView>,
    footprints: Vec<Footprint>,
}

fn footprints(cfg: &PipelineConfig) -> Result<Vec<Footprint>, CliError> {
    let mask_dir = cfg.paths.ground_truth.with_extension("");
    let dir_name = mask_dir.file_name().map(PathBuf::from).unwrap_or_default();
    create_dir(&mask_dir)?;
    let groups: [(CameraId, &[Patch]); 2] = [
        (CameraId::Uv, &cfg.scene.hidden_uv_patches),
        (CameraId::Thermal, &cfg.scene.hidden_thermal_patches),
    ];
    let mut out = Vec::new();
    for (spectrum, patches) in groups {
        for (i, patch) in patches.iter().enumerate() {
            for camera in CameraId::IMAGING {
                let mask = patch_footprint(&cfg.scene, patch, &cfg.rig, camera)
                    .map_err(|e| CliError::Failed(format!("{spectrum} patch {i} in {camera}: {e}")))?;
                let name = format!("{spectrum}_patch{i}_{camera}.pgm");
                write_pgm8(&mask_dir.join(&name), &mask_to_u8(&mask))?;
                out.push(Footprint {
                    spectrum,
                    patch: i,
                    camera,
                    pixels: mask.data().iter().filter(|b| **b).count(),
                    mask: dir_name.join(name).to_string_lossy().into_owned(),
                });
            }
        }
    }
    Ok(out)
}

/// Renders the calibration views, the test scene and the ground truth.
pub fn render(cfg: &PipelineConfig) -> Result<(), CliError> {
    let invalid = |e: &dyn std::fmt::Display| CliError::config(&cfg.origin, e);
    let views = render_calibration_views(&cfg.rig, &cfg.target, &cfg.views, cfg.calibration_noise, cfg.seed)
        .map_err(|e| invalid(&e))?;
    // Views left over from an earlier run with more views would be picked
    // up by `calibrate`.
    if cfg.paths.calib_frames.is_dir() {
        for (view, dir) in view_dirs(&cfg.paths.calib_frames)? {
            if view >= views.len() {
                fs::remove_dir_all(&dir).map_err(|e| CliError::config(&dir, e))?;
            }
        }
    }
    for v in &views {
        let frame = MultispectralFrame {
            rgb: gray_to_rgb8(&v.rgb),
            thermal: quantize_u16(&v.thermal),
            uv: quantize_u8(&v.uv),
            depth: v.depth.clone(),
            timestamp: v.view as u64,
        };
        write_frame(&cfg.view_dir(v.view), &frame)?;
    }

    let scene = render_scene(&cfg.scene, &cfg.rig, cfg.seed).map_err(|e| invalid(&e))?;
    write_frame(&cfg.paths.scene_frame, &scene)?;

    let truth = GroundTruth {
        seed: cfg.seed,
        rig: &cfg.rig,
        target: &cfg.target,
        scene: &cfg.scene,
        extrinsics: [CameraId::Thermal, CameraId::Uv]
            .map(|dst| GroundTruthExtrinsics {
                source: CameraId::Rgb,
                destination: dst,
                pose: cfg.rig.relative_pose(CameraId::Rgb, dst),
            })
            .into(),
        views: views
            .iter()
            .map(|v| GroundTruthView {
                view: v.view,
                spec: cfg.views[v.view],
                target_to_rig: v.target_to_rig,
                target_to_camera: CameraId::IMAGING
                    .iter()
                    .map(|&id| (id, cfg.rig.target_in_camera(id, &v.target_to_rig)))
                    .collect(),
            })
            .collect(),
        footprints: footprints(cfg)?,
    };
    let json = serde_json::to_string_pretty(&truth).map_err(|e| CliError::Failed(e.to_string()))?;
    write_text(&cfg.paths.ground_truth, &json)?;
    println!(
        "rendered {} calibration views and the scene frame into {}",
        views.len(),
        cfg.paths.calib_frames.parent().unwrap_or(Path::new(".")).display()
    );
    Ok(())
}

/// `view_XX` directories under the calibration frame directory, by view index.
fn view_dirs(root: &Path) -> Result<Vec<(usize, PathBuf)>, CliError> {
    let entries = fs::read_dir(root).map_err(|e| CliError::config(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::config(root, e))?;
        let name = entry.file_name();
        let Some(index) = name.to_str().and_then(|n| n.strip_prefix("view_")) else {
            continue;
        };
        if let Ok(view) = index.parse::<usize>() {
            dirs.push((view, entry.path()));
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Detects the target in every calibration image and calibrates the rig.
pub fn calibrate(cfg: &PipelineConfig) -> Result<CalibrationResult, CliError> {
    let dirs = view_dirs(&cfg.paths.calib_frames)?;
    let mut images: Vec<(usize, CameraId, Raster<f64>)> = Vec::with_capacity(3 * dirs.len());
    let mut sizes: BTreeMap<CameraId, (usize, usize, PathBuf)> = BTreeMap::new();
    for (view, dir) in &dirs {
        for id in CameraId::IMAGING {
            let path = dir.join(if id == CameraId::Rgb {
                "rgb.png".to_string()
            } else {
                format!("{id}.pgm")
            });
            let image = match id {
                CameraId::Rgb => read_rgb_png(&path)?.to_gray_f64(),
                CameraId::Thermal => read_pgm16(&path)?.to_f64(),
                _ => read_pgm8(&path)?.to_f64(),
            };
            let (w, h, first) = sizes
                .entry(id)
                .or_insert_with(|| (image.width(), image.height(), path.clone()));
            if image.dimensions() != (*w, *h) {
                return Err(CliError::config(
                    &path,
                    format!(
                        "image is {}x{}, but {} is {w}x{h}",
                        image.width(),
                        image.height(),
                        first.display()
                    ),
                ));
            }
            images.push((*view, id, image));
        }
    }

    let refs: Vec<(usize, CameraId, &Raster<f64>)> = images.iter().map(|(v, id, img)| (*v, *id, img)).collect();
    let (observations, failures) = observe_all(&refs, &cfg.target);
    for f in &failures {
        eprintln!("rejected view {} ({}): {}", f.view, f.camera, f.error);
    }

    let cameras: Vec<(CameraId, u32, u32)> = CameraId::IMAGING
        .iter()
        .map(|&id| {
            let (w, h) = sizes.get(&id).map_or((0, 0), |s| (s.0, s.1));
            (id, w as u32, h as u32)
        })
        .collect();
    let result = calibrate_rig(&cameras, &observations, &cfg.calibration)?;

    for cam in &result.cameras {
        for r in &cam.rejected_views {
            eprintln!("rejected view {} ({}): {}", r.view, cam.camera, r.reason);
        }
        let k = &cam.intrinsics;
        println!(
            "{:<8} RMS {:.5} px over {} views  fx {:.3} fy {:.3} cx {:.3} cy {:.3}",
            cam.camera.as_str(),
            cam.rms_px,
            cam.views.len(),
            k.fx,
            k.fy,
            k.cx,
            k.cy
        );
    }
    for e in &result.extrinsics {
        let t = e.pose.translation() * 1000.0;
        println!(
            "{} -> {}: t [{:.2}, {:.2}, {:.2}] mm, rotation {:.3} deg, spread {:.3} deg / {:.3} mm",
            e.source,
            e.destination,
            t.x,
            t.y,
            t.z,
            e.pose.axis_angle().norm().to_degrees(),
            e.spread.max_rotation_deg,
            e.spread.max_translation_m * 1000.0
        );
    }
    write_text(&cfg.paths.calibration, &result.to_json())?;
    Ok(result)
}

fn load_calibration(cfg: &PipelineConfig) -> Result<CalibrationResult, CliError> {
    let calib = CalibrationResult::load(&cfg.paths.calibration)?;
    if calib.reference != CameraId::Rgb {
        return Err(CliError::Mismatch(format!(
            "{}: reference camera is {}, frames are registered to rgb",
            cfg.paths.calibration.display(),
            calib.reference
        )));
    }
    Ok(calib)
}

/// Aligns the thermal and UV images of the scene frame onto the RGB grid.
pub fn register(cfg: &PipelineConfig) -> Result<(), CliError> {
    let calib = load_calibration(cfg)?;
    let frame = read_frame(&cfg.paths.scene_frame)?;
    let aligned = align_frame(&frame, &calib)?;

    let dir = &cfg.paths.aligned;
    create_dir(dir)?;
    write_pgm16(&dir.join("thermal.pgm"), &aligned.thermal.map(|v| v.round().clamp(0.0, 65535.0) as u16))?;
    write_pgm8(&dir.join("uv.pgm"), &aligned.uv.map(|v| v.round().clamp(0.0, 255.0) as u8))?;
    write_pgm8(&dir.join("bad_points.pgm"), &mask_to_u8(&aligned.bad_points))?;
    // Raw thermal image at RGB resolution, for side-by-side viewing only.
    let (w, h) = frame.rgb.dimensions();
    let display = harmonize_resolution(&frame.thermal.to_f64(), w, h);
    write_pgm16(&dir.join("thermal_display.pgm"), &display.map(|v| v.round().clamp(0.0, 65535.0) as u16))?;

    let bad = aligned.bad_points.data().iter().filter(|b| **b).count();
    println!("aligned {} of {} pixels ({bad} bad points)", aligned.bad_points.len() - bad, aligned.bad_points.len());
    Ok(())
}

/// Highlights hot and UV-bright pixels and builds the point cloud.
pub fn fuse(cfg: &PipelineConfig) -> Result<usize, CliError> {
    let calib = load_calibration(cfg)?;
    let rgb_intr = calib
        .camera(CameraId::Rgb)
        .map(|c| c.intrinsics)
        .ok_or_else(|| CliError::Mismatch(format!("{}: no rgb camera", cfg.paths.calibration.display())))?;
    let scene = &cfg.paths.scene_frame;
    let rgb = read_rgb_png(&scene.join("rgb.png"))?;
    let depth = read_pgm16(&scene.join("depth.pgm"))?;
    let dir = &cfg.paths.aligned;
    let thermal = read_pgm16(&dir.join("thermal.pgm"))?.to_f64();
    let uv = read_pgm8(&dir.join("uv.pgm"))?.to_f64();
    let bad_points = read_pgm8(&dir.join("bad_points.pgm"))?.map(|v| v != 0);

    let mismatch = |e: FusionError| CliError::Mismatch(e.to_string());
    let fused = highlight_with_sources(&rgb, &thermal, &uv, &bad_points, &cfg.fusion).map_err(mismatch)?;
    match fused.thresholds {
        Some((t, u)) => println!("thresholds: thermal {t}, uv {u}"),
        None => println!("thresholds: none (every pixel is a bad point)"),
    }
    write_rgb_png(&cfg.paths.fused, &fused.image)?;

    let cloud = build_point_cloud(&depth, &fused.image, &thermal, &uv, &rgb_intr).map_err(mismatch)?;
    save_ply(&cfg.paths.cloud, &cloud, cfg.ply_format).map_err(|e| ply_error(&cfg.paths.cloud, e))?;
    println!("{} points", cloud.len());
    Ok(cloud.len())
}
