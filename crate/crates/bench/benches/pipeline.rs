use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use multispec::calib::{calibrate_camera, CalibrationOptions, CameraCalibration, RelativeExtrinsics};
use multispec::detect::observe;
use multispec::fusion::{build_point_cloud, highlight, FusionConfig};
use multispec::registration::{align_frame, build_mapping};
use multispec::{CalibrationResult, CameraId, PixelCoord, RigConfig, WorldPoint};
use multispec_bench::Fixture;

fn truth_calibration(f: &Fixture) -> CalibrationResult {
    let camera = |id: CameraId| CameraCalibration {
        camera: id,
        intrinsics: f.rig.camera(id).intrinsics,
        views: Vec::new(),
        rms_px: 0.0,
        rejected_views: Vec::new(),
    };
    let ext = |id: CameraId| RelativeExtrinsics {
        source: CameraId::Rgb,
        destination: id,
        pose: f.rig.relative_pose(CameraId::Rgb, id),
        views: Vec::new(),
        spread: Default::default(),
    };
    CalibrationResult {
        reference: CameraId::Rgb,
        cameras: CameraId::IMAGING.map(camera).into(),
        extrinsics: vec![ext(CameraId::Thermal), ext(CameraId::Uv)],
    }
}

fn camera_model(c: &mut Criterion) {
    let intr = RigConfig::default().rgb.intrinsics;
    let points: Vec<WorldPoint> = (0..1000)
        .map(|i| {
            let t = i as f64 / 1000.0;
            WorldPoint::new(0.4 * (t - 0.5), 0.3 * (0.5 - t * t), 0.5 + t)
        })
        .collect();
    let pixels: Vec<PixelCoord> = (0..1000)
        .map(|i| PixelCoord::new((i % 40) as f64 * 16.0, (i / 40) as f64 * 19.0))
        .collect();
    let mut g = c.benchmark_group("camera");
    g.bench_function("project_1000", |b| {
        b.iter(|| points.iter().map(|p| intr.project(black_box(*p)).unwrap().u).sum::<f64>())
    });
    g.bench_function("undistort_1000", |b| {
        b.iter(|| {
            pixels
                .iter()
                .filter_map(|p| intr.undistort_normalized(black_box(*p)).ok())
                .count()
        })
    });
    g.finish();
}

fn stages(c: &mut Criterion) {
    let f = Fixture::new();
    let mut g = c.benchmark_group("stages");
    g.sample_size(10);

    let view = &f.views[0];
    g.bench_function("detect_rgb_640x480", |b| {
        b.iter(|| observe(black_box(&view.rgb), &f.target, 0, CameraId::Rgb).unwrap())
    });
    g.bench_function("detect_thermal_160x120", |b| {
        b.iter(|| observe(black_box(&view.thermal), &f.target, 0, CameraId::Thermal).unwrap())
    });

    let options = CalibrationOptions::default();
    g.bench_function("calibrate_thermal_10_views", |b| {
        b.iter(|| calibrate_camera(CameraId::Thermal, 160, 120, black_box(&f.observations), &options).unwrap())
    });

    let rgb = f.rig.camera(CameraId::Rgb).intrinsics;
    let uv = f.rig.camera(CameraId::Uv).intrinsics;
    let rel = f.rig.relative_pose(CameraId::Rgb, CameraId::Uv);
    g.bench_function("mapping_640x480", |b| {
        b.iter(|| build_mapping(black_box(&f.scene.depth), &rgb, &uv, &rel).unwrap())
    });

    let calib = truth_calibration(&f);
    let aligned = align_frame(&f.scene, &calib).unwrap();
    g.bench_function("align_frame", |b| b.iter(|| align_frame(black_box(&f.scene), &calib).unwrap()));

    let cfg = FusionConfig::default();
    g.bench_function("highlight_640x480", |b| {
        b.iter(|| highlight(&aligned.rgb, &aligned.thermal, &aligned.uv, &aligned.bad_points, &cfg).unwrap())
    });
    g.bench_function("point_cloud_640x480", |b| {
        b.iter(|| build_point_cloud(&f.scene.depth, &aligned.rgb, &aligned.thermal, &aligned.uv, &rgb).unwrap())
    });
    g.finish();
}

criterion_group!(benches, camera_model, stages);
criterion_main!(benches);
