//! Inputs shared by the benchmarks: the default rig, its rendered
//! calibration views and the default test scene.

use multispec::detect::{observe_all, GridObservation};
use multispec::rig::{default_views, render_calibration_views, render_scene, CalibrationView};
use multispec::{CameraId, MultispectralFrame, RigConfig, SceneSpec, TargetSpec};

pub struct Fixture {
    pub rig: RigConfig,
    pub target: TargetSpec,
    pub views: Vec<CalibrationView>,
    pub observations: Vec<GridObservation>,
    pub scene: MultispectralFrame,
}

impl Fixture {
    pub fn new() -> Self {
        let rig = RigConfig::default();
        let target = TargetSpec::default();
        let views = render_calibration_views(&rig, &target, &default_views(), 0.0, 0).expect("default views render");
        let images: Vec<_> = views
            .iter()
            .flat_map(|v| CameraId::IMAGING.map(|id| (v.view, id, v.image(id).expect("imaging camera"))))
            .collect();
        let (observations, failures) = observe_all(&images, &target);
        assert!(failures.is_empty(), "detection failed: {failures:?}");
        let scene = render_scene(&SceneSpec::default(), &rig, 0).expect("default scene renders");
        Self {
            rig,
            target,
            views,
            observations,
            scene,
        }
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}
