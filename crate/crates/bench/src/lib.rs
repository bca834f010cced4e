//! Fixtures shared by the benchmarks.

use sgir::camera::{Camera, DEFAULT_PROJECTION};
use sgir::inverse::init_light_with;
use sgir::{MaterialSample, ParameterField, Scene, SdfField, SphericalGaussian, Vec3};

pub fn lights(n: usize) -> Vec<SphericalGaussian> {
    init_light_with(n, Vec3::splat(10.0), 8.0)
}

pub fn glossy() -> MaterialSample {
    MaterialSample::new(Vec3::new(0.7, 0.5, 0.3), 0.4, 0.2, 0.5)
}

/// Sphere and box side by side with distinct constant materials.
pub fn two_objects(n_lights: usize) -> Scene {
    Scene::new(
        SdfField::union(vec![
            SdfField::sphere(Vec3::new(-0.55, 0.0, 0.0), 0.45),
            SdfField::cuboid(Vec3::new(0.55, 0.0, 0.0), Vec3::splat(0.35)),
        ]),
        vec![
            ParameterField::constant(glossy()),
            ParameterField::constant(MaterialSample::new(Vec3::new(0.2, 0.5, 0.7), 0.7, 0.6, 0.5)),
        ],
        lights(n_lights),
        Vec3::zero(),
    )
    .expect("fixture scene is valid")
}

pub fn front_camera(resolution: usize) -> Camera {
    Camera::on_ring(0.0, 10.0, 3.0, DEFAULT_PROJECTION, resolution)
}
