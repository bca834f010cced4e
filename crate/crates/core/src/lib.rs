//! Forward and inverse physically based rendering with spherical-Gaussian
//! lighting over signed-distance-field geometry.

pub mod autodiff;
pub mod brdf;
pub mod camera;
pub mod envmap;
pub mod fields;
pub mod image;
pub mod inverse;
pub mod manifest;
pub mod math;
pub mod mesh;
pub mod metrics;
pub mod nn;
pub mod render;
pub mod sampling;
pub mod scene_file;
pub mod sdf;
pub mod sg;

pub use autodiff::{Gradients, Recording, Var};
pub use brdf::{BrdfError, MaterialSample};
pub use camera::{Camera, Projection, Ray};
pub use envmap::{fit_envmap_to_sg, EnvmapFit};
pub use fields::{LightParameterization, Objective, ParameterField, ParameterStore};
pub use image::{ImageBuffer, ImageError, ImageFormat};
pub use inverse::{fit, relight, FitConfig, FitProblem, FitResult};
pub use math::{Real, Rgb, Vec3};
pub use mesh::TriangleMesh;
pub use render::{render, AovFrame, RenderConfig, Scene};
pub use sampling::SamplingConfig;
pub use sdf::SdfField;
pub use sg::SphericalGaussian;
