//! TOML scene descriptions, fit checkpoints and lobe files.
//!
//! A scene file looks like:
//!
//! ```toml
//! version = 1
//! background = [0.0, 0.0, 0.0]
//!
//! [geometry]
//! type = "sphere"
//! center = [0.0, 0.0, 0.0]
//! radius = 1.0
//!
//! [[materials]]
//! type = "constant"
//! albedo = [0.8, 0.8, 0.8]
//! roughness = 0.5
//!
//! [light]
//! type = "fibonacci"
//! lobes = 16
//! energy = [12.0, 12.0, 12.0]
//!
//! [cameras]
//! type = "canonical"
//! distance = 3.0
//! resolution = 64
//! ```
//!
//! Every table rejects unknown keys. Relative file references resolve
//! against the scene file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brdf::MaterialSample;
use crate::camera::{canonical_six_views, Camera, Projection, DEFAULT_PROJECTION};
use crate::envmap::{fit_envmap_to_sg, EnvmapError};
use crate::fields::ParameterField;
use crate::image::{decode_image, ImageError};
use crate::math::{Rgb, Vec3};
use crate::render::{RenderConfig, RenderError, Scene};
use crate::sdf::{GridSdf, NeuralSdf, SdfField};
use crate::sg::SphericalGaussian;

pub const SCENE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("{0}")]
    Syntax(String),
    #[error("unsupported scene version {0} (expected {SCENE_VERSION})")]
    Version(u32),
    #[error("{field}: {msg}")]
    Invalid { field: String, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: ImageError },
    #[error("{path}: {msg}")]
    Json { path: PathBuf, msg: String },
    #[error("envmap {path}: {source}")]
    Envmap { path: PathBuf, source: EnvmapError },
    #[error(transparent)]
    Scene(#[from] RenderError),
}

fn invalid(field: impl Into<String>, msg: impl Into<String>) -> SceneError {
    SceneError::Invalid {
        field: field.into(),
        msg: msg.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometrySpec {
    Sphere { center: Vec3, radius: f64 },
    Box { center: Vec3, half_extents: Vec3 },
    Torus { center: Vec3, major_radius: f64, minor_radius: f64 },
    Plane { normal: Vec3, offset: f64 },
    Union { children: Vec<GeometrySpec> },
    Intersection { children: Vec<GeometrySpec> },
    Subtraction { a: Box<GeometrySpec>, b: Box<GeometrySpec> },
    /// JSON-serialized grid or neural field.
    File { path: PathBuf },
}

fn positive(field: &str, v: f64) -> Result<(), SceneError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive, got {v}")))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, SceneError> {
    let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.into(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| SceneError::Json {
        path: path.into(),
        msg: e.to_string(),
    })
}

/// Grid or neural SDF stored as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SdfFile {
    Grid(GridSdf),
    Neural(NeuralSdf),
}

impl GeometrySpec {
    pub fn build(&self, base: &Path, field: &str) -> Result<SdfField, SceneError> {
        Ok(match self {
            GeometrySpec::Sphere { center, radius } => {
                positive(&format!("{field}.radius"), *radius)?;
                SdfField::sphere(*center, *radius)
            }
            GeometrySpec::Box { center, half_extents } => {
                for c in half_extents.to_array() {
                    positive(&format!("{field}.half_extents"), c)?;
                }
                SdfField::cuboid(*center, *half_extents)
            }
            GeometrySpec::Torus {
                center,
                major_radius,
                minor_radius,
            } => {
                positive(&format!("{field}.major_radius"), *major_radius)?;
                positive(&format!("{field}.minor_radius"), *minor_radius)?;
                SdfField::torus(*center, *major_radius, *minor_radius)
            }
            GeometrySpec::Plane { normal, offset } => SdfField::Plane {
                normal: normal
                    .try_normalize(1e-12)
                    .ok_or_else(|| invalid(format!("{field}.normal"), "zero vector"))?,
                offset: *offset,
            },
            GeometrySpec::Union { children } => SdfField::Union {
                children: build_children(children, base, field)?,
            },
            GeometrySpec::Intersection { children } => SdfField::Intersection {
                children: build_children(children, base, field)?,
            },
            GeometrySpec::Subtraction { a, b } => SdfField::Subtraction {
                a: Box::new(a.build(base, &format!("{field}.a"))?),
                b: Box::new(b.build(base, &format!("{field}.b"))?),
            },
            GeometrySpec::File { path } => match read_json::<SdfFile>(&base.join(path))? {
                SdfFile::Grid(g) => SdfField::Grid(
                    GridSdf::new(g.origin, g.cell_size, g.resolution, g.values).map_err(|e| invalid(field, e.to_string()))?,
                ),
                SdfFile::Neural(n) => SdfField::Neural(n),
            },
        })
    }
}

fn build_children(children: &[GeometrySpec], base: &Path, field: &str) -> Result<Vec<SdfField>, SceneError> {
    children
        .iter()
        .enumerate()
        .map(|(i, c)| c.build(base, &format!("{field}.children[{i}]")))
        .collect()
}

fn half() -> f64 {
    0.5
}

fn zero() -> f64 {
    0.0
}

fn default_albedo() -> Vec3 {
    Vec3::splat(0.5)
}

fn default_encoding_order() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaterialSpec {
    Constant {
        #[serde(default = "default_albedo")]
        albedo: Rgb,
        #[serde(default = "half")]
        roughness: f64,
        #[serde(default = "zero")]
        metallic: f64,
        #[serde(default = "half")]
        specular: f64,
    },
    /// Uniformly initialized lattice of material logits.
    Grid {
        origin: Vec3,
        cell_size: f64,
        resolution: usize,
        #[serde(default = "default_albedo")]
        albedo: Rgb,
        #[serde(default = "half")]
        roughness: f64,
        #[serde(default = "zero")]
        metallic: f64,
        #[serde(default = "half")]
        specular: f64,
    },
    /// Randomly initialized network.
    Neural {
        #[serde(default = "default_encoding_order")]
        encoding_order: usize,
        width: usize,
        hidden: usize,
        #[serde(default)]
        seed: u64,
    },
    /// JSON-serialized field, e.g. from a fit checkpoint.
    File { path: PathBuf },
}

fn unit_interval(field: &str, v: f64) -> Result<f64, SceneError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(invalid(field, format!("must lie in [0, 1], got {v}")))
    }
}

fn material_sample(field: &str, albedo: Rgb, roughness: f64, metallic: f64, specular: f64) -> Result<MaterialSample, SceneError> {
    for c in albedo.to_array() {
        unit_interval(&format!("{field}.albedo"), c)?;
    }
    Ok(MaterialSample::new(
        albedo,
        unit_interval(&format!("{field}.roughness"), roughness)?,
        unit_interval(&format!("{field}.metallic"), metallic)?,
        unit_interval(&format!("{field}.specular"), specular)?,
    ))
}

impl MaterialSpec {
    pub fn build(&self, base: &Path, field: &str) -> Result<ParameterField, SceneError> {
        Ok(match self {
            MaterialSpec::Constant {
                albedo,
                roughness,
                metallic,
                specular,
            } => ParameterField::constant(material_sample(field, *albedo, *roughness, *metallic, *specular)?),
            MaterialSpec::Grid {
                origin,
                cell_size,
                resolution,
                albedo,
                roughness,
                metallic,
                specular,
            } => {
                let m = material_sample(field, *albedo, *roughness, *metallic, *specular)?;
                ParameterField::grid_uniform(m, *origin, *cell_size, *resolution).map_err(|e| invalid(field, e.to_string()))?
            }
            MaterialSpec::Neural {
                encoding_order,
                width,
                hidden,
                seed,
            } => {
                if *width == 0 || *hidden == 0 {
                    return Err(invalid(field, "width and hidden must be positive"));
                }
                ParameterField::neural(*encoding_order, *width, *hidden, *seed)
            }
            MaterialSpec::File { path } => read_json(&base.join(path))?,
        })
    }
}

fn default_sharpness() -> f64 {
    crate::inverse::DEFAULT_INIT_SHARPNESS
}

/// Validates lobes read from a file, normalizing their axes.
fn normalized_lobes(lobes: &[SphericalGaussian], field: &str) -> Result<Vec<SphericalGaussian>, SceneError> {
    lobes
        .iter()
        .enumerate()
        .map(|(i, l)| match l.validate() {
            Ok(()) => Ok(*l),
            Err(_) => SphericalGaussian::new(l.axis, l.sharpness, l.amplitude)
                .map_err(|e| invalid(format!("{field}[{i}]"), e.to_string())),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LightSpec {
    Lobes {
        lobes: Vec<SphericalGaussian>,
    },
    /// Lat-long PFM or PPM map fitted with `lobes` SGs.
    Envmap {
        path: PathBuf,
        lobes: usize,
    },
    /// Equal lobes on a spherical Fibonacci lattice.
    Fibonacci {
        lobes: usize,
        energy: Rgb,
        #[serde(default = "default_sharpness")]
        sharpness: f64,
    },
}

impl LightSpec {
    pub fn build(&self, base: &Path) -> Result<Vec<SphericalGaussian>, SceneError> {
        match self {
            LightSpec::Lobes { lobes } => normalized_lobes(lobes, "light.lobes"),
            LightSpec::Envmap { path, lobes } => {
                let path = base.join(path);
                let bytes = std::fs::read(&path).map_err(|source| SceneError::Io {
                    path: path.clone(),
                    source,
                })?;
                let map = decode_image(&bytes).map_err(|source| SceneError::Image {
                    path: path.clone(),
                    source,
                })?;
                let fit = fit_envmap_to_sg(&map, *lobes).map_err(|source| SceneError::Envmap { path, source })?;
                Ok(fit.lobes)
            }
            LightSpec::Fibonacci { lobes, energy, sharpness } => {
                if *lobes == 0 {
                    return Err(invalid("light.lobes", "must be at least 1"));
                }
                positive("light.sharpness", *sharpness)?;
                if energy.to_array().iter().any(|e| *e < 0.0 || !e.is_finite()) {
                    return Err(invalid("light.energy", "must be finite and non-negative"));
                }
                Ok(crate::inverse::init_light_with(*lobes, *energy, *sharpness))
            }
        }
    }
}

fn default_projection() -> Projection {
    DEFAULT_PROJECTION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CameraSpec {
    /// The six canonical ring views.
    Canonical {
        distance: f64,
        resolution: usize,
        #[serde(default = "default_projection")]
        projection: Projection,
    },
    List {
        cameras: Vec<Camera>,
    },
}

impl CameraSpec {
    pub fn build(&self) -> Result<Vec<Camera>, SceneError> {
        let cams = match self {
            CameraSpec::Canonical {
                distance,
                resolution,
                projection,
            } => {
                positive("cameras.distance", *distance)?;
                canonical_six_views(*distance, *resolution, *projection).to_vec()
            }
            CameraSpec::List { cameras } => cameras.clone(),
        };
        if cams.is_empty() {
            return Err(invalid("cameras", "no cameras"));
        }
        for (i, c) in cams.iter().enumerate() {
            c.validate().map_err(|e| invalid(format!("cameras[{i}]"), e.to_string()))?;
        }
        Ok(cams)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDescription {
    pub version: u32,
    #[serde(default)]
    pub background: Rgb,
    pub geometry: GeometrySpec,
    pub materials: Vec<MaterialSpec>,
    pub light: LightSpec,
    pub cameras: CameraSpec,
    #[serde(default)]
    pub render: RenderConfig,
}

/// A scene ready to render, with its cameras and render settings.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedScene {
    pub scene: Scene,
    pub cameras: Vec<Camera>,
    pub render: RenderConfig,
}

pub fn parse_scene(text: &str) -> Result<SceneDescription, SceneError> {
    let desc: SceneDescription = toml::from_str(text).map_err(|e| SceneError::Syntax(e.to_string()))?;
    if desc.version != SCENE_VERSION {
        return Err(SceneError::Version(desc.version));
    }
    if desc.materials.is_empty() {
        return Err(invalid("materials", "at least one material is required"));
    }
    desc.render.validate().map_err(|e| invalid("render", e.to_string()))?;
    Ok(desc)
}

impl SceneDescription {
    /// TOML text with every default spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene descriptions always serialize")
    }

    pub fn build(&self, base: &Path) -> Result<LoadedScene, SceneError> {
        let geometry = self.geometry.build(base, "geometry")?;
        let materials = self
            .materials
            .iter()
            .enumerate()
            .map(|(i, m)| m.build(base, &format!("materials[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let lights = self.light.build(base)?;
        let scene = Scene::new(geometry, materials, lights, self.background)?;
        Ok(LoadedScene {
            scene,
            cameras: self.cameras.build()?,
            render: self.render,
        })
    }
}

pub fn load_scene(path: &Path) -> Result<(SceneDescription, LoadedScene), SceneError> {
    let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.into(),
        source,
    })?;
    let desc = parse_scene(&text).map_err(|e| match e {
        SceneError::Syntax(msg) => SceneError::Syntax(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let loaded = desc.build(base)?;
    Ok((desc, loaded))
}

/// Everything needed to re-render a fitted scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub scene: Scene,
    pub cameras: Vec<Camera>,
    pub render: RenderConfig,
}

impl Checkpoint {
    pub fn new(scene: Scene, cameras: Vec<Camera>, render: RenderConfig) -> Self {
        Self {
            version: SCENE_VERSION,
            scene,
            cameras,
            render,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoints always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| SceneError::Syntax(e.to_string()))?;
        if c.version != SCENE_VERSION {
            return Err(SceneError::Version(c.version));
        }
        c.scene.validate()?;
        Ok(c)
    }
}

/// A standalone list of light lobes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LobeFile {
    pub lobes: Vec<SphericalGaussian>,
}

impl LobeFile {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("lobe files always serialize")
    }

    pub fn parse(text: &str) -> Result<Self, SceneError> {
        let f: LobeFile = toml::from_str(text).map_err(|e| SceneError::Syntax(e.to_string()))?;
        Ok(LobeFile {
            lobes: normalized_lobes(&f.lobes, "lobes")?,
        })
    }
}
