//! Forward shading with closed-form SG integrals, the per-pixel render
//! loop, and a Monte-Carlo reference renderer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brdf::{diffuse_coefficient, eval_brdf, specular_lobe, BrdfError, MaterialSample, COS_FLOOR};
use crate::camera::{Camera, CameraError, Ray};
use crate::fields::ParameterField;
use crate::image::ImageBuffer;
use crate::math::{uniform_hemisphere, Real, Rgb, Vec3, PI};
use crate::sampling::{intersect_surface, SamplingConfig};
use crate::sdf::SdfField;
use crate::sg::{cosine_sg, sg_product, SgError, SphericalGaussian};

/// Padding applied to the scene's bounding sphere before clipping rays.
pub const BOUNDS_PADDING: f64 = 1.05;

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("scene has no light lobes")]
    NoLights,
    #[error("light lobe {index}: {source}")]
    Light { index: usize, source: SgError },
    #[error("scene has {objects} objects but {materials} material fields (expected 1 or {objects})")]
    MaterialCount { objects: usize, materials: usize },
    #[error("invalid render config: {0}")]
    Config(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub geometry: SdfField,
    /// One field shared by every object, or one per top-level union child.
    pub materials: Vec<ParameterField>,
    pub lights: Vec<SphericalGaussian>,
    pub background: Rgb,
}

impl Scene {
    pub fn new(
        geometry: SdfField,
        materials: Vec<ParameterField>,
        lights: Vec<SphericalGaussian>,
        background: Rgb,
    ) -> Result<Self, RenderError> {
        let scene = Self {
            geometry,
            materials,
            lights,
            background,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if self.lights.is_empty() {
            return Err(RenderError::NoLights);
        }
        for (index, l) in self.lights.iter().enumerate() {
            l.validate().map_err(|source| RenderError::Light { index, source })?;
        }
        let objects = self.geometry.object_count();
        let materials = self.materials.len();
        if materials != 1 && materials != objects {
            return Err(RenderError::MaterialCount { objects, materials });
        }
        Ok(())
    }

    /// Index of the material field that applies at `x`.
    pub fn material_index(&self, x: Vec3) -> usize {
        if self.materials.len() == 1 {
            0
        } else {
            self.geometry.object_id(x)
        }
    }

    pub fn material_at(&self, x: Vec3) -> MaterialSample {
        self.materials[self.material_index(x)].eval(x)
    }

    pub fn with_lights(&self, lights: Vec<SphericalGaussian>) -> Scene {
        Scene {
            lights,
            ..self.clone()
        }
    }

    /// Radius used to clip primary rays.
    pub fn clip_radius(&self, fallback: f64) -> f64 {
        self.geometry.bounding_radius().unwrap_or(fallback) * BOUNDS_PADDING
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LdrEncoding {
    Srgb,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Jittered samples per pixel; a single sample goes through the centre.
    pub spp: usize,
    pub sampling: SamplingConfig,
    pub seed: u64,
    /// Clip radius for scenes without a finite bound.
    pub fallback_radius: f64,
    /// Transfer function of the 8-bit colour preview.
    pub ldr: LdrEncoding,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            spp: 1,
            sampling: SamplingConfig::default(),
            seed: 0,
            fallback_radius: 2.0,
            ldr: LdrEncoding::Srgb,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.spp < 1 {
            return Err(RenderError::Config("spp must be at least 1".into()));
        }
        if self.sampling.n_samples < 8 {
            return Err(RenderError::Config(format!(
                "ray sample count must be at least 8, got {}",
                self.sampling.n_samples
            )));
        }
        if self.sampling.d < 2 {
            return Err(RenderError::Config(format!(
                "subdivision count must be at least 2, got {}",
                self.sampling.d
            )));
        }
        if !(self.fallback_radius > 0.0 && self.fallback_radius.is_finite()) {
            return Err(RenderError::Config("fallback radius must be positive".into()));
        }
        Ok(())
    }
}

/// What happened while shading one point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ShadeFlags {
    /// At least one channel came out negative and was clamped to zero.
    pub clamped: bool,
    /// `ωo·n` was too small for the specular lobe; only diffuse was shaded.
    pub grazing: bool,
    pub roughness_floor: bool,
}

/// Unclamped diffuse and specular radiance, summed over light lobes.
pub fn shade_components<S: Real>(
    n: Vec3,
    wo: Vec3,
    mat: &MaterialSample<S>,
    lights: &[SphericalGaussian<S>],
) -> Result<(Rgb<S>, Rgb<S>, ShadeFlags), BrdfError> {
    let cos_o = wo.dot(n);
    if cos_o <= 0.0 {
        return Err(BrdfError::BackFacing(cos_o));
    }
    let mut flags = ShadeFlags::default();
    let (cos_lobe, offset) = cosine_sg(n);
    let cos_lobe = cos_lobe.lift::<S>();

    let kd = diffuse_coefficient(wo, n, mat.roughness, mat.metallic)?;
    let mut irradiance = Vec3::<S>::zero();
    for l in lights {
        irradiance += sg_product(l, &cos_lobe).integral() - l.integral() * offset;
    }
    let diffuse = irradiance.hadamard(mat.albedo).scale(kd / PI);

    let mut specular = Vec3::<S>::zero();
    if cos_o < COS_FLOOR {
        flags.grazing = true;
    } else {
        let (lobe, floor) = specular_lobe(wo, n, mat)?;
        flags.roughness_floor = floor;
        // the 1/(ωo·n)(ωi·n) Jacobian evaluated at the mirror direction
        let lobe = lobe.with_amplitude(lobe.amplitude / (4.0 * cos_o * cos_o));
        for l in lights {
            let p = sg_product(l, &lobe);
            specular += sg_product(&p, &cos_lobe).integral() - p.integral() * offset;
        }
    }
    Ok((diffuse, specular, flags))
}

/// Outgoing radiance at a surface point with normal `n` towards `wo`,
/// clamped at zero per channel.
pub fn shade_point<S: Real>(
    n: Vec3,
    wo: Vec3,
    mat: &MaterialSample<S>,
    lights: &[SphericalGaussian<S>],
) -> Result<(Rgb<S>, ShadeFlags), BrdfError> {
    let (d, s, mut flags) = shade_components(n, wo, mat, lights)?;
    let c = d + s;
    let zero = S::zero();
    flags.clamped = c.x.value() < 0.0 || c.y.value() < 0.0 || c.z.value() < 0.0;
    Ok((c.map(|v| v.max(zero)), flags))
}

/// A primary-ray surface hit with its shading frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrimaryHit {
    pub point: Vec3,
    pub normal: Vec3,
    /// Unit direction back towards the viewer.
    pub wo: Vec3,
    /// Distance along the ray from its origin.
    pub depth: f64,
    pub residual: f64,
}

/// Intersects one camera ray with the scene geometry.
pub fn trace_ray<R: Rng + ?Sized>(
    geometry: &SdfField,
    ray: &Ray,
    clip_radius: f64,
    sampling: &SamplingConfig,
    rng: Option<&mut R>,
) -> Option<PrimaryHit> {
    let ray = ray.clip_to_sphere(clip_radius)?;
    let hit = intersect_surface(geometry, &ray, sampling, rng)?;
    let normal = geometry.normal(hit.point).ok()?;
    Some(PrimaryHit {
        point: hit.point,
        normal,
        wo: -ray.direction,
        depth: hit.depth,
        residual: hit.residual,
    })
}

/// Counters gathered over a frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameStats {
    pub samples: usize,
    pub hits: usize,
    pub clamped: usize,
    pub grazing: usize,
    pub backfacing: usize,
    pub roughness_floor: usize,
}

impl FrameStats {
    fn merge(mut self, o: FrameStats) -> FrameStats {
        self.samples += o.samples;
        self.hits += o.hits;
        self.clamped += o.clamped;
        self.grazing += o.grazing;
        self.backfacing += o.backfacing;
        self.roughness_floor += o.roughness_floor;
        self
    }
}

/// The six image domains plus coverage.
#[derive(Clone, Debug, PartialEq)]
pub struct AovFrame {
    pub color: ImageBuffer,
    pub normal: ImageBuffer,
    pub depth: ImageBuffer,
    pub albedo: ImageBuffer,
    pub roughness: ImageBuffer,
    pub metallic: ImageBuffer,
    /// Fraction of pixel samples that hit the surface.
    pub mask: ImageBuffer,
    pub stats: FrameStats,
}

pub const AOV_NAMES: [&str; 7] = ["color", "normal", "depth", "albedo", "roughness", "metallic", "mask"];

impl AovFrame {
    pub fn width(&self) -> usize {
        self.color.width
    }

    pub fn height(&self) -> usize {
        self.color.height
    }

    /// Images in the fixed order of [`AOV_NAMES`].
    pub fn images(&self) -> [(&'static str, &ImageBuffer); 7] {
        [
            (AOV_NAMES[0], &self.color),
            (AOV_NAMES[1], &self.normal),
            (AOV_NAMES[2], &self.depth),
            (AOV_NAMES[3], &self.albedo),
            (AOV_NAMES[4], &self.roughness),
            (AOV_NAMES[5], &self.metallic),
            (AOV_NAMES[6], &self.mask),
        ]
    }
}

#[derive(Clone, Copy, Default)]
struct PixelOut {
    color: Rgb,
    normal: Vec3,
    depth: f64,
    albedo: Rgb,
    roughness: f64,
    metallic: f64,
    mask: f64,
    stats: FrameStats,
}

/// Random stream for one pixel, independent of thread scheduling.
pub fn pixel_rng(seed: u64, pixel: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pixel as u64);
    rng
}

fn render_pixel(scene: &Scene, camera: &Camera, cfg: &RenderConfig, radius: f64, i: usize, j: usize) -> PixelOut {
    let mut rng = pixel_rng(cfg.seed, j * camera.width + i);
    let mut out = PixelOut::default();
    let mut color = Vec3::zero();
    let mut normal = Vec3::zero();
    let mut mat_sum = [0.0; 6];
    for _ in 0..cfg.spp {
        let jitter = if cfg.spp == 1 {
            (0.0, 0.0)
        } else {
            (rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        };
        let ray = camera.generate_ray(i, j, jitter);
        out.stats.samples += 1;
        let Some(hit) = trace_ray(&scene.geometry, &ray, radius, &cfg.sampling, Some(&mut rng)) else {
            color += scene.background;
            continue;
        };
        out.stats.hits += 1;
        let mat = scene.material_at(hit.point);
        match shade_point(hit.normal, hit.wo, &mat, &scene.lights) {
            Ok((c, flags)) => {
                color += c;
                out.stats.clamped += flags.clamped as usize;
                out.stats.grazing += flags.grazing as usize;
                out.stats.roughness_floor += flags.roughness_floor as usize;
            }
            Err(_) => out.stats.backfacing += 1,
        }
        normal += hit.normal;
        out.depth += hit.depth;
        for (s, v) in mat_sum.iter_mut().zip(mat.to_array()) {
            *s += v;
        }
    }
    let spp = cfg.spp as f64;
    out.color = if cfg.spp == 1 { color } else { color / spp };
    let hits = out.stats.hits;
    if hits > 0 {
        let h = hits as f64;
        out.mask = hits as f64 / spp;
        out.normal = normal.try_normalize(1e-12).unwrap_or_else(Vec3::zero);
        if hits > 1 {
            out.depth /= h;
            mat_sum.iter_mut().for_each(|v| *v /= h);
        }
        out.albedo = Vec3::new(mat_sum[0], mat_sum[1], mat_sum[2]);
        out.roughness = mat_sum[3];
        out.metallic = mat_sum[4];
    }
    out
}

/// Renders every AOV for one camera. Pixels are independent and each owns
/// a seeded random stream, so the result does not depend on thread count.
pub fn render(scene: &Scene, camera: &Camera, cfg: &RenderConfig) -> Result<AovFrame, RenderError> {
    scene.validate()?;
    camera.validate()?;
    cfg.validate()?;
    let (w, h) = (camera.width, camera.height);
    let radius = scene.clip_radius(cfg.fallback_radius);
    let pixels: Vec<PixelOut> = (0..w * h)
        .into_par_iter()
        .map(|k| render_pixel(scene, camera, cfg, radius, k % w, k / w))
        .collect();

    let rgb = |f: &dyn Fn(&PixelOut) -> Vec3| -> ImageBuffer {
        ImageBuffer {
            width: w,
            height: h,
            channels: 3,
            data: pixels.iter().flat_map(|p| f(p).to_array()).collect(),
        }
    };
    let mono = |f: &dyn Fn(&PixelOut) -> f64| -> ImageBuffer {
        ImageBuffer {
            width: w,
            height: h,
            channels: 1,
            data: pixels.iter().map(f).collect(),
        }
    };
    Ok(AovFrame {
        color: rgb(&|p| p.color),
        normal: rgb(&|p| p.normal),
        depth: mono(&|p| p.depth),
        albedo: rgb(&|p| p.albedo),
        roughness: mono(&|p| p.roughness),
        metallic: mono(&|p| p.metallic),
        mask: mono(&|p| p.mask),
        stats: pixels.iter().fold(FrameStats::default(), |a, p| a.merge(p.stats)),
    })
}

/// Monte-Carlo estimate of the reflected radiance at one point from
/// `n_samples` independent uniform-hemisphere directions and the pointwise
/// BRDF.
pub fn mc_shade_point<R: Rng + ?Sized>(
    n: Vec3,
    wo: Vec3,
    mat: &MaterialSample,
    lights: &[SphericalGaussian],
    n_samples: usize,
    rng: &mut R,
) -> Rgb {
    let count = n_samples.max(1);
    let (t, b) = n.orthonormal_basis();
    let mut sum = Vec3::zero();
    for _ in 0..count {
        let l = uniform_hemisphere(rng.random::<f64>(), rng.random::<f64>());
        let wi = t * l.x + b * l.y + n * l.z;
        let Ok(f) = eval_brdf(wo, wi, n, mat) else { continue };
        let radiance = lights.iter().fold(Vec3::zero(), |acc, g| acc + g.eval_at(wi));
        sum += f.hadamard(radiance) * l.z;
    }
    sum * (2.0 * PI / count as f64)
}

/// Colour image from Monte-Carlo shading of the same primary hits that
/// [`render`] uses (pixel centres, deterministic intersection).
pub fn render_reference_mc(
    scene: &Scene,
    camera: &Camera,
    cfg: &RenderConfig,
    n_samples: usize,
    seed: u64,
) -> Result<ImageBuffer, RenderError> {
    scene.validate()?;
    camera.validate()?;
    cfg.validate()?;
    if n_samples < 1000 {
        return Err(RenderError::Config(format!(
            "Monte-Carlo reference needs at least 1000 samples, got {n_samples}"
        )));
    }
    let (w, h) = (camera.width, camera.height);
    let radius = scene.clip_radius(cfg.fallback_radius);
    let sampling = SamplingConfig {
        stochastic: false,
        ..cfg.sampling
    };
    let data: Vec<f64> = (0..w * h)
        .into_par_iter()
        .flat_map_iter(|k| {
            let ray = camera.generate_ray(k % w, k / w, (0.0, 0.0));
            let color = match trace_ray::<ChaCha8Rng>(&scene.geometry, &ray, radius, &sampling, None) {
                Some(hit) if hit.wo.dot(hit.normal) > 0.0 => {
                    let mat = scene.material_at(hit.point);
                    let mut rng = pixel_rng(seed, k);
                    mc_shade_point(hit.normal, hit.wo, &mat, &scene.lights, n_samples, &mut rng)
                }
                Some(_) => Vec3::zero(),
                None => scene.background,
            };
            color.to_array()
        })
        .collect();
    Ok(ImageBuffer {
        width: w,
        height: h,
        channels: 3,
        data,
    })
}

/// Pixels whose view cosine is below this are excluded from SG-vs-MC error
/// statistics.
pub const MC_GRAZING_COS: f64 = 0.1;

/// Relative colour error of the SG renderer against the Monte-Carlo
/// reference over covered, non-grazing pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McComparison {
    pub pixels: usize,
    pub mean_rel_error: f64,
    pub max_rel_error: f64,
}

pub fn compare_with_mc(
    scene: &Scene,
    camera: &Camera,
    cfg: &RenderConfig,
    n_samples: usize,
    seed: u64,
) -> Result<McComparison, RenderError> {
    let frame = render(scene, camera, &RenderConfig { spp: 1, ..*cfg })?;
    let mc = render_reference_mc(scene, camera, cfg, n_samples, seed)?;
    let w = camera.width;
    let (mut sum, mut max, mut pixels) = (0.0, 0.0f64, 0);
    for k in 0..frame.color.pixel_count() {
        if frame.mask.data[k] < 1.0 {
            continue;
        }
        let d = &frame.normal.data[3 * k..3 * k + 3];
        let n = Vec3::new(d[0], d[1], d[2]);
        let ray = camera.generate_ray(k % w, k / w, (0.0, 0.0));
        if -ray.direction.dot(n) < MC_GRAZING_COS {
            continue;
        }
        let err: f64 = (0..3)
            .map(|c| {
                let (a, b) = (frame.color.data[3 * k + c], mc.data[3 * k + c]);
                (a - b).abs() / b.max(1e-6)
            })
            .sum::<f64>()
            / 3.0;
        sum += err;
        max = max.max(err);
        pixels += 1;
    }
    Ok(McComparison {
        pixels,
        mean_rel_error: if pixels > 0 { sum / pixels as f64 } else { 0.0 },
        max_rel_error: max,
    })
}
