//! Multi-view fitting of SG lighting and material fields over fixed
//! geometry, and relighting of the result.
//!
//! Primary hits are computed once per pixel (geometry never changes), so a
//! fit step only re-shades a random batch of hits. Each batch is split into
//! chunks that record their own tape, possibly on different threads; chunk
//! gradients are summed in chunk order, so results do not depend on the
//! thread count.

use std::ops::Range;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brdf::MaterialSample;
use crate::camera::Camera;
use crate::fields::{value_and_gradient, FieldError, LightParameterization, Objective, ParameterField, ParameterStore};
use crate::image::ImageBuffer;
use crate::math::{Real, Rgb, Vec3, PI};
use crate::metrics::{psnr, MetricError, MASK_THRESHOLD};
use crate::render::{render, trace_ray, AovFrame, PrimaryHit, RenderConfig, RenderError, Scene};
use crate::sdf::SdfField;
use crate::sg::SphericalGaussian;

pub const DEFAULT_INIT_SHARPNESS: f64 = 10.0;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("fit needs at least one view")]
    NoViews,
    #[error("view {view}: {msg}")]
    Target { view: usize, msg: String },
    #[error("no target pixel hits the geometry")]
    NoRays,
    #[error("loss became {loss} at step {step}")]
    Divergence { step: usize, loss: f64, snapshot: Vec<f64> },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// `n` lobes on a spherical Fibonacci lattice with equal sharpness and
/// amplitudes summing to `total_energy` over the sphere.
pub fn init_light(n_lobes: usize, total_energy: Rgb) -> Vec<SphericalGaussian> {
    init_light_with(n_lobes, total_energy, DEFAULT_INIT_SHARPNESS)
}

pub fn init_light_with(n_lobes: usize, total_energy: Rgb, sharpness: f64) -> Vec<SphericalGaussian> {
    let golden = PI * (3.0 - 5f64.sqrt());
    let unit = 2.0 * PI / sharpness * (-(-2.0 * sharpness).exp_m1());
    let amplitude = total_energy / (n_lobes as f64 * unit);
    (0..n_lobes)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / n_lobes as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            SphericalGaussian {
                axis: Vec3::new(r * phi.cos(), r * phi.sin(), z),
                sharpness,
                amplitude,
            }
        })
        .collect()
}

/// Per-channel loss weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub color: f64,
    pub albedo: f64,
    pub roughness: f64,
    pub metallic: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            color: 1.0,
            albedo: 1.0,
            roughness: 1.0,
            metallic: 1.0,
        }
    }
}

/// Target images for one view. Material images are optional supervision.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewTarget {
    pub color: ImageBuffer,
    pub mask: ImageBuffer,
    pub albedo: Option<ImageBuffer>,
    pub roughness: Option<ImageBuffer>,
    pub metallic: Option<ImageBuffer>,
}

impl ViewTarget {
    /// Colour and mask from a rendered frame, without material supervision.
    pub fn from_frame(frame: &AovFrame) -> Self {
        Self {
            color: frame.color.clone(),
            mask: frame.mask.clone(),
            albedo: None,
            roughness: None,
            metallic: None,
        }
    }

    pub fn with_material_supervision(mut self, frame: &AovFrame) -> Self {
        self.albedo = Some(frame.albedo.clone());
        self.roughness = Some(frame.roughness.clone());
        self.metallic = Some(frame.metallic.clone());
        self
    }
}

/// Masked mean squared error between a rendered frame and a target, plus
/// weighted MSE on supervised material channels. The flag is set when the
/// mask is empty, in which case the loss is zero.
pub fn image_loss(rendered: &AovFrame, target: &ViewTarget, weights: &LossWeights) -> Result<(f64, bool), MetricError> {
    let mask = Some(&target.mask);
    let mut total = match crate::metrics::mse(&rendered.color, &target.color, mask) {
        Ok(v) => weights.color * v,
        Err(MetricError::EmptyMask) => return Ok((0.0, true)),
        Err(e) => return Err(e),
    };
    for (w, a, b) in [
        (weights.albedo, &rendered.albedo, &target.albedo),
        (weights.roughness, &rendered.roughness, &target.roughness),
        (weights.metallic, &rendered.metallic, &target.metallic),
    ] {
        if let Some(b) = b {
            total += w * crate::metrics::mse(a, b, mask)?;
        }
    }
    Ok((total, false))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Unknowns {
    pub light: bool,
    pub materials: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitProblem {
    pub geometry: SdfField,
    pub cameras: Vec<Camera>,
    pub targets: Vec<ViewTarget>,
    /// Initial values of unknown lobes, or the known light.
    pub lights: Vec<SphericalGaussian>,
    /// Initial values of unknown fields, or the known materials.
    pub materials: Vec<ParameterField>,
    pub unknowns: Unknowns,
    /// Keep the light's total energy fixed at this value while fitting.
    pub light_energy: Option<Rgb>,
    pub weights: LossWeights,
    pub render: RenderConfig,
    pub background: Rgb,
}

/// One target pixel with its precomputed primary hit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitRay {
    pub view: usize,
    pub pixel: usize,
    pub hit: PrimaryHit,
    pub material: usize,
    pub color: Rgb,
    pub albedo: Option<Rgb>,
    pub roughness: Option<f64>,
    pub metallic: Option<f64>,
}

/// Where each unknown lives in the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    pub light: Option<Range<usize>>,
    pub materials: Vec<Option<Range<usize>>>,
    pub len: usize,
}

impl FitProblem {
    pub fn validate(&self) -> Result<(), FitError> {
        if self.cameras.is_empty() {
            return Err(FitError::NoViews);
        }
        if self.cameras.len() != self.targets.len() {
            return Err(FitError::Target {
                view: self.targets.len().min(self.cameras.len()),
                msg: format!("{} cameras but {} targets", self.cameras.len(), self.targets.len()),
            });
        }
        self.scene().validate()?;
        self.render.validate()?;
        for (view, (cam, t)) in self.cameras.iter().zip(&self.targets).enumerate() {
            cam.validate().map_err(RenderError::from)?;
            let err = |msg: String| FitError::Target { view, msg };
            let (w, h) = (cam.width, cam.height);
            if t.color.shape() != (w, h, 3) {
                return Err(err(format!("color image is {:?}, camera is {w}x{h}", t.color.shape())));
            }
            if t.mask.shape() != (w, h, 1) {
                return Err(err(format!("mask is {:?}, camera is {w}x{h}", t.mask.shape())));
            }
            if t.mask.data.iter().any(|&m| m != 0.0 && m != 1.0) {
                return Err(err("mask is not binary".into()));
            }
            for (name, img, c) in [("albedo", &t.albedo, 3), ("roughness", &t.roughness, 1), ("metallic", &t.metallic, 1)] {
                if let Some(img) = img {
                    if img.shape() != (w, h, c) {
                        return Err(err(format!("{name} image is {:?}", img.shape())));
                    }
                }
            }
        }
        Ok(())
    }

    /// The scene with the problem's current light and materials.
    pub fn scene(&self) -> Scene {
        Scene {
            geometry: self.geometry.clone(),
            materials: self.materials.clone(),
            lights: self.lights.clone(),
            background: self.background,
        }
    }

    pub fn light_parameterization(&self) -> LightParameterization {
        LightParameterization {
            fixed_energy: self.light_energy,
        }
    }

    pub fn layout(&self) -> ParamLayout {
        let mut len = 0;
        let mut take = |n: usize| {
            let r = len..len + n;
            len += n;
            r
        };
        let light = self.unknowns.light.then(|| take(self.lights.len() * crate::fields::LOBE_PARAMS));
        let materials = self
            .materials
            .iter()
            .map(|m| self.unknowns.materials.then(|| take(m.param_count())))
            .collect();
        ParamLayout { light, materials, len }
    }

    /// Named blocks holding the initial unknowns, in layout order.
    pub fn parameter_store(&self) -> ParameterStore {
        let mut store = ParameterStore::new();
        if self.unknowns.light {
            store
                .push("light", self.light_parameterization().encode(&self.lights))
                .expect("fresh store");
        }
        if self.unknowns.materials {
            for (i, m) in self.materials.iter().enumerate() {
                store.push(format!("material.{i}"), m.params()).expect("fresh store");
            }
        }
        store
    }

    /// Light and materials described by a flat parameter vector.
    pub fn decode(&self, params: &[f64]) -> Result<(Vec<SphericalGaussian>, Vec<ParameterField>), FitError> {
        let layout = self.layout();
        if params.len() != layout.len {
            return Err(FieldError::ParamLength {
                expected: layout.len,
                got: params.len(),
            }
            .into());
        }
        let lights = match &layout.light {
            Some(r) => self.light_parameterization().decode(&params[r.clone()]),
            None => self.lights.clone(),
        };
        let mut materials = self.materials.clone();
        for (m, r) in materials.iter_mut().zip(&layout.materials) {
            if let Some(r) = r {
                m.set_params(&params[r.clone()])?;
            }
        }
        Ok((lights, materials))
    }

    /// Primary hits for every masked target pixel, plus the number of masked
    /// pixels whose ray missed the geometry.
    pub fn trace_targets(&self) -> (Vec<FitRay>, usize) {
        let scene = self.scene();
        let radius = scene.clip_radius(self.render.fallback_radius);
        let sampling = crate::sampling::SamplingConfig {
            stochastic: false,
            ..self.render.sampling
        };
        let mut rays = Vec::new();
        let mut missed = 0;
        for (view, (cam, t)) in self.cameras.iter().zip(&self.targets).enumerate() {
            let w = cam.width;
            let traced: Vec<Option<FitRay>> = (0..w * cam.height)
                .into_par_iter()
                .map(|k| {
                    if t.mask.data[k] < MASK_THRESHOLD {
                        return None;
                    }
                    let ray = cam.generate_ray(k % w, k / w, (0.0, 0.0));
                    let hit = trace_ray::<ChaCha8Rng>(&self.geometry, &ray, radius, &sampling, None)?;
                    if hit.wo.dot(hit.normal) <= 0.0 {
                        return None;
                    }
                    let px = |img: &ImageBuffer| img.pixel(k % w, k / w).to_vec();
                    Some(FitRay {
                        view,
                        pixel: k,
                        hit,
                        material: scene.material_index(hit.point),
                        color: Vec3::from_array(px(&t.color).try_into().unwrap()),
                        albedo: t.albedo.as_ref().map(|a| Vec3::from_array(px(a).try_into().unwrap())),
                        roughness: t.roughness.as_ref().map(|r| px(r)[0]),
                        metallic: t.metallic.as_ref().map(|m| px(m)[0]),
                    })
                })
                .collect();
            for (k, r) in traced.into_iter().enumerate() {
                match r {
                    Some(r) => rays.push(r),
                    None if t.mask.data[k] >= MASK_THRESHOLD => missed += 1,
                    None => {}
                }
            }
        }
        (rays, missed)
    }

    /// Loss over a set of rays as a differentiable function of the flat
    /// parameter vector.
    pub fn objective<'a>(&'a self, rays: &'a [FitRay], normalizer: usize) -> BatchObjective<'a> {
        BatchObjective {
            problem: self,
            layout: self.layout(),
            rays,
            normalizer: normalizer.max(1) as f64,
        }
    }
}

pub struct BatchObjective<'a> {
    problem: &'a FitProblem,
    layout: ParamLayout,
    rays: &'a [FitRay],
    normalizer: f64,
}

fn sq<S: Real>(x: S) -> S {
    x * x
}

impl Objective for BatchObjective<'_> {
    /// Sum of per-ray losses divided by the normalizer, so chunk losses of
    /// one batch add up to the batch mean.
    fn loss<S: Real>(&self, p: &[S]) -> S {
        let pb = self.problem;
        let lights: Vec<SphericalGaussian<S>> = match &self.layout.light {
            Some(r) => pb.light_parameterization().decode(&p[r.clone()]),
            None => pb.lights.iter().map(|l| l.lift()).collect(),
        };
        let w = &pb.weights;
        let mut total = S::zero();
        for ray in self.rays {
            let x = ray.hit.point;
            let field = &pb.materials[ray.material];
            let mat: MaterialSample<S> = match &self.layout.materials[ray.material] {
                Some(r) => field.eval_with(&p[r.clone()], x),
                None => field.eval(x).lift(),
            };
            let c = match crate::render::shade_point(ray.hit.normal, ray.hit.wo, &mat, &lights) {
                Ok((c, _)) => c,
                Err(_) => Vec3::zero(),
            };
            let d = c - Vec3::constant(ray.color);
            let mut l = (sq(d.x) + sq(d.y) + sq(d.z)) * (w.color / 3.0);
            if let Some(a) = ray.albedo {
                let d = mat.albedo - Vec3::constant(a);
                l = l + (sq(d.x) + sq(d.y) + sq(d.z)) * (w.albedo / 3.0);
            }
            if let Some(r) = ray.roughness {
                l = l + sq(mat.roughness - r) * w.roughness;
            }
            if let Some(m) = ray.metallic {
                l = l + sq(mat.metallic - m) * w.metallic;
            }
            total = total + l;
        }
        total / self.normalizer
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub iterations: usize,
    pub lr: f64,
    pub seed: u64,
    pub batch_rays: usize,
    /// Rays per recorded tape.
    pub chunk_rays: usize,
    /// Full loss over every ray is recorded every this many steps.
    pub eval_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            lr: 5e-3,
            seed: 0,
            batch_rays: 4096,
            chunk_rays: 256,
            eval_every: 50,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments per parameter block and the loss history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: usize,
    pub lr: f64,
    pub blocks: Vec<String>,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    /// Batch loss of every step.
    pub loss_history: Vec<f64>,
    /// `(step, loss over all rays)` at the evaluation interval and at the end.
    pub full_loss_history: Vec<(usize, f64)>,
}

impl OptimizerState {
    pub fn new(store: &ParameterStore, lr: f64) -> Self {
        Self {
            step: 0,
            lr,
            blocks: store.blocks().iter().map(|b| b.name.clone()).collect(),
            first_moment: store.blocks().iter().map(|b| vec![0.0; b.values.len()]).collect(),
            second_moment: store.blocks().iter().map(|b| vec![0.0; b.values.len()]).collect(),
            loss_history: Vec::new(),
            full_loss_history: Vec::new(),
        }
    }

    /// One Adam update of `params` (flat, block order) from `grads`.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], cfg: &FitConfig) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let mut k = 0;
        for (m, v) in self.first_moment.iter_mut().zip(self.second_moment.iter_mut()) {
            for (mi, vi) in m.iter_mut().zip(v.iter_mut()) {
                let g = grads[k];
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
                params[k] -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + cfg.epsilon);
                k += 1;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub lights: Vec<SphericalGaussian>,
    pub materials: Vec<ParameterField>,
    pub params: Vec<f64>,
    pub state: OptimizerState,
    pub rays: usize,
    /// Masked target pixels whose primary ray missed the geometry.
    pub missed_pixels: usize,
}

fn batch_loss_and_gradient(problem: &FitProblem, rays: &[FitRay], batch: &[usize], params: &[f64], chunk: usize) -> (f64, Vec<f64>) {
    let selected: Vec<FitRay> = batch.iter().map(|&i| rays[i]).collect();
    let parts: Vec<(f64, Vec<f64>)> = selected
        .par_chunks(chunk.max(1))
        .map(|c| {
            let obj = problem.objective(c, selected.len());
            let (v, g, _) = value_and_gradient(&obj, params);
            (v, g)
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for (v, g) in parts {
        loss += v;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    (loss, grad)
}

fn full_loss(problem: &FitProblem, rays: &[FitRay], params: &[f64], chunk: usize) -> f64 {
    rays.par_chunks(chunk.max(1))
        .map(|c| problem.objective(c, rays.len()).loss(params))
        .collect::<Vec<f64>>()
        .into_iter()
        .sum()
}

/// Fits the unknowns with Adam on random ray batches. Light axes are
/// projected to the tangent plane before and renormalized after every step.
pub fn fit(problem: &FitProblem, cfg: &FitConfig) -> Result<FitResult, FitError> {
    problem.validate()?;
    let (rays, missed_pixels) = problem.trace_targets();
    if rays.is_empty() {
        return Err(FitError::NoRays);
    }
    let store = problem.parameter_store();
    let layout = problem.layout();
    let mut params = store.flatten();
    let mut state = OptimizerState::new(&store, cfg.lr);
    if cfg.iterations == 0 {
        return Ok(FitResult {
            lights: problem.lights.clone(),
            materials: problem.materials.clone(),
            params,
            state,
            rays: rays.len(),
            missed_pixels,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batch_size = cfg.batch_rays.min(rays.len()).max(1);
    for step in 0..cfg.iterations {
        if step % cfg.eval_every.max(1) == 0 {
            state.full_loss_history.push((step, full_loss(problem, &rays, &params, cfg.chunk_rays)));
        }
        let mut batch = sample(&mut rng, rays.len(), batch_size).into_vec();
        batch.sort_unstable();
        let (loss, mut grad) = batch_loss_and_gradient(problem, &rays, &batch, &params, cfg.chunk_rays);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(FitError::Divergence {
                step,
                loss,
                snapshot: params,
            });
        }
        state.loss_history.push(loss);
        if let Some(r) = &layout.light {
            LightParameterization::project_axis_gradients(&params[r.clone()], &mut grad[r.clone()]);
        }
        state.update(&mut params, &grad, cfg);
        if let Some(r) = &layout.light {
            LightParameterization::renormalize_axes(&mut params[r.clone()]);
        }
    }
    let final_loss = full_loss(problem, &rays, &params, cfg.chunk_rays);
    if !final_loss.is_finite() {
        return Err(FitError::Divergence {
            step: cfg.iterations,
            loss: final_loss,
            snapshot: params,
        });
    }
    state.full_loss_history.push((cfg.iterations, final_loss));
    let (lights, materials) = problem.decode(&params)?;
    Ok(FitResult {
        lights,
        materials,
        params,
        state,
        rays: rays.len(),
        missed_pixels,
    })
}

/// Renders `scene` with its light replaced by `new_light`.
pub fn relight(scene: &Scene, new_light: &[SphericalGaussian], camera: &Camera, cfg: &RenderConfig) -> Result<AovFrame, RenderError> {
    render(&scene.with_lights(new_light.to_vec()), camera, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LobeRow {
    pub axis: [f64; 3],
    pub sharpness: f64,
    pub amplitude: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub seed: u64,
    pub config: FitConfig,
    pub unknowns: Unknowns,
    pub rays: usize,
    pub missed_pixels: usize,
    pub final_batch_loss: f64,
    pub final_full_loss: f64,
    /// Masked colour PSNR of the fitted scene against each target view.
    pub view_psnr: Vec<f64>,
    pub lobes: Vec<LobeRow>,
    /// Materials of constant fields, `None` for spatially varying ones.
    pub materials: Vec<Option<MaterialSample>>,
}

pub fn fit_report(problem: &FitProblem, result: &FitResult, cfg: &FitConfig) -> Result<FitReport, FitError> {
    let scene = Scene {
        lights: result.lights.clone(),
        materials: result.materials.clone(),
        ..problem.scene()
    };
    let mut view_psnr = Vec::with_capacity(problem.cameras.len());
    for (cam, t) in problem.cameras.iter().zip(&problem.targets) {
        let frame = render(&scene, cam, &problem.render)?;
        view_psnr.push(psnr(&frame.color, &t.color, Some(&t.mask))?);
    }
    Ok(FitReport {
        seed: cfg.seed,
        config: cfg.clone(),
        unknowns: problem.unknowns,
        rays: result.rays,
        missed_pixels: result.missed_pixels,
        final_batch_loss: result.state.loss_history.last().copied().unwrap_or(f64::NAN),
        final_full_loss: result.state.full_loss_history.last().map_or(f64::NAN, |l| l.1),
        view_psnr,
        lobes: result
            .lights
            .iter()
            .map(|l| LobeRow {
                axis: l.axis.to_array(),
                sharpness: l.sharpness,
                amplitude: l.amplitude.to_array(),
            })
            .collect(),
        materials: result
            .materials
            .iter()
            .map(|m| match m {
                ParameterField::Constant { value } => Some(*value),
                _ => None,
            })
            .collect(),
    })
}
