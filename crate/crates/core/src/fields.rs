//! Differentiable parameter containers: spatial material fields, the light
//! parameterization, and a named parameter store with a finite-difference
//! gradient check.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Recording;
use crate::brdf::MaterialSample;
use crate::math::{inverse_softplus, logit, sigmoid, Real, Rgb, Vec3, PI};
use crate::nn::{encoding_width, positional_encoding, Activation, Mlp};
use crate::sg::SphericalGaussian;

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("parameter vector has length {got}, expected {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("unknown parameter block {0:?}")]
    UnknownBlock(String),
    #[error("duplicate parameter block {0:?}")]
    DuplicateBlock(String),
    #[error("loss evaluator is not deterministic: {0} vs {1}")]
    NonDeterministic(f64, f64),
    #[error("invalid field: {0}")]
    Invalid(String),
}

/// Material values over space. Every variant maps unconstrained parameters
/// through a sigmoid, so outputs are always valid [`MaterialSample`]s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParameterField {
    /// The same sample everywhere; its parameters are the six logits.
    Constant { value: MaterialSample },
    /// Six logits per lattice node (channel fastest, then x, y, z),
    /// trilinearly interpolated before the sigmoid; lookups outside the
    /// lattice clamp to its bounds.
    Grid3d {
        origin: Vec3,
        cell_size: f64,
        resolution: usize,
        logits: Vec<f64>,
    },
    /// Positional encoding followed by an MLP ending in a sigmoid.
    Neural { encoding_order: usize, mlp: Mlp },
}

pub const MATERIAL_CHANNELS: usize = 6;

fn sample_from<S: Real>(c: [S; 6]) -> MaterialSample<S> {
    MaterialSample {
        albedo: Vec3::new(c[0], c[1], c[2]),
        roughness: c[3],
        metallic: c[4],
        specular: c[5],
    }
}

impl ParameterField {
    pub fn constant(value: MaterialSample) -> Self {
        ParameterField::Constant {
            value: MaterialSample::from_array(value.to_array()),
        }
    }

    /// Grid with every node set to `value`.
    pub fn grid_uniform(value: MaterialSample, origin: Vec3, cell_size: f64, resolution: usize) -> Result<Self, FieldError> {
        if resolution < 2 || !(cell_size > 0.0) {
            return Err(FieldError::Invalid(format!(
                "grid needs resolution ≥ 2 and positive cell size, got {resolution}, {cell_size}"
            )));
        }
        let l = value.to_array().map(logit);
        let logits = (0..resolution.pow(3)).flat_map(|_| l).collect();
        Ok(ParameterField::Grid3d {
            origin,
            cell_size,
            resolution,
            logits,
        })
    }

    /// Randomly initialized network with `hidden` ReLU layers of `width`.
    pub fn neural(encoding_order: usize, width: usize, hidden: usize, seed: u64) -> Self {
        let layers = Mlp::layout(encoding_width(encoding_order), width, hidden, MATERIAL_CHANNELS, None);
        ParameterField::Neural {
            encoding_order,
            mlp: Mlp::random(layers, None, Activation::Relu, true, seed),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            ParameterField::Constant { .. } => MATERIAL_CHANNELS,
            ParameterField::Grid3d { logits, .. } => logits.len(),
            ParameterField::Neural { mlp, .. } => mlp.params.len(),
        }
    }

    /// Current unconstrained parameters.
    pub fn params(&self) -> Vec<f64> {
        match self {
            ParameterField::Constant { value } => value.to_array().map(logit).to_vec(),
            ParameterField::Grid3d { logits, .. } => logits.clone(),
            ParameterField::Neural { mlp, .. } => mlp.params.clone(),
        }
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<(), FieldError> {
        if p.len() != self.param_count() {
            return Err(FieldError::ParamLength {
                expected: self.param_count(),
                got: p.len(),
            });
        }
        match self {
            ParameterField::Constant { value } => {
                *value = sample_from(std::array::from_fn(|i| sigmoid(p[i])));
            }
            ParameterField::Grid3d { logits, .. } => logits.copy_from_slice(p),
            ParameterField::Neural { mlp, .. } => mlp.params.copy_from_slice(p),
        }
        Ok(())
    }

    pub fn eval(&self, x: Vec3) -> MaterialSample {
        match self {
            ParameterField::Constant { value } => *value,
            ParameterField::Grid3d { logits, .. } => self.eval_with(logits, x),
            ParameterField::Neural { encoding_order, mlp } => {
                let out = mlp.forward_f64(&positional_encoding(x.to_array(), *encoding_order));
                sample_from(std::array::from_fn(|i| out[i]))
            }
        }
    }

    /// Evaluates with an explicit parameter vector of any scalar type.
    pub fn eval_with<S: Real>(&self, p: &[S], x: Vec3) -> MaterialSample<S> {
        debug_assert_eq!(p.len(), self.param_count());
        match self {
            ParameterField::Constant { .. } => sample_from(std::array::from_fn(|i| p[i].sigmoid())),
            ParameterField::Grid3d {
                origin,
                cell_size,
                resolution,
                ..
            } => {
                let n = *resolution;
                let hi = *origin + Vec3::splat(cell_size * (n - 1) as f64);
                let g = (x.componentwise_max(*origin).componentwise_min(hi) - *origin) / *cell_size;
                let last = (n - 2) as f64;
                let f = [g.x, g.y, g.z].map(|c| c.floor().clamp(0.0, last));
                let t = [g.x - f[0], g.y - f[1], g.z - f[2]];
                let base = f.map(|c| c as usize);
                let node = |dx: usize, dy: usize, dz: usize| {
                    ((base[0] + dx) + n * ((base[1] + dy) + n * (base[2] + dz))) * MATERIAL_CHANNELS
                };
                let lerp = |a: S, b: S, t: f64| if t == 0.0 { a } else { a + (b - a) * t };
                let acc: [S; 6] = std::array::from_fn(|c| {
                    let v = |dx, dy, dz| p[node(dx, dy, dz) + c];
                    let c00 = lerp(v(0, 0, 0), v(1, 0, 0), t[0]);
                    let c10 = lerp(v(0, 1, 0), v(1, 1, 0), t[0]);
                    let c01 = lerp(v(0, 0, 1), v(1, 0, 1), t[0]);
                    let c11 = lerp(v(0, 1, 1), v(1, 1, 1), t[0]);
                    lerp(lerp(c00, c10, t[1]), lerp(c01, c11, t[1]), t[2])
                });
                sample_from(acc.map(|a| a.sigmoid()))
            }
            ParameterField::Neural { encoding_order, mlp } => {
                let enc = positional_encoding(x.to_array().map(S::from_f64), *encoding_order);
                let out = mlp.forward(p, &enc);
                sample_from(std::array::from_fn(|i| out[i]))
            }
        }
    }
}

/// Per-lobe parameter layout: `[axis x, y, z, ln λ, ρ_r, ρ_g, ρ_b]`.
pub const LOBE_PARAMS: usize = 7;

/// Maps lobes to unconstrained parameters and back.
///
/// Sharpness is `exp(θ)`. Amplitudes are `softplus(ρ)`, or, with a fixed
/// total energy `E`, `μ_j = E · w_j / I(λ_j)` where `w = softplus(ρ) /
/// Σ softplus(ρ)` per channel and `I(λ)` is the sphere integral of a unit
/// lobe, so the mixture always integrates to `E`. Axes are used as given
/// (they are renormalized between optimizer steps).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightParameterization {
    pub fixed_energy: Option<Rgb>,
}

fn unit_integral<S: Real>(lambda: S) -> S {
    (-(lambda * -2.0).exp_m1()) / lambda * (2.0 * PI)
}

impl LightParameterization {
    pub fn free() -> Self {
        Self { fixed_energy: None }
    }

    pub fn with_energy(energy: Rgb) -> Self {
        Self {
            fixed_energy: Some(energy),
        }
    }

    pub fn encode(&self, lobes: &[SphericalGaussian]) -> Vec<f64> {
        let mut out = Vec::with_capacity(lobes.len() * LOBE_PARAMS);
        for g in lobes {
            out.extend(g.axis.to_array());
            out.push(g.sharpness.ln());
            let scale = match self.fixed_energy {
                // softplus(ρ) proportional to the lobe's energy share
                Some(_) => unit_integral(g.sharpness),
                None => 1.0,
            };
            out.extend(g.amplitude.to_array().map(|a| inverse_softplus((a * scale).max(1e-12))));
        }
        out
    }

    pub fn decode<S: Real>(&self, p: &[S]) -> Vec<SphericalGaussian<S>> {
        assert_eq!(p.len() % LOBE_PARAMS, 0, "light parameter length");
        let lobes = p.len() / LOBE_PARAMS;
        let raw: Vec<(Vec3<S>, S, [S; 3])> = (0..lobes)
            .map(|j| {
                let q = &p[j * LOBE_PARAMS..(j + 1) * LOBE_PARAMS];
                (Vec3::new(q[0], q[1], q[2]), q[3].exp(), [q[4].softplus(), q[5].softplus(), q[6].softplus()])
            })
            .collect();
        match self.fixed_energy {
            None => raw
                .into_iter()
                .map(|(axis, sharpness, a)| SphericalGaussian {
                    axis,
                    sharpness,
                    amplitude: Vec3::new(a[0], a[1], a[2]),
                })
                .collect(),
            Some(e) => {
                let mut totals = [S::zero(); 3];
                for (_, _, a) in &raw {
                    for c in 0..3 {
                        totals[c] = totals[c] + a[c];
                    }
                }
                let energy = e.to_array();
                raw.into_iter()
                    .map(|(axis, sharpness, a)| {
                        let inv = unit_integral(sharpness).recip();
                        let amp: [S; 3] = std::array::from_fn(|c| a[c] / totals[c] * energy[c] * inv);
                        SphericalGaussian {
                            axis,
                            sharpness,
                            amplitude: Vec3::new(amp[0], amp[1], amp[2]),
                        }
                    })
                    .collect()
            }
        }
    }

    /// Removes the radial component of each axis gradient.
    pub fn project_axis_gradients(params: &[f64], grads: &mut [f64]) {
        for (p, g) in params.chunks_exact(LOBE_PARAMS).zip(grads.chunks_exact_mut(LOBE_PARAMS)) {
            let axis = Vec3::new(p[0], p[1], p[2]);
            let n2 = axis.norm_squared();
            if n2 == 0.0 {
                continue;
            }
            let gv = Vec3::new(g[0], g[1], g[2]);
            let t = gv - axis * (gv.dot(axis) / n2);
            g[..3].copy_from_slice(&t.to_array());
        }
    }

    /// Rescales every axis back onto the unit sphere.
    pub fn renormalize_axes(params: &mut [f64]) {
        for p in params.chunks_exact_mut(LOBE_PARAMS) {
            let axis = Vec3::new(p[0], p[1], p[2]).try_normalize(1e-12).unwrap_or(Vec3::Z);
            p[..3].copy_from_slice(&axis.to_array());
        }
    }
}

/// One named group of optimizable values and its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterBlock {
    pub name: String,
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
}

/// Ordered collection of parameter blocks addressed as one flat vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    blocks: Vec<ParameterBlock>,
}

/// A scalar loss written once over any [`Real`].
pub trait Objective {
    fn loss<S: Real>(&self, params: &[S]) -> S;
}

/// Loss value and reverse-mode gradient; the flag reports a loss that does
/// not depend on any parameter.
pub fn value_and_gradient<O: Objective + ?Sized>(obj: &O, params: &[f64]) -> (f64, Vec<f64>, bool) {
    let rec = Recording::new();
    let vars = rec.vars(params);
    let loss = obj.loss(&vars);
    let value = loss.val();
    let grads = rec.backward(loss);
    (value, grads.wrt_all(&vars), grads.is_disconnected())
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<(), FieldError> {
        let name = name.into();
        if self.blocks.iter().any(|b| b.name == name) {
            return Err(FieldError::DuplicateBlock(name));
        }
        self.blocks.push(ParameterBlock {
            grads: vec![0.0; values.len()],
            name,
            values,
        });
        Ok(())
    }

    pub fn blocks(&self) -> &[ParameterBlock] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Result<&ParameterBlock, FieldError> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| FieldError::UnknownBlock(name.into()))
    }

    pub fn block_mut(&mut self, name: &str) -> Result<&mut ParameterBlock, FieldError> {
        self.blocks
            .iter_mut()
            .find(|b| b.name == name)
            .ok_or_else(|| FieldError::UnknownBlock(name.into()))
    }

    /// Flat index range of a block.
    pub fn range(&self, name: &str) -> Result<std::ops::Range<usize>, FieldError> {
        let mut start = 0;
        for b in &self.blocks {
            if b.name == name {
                return Ok(start..start + b.values.len());
            }
            start += b.values.len();
        }
        Err(FieldError::UnknownBlock(name.into()))
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.values.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.values.iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.grads.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), FieldError> {
        if flat.len() != self.len() {
            return Err(FieldError::ParamLength {
                expected: self.len(),
                got: flat.len(),
            });
        }
        let mut start = 0;
        for b in &mut self.blocks {
            let n = b.values.len();
            b.values.copy_from_slice(&flat[start..start + n]);
            start += n;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for b in &mut self.blocks {
            b.grads.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds a flat gradient into the accumulators.
    pub fn accumulate(&mut self, flat: &[f64]) -> Result<(), FieldError> {
        if flat.len() != self.len() {
            return Err(FieldError::ParamLength {
                expected: self.len(),
                got: flat.len(),
            });
        }
        let mut start = 0;
        for b in &mut self.blocks {
            for (g, d) in b.grads.iter_mut().zip(&flat[start..]) {
                *g += d;
            }
            start += b.values.len();
        }
        Ok(())
    }

    /// Records `obj` at the current values, back-propagates, and adds the
    /// gradient into the accumulators. Returns the loss and whether it was
    /// disconnected from every parameter (gradients are then all zero).
    pub fn backward<O: Objective + ?Sized>(&mut self, obj: &O) -> (f64, bool) {
        let (value, grads, disconnected) = value_and_gradient(obj, &self.flatten());
        self.accumulate(&grads).expect("gradient length matches store");
        (value, disconnected)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// Largest error per block, in block order.
    pub per_block: Vec<(String, f64)>,
    pub checked: usize,
}

/// Compares reverse-mode gradients with central differences on up to
/// `per_block` randomly chosen parameters of every block. The relative
/// error denominator is `max(|analytic|, |numeric|, 1e-6)`.
pub fn finite_difference_check<O: Objective + ?Sized>(
    store: &ParameterStore,
    obj: &O,
    eps: f64,
    per_block: usize,
    seed: u64,
) -> Result<FdReport, FieldError> {
    let base = store.flatten();
    let (l1, l2) = (obj.loss(&base), obj.loss(&base));
    if l1.to_bits() != l2.to_bits() {
        return Err(FieldError::NonDeterministic(l1, l2));
    }
    let (_, analytic, _) = value_and_gradient(obj, &base);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FdReport {
        max_rel_error: 0.0,
        per_block: Vec::new(),
        checked: 0,
    };
    let mut start = 0;
    let mut probe = base.clone();
    for b in store.blocks() {
        let n = b.values.len();
        let mut idx: Vec<usize> = if n <= per_block {
            (0..n).collect()
        } else {
            sample(&mut rng, n, per_block).into_vec()
        };
        idx.sort_unstable();
        let mut worst = 0.0f64;
        for i in idx {
            let k = start + i;
            probe[k] = base[k] + eps;
            let up = obj.loss(&probe);
            probe[k] = base[k] - eps;
            let down = obj.loss(&probe);
            probe[k] = base[k];
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            report.checked += 1;
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.per_block.push((b.name.clone(), worst));
        start += n;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::softplus;

    struct Quadratic;
    impl Objective for Quadratic {
        fn loss<S: Real>(&self, p: &[S]) -> S {
            p.iter().enumerate().fold(S::zero(), |acc, (i, &x)| acc + x * x * (i as f64 + 1.0) + x * 0.5)
        }
    }

    struct Scaled(f64);
    impl Objective for Scaled {
        fn loss<S: Real>(&self, p: &[S]) -> S {
            p[0] * self.0
        }
    }

    struct Constant;
    impl Objective for Constant {
        fn loss<S: Real>(&self, _p: &[S]) -> S {
            S::from_f64(3.0)
        }
    }

    fn sample() -> MaterialSample {
        MaterialSample::new(Vec3::splat(0.5), 0.4, 0.0, 0.5)
    }

    #[test]
    fn constant_field_passthrough() {
        let f = ParameterField::constant(sample());
        assert_eq!(f.eval(Vec3::new(3.0, -1.0, 0.2)), sample());
        let p = f.params();
        let back = f.eval_with(&p, Vec3::zero());
        for (a, b) in back.to_array().iter().zip(sample().to_array()) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn uniform_grid_is_constant() {
        let f = ParameterField::grid_uniform(sample(), Vec3::splat(-1.0), 0.5, 5).unwrap();
        let a = f.eval(Vec3::new(0.1, 0.2, -0.3));
        let b = f.eval(Vec3::new(7.0, -9.0, 0.0));
        assert_eq!(a, b);
        for (x, y) in a.to_array().iter().zip(sample().to_array()) {
            assert!((x - y).abs() < 1e-11);
        }
    }

    #[test]
    fn neural_field_is_deterministic_and_bounded() {
        let f = ParameterField::neural(10, 32, 4, 3);
        let x = Vec3::new(0.3, -0.1, 0.7);
        let a = f.eval(x).to_array();
        let b = f.eval(x).to_array();
        assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
        assert!(a.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn set_params_checks_length() {
        let mut f = ParameterField::constant(sample());
        assert!(f.set_params(&[0.0; 5]).is_err());
        f.set_params(&[0.0; 6]).unwrap();
        assert_eq!(f.eval(Vec3::zero()).roughness, 0.5);
    }

    #[test]
    fn light_round_trip_free_and_fixed() {
        let lobes = vec![
            SphericalGaussian::new(Vec3::Z, 5.0, Vec3::new(1.0, 0.5, 0.2)).unwrap(),
            SphericalGaussian::new(Vec3::X, 20.0, Vec3::new(0.3, 0.6, 0.9)).unwrap(),
        ];
        let free = LightParameterization::free();
        for (a, b) in free.decode(&free.encode(&lobes)).iter().zip(&lobes) {
            assert!((a.amplitude - b.amplitude).abs().max_elem() < 1e-12);
            assert!((a.sharpness - b.sharpness).abs() < 1e-12);
        }
        let energy = crate::sg::mixture_energy(&lobes);
        let fixed = LightParameterization::with_energy(energy);
        let back = fixed.decode(&fixed.encode(&lobes));
        for (a, b) in back.iter().zip(&lobes) {
            assert!((a.amplitude - b.amplitude).abs().max_elem() < 1e-9);
        }
        let mut p = fixed.encode(&lobes);
        p[4] += 1.0;
        p[12] -= 0.5;
        let e = crate::sg::mixture_energy(&fixed.decode(&p));
        assert!((e - energy).abs().max_elem() < 1e-9);
    }

    #[test]
    fn axis_projection_and_renormalization() {
        let mut p = vec![0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0];
        let mut g = vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 0.0];
        LightParameterization::project_axis_gradients(&p, &mut g);
        assert_eq!(&g[..3], &[1.0, 2.0, 0.0]);
        LightParameterization::renormalize_axes(&mut p);
        assert_eq!(&p[..3], &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn quadratic_fd_check_is_tight() {
        let mut store = ParameterStore::new();
        store.push("a", vec![0.3, -1.2, 2.0]).unwrap();
        store.push("b", (0..100).map(|i| i as f64 * 0.01).collect()).unwrap();
        let r = finite_difference_check(&store, &Quadratic, 1e-4, 64, 1).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 3 + 64);
    }

    #[test]
    fn backward_accumulates_and_zeroes() {
        let mut store = ParameterStore::new();
        store.push("x", vec![2.0]).unwrap();
        let (_, disconnected) = store.backward(&Scaled(3.5));
        assert!(!disconnected);
        assert_eq!(store.block("x").unwrap().grads, vec![3.5]);
        store.zero_grads();
        store.backward(&Scaled(3.5));
        assert_eq!(store.block("x").unwrap().grads, vec![3.5]);
        store.zero_grads();
        let (_, disconnected) = store.backward(&Constant);
        assert!(disconnected);
        assert_eq!(store.flat_grads(), vec![0.0]);
    }

    #[test]
    fn store_rejects_duplicates_and_bad_lengths() {
        let mut store = ParameterStore::new();
        store.push("x", vec![1.0, 2.0]).unwrap();
        assert_eq!(store.push("x", vec![]), Err(FieldError::DuplicateBlock("x".into())));
        assert!(store.set_flat(&[1.0]).is_err());
        assert_eq!(store.range("x").unwrap(), 0..2);
        assert!(store.block("y").is_err());
    }

    #[test]
    fn grid_gradients_scatter_with_trilinear_weights() {
        let f = ParameterField::grid_uniform(sample(), Vec3::zero(), 1.0, 2).unwrap();
        let p = f.params();
        let x = Vec3::new(0.25, 0.5, 0.0);
        let rec = Recording::new();
        let vars = rec.vars(&p);
        let m = f.eval_with(&vars, x);
        let g = rec.backward(m.roughness);
        let grads = g.wrt_all(&vars);
        let s = sigmoid(p[3]);
        let d = s * (1.0 - s);
        let expect = [0.375, 0.125, 0.375, 0.125, 0.0, 0.0, 0.0, 0.0];
        for (node, w) in expect.iter().enumerate() {
            assert!((grads[node * 6 + 3] - w * d).abs() < 1e-12);
        }
        assert_eq!(grads.iter().filter(|v| **v != 0.0).count(), 4);
    }

    #[test]
    fn softplus_parameterization_positive() {
        let lobes = LightParameterization::free().decode(&[0.0, 0.0, 1.0, -50.0, -40.0, 0.0, 40.0]);
        assert!(lobes[0].sharpness > 0.0);
        assert!(lobes[0].amplitude.x >= 0.0);
        assert_eq!(lobes[0].amplitude.y, softplus(0.0));
    }
}
