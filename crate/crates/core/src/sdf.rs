//! Signed-distance geometry: analytic primitives, CSG, sampled grids and a
//! positional-encoded neural field. Negative inside, zero on the surface.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{Real, Vec3, PI};
use crate::nn::{encoding_width, positional_encoding, Activation, Mlp};

#[derive(Debug, Error, PartialEq)]
pub enum SdfError {
    #[error("SDF gradient vanishes at {0:?}")]
    VanishingGradient([f64; 3]),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// Scalar SDF sampled on a regular lattice, trilinearly interpolated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSdf {
    pub origin: Vec3,
    pub cell_size: f64,
    /// Samples per axis.
    pub resolution: usize,
    /// `resolution³` values, x fastest.
    pub values: Vec<f64>,
}

impl GridSdf {
    pub fn new(origin: Vec3, cell_size: f64, resolution: usize, values: Vec<f64>) -> Result<Self, SdfError> {
        if resolution < 2 {
            return Err(SdfError::InvalidGrid(format!("resolution {resolution} < 2")));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(SdfError::InvalidGrid(format!("cell size {cell_size}")));
        }
        if values.len() != resolution.pow(3) {
            return Err(SdfError::InvalidGrid(format!(
                "expected {} values, got {}",
                resolution.pow(3),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SdfError::InvalidGrid("non-finite value".into()));
        }
        Ok(Self {
            origin,
            cell_size,
            resolution,
            values,
        })
    }

    /// Samples `field` on a lattice covering the cube `[lo, hi]³`.
    pub fn from_field(field: &SdfField, lo: f64, hi: f64, resolution: usize) -> Self {
        let cell = (hi - lo) / (resolution - 1) as f64;
        let mut values = Vec::with_capacity(resolution.pow(3));
        for k in 0..resolution {
            for j in 0..resolution {
                for i in 0..resolution {
                    let p = Vec3::new(lo + i as f64 * cell, lo + j as f64 * cell, lo + k as f64 * cell);
                    values.push(field.eval(p));
                }
            }
        }
        Self {
            origin: Vec3::splat(lo),
            cell_size: cell,
            resolution,
            values,
        }
    }

    pub fn upper(&self) -> Vec3 {
        self.origin + Vec3::splat(self.cell_size * (self.resolution - 1) as f64)
    }

    #[inline]
    fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        let n = self.resolution;
        self.values[i + n * (j + n * k)]
    }

    pub fn eval(&self, x: Vec3) -> f64 {
        let hi = self.upper();
        let clamped = x.componentwise_max(self.origin).componentwise_min(hi);
        let outside = (x - clamped).norm();
        let g = (clamped - self.origin) / self.cell_size;
        let last = (self.resolution - 2) as f64;
        let fx = g.x.floor().clamp(0.0, last);
        let fy = g.y.floor().clamp(0.0, last);
        let fz = g.z.floor().clamp(0.0, last);
        let (tx, ty, tz) = (g.x - fx, g.y - fy, g.z - fz);
        let (i, j, k) = (fx as usize, fy as usize, fz as usize);
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let c00 = lerp(self.at(i, j, k), self.at(i + 1, j, k), tx);
        let c10 = lerp(self.at(i, j + 1, k), self.at(i + 1, j + 1, k), tx);
        let c01 = lerp(self.at(i, j, k + 1), self.at(i + 1, j, k + 1), tx);
        let c11 = lerp(self.at(i, j + 1, k + 1), self.at(i + 1, j + 1, k + 1), tx);
        lerp(lerp(c00, c10, ty), lerp(c01, c11, ty), tz) + outside
    }
}

/// SDF represented by the 8×128 positional-encoded MLP with a skip at the
/// fourth layer and softplus(β=100) activations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuralSdf {
    pub encoding_order: usize,
    pub mlp: Mlp,
    /// Radius of the sphere bounding the represented surface.
    pub bound: f64,
}

impl NeuralSdf {
    pub const WIDTH: usize = 128;
    pub const HIDDEN: usize = 8;
    pub const SKIP: usize = 4;
    pub const BETA: f64 = 100.0;

    /// Geometric initialization: the network starts out approximating a
    /// sphere of `radius` around the origin.
    pub fn sphere_init(radius: f64, encoding_order: usize, seed: u64) -> Self {
        Self::sphere_init_with(radius, encoding_order, Self::WIDTH, Self::HIDDEN, Some(Self::SKIP), seed)
    }

    pub fn sphere_init_with(
        radius: f64,
        encoding_order: usize,
        width: usize,
        hidden: usize,
        skip: Option<usize>,
        seed: u64,
    ) -> Self {
        let input = encoding_width(encoding_order);
        let layers = Mlp::layout(input, width, hidden, 1, skip);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(Mlp::param_count(&layers));
        let last = layers.len() - 1;
        for (l, &(n_in, n_out)) in layers.iter().enumerate() {
            if l == last {
                let mean = PI.sqrt() / (n_in as f64).sqrt();
                let normal = Normal::new(mean, 1e-4).expect("valid std");
                params.extend((0..n_in * n_out).map(|_| normal.sample(&mut rng)));
                params.extend(std::iter::repeat_n(-radius, n_out));
                continue;
            }
            let normal = Normal::new(0.0, 2f64.sqrt() / (n_out as f64).sqrt()).expect("valid std");
            for _ in 0..n_out {
                for c in 0..n_in {
                    let w = normal.sample(&mut rng);
                    // Only raw coordinates feed the first layer (and the raw
                    // part of the skip input); encoded features start at zero.
                    let zero = if l == 0 {
                        c >= 3
                    } else if skip == Some(l) {
                        c >= n_in - input + 3
                    } else {
                        false
                    };
                    params.push(if zero { 0.0 } else { w });
                }
            }
            params.extend(std::iter::repeat_n(0.0, n_out));
        }
        Self {
            encoding_order,
            mlp: Mlp {
                layers,
                skip_layer: skip,
                activation: Activation::Softplus { beta: Self::BETA },
                sigmoid_output: false,
                params,
            },
            bound: radius * 1.5,
        }
    }

    pub fn eval(&self, x: Vec3) -> f64 {
        let enc = positional_encoding(x.to_array(), self.encoding_order);
        self.mlp.forward_f64(&enc)[0]
    }

    /// Evaluates with any scalar type, e.g. to differentiate through `x`.
    pub fn eval_generic<S: Real>(&self, x: [S; 3]) -> S {
        let enc = positional_encoding(x, self.encoding_order);
        let params: Vec<S> = self.mlp.params.iter().map(|&p| S::from_f64(p)).collect();
        self.mlp.forward(&params, &enc)[0]
    }
}

/// Signed-distance geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SdfField {
    Sphere {
        center: Vec3,
        radius: f64,
    },
    Box {
        center: Vec3,
        half_extents: Vec3,
    },
    /// Ring in the xy plane around `center`.
    Torus {
        center: Vec3,
        major_radius: f64,
        minor_radius: f64,
    },
    /// Half space `n·x − offset ≤ 0`.
    Plane {
        normal: Vec3,
        offset: f64,
    },
    Union {
        children: Vec<SdfField>,
    },
    Intersection {
        children: Vec<SdfField>,
    },
    /// `a` with `b` carved out.
    Subtraction {
        a: std::boxed::Box<SdfField>,
        b: std::boxed::Box<SdfField>,
    },
    Grid(GridSdf),
    Neural(NeuralSdf),
}

fn box_distance(p: Vec3, h: Vec3) -> f64 {
    let q = p.abs() - h;
    let outside = q.componentwise_max(Vec3::zero()).norm();
    outside + q.x.max(q.y).max(q.z).min(0.0)
}

fn torus_distance(p: Vec3, major: f64, minor: f64) -> f64 {
    let ring = (p.x * p.x + p.y * p.y).sqrt() - major;
    (ring * ring + p.z * p.z).sqrt() - minor
}

impl SdfField {
    pub fn sphere(center: Vec3, radius: f64) -> Self {
        SdfField::Sphere { center, radius }
    }

    pub fn cuboid(center: Vec3, half_extents: Vec3) -> Self {
        SdfField::Box { center, half_extents }
    }

    pub fn torus(center: Vec3, major_radius: f64, minor_radius: f64) -> Self {
        SdfField::Torus {
            center,
            major_radius,
            minor_radius,
        }
    }

    pub fn union(children: Vec<SdfField>) -> Self {
        SdfField::Union { children }
    }

    /// Geometry with no surface at all.
    pub fn empty() -> Self {
        SdfField::Union { children: Vec::new() }
    }

    pub fn eval(&self, x: Vec3) -> f64 {
        match self {
            SdfField::Sphere { center, radius } => (x - *center).norm() - radius,
            SdfField::Box { center, half_extents } => box_distance(x - *center, *half_extents),
            SdfField::Torus {
                center,
                major_radius,
                minor_radius,
            } => torus_distance(x - *center, *major_radius, *minor_radius),
            SdfField::Plane { normal, offset } => normal.dot(x) - offset,
            SdfField::Union { children } => children.iter().map(|c| c.eval(x)).fold(f64::INFINITY, f64::min),
            SdfField::Intersection { children } => {
                children.iter().map(|c| c.eval(x)).fold(f64::NEG_INFINITY, f64::max)
            }
            SdfField::Subtraction { a, b } => a.eval(x).max(-b.eval(x)),
            SdfField::Grid(g) => g.eval(x),
            SdfField::Neural(n) => n.eval(x),
        }
    }

    /// Radius of an origin-centred sphere containing the surface, or `None`
    /// for unbounded geometry such as planes.
    pub fn bounding_radius(&self) -> Option<f64> {
        match self {
            SdfField::Sphere { center, radius } => Some(center.norm() + radius),
            SdfField::Box { center, half_extents } => Some(center.norm() + half_extents.norm()),
            SdfField::Torus {
                center,
                major_radius,
                minor_radius,
            } => Some(center.norm() + major_radius + minor_radius),
            SdfField::Plane { .. } => None,
            SdfField::Union { children } => children
                .iter()
                .try_fold(0.0f64, |acc, c| c.bounding_radius().map(|r| acc.max(r))),
            SdfField::Intersection { children } => children
                .iter()
                .filter_map(SdfField::bounding_radius)
                .reduce(f64::min),
            SdfField::Subtraction { a, .. } => a.bounding_radius(),
            SdfField::Grid(g) => Some(g.origin.norm().max(g.upper().norm()).max(
                (0..8)
                    .map(|c| {
                        let lo = g.origin;
                        let hi = g.upper();
                        Vec3::new(
                            if c & 1 == 0 { lo.x } else { hi.x },
                            if c & 2 == 0 { lo.y } else { hi.y },
                            if c & 4 == 0 { lo.z } else { hi.z },
                        )
                        .norm()
                    })
                    .fold(0.0, f64::max),
            )),
            SdfField::Neural(n) => Some(n.bound),
        }
    }

    /// Typical length used to scale finite-difference steps.
    pub fn scale(&self) -> f64 {
        self.bounding_radius().unwrap_or(1.0).max(1e-3)
    }

    /// Unnormalized gradient: analytic for primitives and CSG, central
    /// differences for grid and neural fields.
    pub fn gradient(&self, x: Vec3) -> Vec3 {
        match self {
            SdfField::Sphere { center, .. } => (x - *center).try_normalize(0.0).unwrap_or(Vec3::zero()),
            SdfField::Box { center, half_extents } => {
                let p = x - *center;
                let q = p.abs() - *half_extents;
                let sign = p.map(|c| if c < 0.0 { -1.0 } else { 1.0 });
                let g = if q.x > 0.0 || q.y > 0.0 || q.z > 0.0 {
                    q.componentwise_max(Vec3::zero())
                        .try_normalize(0.0)
                        .unwrap_or(Vec3::zero())
                } else if q.x >= q.y && q.x >= q.z {
                    Vec3::X
                } else if q.y >= q.z {
                    Vec3::Y
                } else {
                    Vec3::Z
                };
                g.hadamard(sign)
            }
            SdfField::Torus {
                center,
                major_radius,
                ..
            } => {
                let p = x - *center;
                let rho = (p.x * p.x + p.y * p.y).sqrt();
                if rho == 0.0 {
                    return Vec3::zero();
                }
                let ring = rho - major_radius;
                let d = (ring * ring + p.z * p.z).sqrt();
                if d == 0.0 {
                    return Vec3::zero();
                }
                Vec3::new(ring * p.x / rho, ring * p.y / rho, p.z) / d
            }
            SdfField::Plane { normal, .. } => *normal,
            SdfField::Union { children } => children
                .iter()
                .map(|c| (c.eval(x), c))
                .reduce(|a, b| if b.0 < a.0 { b } else { a })
                .map_or(Vec3::zero(), |(_, c)| c.gradient(x)),
            SdfField::Intersection { children } => children
                .iter()
                .map(|c| (c.eval(x), c))
                .reduce(|a, b| if b.0 > a.0 { b } else { a })
                .map_or(Vec3::zero(), |(_, c)| c.gradient(x)),
            SdfField::Subtraction { a, b } => {
                if a.eval(x) >= -b.eval(x) {
                    a.gradient(x)
                } else {
                    -b.gradient(x)
                }
            }
            SdfField::Grid(_) | SdfField::Neural(_) => self.central_difference(x, 1e-4 * self.scale()),
        }
    }

    pub fn central_difference(&self, x: Vec3, h: f64) -> Vec3 {
        let dx = Vec3::new(h, 0.0, 0.0);
        let dy = Vec3::new(0.0, h, 0.0);
        let dz = Vec3::new(0.0, 0.0, h);
        Vec3::new(
            self.eval(x + dx) - self.eval(x - dx),
            self.eval(x + dy) - self.eval(x - dy),
            self.eval(x + dz) - self.eval(x - dz),
        ) / (2.0 * h)
    }

    /// Surface normal `∇f/‖∇f‖`.
    pub fn normal(&self, x: Vec3) -> Result<Vec3, SdfError> {
        self.gradient(x)
            .try_normalize(1e-8)
            .ok_or(SdfError::VanishingGradient(x.to_array()))
    }

    /// Number of separately addressable objects: the children of a top-level
    /// union, otherwise one.
    pub fn object_count(&self) -> usize {
        match self {
            SdfField::Union { children } if !children.is_empty() => children.len(),
            _ => 1,
        }
    }

    /// Index of the top-level union child closest to `x`.
    pub fn object_id(&self, x: Vec3) -> usize {
        match self {
            SdfField::Union { children } => children
                .iter()
                .enumerate()
                .map(|(i, c)| (c.eval(x), i))
                .reduce(|a, b| if b.0 < a.0 { b } else { a })
                .map_or(0, |(_, i)| i),
            _ => 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn unit_sphere() -> SdfField {
        SdfField::sphere(Vec3::zero(), 1.0)
    }

    #[test]
    fn sphere_distances() {
        assert_eq!(unit_sphere().eval(Vec3::new(2.0, 0.0, 0.0)), 1.0);
        assert_eq!(unit_sphere().eval(Vec3::zero()), -1.0);
    }

    #[test]
    fn csg_definitions_hold_exactly() {
        let a = SdfField::sphere(Vec3::new(0.3, 0.0, 0.0), 0.6);
        let b = SdfField::cuboid(Vec3::new(-0.2, 0.1, 0.0), Vec3::new(0.4, 0.3, 0.5));
        let u = SdfField::union(vec![a.clone(), b.clone()]);
        let i = SdfField::Intersection {
            children: vec![a.clone(), b.clone()],
        };
        let s = SdfField::Subtraction {
            a: std::boxed::Box::new(a.clone()),
            b: std::boxed::Box::new(b.clone()),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x = Vec3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let (da, db) = (a.eval(x), b.eval(x));
            assert_eq!(u.eval(x), da.min(db));
            assert_eq!(i.eval(x), da.max(db));
            assert_eq!(s.eval(x), da.max(-db));
        }
    }

    #[test]
    fn analytic_normals() {
        let n = unit_sphere().normal(Vec3::X).unwrap();
        assert_eq!(n, Vec3::X);
        let b = SdfField::cuboid(Vec3::zero(), Vec3::splat(0.5));
        assert_eq!(b.normal(Vec3::new(0.1, -0.2, 0.5)).unwrap(), Vec3::Z);
        assert!(unit_sphere().normal(Vec3::zero()).is_err());
    }

    #[test]
    fn eikonal_on_primitive_surfaces() {
        let t = SdfField::torus(Vec3::zero(), 0.7, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let u: f64 = rng.random_range(0.0..2.0 * PI);
            let v: f64 = rng.random_range(0.0..2.0 * PI);
            let p = Vec3::new((0.7 + 0.3 * v.cos()) * u.cos(), (0.7 + 0.3 * v.cos()) * u.sin(), 0.3 * v.sin());
            assert!(t.eval(p).abs() < 1e-12);
            let g = t.central_difference(p, 1e-6);
            assert!((g.norm() - 1.0).abs() < 1e-3);
            assert!((t.gradient(p) - g).norm() < 1e-4);
        }
    }

    #[test]
    fn grid_sphere_normals_are_radial() {
        let grid = SdfField::Grid(GridSdf::from_field(&unit_sphere(), -1.2, 1.2, 193));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let p = crate::math::uniform_sphere(rng.random(), rng.random());
            let n = grid.normal(p).unwrap();
            let angle = n.dot(p).clamp(-1.0, 1.0).acos().to_degrees();
            assert!(angle < 0.5, "angle {angle}");
            assert!((grid.gradient(p).norm() - 1.0).abs() < 5e-2);
        }
    }

    #[test]
    fn grid_reproduces_source() {
        let src = SdfField::torus(Vec3::zero(), 0.6, 0.25);
        let grid = GridSdf::from_field(&src, -1.2, 1.2, 97);
        let h = grid.cell_size;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            let x = Vec3::new(
                rng.random_range(-1.2..1.2),
                rng.random_range(-1.2..1.2),
                rng.random_range(-1.2..1.2),
            );
            // curvature of the tube is 1/0.25; the ring axis has a kink
            let err = (grid.eval(x) - src.eval(x)).abs();
            assert!(err < h * h * 4.0 + 0.5 * h, "err {err}");
        }
    }

    #[test]
    fn grid_outside_bounds_grows() {
        let grid = GridSdf::from_field(&unit_sphere(), -1.5, 1.5, 31);
        assert!((grid.eval(Vec3::new(3.0, 0.0, 0.0)) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn grid_rejects_bad_shapes() {
        assert!(GridSdf::new(Vec3::zero(), 0.1, 4, vec![0.0; 10]).is_err());
        assert!(GridSdf::new(Vec3::zero(), 0.1, 1, vec![0.0; 1]).is_err());
    }

    #[test]
    fn neural_sphere_init_approximates_sphere() {
        let net = NeuralSdf::sphere_init(0.8, 10, 1);
        assert_eq!(net.mlp.input_width(), 63);
        assert_eq!(net.mlp.layers.len(), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let d = crate::math::uniform_sphere(rng.random(), rng.random());
            let inner = net.eval(d * 0.3);
            let outer = net.eval(d * 1.3);
            assert!(inner < 0.0 && outer > 0.0, "{inner} {outer}");
        }
        let x = Vec3::new(0.2, -0.4, 0.5);
        assert_eq!(net.eval(x).to_bits(), net.eval(x).to_bits());
    }

    #[test]
    fn neural_gradient_matches_finite_differences() {
        use crate::autodiff::Recording;
        let net = NeuralSdf::sphere_init_with(0.7, 4, 32, 4, Some(2), 9);
        let x = [0.3, -0.2, 0.55];
        let rec = Recording::new();
        let xv = rec.vars(&x);
        let y = net.eval_generic([xv[0], xv[1], xv[2]]);
        let g = rec.backward(y);
        let field = SdfField::Neural(net);
        let fd = field.central_difference(Vec3::from_array(x), 1e-5);
        for (a, n) in g.wrt_all(&xv).into_iter().zip(fd.to_array()) {
            assert!((a - n).abs() / a.abs().max(n.abs()).max(1e-6) < 1e-5, "{a} vs {n}");
        }
    }

    #[test]
    fn object_ids_follow_union_children() {
        let f = SdfField::union(vec![
            SdfField::sphere(Vec3::new(-1.0, 0.0, 0.0), 0.5),
            SdfField::sphere(Vec3::new(1.0, 0.0, 0.0), 0.5),
        ]);
        assert_eq!(f.object_count(), 2);
        assert_eq!(f.object_id(Vec3::new(-1.2, 0.0, 0.0)), 0);
        assert_eq!(f.object_id(Vec3::new(0.9, 0.1, 0.0)), 1);
        assert_eq!(unit_sphere().object_count(), 1);
    }

    #[test]
    fn bounding_radius_cases() {
        assert_eq!(unit_sphere().bounding_radius(), Some(1.0));
        assert_eq!(
            SdfField::Plane {
                normal: Vec3::Z,
                offset: 0.0
            }
            .bounding_radius(),
            None
        );
        assert_eq!(SdfField::empty().bounding_radius(), Some(0.0));
    }
}
