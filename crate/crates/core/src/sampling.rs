//! Ray–isosurface intersection from a fixed set of depth samples.
//!
//! The explicit path finds the first entering sign change along the ray,
//! subdivides that bracket into `d` points, optionally repeats the sign
//! search inside the subdivision a few times, and finally draws one point
//! from the CDF of per-point weights that favour small `|f|` and
//! front-facing gradients. The fallback path is an alpha-composited
//! weighted average of all samples.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{stratified_ray_samples, Ray};
use crate::math::{sigmoid, Vec3};
use crate::sdf::SdfField;

/// Depth-ordered samples along one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySampleSet {
    pub depths: Vec<f64>,
    pub points: Vec<Vec3>,
    pub sdf: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitMethod {
    WeightedSum,
    ExplicitInterp,
}

/// Adjacent samples enclosing the first entering crossing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bracket {
    pub t_p: f64,
    pub t_n: f64,
    pub x_p: Vec3,
    pub x_n: Vec3,
    pub f_p: f64,
    pub f_n: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceHit {
    pub point: Vec3,
    pub depth: f64,
    /// `|f|` at the returned point.
    pub residual: f64,
    pub bracket: Option<Bracket>,
    pub method: HitMethod,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntersectionMode {
    Explicit,
    WeightedSum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_samples: usize,
    /// Points per subdivided bracket.
    pub d: usize,
    /// Extra rounds of sign bracketing inside the subdivision.
    pub refine: usize,
    /// Subdivision levels for sample gaps that may hide a thin crossing
    /// (both values positive but summing to less than the gap length).
    pub gap_levels: usize,
    /// Weight of the front-facing term.
    pub beta: f64,
    pub mode: IntersectionMode,
    /// Jitter depths and draw the CDF quantile at random instead of taking
    /// midpoints and the median. Only active when a random stream is given.
    pub stochastic: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_samples: 64,
            d: 8,
            refine: 8,
            gap_levels: 6,
            beta: 0.1,
            mode: IntersectionMode::Explicit,
            stochastic: false,
        }
    }
}

impl RaySampleSet {
    /// Samples `field` at stratified depths of `ray` (which must have a
    /// finite `[near, far]`).
    pub fn from_ray<R: Rng + ?Sized>(field: &SdfField, ray: &Ray, n: usize, rng: Option<&mut R>) -> Self {
        let samples = stratified_ray_samples(ray, n, rng);
        let depths: Vec<f64> = samples.iter().map(|s| s.0).collect();
        let points: Vec<Vec3> = samples.iter().map(|s| s.1).collect();
        let sdf = points.iter().map(|&p| field.eval(p)).collect();
        Self {
            weights: vec![0.0; depths.len()],
            depths,
            points,
            sdf,
        }
    }

    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    /// Fills `weights` with alpha-compositing weights derived from the SDF
    /// through the logistic CDF `Φ_s(f) = 1/(1 + e^{−s f})`.
    ///
    /// Interval opacity is `α_i = max(0, (Φ(f_i) − Φ(f_{i+1})) / Φ(f_i))`,
    /// transmittance accumulates as `Π (1 − α)`, and each interval's weight
    /// is split evenly between its two end samples.
    pub fn assign_neus_weights(&mut self, s: f64) {
        let n = self.len();
        self.weights = vec![0.0; n];
        let mut transmittance = 1.0;
        for i in 0..n.saturating_sub(1) {
            let (a, b) = (sigmoid(s * self.sdf[i]), sigmoid(s * self.sdf[i + 1]));
            let alpha = if a > 0.0 { ((a - b) / a).clamp(0.0, 1.0) } else { 0.0 };
            let w = transmittance * alpha;
            self.weights[i] += 0.5 * w;
            self.weights[i + 1] += 0.5 * w;
            transmittance *= 1.0 - alpha;
        }
    }
}

/// Normalized weighted average of the sample points. `None` when every
/// weight is zero.
pub fn weighted_sum_intersection(field: &SdfField, samples: &RaySampleSet) -> Option<SurfaceHit> {
    let total: f64 = samples.weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut point = Vec3::zero();
    let mut depth = 0.0;
    for ((w, p), t) in samples.weights.iter().zip(&samples.points).zip(&samples.depths) {
        let w = w / total;
        point += *p * w;
        depth += t * w;
    }
    Some(SurfaceHit {
        point,
        depth,
        residual: field.eval(point).abs(),
        bracket: bracket_crossing(samples),
        method: HitMethod::WeightedSum,
    })
}

/// First adjacent pair, in depth order, that enters the surface
/// (`f > 0` followed by `f ≤ 0`). Exiting crossings are skipped.
pub fn bracket_crossing(samples: &RaySampleSet) -> Option<Bracket> {
    first_entering(&samples.sdf).map(|i| Bracket {
        t_p: samples.depths[i],
        t_n: samples.depths[i + 1],
        x_p: samples.points[i],
        x_n: samples.points[i + 1],
        f_p: samples.sdf[i],
        f_n: samples.sdf[i + 1],
    })
}

fn first_entering(f: &[f64]) -> Option<usize> {
    f.windows(2).position(|w| w[0] > 0.0 && w[1] <= 0.0)
}

/// Inverse of the piecewise-linear CDF through the points
/// `(x_k, Σ_{i<k} w_i + w_k/2)` at quantile `q`; weights need not be
/// normalized. Values below the first or above the last knot clamp to the
/// end points.
pub fn cdf_quantile(xs: &[f64], weights: &[f64], q: f64) -> f64 {
    assert_eq!(xs.len(), weights.len());
    assert!(!xs.is_empty());
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return 0.5 * (xs[0] + xs[xs.len() - 1]);
    }
    let mut acc = 0.0;
    let knots: Vec<f64> = weights
        .iter()
        .map(|w| {
            let c = acc + 0.5 * w / total;
            acc += w / total;
            c
        })
        .collect();
    if q <= knots[0] {
        return xs[0];
    }
    for k in 0..knots.len() - 1 {
        if q < knots[k + 1] {
            let span = knots[k + 1] - knots[k];
            let s = if span > 0.0 { (q - knots[k]) / span } else { 0.0 };
            return xs[k] + (xs[k + 1] - xs[k]) * s;
        }
    }
    xs[xs.len() - 1]
}

/// First entering crossing along the samples, also searching gaps whose
/// end values leave room for the surface between them. Gaps are split into
/// `d` points per level, in depth order, so earlier crossings win.
pub fn bracket_with_gaps(field: &SdfField, ray: &Ray, samples: &RaySampleSet, d: usize, levels: usize) -> Option<Bracket> {
    let (t, f) = search_gaps(field, ray, &samples.depths, &samples.sdf, d.max(2), levels)?;
    Some(Bracket {
        t_p: t.0,
        t_n: t.1,
        x_p: ray.at(t.0),
        x_n: ray.at(t.1),
        f_p: f.0,
        f_n: f.1,
    })
}

fn search_gaps(field: &SdfField, ray: &Ray, ts: &[f64], fs: &[f64], d: usize, levels: usize) -> Option<((f64, f64), (f64, f64))> {
    for i in 0..ts.len().saturating_sub(1) {
        let (f0, f1) = (fs[i], fs[i + 1]);
        if f0 > 0.0 && f1 <= 0.0 {
            return Some(((ts[i], ts[i + 1]), (f0, f1)));
        }
        let (t0, t1) = (ts[i], ts[i + 1]);
        if levels > 0 && f0 > 0.0 && f1 > 0.0 && f0 + f1 < t1 - t0 {
            let sub_t: Vec<f64> = (0..d).map(|k| t0 + (t1 - t0) * k as f64 / (d - 1) as f64).collect();
            let mut sub_f: Vec<f64> = sub_t.iter().map(|&t| field.eval(ray.at(t))).collect();
            sub_f[0] = f0;
            sub_f[d - 1] = f1;
            if let Some(found) = search_gaps(field, ray, &sub_t, &sub_f, d, levels - 1) {
                return Some(found);
            }
        }
    }
    None
}

/// Subdivides `bracket` on `ray` into `cfg.d` points and returns the point
/// at quantile `q` of their weight CDF (0.5 for the deterministic median).
pub fn subdivide_and_interpolate(field: &SdfField, ray: &Ray, bracket: &Bracket, cfg: &SamplingConfig, q: f64) -> SurfaceHit {
    let d = cfg.d.max(2);
    let view = ray.direction;
    let (mut tp, mut tn) = (bracket.t_p, bracket.t_n);
    let mut level = 0;
    let (ts, fs) = loop {
        let ts: Vec<f64> = (0..d).map(|k| tp + (tn - tp) * k as f64 / (d - 1) as f64).collect();
        let fs: Vec<f64> = ts.iter().map(|&t| field.eval(ray.at(t))).collect();
        if level == cfg.refine {
            break (ts, fs);
        }
        match first_entering(&fs) {
            Some(k) => {
                tp = ts[k];
                tn = ts[k + 1];
                level += 1;
            }
            None => break (ts, fs),
        }
    };
    let tau = (tn - tp).abs() / d as f64;
    let logits: Vec<f64> = ts
        .iter()
        .zip(&fs)
        .map(|(&t, &f)| {
            let facing = field
                .normal(ray.at(t))
                .map_or(0.0, |n| (-n.dot(view)).max(0.0));
            let sdf_term = if tau > 0.0 { -f.abs() / tau } else { 0.0 };
            sdf_term + cfg.beta * facing
        })
        .collect();
    let peak = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - peak).exp()).collect();
    let depth = cdf_quantile(&ts, &weights, q);
    let point = ray.at(depth);
    SurfaceHit {
        point,
        depth,
        residual: field.eval(point).abs(),
        bracket: Some(*bracket),
        method: HitMethod::ExplicitInterp,
    }
}

/// Full intersection pipeline for one ray clipped to the scene bounds.
///
/// A ray hits when its samples contain an entering sign change; the
/// explicit path also looks for thin crossings between samples. With
/// `cfg.stochastic` and a random stream, sample depths are jittered and the
/// CDF quantile is uniform; otherwise midpoints and the median are used.
pub fn intersect_surface<R: Rng + ?Sized>(
    field: &SdfField,
    ray: &Ray,
    cfg: &SamplingConfig,
    rng: Option<&mut R>,
) -> Option<SurfaceHit> {
    let mut rng = if cfg.stochastic { rng } else { None };
    let samples = RaySampleSet::from_ray(field, ray, cfg.n_samples.max(2), rng.as_deref_mut());
    match cfg.mode {
        IntersectionMode::Explicit => {
            let bracket = bracket_with_gaps(field, ray, &samples, cfg.d, cfg.gap_levels)?;
            let q = rng.map_or(0.5, |r| r.random::<f64>());
            Some(subdivide_and_interpolate(field, ray, &bracket, cfg, q))
        }
        IntersectionMode::WeightedSum => {
            bracket_crossing(&samples)?;
            let mut samples = samples;
            let spacing = (ray.far - ray.near) / samples.len() as f64;
            samples.assign_neus_weights(4.0 / spacing);
            weighted_sum_intersection(field, &samples)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set_from_signs(f: &[f64]) -> RaySampleSet {
        let depths: Vec<f64> = (0..f.len()).map(|i| i as f64).collect();
        RaySampleSet {
            points: depths.iter().map(|&t| Vec3::new(0.0, 0.0, t)).collect(),
            depths,
            sdf: f.to_vec(),
            weights: vec![0.0; f.len()],
        }
    }

    fn z_ray() -> Ray {
        Ray {
            origin: Vec3::new(0.0, 0.0, -3.0),
            direction: Vec3::Z,
            near: 0.0,
            far: f64::INFINITY,
        }
        .clip_to_sphere(1.05)
        .unwrap()
    }

    #[test]
    fn bracket_examples() {
        let b = bracket_crossing(&set_from_signs(&[1.0, 0.5, -0.2, -1.0])).unwrap();
        assert_eq!((b.t_p, b.t_n), (1.0, 2.0));
        assert!(bracket_crossing(&set_from_signs(&[1.0, 2.0, 3.0])).is_none());
        let b = bracket_crossing(&set_from_signs(&[1.0, -1.0, 1.0, -1.0])).unwrap();
        assert_eq!((b.t_p, b.t_n), (0.0, 1.0));
        let b = bracket_crossing(&set_from_signs(&[-1.0, 1.0, 0.5, -1.0])).unwrap();
        assert_eq!((b.t_p, b.t_n), (2.0, 3.0));
    }

    #[test]
    fn delta_weights_pick_the_sample() {
        let f = SdfField::sphere(Vec3::zero(), 1.0);
        let mut s = set_from_signs(&[1.0, 0.1, -0.5]);
        s.weights = vec![0.0, 2.0, 0.0];
        let hit = weighted_sum_intersection(&f, &s).unwrap();
        assert_eq!(hit.point, s.points[1]);
        assert_eq!(hit.depth, 1.0);
        s.weights = vec![0.0; 3];
        assert!(weighted_sum_intersection(&f, &s).is_none());
    }

    #[test]
    fn cdf_quantile_cases() {
        assert_eq!(cdf_quantile(&[0.0, 1.0], &[1.0, 0.0], 0.5), 0.0);
        let xs: Vec<f64> = (0..8).map(|k| k as f64 / 7.0 * 2.0).collect();
        assert!((cdf_quantile(&xs, &[1.0; 8], 0.5) - 1.0).abs() < 1e-15);
        assert_eq!(cdf_quantile(&xs, &[1.0; 8], 0.0), 0.0);
        assert_eq!(cdf_quantile(&xs, &[1.0; 8], 1.0), 2.0);
    }

    #[test]
    fn linear_sdf_interpolates_to_root() {
        let field = SdfField::Plane {
            normal: Vec3::new(0.0, 0.0, -1.0),
            offset: -1.0,
        };
        let ray = Ray {
            origin: Vec3::zero(),
            direction: Vec3::Z,
            near: 0.0,
            far: 2.0,
        };
        let bracket = Bracket {
            t_p: 0.0,
            t_n: 2.0,
            x_p: Vec3::zero(),
            x_n: Vec3::new(0.0, 0.0, 2.0),
            f_p: 1.0,
            f_n: -1.0,
        };
        let cfg = SamplingConfig {
            refine: 0,
            ..Default::default()
        };
        let hit = subdivide_and_interpolate(&field, &ray, &bracket, &cfg, 0.5);
        assert!((hit.depth - 1.0).abs() < 0.25);
        let refined = subdivide_and_interpolate(&field, &ray, &bracket, &SamplingConfig::default(), 0.5);
        assert!((refined.depth - 1.0).abs() <= (hit.depth - 1.0).abs());
    }

    #[test]
    fn sphere_hit_from_distance_three() {
        let field = SdfField::sphere(Vec3::zero(), 1.0);
        let ray = z_ray();
        let explicit = intersect_surface::<ChaCha8Rng>(&field, &ray, &SamplingConfig::default(), None).unwrap();
        assert!((explicit.depth - 2.0).abs() < 1e-3);
        assert!(explicit.residual < 1e-3);
        let b = explicit.bracket.unwrap();
        assert!(b.f_p >= 0.0 && b.f_n <= 0.0 && b.t_p < b.t_n);
        let ws_cfg = SamplingConfig {
            mode: IntersectionMode::WeightedSum,
            ..Default::default()
        };
        let ws = intersect_surface::<ChaCha8Rng>(&field, &ray, &ws_cfg, None).unwrap();
        assert_eq!(ws.method, HitMethod::WeightedSum);
        assert!((ws.point - Vec3::new(0.0, 0.0, -1.0)).norm() < 0.05);
        assert!(explicit.residual <= ws.residual);
    }

    #[test]
    fn unrefined_residual_within_subinterval() {
        let field = SdfField::sphere(Vec3::zero(), 1.0);
        let ray = z_ray();
        let cfg = SamplingConfig {
            refine: 0,
            ..Default::default()
        };
        let hit = intersect_surface::<ChaCha8Rng>(&field, &ray, &cfg, None).unwrap();
        let b = hit.bracket.unwrap();
        assert!(hit.residual <= 2.0 * (b.t_n - b.t_p) / cfg.d as f64);
    }

    #[test]
    fn miss_returns_none() {
        let field = SdfField::sphere(Vec3::new(0.0, 5.0, 0.0), 0.5);
        let ray = Ray {
            near: 0.0,
            far: 6.0,
            ..z_ray()
        };
        assert!(intersect_surface::<ChaCha8Rng>(&field, &ray, &SamplingConfig::default(), None).is_none());
    }

    #[test]
    fn thin_chord_between_samples_is_found() {
        // cuts the corner of a unit cube, inside for c·√2
        let field = SdfField::cuboid(Vec3::zero(), Vec3::splat(0.5));
        let c = 3e-3;
        let direction = Vec3::new(1.0, 1.0, 0.0).normalize();
        let ray = Ray {
            origin: Vec3::new(0.5 - 0.5 * c, -0.5 + 0.5 * c, 0.0) - direction * 3.0,
            direction,
            near: 2.0,
            far: 4.0,
        };
        let samples = RaySampleSet::from_ray::<ChaCha8Rng>(&field, &ray, 8, None);
        assert!(bracket_crossing(&samples).is_none());
        let cfg = SamplingConfig {
            n_samples: 8,
            ..Default::default()
        };
        let hit = intersect_surface::<ChaCha8Rng>(&field, &ray, &cfg, None).unwrap();
        assert!((hit.depth - (3.0 - c / 2f64.sqrt())).abs() < 1e-6, "{hit:?}");
        let no_gaps = SamplingConfig { gap_levels: 0, ..cfg };
        assert!(intersect_surface::<ChaCha8Rng>(&field, &ray, &no_gaps, None).is_none());
    }

    #[test]
    fn neus_weights_peak_at_surface() {
        let field = SdfField::sphere(Vec3::zero(), 1.0);
        let ray = z_ray();
        let mut s = RaySampleSet::from_ray::<ChaCha8Rng>(&field, &ray, 64, None);
        s.assign_neus_weights(4.0 / ((ray.far - ray.near) / 64.0));
        let k = s
            .weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!((s.depths[k] - 2.0).abs() < 0.1);
        assert!(s.weights.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn stochastic_mode_is_reproducible() {
        let field = SdfField::sphere(Vec3::zero(), 1.0);
        let ray = z_ray();
        let cfg = SamplingConfig {
            stochastic: true,
            ..Default::default()
        };
        let a = intersect_surface(&field, &ray, &cfg, Some(&mut ChaCha8Rng::seed_from_u64(5))).unwrap();
        let b = intersect_surface(&field, &ray, &cfg, Some(&mut ChaCha8Rng::seed_from_u64(5))).unwrap();
        assert_eq!(a, b);
        assert!((a.depth - 2.0).abs() < 1e-2);
    }
}
