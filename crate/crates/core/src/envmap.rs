//! Latitude-longitude environment maps and their SG-mixture fits.
//!
//! Texel `(i, j)` covers polar angle `θ ∈ [π j/h, π (j+1)/h]` from +z and
//! azimuth `φ ∈ [2π i/w, 2π (i+1)/w]` from +x towards +y. Row 0 is the top
//! (+z) of the sphere.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::image::ImageBuffer;
use crate::math::{Rgb, Vec3, PI};
use crate::sg::SphericalGaussian;

/// Maps wider than this are box-filtered down before fitting.
pub const MAX_FIT_WIDTH: usize = 128;

const MIN_SHARPNESS: f64 = 1e-3;
const MAX_SHARPNESS: f64 = 1e4;

#[derive(Debug, Error, PartialEq)]
pub enum EnvmapError {
    #[error("environment map must be a non-empty 3-channel image")]
    Shape,
    #[error("need at least one lobe")]
    NoLobes,
    #[error("texel {0} has negative or non-finite radiance")]
    InvalidTexel(usize),
}

pub fn texel_direction(i: usize, j: usize, width: usize, height: usize) -> Vec3 {
    let theta = PI * (j as f64 + 0.5) / height as f64;
    let phi = 2.0 * PI * (i as f64 + 0.5) / width as f64;
    Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

/// Exact solid angle of a texel in row `j`.
pub fn texel_solid_angle(j: usize, width: usize, height: usize) -> f64 {
    let t0 = PI * j as f64 / height as f64;
    let t1 = PI * (j + 1) as f64 / height as f64;
    2.0 * PI / width as f64 * (t0.cos() - t1.cos())
}

/// Evaluates a lobe mixture at every texel centre.
pub fn synthesize_envmap(lobes: &[SphericalGaussian], width: usize, height: usize) -> ImageBuffer {
    let mut data = Vec::with_capacity(width * height * 3);
    for j in 0..height {
        for i in 0..width {
            let d = texel_direction(i, j, width, height);
            let c = lobes.iter().fold(Vec3::zero(), |acc, g| acc + g.eval(d));
            data.extend(c.to_array());
        }
    }
    ImageBuffer {
        width,
        height,
        channels: 3,
        data,
    }
}

/// Solid-angle-weighted L2 distance `sqrt(Σ Ω Σ_c (mixture − map)²)`.
pub fn envmap_error(map: &ImageBuffer, lobes: &[SphericalGaussian]) -> f64 {
    let (w, h) = (map.width, map.height);
    let mut sum = 0.0;
    for j in 0..h {
        let omega = texel_solid_angle(j, w, h);
        for i in 0..w {
            let d = texel_direction(i, j, w, h);
            let m = lobes.iter().fold(Vec3::zero(), |acc, g| acc + g.eval(d));
            let p = map.pixel(i, j);
            sum += omega * ((m.x - p[0]).powi(2) + (m.y - p[1]).powi(2) + (m.z - p[2]).powi(2));
        }
    }
    sum.sqrt()
}

/// Radiance integrated over the sphere, per channel.
pub fn envmap_energy(map: &ImageBuffer) -> Rgb {
    let (w, h) = (map.width, map.height);
    let mut e = Vec3::zero();
    for j in 0..h {
        let omega = texel_solid_angle(j, w, h);
        for i in 0..w {
            let p = map.pixel(i, j);
            e += Vec3::new(p[0], p[1], p[2]) * omega;
        }
    }
    e
}

/// Area-weighted downsampling by an integer factor.
fn downsample(map: &ImageBuffer, factor: usize) -> ImageBuffer {
    let (w, h) = (map.width / factor, map.height / factor);
    let mut data = vec![0.0; w * h * 3];
    for j in 0..h {
        for i in 0..w {
            let mut acc = [0.0; 3];
            let mut weight = 0.0;
            for sj in j * factor..(j + 1) * factor {
                let omega = texel_solid_angle(sj, map.width, map.height);
                for si in i * factor..(i + 1) * factor {
                    let p = map.pixel(si, sj);
                    for c in 0..3 {
                        acc[c] += omega * p[c];
                    }
                    weight += omega;
                }
            }
            for c in 0..3 {
                data[(j * w + i) * 3 + c] = acc[c] / weight;
            }
        }
    }
    ImageBuffer {
        width: w,
        height: h,
        channels: 3,
        data,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvmapFit {
    pub lobes: Vec<SphericalGaussian>,
    /// [`envmap_error`] of the result against the input map.
    pub residual: f64,
    pub iterations: usize,
}

fn fibonacci_axes(n: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

struct Samples {
    dirs: Vec<Vec3>,
    weights: Vec<f64>,
    values: Vec<[f64; 3]>,
}

impl Samples {
    fn new(map: &ImageBuffer) -> Self {
        let (w, h) = (map.width, map.height);
        let mut s = Samples {
            dirs: Vec::with_capacity(w * h),
            weights: Vec::with_capacity(w * h),
            values: Vec::with_capacity(w * h),
        };
        for j in 0..h {
            let omega = texel_solid_angle(j, w, h);
            for i in 0..w {
                let p = map.pixel(i, j);
                s.dirs.push(texel_direction(i, j, w, h));
                s.weights.push(omega);
                s.values.push([p[0], p[1], p[2]]);
            }
        }
        s
    }

    fn cost(&self, lobes: &[SphericalGaussian]) -> f64 {
        let mut sum = 0.0;
        for ((d, w), v) in self.dirs.iter().zip(&self.weights).zip(&self.values) {
            let m = lobes.iter().fold(Vec3::zero(), |acc, g| acc + g.eval(*d));
            sum += w * ((m.x - v[0]).powi(2) + (m.y - v[1]).powi(2) + (m.z - v[2]).powi(2));
        }
        sum
    }
}

/// Least-squares amplitudes for fixed axes and sharpness, clamped at zero.
fn solve_amplitudes(s: &Samples, lobes: &mut [SphericalGaussian]) {
    let n = lobes.len();
    let mut ata = DMatrix::<f64>::zeros(n, n);
    let mut atb = DMatrix::<f64>::zeros(n, 3);
    let mut e = vec![0.0; n];
    for ((d, w), v) in s.dirs.iter().zip(&s.weights).zip(&s.values) {
        for (k, g) in lobes.iter().enumerate() {
            e[k] = (g.sharpness * (g.axis.dot(*d) - 1.0)).exp();
        }
        for a in 0..n {
            for b in a..n {
                ata[(a, b)] += w * e[a] * e[b];
            }
            for c in 0..3 {
                atb[(a, c)] += w * e[a] * v[c];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            ata[(a, b)] = ata[(b, a)];
        }
        ata[(a, a)] += 1e-12 + 1e-9 * ata[(a, a)];
    }
    if let Some(ch) = ata.cholesky() {
        let x = ch.solve(&atb);
        for (k, g) in lobes.iter_mut().enumerate() {
            g.amplitude = Vec3::new(x[(k, 0)], x[(k, 1)], x[(k, 2)]).clamp_min(0.0);
        }
    }
}

fn initial_lobes(s: &Samples, n: usize) -> Vec<SphericalGaussian> {
    let spacing = (4.0 * PI / n as f64).sqrt();
    let suppress = 0.5 * spacing;
    let sharpness = (1.0 / (1.0 - suppress.cos())).clamp(1.0, 200.0);
    let mut order: Vec<usize> = (0..s.dirs.len()).collect();
    let lum = |k: usize| s.values[k].iter().sum::<f64>();
    order.sort_by(|&a, &b| lum(b).total_cmp(&lum(a)).then(a.cmp(&b)));
    let mut axes: Vec<Vec3> = Vec::with_capacity(n);
    for k in order {
        if axes.len() == n || lum(k) <= 0.0 {
            break;
        }
        let d = s.dirs[k];
        if axes.iter().all(|a| a.dot(d) < suppress.cos()) {
            axes.push(d);
        }
    }
    // spare lobes go to lattice directions far from the chosen ones
    for f in fibonacci_axes(n) {
        if axes.len() == n {
            break;
        }
        if axes.iter().all(|a| a.dot(f) < suppress.cos()) {
            axes.push(f);
        }
    }
    let mut spare = fibonacci_axes(n).into_iter();
    while axes.len() < n {
        axes.push(spare.next().unwrap());
    }
    axes.into_iter()
        .map(|axis| SphericalGaussian {
            axis,
            sharpness,
            amplitude: Vec3::zero(),
        })
        .collect()
}

const P: usize = 7;

/// Normal equations `JᵀJ` and `Jᵀr` for parameters `[p, ln λ, μ]` per lobe.
fn normal_equations(s: &Samples, lobes: &[SphericalGaussian]) -> (DMatrix<f64>, DVector<f64>) {
    let n = lobes.len();
    let np = n * P;
    let mut jtj = vec![0.0; np * np];
    let mut jtr = vec![0.0; np];
    let mut e = vec![0.0; n];
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(5 * n);
    for ((d, w), v) in s.dirs.iter().zip(&s.weights).zip(&s.values) {
        let mut m = [0.0; 3];
        for (k, g) in lobes.iter().enumerate() {
            e[k] = (g.sharpness * (g.axis.dot(*d) - 1.0)).exp();
            for c in 0..3 {
                m[c] += g.amplitude[c] * e[k];
            }
        }
        for c in 0..3 {
            let r = m[c] - v[c];
            row.clear();
            for (k, g) in lobes.iter().enumerate() {
                if e[k] < 1e-300 {
                    continue;
                }
                let mu = g.amplitude[c];
                let cos = g.axis.dot(*d);
                let base = k * P;
                if mu != 0.0 {
                    let t = (*d - g.axis * cos) * (mu * e[k] * g.sharpness);
                    row.push((base, t.x));
                    row.push((base + 1, t.y));
                    row.push((base + 2, t.z));
                    row.push((base + 3, mu * e[k] * g.sharpness * (cos - 1.0)));
                }
                row.push((base + 4 + c, e[k]));
            }
            for &(a, ja) in &row {
                jtr[a] += w * ja * r;
                for &(b, jb) in &row {
                    if b >= a {
                        jtj[a * np + b] += w * ja * jb;
                    }
                }
            }
        }
    }
    for a in 0..np {
        for b in 0..a {
            jtj[a * np + b] = jtj[b * np + a];
        }
    }
    (DMatrix::from_row_slice(np, np, &jtj), DVector::from_vec(jtr))
}

fn apply_step(lobes: &[SphericalGaussian], delta: &DVector<f64>) -> Vec<SphericalGaussian> {
    lobes
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let b = k * P;
            let axis = (g.axis - Vec3::new(delta[b], delta[b + 1], delta[b + 2]))
                .try_normalize(1e-12)
                .unwrap_or(g.axis);
            let sharpness = (g.sharpness.ln() - delta[b + 3]).exp().clamp(MIN_SHARPNESS, MAX_SHARPNESS);
            let amplitude = (g.amplitude - Vec3::new(delta[b + 4], delta[b + 5], delta[b + 6])).clamp_min(0.0);
            SphericalGaussian {
                axis,
                sharpness,
                amplitude,
            }
        })
        .collect()
}

const RESEED_ROUNDS: usize = 8;

fn levenberg_marquardt(s: &Samples, mut lobes: Vec<SphericalGaussian>, max_iterations: usize) -> (Vec<SphericalGaussian>, f64, usize) {
    let mut cost = s.cost(&lobes);
    let mut damping = 1e-3;
    let mut iterations = 0;
    let mut stalls = 0;
    while iterations < max_iterations && cost > 0.0 {
        iterations += 1;
        let (jtj, jtr) = normal_equations(s, &lobes);
        let mut improved = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += damping * (a[(i, i)] + 1e-12);
            }
            let Some(ch) = a.cholesky() else {
                damping *= 10.0;
                continue;
            };
            let candidate = apply_step(&lobes, &ch.solve(&jtr));
            let c = s.cost(&candidate);
            if c < cost {
                let gain = (cost - c) / cost;
                lobes = candidate;
                cost = c;
                damping = (damping * 0.3).max(1e-12);
                improved = true;
                stalls = if gain < 1e-9 { stalls + 1 } else { 0 };
                break;
            }
            damping *= 10.0;
        }
        if !improved || stalls >= 3 {
            break;
        }
    }
    (lobes, cost, iterations)
}

fn reseed_weakest(s: &Samples, lobes: &[SphericalGaussian]) -> Option<Vec<SphericalGaussian>> {
    let (weakest, _) = lobes
        .iter()
        .enumerate()
        .map(|(k, g)| (k, g.integral().sum()))
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    let mut best = (0.0, 0);
    for (k, (d, v)) in s.dirs.iter().zip(&s.values).enumerate() {
        let m = lobes
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != weakest)
            .fold(Vec3::zero(), |acc, (_, g)| acc + g.eval(*d));
        let excess = (v[0] - m.x).max(0.0) + (v[1] - m.y).max(0.0) + (v[2] - m.z).max(0.0);
        if excess > best.0 {
            best = (excess, k);
        }
    }
    if best.0 <= 0.0 {
        return None;
    }
    let mut out = lobes.to_vec();
    out[weakest] = SphericalGaussian {
        axis: s.dirs[best.1],
        sharpness: lobes[weakest].sharpness.max(4.0),
        amplitude: Vec3::zero(),
    };
    solve_amplitudes(s, &mut out);
    Some(out)
}

/// Fits `n_lobes` SGs to a lat-long map by greedy initialization at the
/// brightest texels (with angular suppression), a linear amplitude solve,
/// and Levenberg–Marquardt on the solid-angle-weighted squared error.
pub fn fit_envmap_to_sg(map: &ImageBuffer, n_lobes: usize) -> Result<EnvmapFit, EnvmapError> {
    fit_envmap_to_sg_with(map, n_lobes, 200)
}

pub fn fit_envmap_to_sg_with(map: &ImageBuffer, n_lobes: usize, max_iterations: usize) -> Result<EnvmapFit, EnvmapError> {
    if map.channels != 3 || map.width == 0 || map.height == 0 || map.data.len() != map.width * map.height * 3 {
        return Err(EnvmapError::Shape);
    }
    if n_lobes == 0 {
        return Err(EnvmapError::NoLobes);
    }
    if let Some(k) = map.data.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(EnvmapError::InvalidTexel(k / 3));
    }
    if map.data.iter().all(|&v| v == 0.0) {
        let lobes: Vec<SphericalGaussian> = initial_lobes(&Samples::new(map), n_lobes);
        return Ok(EnvmapFit {
            lobes,
            residual: 0.0,
            iterations: 0,
        });
    }
    let mut factor = 1;
    while map.width / factor > MAX_FIT_WIDTH && map.width % (2 * factor) == 0 && map.height % (2 * factor) == 0 {
        factor *= 2;
    }
    let work = if factor > 1 { downsample(map, factor) } else { map.clone() };
    let s = Samples::new(&work);

    let mut lobes = initial_lobes(&s, n_lobes);
    solve_amplitudes(&s, &mut lobes);
    let (mut lobes, mut cost, mut iterations) = levenberg_marquardt(&s, lobes, max_iterations);
    // escape local minima: move the weakest lobe onto the largest leftover
    for _ in 0..RESEED_ROUNDS {
        if cost == 0.0 {
            break;
        }
        let Some(candidate) = reseed_weakest(&s, &lobes) else { break };
        let (candidate, c, it) = levenberg_marquardt(&s, candidate, max_iterations);
        iterations += it;
        if c < cost * (1.0 - 1e-6) {
            lobes = candidate;
            cost = c;
        } else {
            break;
        }
    }
    let residual = envmap_error(map, &lobes);
    Ok(EnvmapFit {
        lobes,
        residual,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sg::mixture_energy;

    #[test]
    fn solid_angles_cover_the_sphere() {
        let (w, h) = (24, 12);
        let total: f64 = (0..h).map(|j| texel_solid_angle(j, w, h) * w as f64).sum();
        assert!((total - 4.0 * PI).abs() < 1e-12);
        assert!((texel_direction(0, 0, w, h).z - (PI / 24.0).cos()).abs() < 1e-12);
    }

    #[test]
    fn constant_map_gives_broad_lobe_with_same_energy() {
        let map = ImageBuffer::filled(32, 16, 3, 0.4);
        let fit = fit_envmap_to_sg(&map, 1).unwrap();
        let e = envmap_energy(&map);
        let got = mixture_energy(&fit.lobes);
        assert!(((got.x - e.x) / e.x).abs() < 0.05, "{got:?} vs {e:?}");
        assert!(fit.lobes[0].sharpness < 0.5);
    }

    #[test]
    fn single_texel_is_found() {
        let (w, h) = (64, 32);
        let mut map = ImageBuffer::filled(w, h, 3, 0.0);
        let (ti, tj) = (40, 9);
        for c in 0..3 {
            map.data[(tj * w + ti) * 3 + c] = 50.0;
        }
        let fit = fit_envmap_to_sg(&map, 16).unwrap();
        let dominant = fit
            .lobes
            .iter()
            .max_by(|a, b| a.integral().sum().total_cmp(&b.integral().sum()))
            .unwrap();
        let angle = dominant.axis.dot(texel_direction(ti, tj, w, h)).clamp(-1.0, 1.0).acos();
        assert!(angle.to_degrees() < 5.0, "{}", angle.to_degrees());
    }

    #[test]
    fn black_and_invalid_maps() {
        let black = ImageBuffer::filled(8, 4, 3, 0.0);
        let fit = fit_envmap_to_sg(&black, 5).unwrap();
        assert_eq!(fit.lobes.len(), 5);
        assert!(fit.lobes.iter().all(|l| l.amplitude == Vec3::zero() && l.validate().is_ok()));
        let mut bad = black.clone();
        bad.data[7] = f64::NAN;
        assert_eq!(fit_envmap_to_sg(&bad, 2), Err(EnvmapError::InvalidTexel(2)));
        assert_eq!(fit_envmap_to_sg(&black, 0), Err(EnvmapError::NoLobes));
    }

    #[test]
    fn downsampling_preserves_energy() {
        let lobes = [SphericalGaussian::new(Vec3::new(0.3, 0.2, 0.9), 8.0, Vec3::new(1.0, 2.0, 0.5)).unwrap()];
        let map = synthesize_envmap(&lobes, 256, 128);
        let small = downsample(&map, 4);
        let (a, b) = (envmap_energy(&map), envmap_energy(&small));
        assert!((a - b).norm() < 1e-9 * a.norm());
    }
}
