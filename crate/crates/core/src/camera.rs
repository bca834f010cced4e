//! Cameras, primary rays and per-ray depth sampling.
//!
//! World convention: z is up and the front view looks along +y from −y.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::Vec3;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("camera up vector is parallel to the view direction")]
    DegenerateUp,
    #[error("camera position coincides with its target")]
    DegenerateView,
    #[error("image resolution must be positive, got {0}x{1}")]
    EmptyImage(usize, usize),
    #[error("invalid projection parameter {0}")]
    InvalidProjection(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Projection {
    /// Vertical field of view in radians.
    Perspective { fov_y: f64 },
    /// Half the height of the view volume in scene units.
    Orthographic { scale: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub position: Vec3,
    pub target: Vec3,
    pub up: Vec3,
    pub projection: Projection,
    pub width: usize,
    pub height: usize,
}

/// `origin + t·direction` for `t` in `[near, far]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    /// Restricts `[near, far]` to the part inside an origin-centred sphere.
    /// Returns `None` when the ray misses the sphere.
    pub fn clip_to_sphere(&self, radius: f64) -> Option<Ray> {
        let b = self.origin.dot(self.direction);
        let c = self.origin.norm_squared() - radius * radius;
        let disc = b * b - c;
        if disc <= 0.0 {
            return None;
        }
        let s = disc.sqrt();
        let near = (-b - s).max(self.near);
        let far = (-b + s).min(self.far);
        (near < far).then_some(Ray { near, far, ..*self })
    }
}

pub const VIEW_NAMES: [&str; 6] = ["front", "back", "left", "right", "front_right", "front_left"];
pub const VIEW_AZIMUTHS_DEG: [f64; 6] = [0.0, 180.0, 90.0, 270.0, 315.0, 45.0];

impl Camera {
    pub fn new(
        position: Vec3,
        target: Vec3,
        up: Vec3,
        projection: Projection,
        width: usize,
        height: usize,
    ) -> Result<Self, CameraError> {
        let cam = Self {
            position,
            target,
            up,
            projection,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::EmptyImage(self.width, self.height));
        }
        let p = match self.projection {
            Projection::Perspective { fov_y } => fov_y,
            Projection::Orthographic { scale } => scale,
        };
        if !(p > 0.0 && p.is_finite())
            || matches!(self.projection, Projection::Perspective { fov_y } if fov_y >= std::f64::consts::PI)
        {
            return Err(CameraError::InvalidProjection(p));
        }
        self.frame().map(|_| ())
    }

    /// Orthonormal `(forward, right, up)` frame.
    pub fn frame(&self) -> Result<(Vec3, Vec3, Vec3), CameraError> {
        let forward = (self.target - self.position)
            .try_normalize(1e-12)
            .ok_or(CameraError::DegenerateView)?;
        let right = forward
            .cross(self.up)
            .try_normalize(1e-9)
            .ok_or(CameraError::DegenerateUp)?;
        let up = right.cross(forward);
        Ok((forward, right, up))
    }

    /// Camera on the horizontal ring at `azimuth_deg` (0° = front, at −y),
    /// looking at the origin.
    pub fn on_ring(azimuth_deg: f64, elevation_deg: f64, distance: f64, projection: Projection, resolution: usize) -> Self {
        let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        let position = Vec3::new(az.sin() * el.cos(), -az.cos() * el.cos(), el.sin()) * distance;
        Self {
            position,
            target: Vec3::zero(),
            up: Vec3::Z,
            projection,
            width: resolution,
            height: resolution,
        }
    }

    /// Ray through pixel `(i, j)` (column, row from the top), offset from the
    /// pixel centre by `jitter` in pixel units, each component in `[−0.5, 0.5)`.
    pub fn generate_ray(&self, i: usize, j: usize, jitter: (f64, f64)) -> Ray {
        let (forward, right, up) = self.frame().expect("validated camera");
        let ndc_x = ((i as f64 + 0.5 + jitter.0) / self.width as f64) * 2.0 - 1.0;
        let ndc_y = 1.0 - ((j as f64 + 0.5 + jitter.1) / self.height as f64) * 2.0;
        let aspect = self.width as f64 / self.height as f64;
        match self.projection {
            Projection::Perspective { fov_y } => {
                let h = (fov_y * 0.5).tan();
                let d = forward + right * (ndc_x * h * aspect) + up * (ndc_y * h);
                Ray {
                    origin: self.position,
                    direction: d.normalize(),
                    near: 0.0,
                    far: f64::INFINITY,
                }
            }
            Projection::Orthographic { scale } => Ray {
                origin: self.position + right * (ndc_x * scale * aspect) + up * (ndc_y * scale),
                direction: forward,
                near: 0.0,
                far: f64::INFINITY,
            },
        }
    }
}

/// The six canonical views (front, back, left, right, front-right,
/// front-left) at elevation 0°, all looking at the origin.
pub fn canonical_six_views(distance: f64, resolution: usize, projection: Projection) -> [Camera; 6] {
    VIEW_AZIMUTHS_DEG.map(|az| Camera::on_ring(az, 0.0, distance, projection, resolution))
}

/// Default perspective used by the canonical rig.
pub const DEFAULT_PROJECTION: Projection = Projection::Perspective {
    fov_y: 0.8726646259971648, // 50°
};

/// One depth per stratum of `[near, far]`, strictly increasing. Without an
/// rng every depth is its stratum midpoint.
pub fn stratified_ray_samples<R: Rng + ?Sized>(ray: &Ray, n: usize, rng: Option<&mut R>) -> Vec<(f64, Vec3)> {
    assert!(n >= 2, "need at least two samples per ray");
    let span = ray.far - ray.near;
    let step = span / n as f64;
    let mut out = Vec::with_capacity(n);
    match rng {
        Some(rng) => {
            for k in 0..n {
                let u: f64 = rng.random();
                // keep strictly inside the stratum so depths stay increasing
                let u = u.clamp(1e-9, 1.0 - 1e-9);
                let t = ray.near + (k as f64 + u) * step;
                out.push((t, ray.at(t)));
            }
        }
        None => {
            for k in 0..n {
                let t = ray.near + (k as f64 + 0.5) * step;
                out.push((t, ray.at(t)));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn no_rng() -> Option<&'static mut ChaCha8Rng> {
        None
    }

    #[test]
    fn front_camera_convention() {
        let views = canonical_six_views(3.0, 32, DEFAULT_PROJECTION);
        let front = views[0];
        assert!((front.position - Vec3::new(0.0, -3.0, 0.0)).norm() < 1e-12);
        let (f, r, u) = front.frame().unwrap();
        assert!((f - Vec3::Y).norm() < 1e-12);
        assert!((r - Vec3::X).norm() < 1e-12);
        assert!((u - Vec3::Z).norm() < 1e-12);
    }

    #[test]
    fn ring_placement() {
        let views = canonical_six_views(3.0, 16, DEFAULT_PROJECTION);
        assert!((views[0].position + views[1].position).norm() < 1e-12);
        for a in 0..6 {
            assert!((views[a].position.norm() - 3.0).abs() < 1e-12);
            for b in a + 1..6 {
                assert!((views[a].position - views[b].position).norm() > 1.0);
            }
        }
        // left view sits on +x so it sees the object's left side
        assert!(views[2].position.x > 2.9);
    }

    #[test]
    fn principal_ray_and_symmetry() {
        let cam = Camera::on_ring(30.0, 10.0, 4.0, DEFAULT_PROJECTION, 33);
        let (f, r, u) = cam.frame().unwrap();
        let center = cam.generate_ray(16, 16, (0.0, 0.0));
        assert!((center.direction - f).norm() < 1e-6);
        assert_eq!(center.origin, cam.position);
        let a = cam.generate_ray(0, 0, (0.0, 0.0)).direction;
        let b = cam.generate_ray(32, 32, (0.0, 0.0)).direction;
        assert!((a.dot(f) - b.dot(f)).abs() < 1e-12);
        assert!((a.dot(r) + b.dot(r)).abs() < 1e-12);
        assert!((a.dot(u) + b.dot(u)).abs() < 1e-12);
        assert!(a.dot(u) > 0.0 && a.dot(r) < 0.0);
    }

    #[test]
    fn orthographic_rays_are_parallel() {
        let cam = Camera::on_ring(0.0, 0.0, 3.0, Projection::Orthographic { scale: 1.5 }, 8);
        let a = cam.generate_ray(0, 0, (-0.5, -0.5));
        assert!((a.origin - Vec3::new(-1.5, -3.0, 1.5)).norm() < 1e-12);
        assert_eq!(a.direction, Vec3::Y);
    }

    #[test]
    fn rejects_bad_cameras() {
        let p = DEFAULT_PROJECTION;
        assert_eq!(
            Camera::new(Vec3::zero(), Vec3::Z, Vec3::Z, p, 4, 4),
            Err(CameraError::DegenerateUp)
        );
        assert_eq!(
            Camera::new(Vec3::X, Vec3::zero(), Vec3::Z, p, 0, 4),
            Err(CameraError::EmptyImage(0, 4))
        );
    }

    #[test]
    fn two_samples_sit_at_quarter_points() {
        let ray = Ray {
            origin: Vec3::zero(),
            direction: Vec3::X,
            near: 1.0,
            far: 3.0,
        };
        let s = stratified_ray_samples(&ray, 2, no_rng());
        assert_eq!(s[0].0, 1.5);
        assert_eq!(s[1].0, 2.5);
    }

    #[test]
    fn jittered_samples_increase() {
        let ray = Ray {
            origin: Vec3::zero(),
            direction: Vec3::X,
            near: 0.5,
            far: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = stratified_ray_samples(&ray, 64, Some(&mut rng));
        assert!(s.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(s[0].0 > 0.5 && s[63].0 < 1.0);
    }

    #[test]
    fn sphere_clipping() {
        let ray = Ray {
            origin: Vec3::new(0.0, 0.0, -3.0),
            direction: Vec3::Z,
            near: 0.0,
            far: f64::INFINITY,
        };
        let c = ray.clip_to_sphere(1.05).unwrap();
        assert!((c.near - 1.95).abs() < 1e-12 && (c.far - 4.05).abs() < 1e-12);
        let miss = Ray {
            origin: Vec3::new(2.0, 0.0, -3.0),
            ..ray
        };
        assert!(miss.clip_to_sphere(1.05).is_none());
    }
}
