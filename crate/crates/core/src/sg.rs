//! Spherical Gaussians: `G(v; p, λ, μ) = μ · exp(λ (v·p − 1))`.
//!
//! Lobes are closed under multiplication and have a closed-form integral
//! over the sphere, which is what makes the shading integral tractable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{Real, Rgb, Vec3, PI};

/// Sharpness assigned to the product of two lobes whose weighted axes cancel.
pub const DEGENERATE_SHARPNESS: f64 = 1e-6;

/// Norm below which the combined axis of a product counts as degenerate.
pub const DEGENERATE_AXIS_NORM: f64 = 1e-8;

/// Sharpness of the lobe approximating the cosine term.
pub const COSINE_SHARPNESS: f64 = 0.0315;
/// Amplitude of the lobe approximating the cosine term.
pub const COSINE_AMPLITUDE: f64 = 32.7080;
/// Constant subtracted from the cosine lobe.
pub const COSINE_OFFSET: f64 = 31.7003;

#[derive(Debug, Error, PartialEq)]
pub enum SgError {
    #[error("lobe axis has zero or non-finite length")]
    InvalidAxis,
    #[error("lobe sharpness must be positive and finite, got {0}")]
    InvalidSharpness(f64),
    #[error("lobe amplitude must be finite and non-negative, got {0:?}")]
    InvalidAmplitude([f64; 3]),
}

/// One lobe of lighting or a wrapped BRDF lobe.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Copy + Serialize", deserialize = "S: Copy + Deserialize<'de>"))]
pub struct SphericalGaussian<S = f64> {
    pub axis: Vec3<S>,
    pub sharpness: S,
    pub amplitude: Rgb<S>,
}

impl SphericalGaussian<f64> {
    /// Validated constructor; the axis is normalized.
    pub fn new(axis: Vec3, sharpness: f64, amplitude: Rgb) -> Result<Self, SgError> {
        let axis = axis.try_normalize(1e-12).ok_or(SgError::InvalidAxis)?;
        if !(sharpness > 0.0 && sharpness.is_finite()) {
            return Err(SgError::InvalidSharpness(sharpness));
        }
        let a = amplitude.to_array();
        if a.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(SgError::InvalidAmplitude(a));
        }
        Ok(Self {
            axis,
            sharpness,
            amplitude,
        })
    }

    pub fn validate(&self) -> Result<(), SgError> {
        if (self.axis.norm() - 1.0).abs() > 1e-6 || !self.axis.is_finite() {
            return Err(SgError::InvalidAxis);
        }
        Self::new(self.axis, self.sharpness, self.amplitude).map(|_| ())
    }

    /// Lifts a constant lobe into another scalar type.
    pub fn lift<S: Real>(&self) -> SphericalGaussian<S> {
        SphericalGaussian {
            axis: Vec3::constant(self.axis),
            sharpness: S::from_f64(self.sharpness),
            amplitude: Vec3::constant(self.amplitude),
        }
    }
}

impl<S: Real> SphericalGaussian<S> {
    pub fn value(&self) -> SphericalGaussian<f64> {
        SphericalGaussian {
            axis: self.axis.value(),
            sharpness: self.sharpness.value(),
            amplitude: self.amplitude.value(),
        }
    }

    /// Evaluates the lobe in direction `v`.
    pub fn eval(&self, v: Vec3<S>) -> Rgb<S> {
        let e = (self.sharpness * (v.dot(self.axis) - 1.0)).exp();
        self.amplitude.scale(e)
    }

    /// Evaluates the lobe in a constant direction.
    pub fn eval_at(&self, v: Vec3) -> Rgb<S> {
        let e = (self.sharpness * (self.axis.dot_f64(v) - 1.0)).exp();
        self.amplitude.scale(e)
    }

    /// Integral over the full sphere, `2π μ / λ · (1 − e^{−2λ})`.
    pub fn integral(&self) -> Rgb<S> {
        let factor = (-(self.sharpness * -2.0).exp_m1()) / self.sharpness * (2.0 * PI);
        self.amplitude.scale(factor)
    }

    /// Same lobe with its amplitude multiplied componentwise.
    pub fn with_amplitude(&self, amplitude: Rgb<S>) -> Self {
        Self {
            axis: self.axis,
            sharpness: self.sharpness,
            amplitude,
        }
    }
}

/// Pointwise product of two lobes, again a lobe.
///
/// The combined axis is the normalized sum `λ1 p1 + λ2 p2`, the combined
/// sharpness is its norm, and the amplitude absorbs `exp(λm − λ1 − λ2)`.
/// When the weighted axes cancel the result is a near-constant lobe with
/// sharpness [`DEGENERATE_SHARPNESS`] along the first axis.
pub fn sg_product<S: Real>(
    g1: &SphericalGaussian<S>,
    g2: &SphericalGaussian<S>,
) -> SphericalGaussian<S> {
    let um = g1.axis.scale(g1.sharpness) + g2.axis.scale(g2.sharpness);
    let lm2 = um.norm_squared();
    let (axis, lm) = if lm2.value() < DEGENERATE_AXIS_NORM * DEGENERATE_AXIS_NORM {
        (g1.axis, S::from_f64(DEGENERATE_SHARPNESS))
    } else {
        let lm = lm2.sqrt();
        (um.scale(lm.recip()), lm)
    };
    let scale = (lm - g1.sharpness - g2.sharpness).exp();
    SphericalGaussian {
        axis,
        sharpness: lm,
        amplitude: g1.amplitude.hadamard(g2.amplitude).scale(scale),
    }
}

/// Closed-form sphere integral of a lobe.
pub fn sg_integral<S: Real>(g: &SphericalGaussian<S>) -> Rgb<S> {
    g.integral()
}

/// `∫ g1 · g2` over the sphere.
pub fn sg_inner_product<S: Real>(g1: &SphericalGaussian<S>, g2: &SphericalGaussian<S>) -> Rgb<S> {
    sg_product(g1, g2).integral()
}

/// Lobe and offset with `ω·n ≈ G(ω; n, 0.0315, 32.7080) − 31.7003`.
pub fn cosine_sg(n: Vec3) -> (SphericalGaussian, f64) {
    (
        SphericalGaussian {
            axis: n,
            sharpness: COSINE_SHARPNESS,
            amplitude: Vec3::splat(COSINE_AMPLITUDE),
        },
        COSINE_OFFSET,
    )
}

/// Radiance of a lobe mixture in direction `v`.
pub fn eval_mixture(lobes: &[SphericalGaussian], v: Vec3) -> Rgb {
    lobes
        .iter()
        .fold(Vec3::zero(), |acc, g| acc + g.eval(v))
}

/// Total sphere integral of a lobe mixture.
pub fn mixture_energy(lobes: &[SphericalGaussian]) -> Rgb {
    lobes
        .iter()
        .fold(Vec3::zero(), |acc, g| acc + g.integral())
}
