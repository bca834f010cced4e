//! Image quality metrics on linear `[0, 1]` data.

use thiserror::Error;

use crate::image::{ImageBuffer, ImageError};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error(transparent)]
    Shape(#[from] ImageError),
    #[error("mask must have one channel and match the image size")]
    MaskShape,
    #[error("mask selects no pixels")]
    EmptyMask,
    #[error("image {0}x{1} is smaller than the {2}x{2} window")]
    TooSmall(usize, usize, usize),
}

/// Mask pixels at or above this coverage count as selected.
pub const MASK_THRESHOLD: f64 = 0.5;

/// Mean squared error over all channels of the selected pixels.
pub fn mse(a: &ImageBuffer, b: &ImageBuffer, mask: Option<&ImageBuffer>) -> Result<f64, MetricError> {
    a.check_same_shape(b)?;
    if let Some(m) = mask {
        if m.channels != 1 || m.width != a.width || m.height != a.height {
            return Err(MetricError::MaskShape);
        }
    }
    let c = a.channels;
    let mut sum = 0.0;
    let mut count = 0usize;
    for k in 0..a.pixel_count() {
        if mask.is_some_and(|m| m.data[k] < MASK_THRESHOLD) {
            continue;
        }
        for ch in 0..c {
            let d = a.data[k * c + ch] - b.data[k * c + ch];
            sum += d * d;
        }
        count += c;
    }
    if count == 0 {
        return Err(MetricError::EmptyMask);
    }
    Ok(sum / count as f64)
}

/// `10 log10(1 / MSE)` with peak value 1; identical inputs give `+∞`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, mask: Option<&ImageBuffer>) -> Result<f64, MetricError> {
    let e = mse(a, b, mask)?;
    Ok(if e == 0.0 { f64::INFINITY } else { -10.0 * e.log10() })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - c;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian filter over valid window positions only.
fn filter(img: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> (Vec<f64>, usize, usize) {
    let n = SSIM_WINDOW;
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Structural similarity with an 11×11 Gaussian window (σ = 1.5), dynamic
/// range 1, averaged over valid windows and channels.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricError> {
    a.check_same_shape(b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(MetricError::TooSmall(a.width, a.height, SSIM_WINDOW));
    }
    let c1 = 0.01f64.powi(2);
    let c2 = 0.03f64.powi(2);
    let k = gaussian_kernel();
    let (w, h) = (a.width, a.height);
    let mut total = 0.0;
    for ch in 0..a.channels {
        let x = a.channel(ch).data;
        let y = b.channel(ch).data;
        let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
        let (mx, ow, oh) = filter(&x, w, h, &k);
        let (my, _, _) = filter(&y, w, h, &k);
        let (sxx, _, _) = filter(&prod(&x, &x), w, h, &k);
        let (syy, _, _) = filter(&prod(&y, &y), w, h, &k);
        let (sxy, _, _) = filter(&prod(&x, &y), w, h, &k);
        let mut sum = 0.0;
        for i in 0..ow * oh {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            sum += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += sum / (ow * oh) as f64;
    }
    Ok(total / a.channels as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> ImageBuffer {
        ImageBuffer::new(w, h, c, (0..w * h * c).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn psnr_closed_forms() {
        let a = ImageBuffer::filled(8, 8, 3, 0.3);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, None).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, None).unwrap(), f64::INFINITY);
    }

    #[test]
    fn masked_psnr_ignores_unselected_pixels() {
        let a = ImageBuffer::filled(4, 4, 1, 0.0);
        let mut b = a.clone();
        let mut mask = ImageBuffer::filled(4, 4, 1, 0.0);
        for k in 0..8 {
            b.data[k] = 0.1;
            mask.data[k] = 1.0;
        }
        b.data[15] = 1.0;
        assert!((psnr(&a, &b, Some(&mask)).unwrap() - 20.0).abs() < 1e-9);
        let empty = ImageBuffer::filled(4, 4, 1, 0.0);
        assert_eq!(psnr(&a, &b, Some(&empty)), Err(MetricError::EmptyMask));
    }

    #[test]
    fn ssim_identity_symmetry_and_inversion() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_image(&mut rng, 24, 20, 3);
        let b = random_image(&mut rng, 24, 20, 3);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        let checker = ImageBuffer::new(16, 16, 1, (0..256).map(|i| ((i / 4 + i / 64) % 2) as f64).collect()).unwrap();
        assert!(ssim(&checker, &checker.map(|v| 1.0 - v)).unwrap() < 0.5);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = ImageBuffer::filled(10, 30, 1, 0.5);
        assert_eq!(ssim(&a, &a), Err(MetricError::TooSmall(10, 30, 11)));
    }
}
