//! Positional encoding and a small fully connected network, generic over
//! [`Real`] so the same weights can be evaluated plainly or on the tape.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::math::{Real, PI};

/// `[x, sin(2⁰πx), cos(2⁰πx), …, sin(2^{L−1}πx), cos(2^{L−1}πx)]` per axis;
/// `6L + 3` values.
pub fn positional_encoding<S: Real>(x: [S; 3], order: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(3 + 6 * order);
    out.extend_from_slice(&x);
    let mut freq = PI;
    for _ in 0..order {
        for c in x {
            let a = c * freq;
            out.push(a.sin());
            out.push(a.cos());
        }
        freq *= 2.0;
    }
    out
}

pub fn encoding_width(order: usize) -> usize {
    3 + 6 * order
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// `softplus(βx)/β`
    Softplus { beta: f64 },
}

impl Activation {
    #[inline]
    fn apply<S: Real>(self, x: S) -> S {
        match self {
            Activation::Relu => x.max(S::zero()),
            Activation::Softplus { beta } => (x * beta).softplus() / beta,
        }
    }
}

/// Dense network with an optional skip connection that concatenates the
/// network input onto the input of one hidden layer (scaled by 1/√2).
///
/// Parameters are stored flat, layer by layer, each as a row-major weight
/// matrix `[out × in]` followed by the bias vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// `(in, out)` per linear layer.
    pub layers: Vec<(usize, usize)>,
    pub skip_layer: Option<usize>,
    pub activation: Activation,
    /// Apply a sigmoid to the final outputs.
    pub sigmoid_output: bool,
    pub params: Vec<f64>,
}

impl Mlp {
    /// Builds the layer list for `hidden` nonlinear layers of width `width`.
    ///
    /// With a skip at layer `k`, layer `k − 1` outputs `width − input` units so
    /// the concatenated input of layer `k` is again `width` wide.
    pub fn layout(input: usize, width: usize, hidden: usize, output: usize, skip: Option<usize>) -> Vec<(usize, usize)> {
        let mut layers = Vec::with_capacity(hidden + 1);
        let mut prev = input;
        for l in 0..hidden {
            let out = if skip == Some(l + 1) { width - input } else { width };
            let inp = if skip == Some(l) { prev + input } else { prev };
            layers.push((inp, out));
            prev = out;
        }
        layers.push((prev, output));
        layers
    }

    pub fn param_count(layers: &[(usize, usize)]) -> usize {
        layers.iter().map(|(i, o)| i * o + o).sum()
    }

    /// He-style random initialization.
    pub fn random(
        layers: Vec<(usize, usize)>,
        skip_layer: Option<usize>,
        activation: Activation,
        sigmoid_output: bool,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(Self::param_count(&layers));
        for &(i, o) in &layers {
            let normal = Normal::new(0.0, (2.0 / i as f64).sqrt()).expect("valid std");
            params.extend((0..i * o).map(|_| normal.sample(&mut rng)));
            params.extend(std::iter::repeat_n(0.0, o));
        }
        Self {
            layers,
            skip_layer,
            activation,
            sigmoid_output,
            params,
        }
    }

    pub fn input_width(&self) -> usize {
        let (i, _) = self.layers[0];
        i
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(|&(_, o)| o).unwrap_or(0)
    }

    /// Offset of layer `l`'s weights in the flat parameter vector.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.layers[..l].iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn forward_f64(&self, input: &[f64]) -> Vec<f64> {
        self.forward(&self.params, input)
    }

    /// Evaluates the network with an explicit parameter vector.
    pub fn forward<S: Real>(&self, params: &[S], input: &[S]) -> Vec<S> {
        debug_assert_eq!(params.len(), self.params.len());
        let mut h: Vec<S> = input.to_vec();
        let mut offset = 0;
        let last = self.layers.len() - 1;
        for (l, &(n_in, n_out)) in self.layers.iter().enumerate() {
            if self.skip_layer == Some(l) {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                h = h.iter().chain(input.iter()).map(|&v| v * s).collect();
            }
            debug_assert_eq!(h.len(), n_in);
            let w = &params[offset..offset + n_in * n_out];
            let b = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let mut next = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut acc = b[o];
                for (&wi, &xi) in row.iter().zip(&h) {
                    acc = acc + wi * xi;
                }
                next.push(if l == last {
                    if self.sigmoid_output {
                        acc.sigmoid()
                    } else {
                        acc
                    }
                } else {
                    self.activation.apply(acc)
                });
            }
            h = next;
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_of_zero() {
        let e = positional_encoding([0.0f64; 3], 4);
        assert_eq!(e.len(), 27);
        assert_eq!(&e[..3], &[0.0, 0.0, 0.0]);
        for k in 0..4 {
            for c in 0..3 {
                assert_eq!(e[3 + 6 * k + 2 * c], 0.0);
                assert_eq!(e[3 + 6 * k + 2 * c + 1], 1.0);
            }
        }
    }

    #[test]
    fn encoding_order_zero_is_identity() {
        let x = [0.3, -1.2, 2.0];
        assert_eq!(positional_encoding(x, 0), x.to_vec());
    }

    #[test]
    fn encoding_width_l10() {
        assert_eq!(positional_encoding([0.1, 0.2, 0.3], 10).len(), 63);
        assert_eq!(encoding_width(10), 63);
    }

    #[test]
    fn encoding_frequencies() {
        let x = [0.1, 0.0, 0.0];
        let e = positional_encoding(x, 3);
        for k in 0..3 {
            let a = 0.1 * PI * 2f64.powi(k as i32);
            assert!((e[3 + 6 * k] - a.sin()).abs() < 1e-15);
            assert!((e[3 + 6 * k + 1] - a.cos()).abs() < 1e-15);
        }
    }

    #[test]
    fn layout_with_skip() {
        let layers = Mlp::layout(63, 128, 8, 1, Some(4));
        assert_eq!(layers.len(), 9);
        assert_eq!(layers[3], (128, 65));
        assert_eq!(layers[4], (128, 128));
        assert_eq!(layers[8], (128, 1));
    }

    #[test]
    fn forward_is_deterministic() {
        let mlp = Mlp::random(Mlp::layout(9, 16, 3, 2, Some(2)), Some(2), Activation::Relu, true, 7);
        let x: Vec<f64> = (0..9).map(|i| i as f64 * 0.1).collect();
        let a = mlp.forward_f64(&x);
        let b = mlp.forward_f64(&x);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| *v > 0.0 && *v < 1.0));
    }
}
