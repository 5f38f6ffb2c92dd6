//! A small fully connected network with SiLU hidden activations, stored as a
//! flat parameter vector so the optimizer is a plain loop.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    /// Input of each layer (layer 0 input is the network input).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    /// `sizes = [input, hidden..., output]`. Weights are `N(0, 1/fan_in)`,
    /// biases zero; the output layer is scaled down so the initial network is
    /// close to zero.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut params = Vec::new();
        let layers = sizes.len() - 1;
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = if l + 1 == layers { 0.1 } else { 1.0 } / (fan_in as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| scale * rng.sample::<f64, _>(StandardNormal)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Mlp {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.sizes.windows(2).map(move |w| {
            let start = offset;
            offset += w[0] * w[1] + w[1];
            (start, w[0], w[1])
        })
    }

    fn affine(&self, start: usize, fan_in: usize, fan_out: usize, x: &[f64]) -> Vec<f64> {
        let weights = &self.params[start..start + fan_in * fan_out];
        let bias = &self.params[start + fan_in * fan_out..start + fan_in * fan_out + fan_out];
        weights
            .chunks_exact(fan_in)
            .zip(bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let layers = self.sizes.len() - 1;
        let mut h = x.to_vec();
        for (l, (start, fan_in, fan_out)) in self.layer_offsets().enumerate() {
            h = self.affine(start, fan_in, fan_out, &h);
            if l + 1 < layers {
                h.iter_mut().for_each(|v| *v = silu(*v));
            }
        }
        h
    }

    pub fn forward_tape(&self, x: &[f64], tape: &mut Tape) -> Vec<f64> {
        let layers = self.sizes.len() - 1;
        tape.inputs.clear();
        tape.pre.clear();
        let mut h = x.to_vec();
        for (l, (start, fan_in, fan_out)) in self.layer_offsets().enumerate() {
            let z = self.affine(start, fan_in, fan_out, &h);
            tape.inputs.push(h);
            if l + 1 < layers {
                h = z.iter().map(|v| silu(*v)).collect();
                tape.pre.push(z);
            } else {
                h = z;
            }
        }
        h
    }

    /// Accumulates `∂L/∂params` into `grads` given `∂L/∂output`.
    pub fn backward(&self, tape: &Tape, grad_out: &[f64], grads: &mut [f64]) {
        let offsets: Vec<_> = self.layer_offsets().collect();
        let mut delta = grad_out.to_vec();
        for (l, &(start, fan_in, fan_out)) in offsets.iter().enumerate().rev() {
            let input = &tape.inputs[l];
            let (gw, rest) = grads[start..].split_at_mut(fan_in * fan_out);
            for (o, d) in delta.iter().enumerate() {
                rest[o] += d;
                for (g, v) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(input) {
                    *g += d * v;
                }
            }
            if l > 0 {
                let weights = &self.params[start..start + fan_in * fan_out];
                let mut prev = vec![0.0; fan_in];
                for (o, d) in delta.iter().enumerate() {
                    for (p, w) in prev.iter_mut().zip(&weights[o * fan_in..(o + 1) * fan_in]) {
                        *p += w * d;
                    }
                }
                for (p, z) in prev.iter_mut().zip(&tape.pre[l - 1]) {
                    *p *= silu_grad(*z);
                }
                delta = prev;
            }
        }
    }
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::new(&[3, 5, 4, 2], &mut rng);
        // make the output layer non-trivial
        net.params_mut().iter_mut().for_each(|p| *p *= 3.0);
        let x = [0.3, -1.2, 0.7];
        let target = [0.5, -0.25];
        let loss = |net: &Mlp| {
            let y = net.forward(&x);
            y.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        };
        let mut tape = Tape::default();
        let y = net.forward_tape(&x, &mut tape);
        let grad_out: Vec<f64> = y.iter().zip(target).map(|(a, b)| 2.0 * (a - b)).collect();
        let mut grads = vec![0.0; net.num_params()];
        net.backward(&tape, &grad_out, &mut grads);
        for i in 0..net.num_params() {
            let h = 1e-6;
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!((numeric - grads[i]).abs() < 1e-6, "param {i}: {numeric} vs {}", grads[i]);
        }
    }

    #[test]
    fn adam_fits_a_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Mlp::new(&[1, 8, 1], &mut rng);
        let mut opt = Adam::new(net.num_params(), 0.01);
        let mut tape = Tape::default();
        for _ in 0..2000 {
            let mut grads = vec![0.0; net.num_params()];
            for k in 0..8 {
                let x = k as f64 / 4.0 - 1.0;
                let y = net.forward_tape(&[x], &mut tape);
                net.backward(&tape, &[2.0 * (y[0] - (2.0 * x + 0.5))], &mut grads);
            }
            opt.update(net.params_mut(), &grads);
        }
        assert!((net.forward(&[0.25])[0] - 1.0).abs() < 0.05);
    }
}
