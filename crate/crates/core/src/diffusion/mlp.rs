//! Small fully connected network with SiLU hidden activations and a linear
//! output layer, plus hand-written backprop and an Adam optimizer.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `inputs x outputs`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations kept from the forward pass.
pub struct ForwardCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<f64>>,
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

impl Mlp {
    /// `sizes = [input, hidden..., output]`; weights ~ N(0, 1/fan_in).
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let std = (1.0 / w[0] as f64).sqrt();
                Dense {
                    weight: Array2::from_shape_simple_fn((w[0], w[1]), || {
                        std * rng.sample::<f64, _>(StandardNormal)
                    }),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.ncols())
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = h.dot(&l.weight) + &l.bias;
            if i < last {
                h.mapv_inplace(silu);
            }
        }
        h
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> (Array2<f64>, ForwardCache) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let z = h.dot(&l.weight) + &l.bias;
            inputs.push(h);
            if i < last {
                h = z.mapv(silu);
                pre.push(z);
            } else {
                h = z;
            }
        }
        (h, ForwardCache { inputs, pre })
    }

    /// Gradients of a scalar loss given `d loss / d output`.
    pub fn backward(&self, cache: &ForwardCache, dout: &Array2<f64>) -> Vec<Dense> {
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut delta = dout.clone();
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            grads.push(Dense {
                weight: cache.inputs[i].t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            });
            if i > 0 {
                let mut d = delta.dot(&l.weight.t());
                ndarray::Zip::from(&mut d)
                    .and(&cache.pre[i - 1])
                    .for_each(|g, &z| *g *= silu_grad(z));
                delta = d;
            }
        }
        grads.reverse();
        grads
    }

    pub fn params_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_params_flat(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params());
        let mut it = p.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
    }
}

pub fn flatten(layers: &[Dense]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
        .collect()
}

#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Dense>,
    v: Vec<Dense>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        let zeros: Vec<Dense> = net.layers.iter().map(Dense::zeros_like).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &[Dense]) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (lr, eps) = (self.lr, self.eps);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((l, g), m), v) in net
            .layers
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            ndarray::Zip::from(&mut l.weight)
                .and(&g.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut l.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn half_sq_loss(net: &Mlp, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        0.5 * (net.forward(x) - y).mapv(|d| d * d).sum()
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = Mlp::new(&[5, 7, 6, 3], &mut rng);
        let x = Array2::from_shape_simple_fn((4, 5), || rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_simple_fn((4, 3), || rng.random_range(-1.0..1.0));
        let (out, cache) = net.forward_cached(&x);
        let grads = flatten(&net.backward(&cache, &(out - &y)));
        let p0 = net.params_flat();
        let h = 1e-6;
        for i in 0..p0.len() {
            let mut p = p0.clone();
            p[i] += h;
            net.set_params_flat(&p);
            let up = half_sq_loss(&net, &x, &y);
            p[i] -= 2.0 * h;
            net.set_params_flat(&p);
            let down = half_sq_loss(&net, &x, &y);
            let fd = (up - down) / (2.0 * h);
            let denom = fd.abs().max(grads[i].abs()).max(1e-8);
            assert!(
                (fd - grads[i]).abs() / denom < 1e-5,
                "param {i}: fd {fd} bp {}",
                grads[i]
            );
        }
    }

    #[test]
    fn adam_fits_linear_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = Mlp::new(&[2, 16, 1], &mut rng);
        let x = Array2::from_shape_simple_fn((64, 2), || rng.random_range(-1.0..1.0));
        let y = x
            .map_axis(Axis(1), |r| 0.5 * r[0] - 0.3 * r[1])
            .insert_axis(Axis(1));
        let mut opt = Adam::new(&net, 1e-2);
        let start = half_sq_loss(&net, &x, &y);
        for _ in 0..500 {
            let (out, cache) = net.forward_cached(&x);
            let g = net.backward(&cache, &((out - &y) / 64.0));
            opt.step(&mut net, &g);
        }
        let end = half_sq_loss(&net, &x, &y);
        assert!(end < 0.01 * start, "{start} -> {end}");
    }

    #[test]
    fn flat_params_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::new(&[3, 4, 2], &mut rng);
        assert_eq!(net.num_params(), 3 * 4 + 4 + 4 * 2 + 2);
        let p: Vec<f64> = (0..net.num_params()).map(|i| i as f64).collect();
        net.set_params_flat(&p);
        assert_eq!(net.params_flat(), p);
    }
}
