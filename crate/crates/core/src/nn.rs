//! Small dense-layer and optimizer toolkit shared by the autoencoder, the
//! learner encoders and the attribution head.
//!
//! Parameters are stored as `f32`; activations, gradients and optimizer
//! moments are `f64`.

use alloc::vec;
use alloc::vec::Vec;

use crate::numerics::SeededRng;

/// Affine map `y = W x + b` with `W` stored row-major as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub out_dim: usize,
    pub in_dim: usize,
    pub w: Vec<f32>,
    pub b: Vec<f32>,
}

impl Dense {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            out_dim,
            in_dim,
            w: vec![0.0; out_dim * in_dim],
            b: vec![0.0; out_dim],
        }
    }

    /// Gaussian weights with std `gain / sqrt(in_dim)`, zero bias.
    pub fn init(out_dim: usize, in_dim: usize, gain: f64, rng: &mut SeededRng) -> Self {
        let std = gain / libm::sqrt(in_dim.max(1) as f64);
        Self {
            out_dim,
            in_dim,
            w: (0..out_dim * in_dim).map(|_| (std * rng.normal()) as f32).collect(),
            b: vec![0.0; out_dim],
        }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn forward(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(y.len(), self.out_dim);
        for (j, yj) in y.iter_mut().enumerate() {
            let row = &self.w[j * self.in_dim..(j + 1) * self.in_dim];
            let mut acc = 0.0f64;
            for (&wi, &xi) in row.iter().zip(x) {
                acc += wi as f64 * xi;
            }
            *yj = acc + self.b[j] as f64;
        }
    }

    pub fn forward_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.out_dim];
        self.forward(x, &mut y);
        y
    }

    /// Adds `gy xᵀ` and `gy` into `g`.
    pub fn accumulate(&self, x: &[f64], gy: &[f64], g: &mut DenseGrad) {
        self.accumulate_raw(x, gy, &mut g.w, &mut g.b);
    }

    /// [`Dense::accumulate`] into plain weight and bias gradient slices.
    pub fn accumulate_raw(&self, x: &[f64], gy: &[f64], gw: &mut [f64], gb: &mut [f64]) {
        for (j, &gj) in gy.iter().enumerate() {
            if gj == 0.0 {
                continue;
            }
            let row = &mut gw[j * self.in_dim..(j + 1) * self.in_dim];
            for (r, &xi) in row.iter_mut().zip(x) {
                *r += gj * xi;
            }
            gb[j] += gj;
        }
    }

    /// `gx = Wᵀ gy`.
    pub fn backprop_input(&self, gy: &[f64], gx: &mut [f64]) {
        gx.iter_mut().for_each(|v| *v = 0.0);
        for (j, &gj) in gy.iter().enumerate() {
            if gj == 0.0 {
                continue;
            }
            let row = &self.w[j * self.in_dim..(j + 1) * self.in_dim];
            for (g, &wi) in gx.iter_mut().zip(row) {
                *g += gj * wi as f64;
            }
        }
    }

    pub fn grad(&self) -> DenseGrad {
        DenseGrad::zeros(self.out_dim, self.in_dim)
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(&self.b).all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl DenseGrad {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            w: vec![0.0; out_dim * in_dim],
            b: vec![0.0; out_dim],
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.w.iter_mut().chain(self.b.iter_mut()).for_each(|x| *x *= s);
    }

    pub fn add(&mut self, other: &DenseGrad) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a += b;
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(&self.b).all(|x| x.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.w.iter().chain(&self.b).map(|x| x * x).sum()
    }
}

#[inline]
pub fn tanh_vec(v: &mut [f64]) {
    for x in v {
        *x = libm::tanh(*x);
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Adam optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam state over an ordered list of parameter blocks.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    t: u32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, block_sizes: &[usize]) -> Self {
        Self {
            cfg,
            t: 0,
            m: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update; `params[i]` and `grads[i]` must match the block sizes
    /// given at construction.
    pub fn step(&mut self, params: &mut [&mut [f32]], grads: &[&[f64]]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - libm::pow(c.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, self.t as f64);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] = (p[i] as f64 - c.lr * mh / (libm::sqrt(vh) + c.eps)) as f32;
            }
        }
    }
}
