//! Learner encoders `φ`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::{tanh_vec, Dense};
use crate::numerics::SeededRng;

/// Architecture choice for `φ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearnerSpec {
    /// `h = tanh(W₂ tanh(W₁ x + b₁) + b₂)`.
    Dense { hidden: usize, feature_dim: usize },
    /// Zero-mean `kernel × kernel` filters over valid positions, energy
    /// pooling `g_c = mean_p tanh(r_{c,p})²`, then `h = tanh(V g + c)`.
    Texture {
        filters: usize,
        kernel: usize,
        feature_dim: usize,
        /// Fixed gain applied to pixels before filtering.
        input_scale: f64,
    },
}

impl LearnerSpec {
    pub fn feature_dim(&self) -> usize {
        match *self {
            LearnerSpec::Dense { feature_dim, .. } | LearnerSpec::Texture { feature_dim, .. } => feature_dim,
        }
    }
}

/// Two-layer tanh MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLearner {
    pub l1: Dense,
    pub l2: Dense,
}

/// Energy-pooled filter bank followed by a tanh layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureLearner {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub kernel: usize,
    pub input_scale: f64,
    /// `filters × (channels · kernel²)`; used through its zero-mean part.
    pub conv: Dense,
    pub head: Dense,
}

/// Per-sample activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) enum Cache {
    Dense { a1: Vec<f64> },
    Texture { t: Vec<f64>, g: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Learner {
    Dense(DenseLearner),
    Texture(TextureLearner),
}

impl Learner {
    /// Random learner for `input_dim`-sized payloads. Texture learners need
    /// the image shape.
    pub fn new(spec: LearnerSpec, input_dim: usize, image_shape: Option<(usize, usize, usize)>, rng: &mut SeededRng) -> Result<Self> {
        match spec {
            LearnerSpec::Dense { hidden, feature_dim } => {
                if hidden == 0 || feature_dim == 0 || input_dim == 0 {
                    return Err(Error::InvalidArgument("dense learner dimensions must be positive".into()));
                }
                Ok(Learner::Dense(DenseLearner {
                    l1: Dense::init(hidden, input_dim, 1.0, rng),
                    l2: Dense::init(feature_dim, hidden, 1.0, rng),
                }))
            }
            LearnerSpec::Texture {
                filters,
                kernel,
                feature_dim,
                input_scale,
            } => {
                let (width, height, channels) = image_shape
                    .ok_or_else(|| Error::InvalidArgument("texture learner needs image payloads".into()))?;
                if width * height * channels != input_dim {
                    return Err(Error::DimensionMismatch {
                        context: "texture learner input",
                        expected: width * height * channels,
                        actual: input_dim,
                    });
                }
                if filters == 0 || feature_dim == 0 || kernel < 2 || kernel > width.min(height) {
                    return Err(Error::InvalidArgument(alloc::format!(
                        "texture learner needs filters > 0, feature_dim > 0 and 2 <= kernel <= {}",
                        width.min(height)
                    )));
                }
                if !(input_scale.is_finite() && input_scale > 0.0) {
                    return Err(Error::InvalidArgument("input_scale must be positive".into()));
                }
                let mut conv = Dense::init(filters, channels * kernel * kernel, 1.0, rng);
                let head = Dense::init(feature_dim, filters, 2.0, rng);
                conv.b.iter_mut().for_each(|b| *b = 0.0);
                Ok(Learner::Texture(TextureLearner {
                    width,
                    height,
                    channels,
                    kernel,
                    input_scale,
                    conv,
                    head,
                }))
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Learner::Dense(d) => d.l1.in_dim,
            Learner::Texture(t) => t.width * t.height * t.channels,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Learner::Dense(d) => d.l2.out_dim,
            Learner::Texture(t) => t.head.out_dim,
        }
    }

    pub fn spec(&self) -> LearnerSpec {
        match self {
            Learner::Dense(d) => LearnerSpec::Dense {
                hidden: d.l1.out_dim,
                feature_dim: d.l2.out_dim,
            },
            Learner::Texture(t) => LearnerSpec::Texture {
                filters: t.conv.out_dim,
                kernel: t.kernel,
                feature_dim: t.head.out_dim,
                input_scale: t.input_scale,
            },
        }
    }

    pub(crate) fn block_names(&self) -> [&'static str; 4] {
        match self {
            Learner::Dense(_) => ["phi.w1", "phi.b1", "phi.w2", "phi.b2"],
            Learner::Texture(_) => ["phi.conv_w", "phi.conv_b", "phi.head_w", "phi.head_b"],
        }
    }

    pub(crate) fn layers(&self) -> [&Dense; 2] {
        match self {
            Learner::Dense(d) => [&d.l1, &d.l2],
            Learner::Texture(t) => [&t.conv, &t.head],
        }
    }

    pub(crate) fn layers_mut(&mut self) -> [&mut Dense; 2] {
        match self {
            Learner::Dense(d) => [&mut d.l1, &mut d.l2],
            Learner::Texture(t) => [&mut t.conv, &mut t.head],
        }
    }

    pub(crate) fn forward(&self, x: &[f64]) -> (Vec<f64>, Cache) {
        match self {
            Learner::Dense(d) => {
                let mut a1 = d.l1.forward_vec(x);
                tanh_vec(&mut a1);
                let mut h = d.l2.forward_vec(&a1);
                tanh_vec(&mut h);
                (h, Cache::Dense { a1 })
            }
            Learner::Texture(t) => t.forward(x),
        }
    }

    /// Accumulates parameter gradients given `gh = ∂L/∂h` into the four
    /// learner blocks.
    pub(crate) fn backward(&self, x: &[f64], h: &[f64], cache: &Cache, gh: &[f64], grads: &mut [Vec<f64>]) {
        let gz: Vec<f64> = gh.iter().zip(h).map(|(g, hv)| g * (1.0 - hv * hv)).collect();
        let (g01, g23) = grads.split_at_mut(2);
        let (gw1, gb1) = g01.split_at_mut(1);
        let (gw2, gb2) = g23.split_at_mut(1);
        match (self, cache) {
            (Learner::Dense(d), Cache::Dense { a1 }) => {
                d.l2.accumulate_raw(a1, &gz, &mut gw2[0], &mut gb2[0]);
                let mut ga = vec![0.0; a1.len()];
                d.l2.backprop_input(&gz, &mut ga);
                for (g, a) in ga.iter_mut().zip(a1) {
                    *g *= 1.0 - a * a;
                }
                d.l1.accumulate_raw(x, &ga, &mut gw1[0], &mut gb1[0]);
            }
            (Learner::Texture(t), Cache::Texture { t: act, g }) => {
                t.head.accumulate_raw(g, &gz, &mut gw2[0], &mut gb2[0]);
                let mut gg = vec![0.0; g.len()];
                t.head.backprop_input(&gz, &mut gg);
                t.backward_conv(x, act, &gg, &mut gw1[0], &mut gb1[0]);
            }
            _ => unreachable!("cache built by the same learner"),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers().iter().all(|l| l.is_finite())
    }
}

impl TextureLearner {
    fn positions(&self) -> (usize, usize) {
        (self.width - self.kernel + 1, self.height - self.kernel + 1)
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    /// Filter weights with their mean removed.
    fn centered(&self) -> Vec<f64> {
        let n = self.patch_len();
        let mut w: Vec<f64> = self.conv.w.iter().map(|&v| v as f64).collect();
        for row in w.chunks_mut(n) {
            let m = row.iter().sum::<f64>() / n as f64;
            row.iter_mut().for_each(|v| *v -= m);
        }
        w
    }

    fn patch(&self, x: &[f64], px: usize, py: usize, out: &mut [f64]) {
        let k = self.kernel;
        let plane = self.width * self.height;
        let mut i = 0;
        for c in 0..self.channels {
            for dy in 0..k {
                let row = c * plane + (py + dy) * self.width + px;
                for dx in 0..k {
                    out[i] = x[row + dx] * self.input_scale;
                    i += 1;
                }
            }
        }
    }

    fn forward(&self, x: &[f64]) -> (Vec<f64>, Cache) {
        let (nx, ny) = self.positions();
        let np = nx * ny;
        let n = self.patch_len();
        let f = self.conv.out_dim;
        let w = self.centered();
        let mut patch = vec![0.0; n];
        let mut t = vec![0.0; f * np];
        let mut g = vec![0.0; f];
        for py in 0..ny {
            for px in 0..nx {
                self.patch(x, px, py, &mut patch);
                let p = py * nx + px;
                for c in 0..f {
                    let row = &w[c * n..(c + 1) * n];
                    let mut r = self.conv.b[c] as f64;
                    for (a, b) in row.iter().zip(&patch) {
                        r += a * b;
                    }
                    let tv = libm::tanh(r);
                    t[c * np + p] = tv;
                    g[c] += tv * tv;
                }
            }
        }
        g.iter_mut().for_each(|v| *v /= np as f64);
        let mut h = self.head.forward_vec(&g);
        tanh_vec(&mut h);
        (h, Cache::Texture { t, g })
    }

    fn backward_conv(&self, x: &[f64], t: &[f64], gg: &[f64], gw: &mut [f64], gb: &mut [f64]) {
        let (nx, ny) = self.positions();
        let np = nx * ny;
        let n = self.patch_len();
        let f = self.conv.out_dim;
        let mut patch = vec![0.0; n];
        let mut gwc = vec![0.0; f * n];
        for py in 0..ny {
            for px in 0..nx {
                self.patch(x, px, py, &mut patch);
                let p = py * nx + px;
                for c in 0..f {
                    let tv = t[c * np + p];
                    let gr = gg[c] * 2.0 * tv * (1.0 - tv * tv) / np as f64;
                    if gr == 0.0 {
                        continue;
                    }
                    gb[c] += gr;
                    let row = &mut gwc[c * n..(c + 1) * n];
                    for (a, b) in row.iter_mut().zip(&patch) {
                        *a += gr * b;
                    }
                }
            }
        }
        // Chain rule through the mean removal.
        for (c, row) in gwc.chunks(n).enumerate() {
            let m = row.iter().sum::<f64>() / n as f64;
            for (j, v) in row.iter().enumerate() {
                gw[c * n + j] += v - m;
            }
        }
    }
}
