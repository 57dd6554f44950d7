//! Cross-domain consistency: a frozen anchor encoder `f`, the linear
//! projection `ĥ = W h` of learner features into anchor space, the anchor and
//! residual losses, and training-time degradations.
//!
//! `h = φ(x)` always comes from the trainable learner and `a = f(x)` from the
//! frozen anchor, so gradients only reach the learner side.

use alloc::format;
use alloc::vec::Vec;

use crate::chainsim::ops;
use crate::error::{Error, Result};
use crate::mbr::Autoencoder;
use crate::nn::{tanh_vec, to_f64, Dense};
use crate::numerics::{mix_seed, seed_from_str, Matrix, SeededRng};
use crate::worldgen::{Payload, Sample};
use crate::Image;

/// Named seed of the `fixed-seed` anchor.
pub const ANCHOR_SEED: u64 = 0x0A7C_4012;

/// Frozen encoder `a = W₂ tanh(W₁ x + b₁) + b₂`.
///
/// Fields are private and no method mutates them.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorEncoder {
    hidden: Dense,
    out: Dense,
}

impl AnchorEncoder {
    pub fn from_layers(hidden: Dense, out: Dense) -> Result<Self> {
        if out.in_dim != hidden.out_dim {
            return Err(Error::DimensionMismatch {
                context: "anchor layers",
                expected: hidden.out_dim,
                actual: out.in_dim,
            });
        }
        if !hidden.is_finite() || !out.is_finite() {
            return Err(Error::NonFinite("anchor parameters".into()));
        }
        Ok(Self { hidden, out })
    }

    /// Random anchor from [`ANCHOR_SEED`].
    pub fn fixed_seed(input_dim: usize, hidden: usize, dim: usize) -> Self {
        let mut rng = SeededRng::new(ANCHOR_SEED, 0);
        let h = Dense::init(hidden, input_dim, 1.0, &mut rng);
        let out = Dense::init(dim, hidden, 1.0 / libm::sqrt(dim as f64), &mut rng);
        Self { hidden: h, out }
    }

    /// Copies the encoder half of `ae` and folds a standardization into the
    /// code layer: over `reals` every anchor coordinate has zero mean and
    /// variance `1 / d_a`, so `E‖a‖² ≈ 1`.
    pub fn from_autoencoder(ae: &Autoencoder, reals: &[Sample]) -> Result<Self> {
        if reals.len() < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: reals.len(),
            });
        }
        let mut anchor = Self::from_layers(ae.enc_hidden.clone(), ae.enc_code.clone())?;
        let d = anchor.dim();
        let mut sum = alloc::vec![0.0f64; d];
        let mut sq = alloc::vec![0.0f64; d];
        for s in reals {
            let a = anchor.forward_f64(&to_f64(s.payload.values()))?;
            for j in 0..d {
                sum[j] += a[j];
                sq[j] += a[j] * a[j];
            }
        }
        let n = reals.len() as f64;
        let target = libm::sqrt(1.0 / d as f64);
        for j in 0..d {
            let mean = sum[j] / n;
            let var = (sq[j] / n - mean * mean).max(0.0);
            let scale = target / libm::sqrt(var).max(1e-6);
            let row = &mut anchor.out.w[j * anchor.out.in_dim..(j + 1) * anchor.out.in_dim];
            row.iter_mut().for_each(|w| *w = (*w as f64 * scale) as f32);
            anchor.out.b[j] = ((anchor.out.b[j] as f64 - mean) * scale) as f32;
        }
        Ok(anchor)
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.in_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden.out_dim
    }

    /// Anchor feature dimension `D_a`.
    pub fn dim(&self) -> usize {
        self.out.out_dim
    }

    pub fn hidden_layer(&self) -> &Dense {
        &self.hidden
    }

    pub fn output_layer(&self) -> &Dense {
        &self.out
    }

    pub(crate) fn forward_f64(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "anchor input",
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let mut h = self.hidden.forward_vec(x);
        tanh_vec(&mut h);
        Ok(self.out.forward_vec(&h))
    }

    /// Little-endian bytes of every parameter, for hashing.
    pub fn param_bytes(&self) -> Vec<u8> {
        [&self.hidden.w, &self.hidden.b, &self.out.w, &self.out.b]
            .into_iter()
            .flat_map(|b| b.iter().flat_map(|v| v.to_le_bytes()))
            .collect()
    }
}

/// `a = f(x)`.
pub fn anchor_forward(anchor: &AnchorEncoder, x: &[f32]) -> Result<Vec<f32>> {
    Ok(anchor.forward_f64(&to_f64(x))?.into_iter().map(|v| v as f32).collect())
}

/// `ĥ = W h` with `W` stored as `D_a × D_h`.
pub fn project_anchor(w: &Matrix, h: &[f32]) -> Result<Vec<f32>> {
    w.matvec(h)
}

fn check_len(context: &'static str, a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context,
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

/// `‖a − ĥ‖²`.
pub fn loss_anc(a: &[f32], h_hat: &[f32]) -> Result<f64> {
    check_len("loss_anc", a, h_hat)?;
    Ok(a.iter().zip(h_hat).map(|(&x, &y)| sq(x as f64 - y as f64)).sum())
}

/// `‖(a − ĥ) − (a' − ĥ')‖²`.
pub fn loss_res(a: &[f32], h_hat: &[f32], a2: &[f32], h_hat2: &[f32]) -> Result<f64> {
    check_len("loss_res", a, h_hat)?;
    check_len("loss_res", a, a2)?;
    check_len("loss_res", a, h_hat2)?;
    Ok((0..a.len())
        .map(|i| sq((a[i] as f64 - h_hat[i] as f64) - (a2[i] as f64 - h_hat2[i] as f64)))
        .sum())
}

fn sq(x: f64) -> f64 {
    x * x
}

/// Batch mean of [`loss_anc`].
pub fn loss_anc_mean(a: &[Vec<f32>], h_hat: &[Vec<f32>]) -> Result<f64> {
    if a.is_empty() || a.len() != h_hat.len() {
        return Err(Error::InvalidArgument(format!(
            "loss_anc batch sizes {} and {}",
            a.len(),
            h_hat.len()
        )));
    }
    let mut total = 0.0;
    for (x, y) in a.iter().zip(h_hat) {
        total += loss_anc(x, y)?;
    }
    Ok(total / a.len() as f64)
}

/// Batch mean of [`loss_res`] over clean/degraded pairs.
pub fn loss_res_mean(a: &[Vec<f32>], h_hat: &[Vec<f32>], a2: &[Vec<f32>], h_hat2: &[Vec<f32>]) -> Result<f64> {
    let n = a.len();
    if n == 0 || h_hat.len() != n || a2.len() != n || h_hat2.len() != n {
        return Err(Error::InvalidArgument("loss_res batches must be nonempty and equal-sized".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        total += loss_res(&a[i], &h_hat[i], &a2[i], &h_hat2[i])?;
    }
    Ok(total / n as f64)
}

/// Training-time degradation ranges. Each draw applies `k` ops, `k` uniform
/// in `k_train`, each op kind uniform over jpeg, resize, blur, noise and
/// color, parameters uniform in their ranges.
///
/// Vector payloads use additive Gaussian noise (`vector_noise` std) and
/// coordinate dropout (`vector_dropout` rate) instead.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradePolicy {
    pub jpeg_quality: (u32, u32),
    /// Down-scale factor; the result is resampled back to the input size.
    pub resize_scale: (f64, f64),
    pub blur_sigma: (f64, f64),
    /// 8-bit units.
    pub noise_sigma: (f64, f64),
    pub color_gain: (f64, f64),
    pub k_train: (usize, usize),
    pub vector_noise: f64,
    pub vector_dropout: f64,
    pub seed: u64,
}

impl Default for DegradePolicy {
    fn default() -> Self {
        Self {
            jpeg_quality: (30, 90),
            resize_scale: (0.5, 1.0),
            blur_sigma: (0.5, 1.5),
            noise_sigma: (1.0, 5.0),
            color_gain: (0.8, 1.2),
            k_train: (1, 3),
            vector_noise: 0.05,
            vector_dropout: 0.1,
            seed: 0,
        }
    }
}

impl DegradePolicy {
    /// Every range collapsed onto its identity value.
    pub fn identity() -> Self {
        Self {
            jpeg_quality: (100, 100),
            resize_scale: (1.0, 1.0),
            blur_sigma: (0.0, 0.0),
            noise_sigma: (0.0, 0.0),
            color_gain: (1.0, 1.0),
            k_train: (1, 3),
            vector_noise: 0.0,
            vector_dropout: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("degrade policy: {what}")));
        let ordered = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1;
        if !(self.jpeg_quality.0 <= self.jpeg_quality.1 && self.jpeg_quality.0 >= 1 && self.jpeg_quality.1 <= 100) {
            return bad("jpeg quality range must satisfy 1 <= lo <= hi <= 100");
        }
        if !ordered(self.resize_scale) || self.resize_scale.0 <= 0.0 || self.resize_scale.1 > 1.0 {
            return bad("resize scale range must lie in (0, 1]");
        }
        if !ordered(self.blur_sigma) || self.blur_sigma.0 < 0.0 {
            return bad("blur sigma range must be nonnegative and ordered");
        }
        if !ordered(self.noise_sigma) || self.noise_sigma.0 < 0.0 {
            return bad("noise sigma range must be nonnegative and ordered");
        }
        if !ordered(self.color_gain) || self.color_gain.0 <= 0.0 {
            return bad("color gain range must be positive and ordered");
        }
        if self.k_train.0 < 1 || self.k_train.0 > self.k_train.1 {
            return bad("k_train must satisfy 1 <= lo <= hi");
        }
        if !(self.vector_noise >= 0.0 && self.vector_noise.is_finite()) {
            return bad("vector_noise must be finite and nonnegative");
        }
        if !(0.0..1.0).contains(&self.vector_dropout) {
            return bad("vector_dropout must be in [0, 1)");
        }
        Ok(())
    }
}

fn degrade_image(img: &Image, policy: &DegradePolicy, rng: &mut SeededRng) -> Image {
    let k = rng.range_inclusive(policy.k_train.0, policy.k_train.1);
    let mut cur = img.clone();
    for _ in 0..k {
        cur = match rng.below(5) {
            0 => {
                let q = rng.range_inclusive(policy.jpeg_quality.0 as usize, policy.jpeg_quality.1 as usize);
                ops::jpeg(&cur, q as u32)
            }
            1 => {
                let s = rng.uniform(policy.resize_scale.0, policy.resize_scale.1);
                let mut back = ops::resize(&cur, s).resized(cur.width(), cur.height());
                back.clamp01();
                back
            }
            2 => ops::blur(&cur, rng.uniform(policy.blur_sigma.0, policy.blur_sigma.1)),
            3 => {
                let sigma = rng.uniform(policy.noise_sigma.0, policy.noise_sigma.1) / 255.0;
                ops::noise(&cur, sigma, rng)
            }
            _ => ops::color(&cur, rng.uniform(policy.color_gain.0, policy.color_gain.1), 1.0),
        };
    }
    cur
}

fn degrade_vector(v: &[f32], policy: &DegradePolicy, rng: &mut SeededRng) -> Vec<f32> {
    let k = rng.range_inclusive(policy.k_train.0, policy.k_train.1);
    let mut cur = v.to_vec();
    for _ in 0..k {
        if rng.below(2) == 0 {
            for x in &mut cur {
                *x = (*x as f64 + policy.vector_noise * rng.normal()) as f32;
            }
        } else {
            for x in &mut cur {
                if rng.next_f64() < policy.vector_dropout {
                    *x = 0.0;
                }
            }
        }
    }
    cur
}

/// Degraded view `x' = Degrade(x)`.
///
/// Randomness is keyed on `(x.id, policy.seed, draw)`, so the same sample
/// gets the same view for the same `draw` and fresh views across draws.
/// Shape, role and family are preserved and images stay in `[0, 1]`.
pub fn degrade_train(x: &Sample, policy: &DegradePolicy, draw: u64) -> Sample {
    let mut rng = SeededRng::new(mix_seed(seed_from_str(&x.id), mix_seed(policy.seed, draw)), 0xCDC);
    let payload = match &x.payload {
        Payload::Image(img) => Payload::Image(degrade_image(img, policy, &mut rng)),
        Payload::Vector(v) => Payload::Vector(degrade_vector(v, policy, &mut rng)),
    };
    Sample {
        id: x.id.clone(),
        payload,
        role: x.role,
        family: x.family,
        seed: x.seed,
        chain: x.chain.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::psnr;
    use crate::worldgen::{gen_real, Mode};
    use proptest::prelude::*;

    fn oracle_forward(anchor: &AnchorEncoder, x: &[f32]) -> Vec<f64> {
        let (h, o) = (anchor.hidden_layer(), anchor.output_layer());
        let hid: Vec<f64> = (0..h.out_dim)
            .map(|j| {
                let s: f64 = (0..h.in_dim).map(|i| h.w[j * h.in_dim + i] as f64 * x[i] as f64).sum();
                libm::tanh(s + h.b[j] as f64)
            })
            .collect();
        (0..o.out_dim)
            .map(|j| (0..o.in_dim).map(|i| o.w[j * o.in_dim + i] as f64 * hid[i]).sum::<f64>() + o.b[j] as f64)
            .collect()
    }

    #[test]
    fn fixed_anchor_matches_hand_forward() {
        let anchor = AnchorEncoder::fixed_seed(6, 5, 3);
        let x = [0.1f32, -0.4, 0.7, 0.0, 0.3, -0.9];
        let a = anchor_forward(&anchor, &x).unwrap();
        for (u, v) in a.iter().zip(oracle_forward(&anchor, &x)) {
            assert!((*u as f64 - v).abs() < 1e-6);
        }
        assert_eq!(anchor, AnchorEncoder::fixed_seed(6, 5, 3));
    }

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let anchor = AnchorEncoder::fixed_seed(4, 3, 2);
        assert!(anchor_forward(&anchor, &[0.0; 4]).unwrap().iter().all(|&v| v == 0.0));
        assert!(matches!(
            anchor_forward(&anchor, &[0.0; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn projection_cases() {
        let h = [1.5f32, -2.0, 0.25];
        assert_eq!(project_anchor(&Matrix::identity(3), &h).unwrap(), h.to_vec());
        assert_eq!(project_anchor(&Matrix::zeros(2, 3), &h).unwrap(), alloc::vec![0.0, 0.0]);
        let w = Matrix::from_rows(&[alloc::vec![1.0, 2.0, 3.0], alloc::vec![-1.0, 0.5, 4.0]]).unwrap();
        let y = project_anchor(&w, &h).unwrap();
        assert!((y[0] - (1.5 - 4.0 + 0.75)).abs() < 1e-6);
        assert!((y[1] - (-1.5 - 1.0 + 1.0)).abs() < 1e-6);
        assert!(project_anchor(&w, &[1.0]).is_err());
    }

    #[test]
    fn loss_trivial_cases() {
        assert_eq!(loss_anc(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(loss_anc(&[1.0, 0.0, 0.0], &[0.0; 3]).unwrap(), 1.0);
        assert_eq!(loss_res(&[2.0, 0.0], &[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]).unwrap(), 4.0);
        assert_eq!(loss_res(&[3.0, 1.0], &[1.0, 0.0], &[5.0, 2.0], &[3.0, 1.0]).unwrap(), 0.0);
        assert!(loss_anc(&[1.0], &[1.0, 2.0]).is_err());
        assert!(loss_res(&[1.0], &[1.0], &[1.0], &[1.0, 2.0]).is_err());
        assert!(loss_anc_mean(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn losses_match_recomputation(v in proptest::collection::vec(-5.0f32..5.0, 16)) {
            let (a, h, a2, h2) = (&v[0..4], &v[4..8], &v[8..12], &v[12..16]);
            let anc: f64 = (0..4).map(|i| (a[i] as f64 - h[i] as f64).powi(2)).sum();
            prop_assert!((loss_anc(a, h).unwrap() - anc).abs() <= 1e-9 * (1.0 + anc));
            let res: f64 = (0..4)
                .map(|i| ((a[i] as f64 - h[i] as f64) - (a2[i] as f64 - h2[i] as f64)).powi(2))
                .sum();
            let got = loss_res(a, h, a2, h2).unwrap();
            prop_assert!((got - res).abs() <= 1e-9 * (1.0 + res));
            prop_assert!(got >= 0.0);
            prop_assert_eq!(got, loss_res(a2, h2, a, h).unwrap());
        }
    }

    #[test]
    fn batch_means() {
        let a = alloc::vec![alloc::vec![1.0f32, 0.0], alloc::vec![0.0, 2.0]];
        let z = alloc::vec![alloc::vec![0.0f32, 0.0]; 2];
        assert_eq!(loss_anc_mean(&a, &z).unwrap(), 2.5);
        assert_eq!(loss_res_mean(&a, &z, &z, &z).unwrap(), 2.5);
    }

    #[test]
    fn default_policy_psnr_band() {
        let reals = gen_real(21, 256, Mode::Image).unwrap();
        let policy = DegradePolicy::default();
        policy.validate().unwrap();
        let mut total = 0.0;
        for r in &reals {
            let d = degrade_train(r, &policy, 0);
            let (x, y) = (r.payload.as_image().unwrap(), d.payload.as_image().unwrap());
            assert!(x.same_shape(y));
            assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
            total += psnr(x, y).unwrap().min(100.0);
        }
        let mean = total / reals.len() as f64;
        assert!((15.0..=45.0).contains(&mean), "mean psnr {mean}");
    }

    #[test]
    fn identity_policy_is_near_identity() {
        let policy = DegradePolicy::identity();
        policy.validate().unwrap();
        for r in gen_real(22, 16, Mode::Image).unwrap() {
            let d = degrade_train(&r, &policy, 3);
            let diff = r
                .payload
                .values()
                .iter()
                .zip(d.payload.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            assert!(diff <= 2.0 / 255.0, "max diff {diff}");
        }
    }

    #[test]
    fn degradation_is_keyed_on_id_seed_and_draw() {
        let r = &gen_real(23, 1, Mode::Image).unwrap()[0];
        let p = DegradePolicy::default();
        assert_eq!(degrade_train(r, &p, 1), degrade_train(r, &p, 1));
        assert_ne!(degrade_train(r, &p, 1).payload, degrade_train(r, &p, 2).payload);
        let v = &gen_real(23, 1, Mode::Vector).unwrap()[0];
        let dv = degrade_train(v, &p, 0);
        assert_eq!(dv.payload.dim(), v.payload.dim());
        assert_eq!(dv.role, v.role);
    }

    #[test]
    fn invalid_policies_rejected() {
        let mut p = DegradePolicy::default();
        p.k_train = (0, 2);
        assert!(p.validate().is_err());
        let mut p = DegradePolicy::default();
        p.resize_scale = (0.9, 0.5);
        assert!(p.validate().is_err());
    }

    #[test]
    fn standardized_anchor_has_unit_total_variance() {
        use crate::mbr::{train_autoencoder, AutoencoderConfig};
        let reals = gen_real(24, 64, Mode::Vector).unwrap();
        let cfg = AutoencoderConfig {
            epochs: 3,
            hidden: 16,
            latent_dim: 4,
            ..AutoencoderConfig::default()
        };
        let ae = train_autoencoder(&reals, &cfg, &mut SeededRng::new(1, 0)).unwrap();
        let anchor = AnchorEncoder::from_autoencoder(&ae, &reals).unwrap();
        let feats: Vec<Vec<f32>> = reals.iter().map(|r| anchor_forward(&anchor, r.payload.values()).unwrap()).collect();
        let n = feats.len() as f64;
        let mut total_var = 0.0;
        for j in 0..anchor.dim() {
            let m: f64 = feats.iter().map(|f| f[j] as f64).sum::<f64>() / n;
            assert!(m.abs() < 1e-4);
            total_var += feats.iter().map(|f| (f[j] as f64 - m).powi(2)).sum::<f64>() / n;
        }
        assert!((total_var - 1.0).abs() < 1e-3, "{total_var}");
    }
}
