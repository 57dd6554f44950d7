//! Manifold boundary reconstruction: an autoencoder trained on real samples
//! and near-real negatives decoded from masked, noise-perturbed latents,
//! `x_f = D(E(x_r) + M ⊙ δ)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{tanh_vec, to_f64, Adam, AdamConfig, Dense, DenseGrad};
use crate::numerics::{mix_seed, SeededRng};
use crate::worldgen::{Payload, Role, Sample};

/// Record of a finished training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    /// Mean reconstruction MSE of each epoch, in order.
    pub epoch_losses: Vec<f64>,
    /// Per-dimension mean and std of `E(x)` over the training corpus.
    pub latent_mean: Vec<f32>,
    pub latent_std: Vec<f32>,
}

impl TrainingMeta {
    pub fn epochs(&self) -> usize {
        self.epoch_losses.len()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// `input → hidden (tanh) → d_z → hidden (tanh) → input`, linear code and
/// linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub enc_hidden: Dense,
    pub enc_code: Dense,
    pub dec_hidden: Dense,
    pub dec_out: Dense,
    pub meta: Option<TrainingMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            hidden: 128,
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
        }
    }
}

/// Minimum corpus size accepted by [`train_autoencoder`].
pub const MIN_TRAINING_SAMPLES: usize = 32;

impl Autoencoder {
    pub fn new(input_dim: usize, hidden: usize, latent_dim: usize, rng: &mut SeededRng) -> Self {
        Self {
            enc_hidden: Dense::init(hidden, input_dim, 1.0, rng),
            enc_code: Dense::init(latent_dim, hidden, 1.0, rng),
            dec_hidden: Dense::init(hidden, latent_dim, 1.0, rng),
            dec_out: Dense::init(input_dim, hidden, 0.5, rng),
            meta: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.enc_hidden.in_dim
    }

    pub fn hidden(&self) -> usize {
        self.enc_hidden.out_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.enc_code.out_dim
    }

    fn check_input(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "autoencoder input",
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn encode_f64(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut h = self.enc_hidden.forward_vec(x);
        tanh_vec(&mut h);
        let z = self.enc_code.forward_vec(&h);
        (h, z)
    }

    pub(crate) fn decode_f64(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut h = self.dec_hidden.forward_vec(z);
        tanh_vec(&mut h);
        let y = self.dec_out.forward_vec(&h);
        (h, y)
    }

    /// `z = E(x)`.
    pub fn encode(&self, x: &[f32]) -> Result<Vec<f32>> {
        self.check_input(x)?;
        Ok(self.encode_f64(&to_f64(x)).1.into_iter().map(|v| v as f32).collect())
    }

    /// `D(z)`, unclamped.
    pub fn decode(&self, z: &[f32]) -> Result<Vec<f32>> {
        if z.len() != self.latent_dim() {
            return Err(Error::DimensionMismatch {
                context: "autoencoder latent",
                expected: self.latent_dim(),
                actual: z.len(),
            });
        }
        Ok(self.decode_f64(&to_f64(z)).1.into_iter().map(|v| v as f32).collect())
    }

    pub fn reconstruct(&self, x: &[f32]) -> Result<Vec<f32>> {
        self.decode(&self.encode(x)?)
    }

    pub fn is_trained(&self) -> bool {
        self.meta.is_some()
    }

    pub fn is_finite(&self) -> bool {
        self.enc_hidden.is_finite()
            && self.enc_code.is_finite()
            && self.dec_hidden.is_finite()
            && self.dec_out.is_finite()
    }

    fn blocks_mut(&mut self) -> [&mut [f32]; 8] {
        [
            &mut self.enc_hidden.w,
            &mut self.enc_hidden.b,
            &mut self.enc_code.w,
            &mut self.enc_code.b,
            &mut self.dec_hidden.w,
            &mut self.dec_hidden.b,
            &mut self.dec_out.w,
            &mut self.dec_out.b,
        ]
    }
}

struct AeGrads {
    enc_hidden: DenseGrad,
    enc_code: DenseGrad,
    dec_hidden: DenseGrad,
    dec_out: DenseGrad,
}

impl AeGrads {
    fn new(ae: &Autoencoder) -> Self {
        Self {
            enc_hidden: ae.enc_hidden.grad(),
            enc_code: ae.enc_code.grad(),
            dec_hidden: ae.dec_hidden.grad(),
            dec_out: ae.dec_out.grad(),
        }
    }
}

/// Squared error of one sample, accumulating gradients scaled by `scale`
/// (the gradient of `scale * Σ (x̂ - x)²`).
fn sample_backward(ae: &Autoencoder, x: &[f64], scale: f64, g: &mut AeGrads) -> f64 {
    let (eh, z) = ae.encode_f64(x);
    let (dh, y) = ae.decode_f64(&z);
    let mut gy = vec![0.0; y.len()];
    let mut sq = 0.0;
    for i in 0..y.len() {
        let d = y[i] - x[i];
        sq += d * d;
        gy[i] = 2.0 * d * scale;
    }
    ae.dec_out.accumulate(&dh, &gy, &mut g.dec_out);
    let mut gdh = vec![0.0; dh.len()];
    ae.dec_out.backprop_input(&gy, &mut gdh);
    for (g, h) in gdh.iter_mut().zip(&dh) {
        *g *= 1.0 - h * h;
    }
    ae.dec_hidden.accumulate(&z, &gdh, &mut g.dec_hidden);
    let mut gz = vec![0.0; z.len()];
    ae.dec_hidden.backprop_input(&gdh, &mut gz);
    ae.enc_code.accumulate(&eh, &gz, &mut g.enc_code);
    let mut geh = vec![0.0; eh.len()];
    ae.enc_code.backprop_input(&gz, &mut geh);
    for (g, h) in geh.iter_mut().zip(&eh) {
        *g *= 1.0 - h * h;
    }
    ae.enc_hidden.accumulate(x, &geh, &mut g.enc_hidden);
    sq
}

/// Mini-batch Adam on the mean squared reconstruction error.
///
/// The output bias starts at the corpus mean. Per-epoch losses are the mean
/// of the mini-batch losses seen during that epoch.
pub fn train_autoencoder(
    reals: &[Sample],
    cfg: &AutoencoderConfig,
    rng: &mut SeededRng,
) -> Result<Autoencoder> {
    if reals.len() < MIN_TRAINING_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_TRAINING_SAMPLES,
            got: reals.len(),
        });
    }
    let dim = reals[0].payload.dim();
    if cfg.latent_dim == 0 || cfg.latent_dim >= dim {
        return Err(Error::InvalidArgument(format!(
            "latent_dim must be in 1..{dim}, got {}",
            cfg.latent_dim
        )));
    }
    let data: Vec<Vec<f64>> = reals
        .iter()
        .map(|s| {
            if s.payload.dim() != dim {
                return Err(Error::DimensionMismatch {
                    context: "autoencoder corpus",
                    expected: dim,
                    actual: s.payload.dim(),
                });
            }
            Ok(to_f64(s.payload.values()))
        })
        .collect::<Result<_>>()?;

    let mut ae = Autoencoder::new(dim, cfg.hidden, cfg.latent_dim, rng);
    let n = data.len() as f64;
    for (i, b) in ae.dec_out.b.iter_mut().enumerate() {
        *b = (data.iter().map(|x| x[i]).sum::<f64>() / n) as f32;
    }
    let sizes: Vec<usize> = ae.blocks_mut().iter().map(|b| b.len()).collect();
    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        &sizes,
    );
    let batch = cfg.batch_size.max(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch) {
            let mut g = AeGrads::new(&ae);
            let scale = 1.0 / (chunk.len() * dim) as f64;
            let mut sq = 0.0;
            for &i in chunk {
                sq += sample_backward(&ae, &data[i], scale, &mut g);
            }
            let loss = sq * scale;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            loss_sum += loss;
            batches += 1;
            let grads: [&[f64]; 8] = [
                &g.enc_hidden.w,
                &g.enc_hidden.b,
                &g.enc_code.w,
                &g.enc_code.b,
                &g.dec_hidden.w,
                &g.dec_hidden.b,
                &g.dec_out.w,
                &g.dec_out.b,
            ];
            opt.step(&mut ae.blocks_mut(), &grads);
        }
        let epoch_loss = loss_sum / batches as f64;
        if !epoch_loss.is_finite() || !ae.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        epoch_losses.push(epoch_loss);
    }

    let d_z = cfg.latent_dim;
    let codes: Vec<Vec<f64>> = data.iter().map(|x| ae.encode_f64(x).1).collect();
    let mut mean = vec![0.0f64; d_z];
    for c in &codes {
        for (m, v) in mean.iter_mut().zip(c) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0f64; d_z];
    for c in &codes {
        for k in 0..d_z {
            var[k] += (c[k] - mean[k]) * (c[k] - mean[k]) / n;
        }
    }
    ae.meta = Some(TrainingMeta {
        epoch_losses,
        latent_mean: mean.iter().map(|&m| m as f32).collect(),
        latent_std: var.iter().map(|&v| libm::sqrt(v) as f32).collect(),
    });
    Ok(ae)
}

/// Mask ratio and noise magnitude of the latent perturbation.
///
/// `epsilon` is the Gaussian std in units of the per-dimension latent std
/// when used through [`generate_near_real`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbSpec {
    pub mask_ratio: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for PerturbSpec {
    fn default() -> Self {
        Self {
            mask_ratio: 0.25,
            epsilon: 0.1,
            seed: 0,
        }
    }
}

impl PerturbSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_ratio > 0.0 && self.mask_ratio <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mask_ratio must be in (0, 1], got {}",
                self.mask_ratio
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be finite and nonnegative, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Number of masked dimensions: `round(ρ·d_z)`, at least one.
    pub fn masked_count(&self, d_z: usize) -> usize {
        (libm::round(self.mask_ratio * d_z as f64) as usize).clamp(1, d_z)
    }
}

/// Random 0/1 mask with exactly [`PerturbSpec::masked_count`] ones at
/// uniformly chosen positions, and i.i.d. `N(0, ε²)` noise.
pub fn sample_mask_and_noise(d_z: usize, spec: &PerturbSpec, rng: &mut SeededRng) -> (Vec<f32>, Vec<f32>) {
    let k = spec.masked_count(d_z.max(1)).min(d_z);
    let mut idx: Vec<usize> = (0..d_z).collect();
    // Partial Fisher-Yates: the first k entries are a uniform k-subset.
    for i in 0..k {
        let j = i + rng.below((d_z - i) as u64) as usize;
        idx.swap(i, j);
    }
    let mut mask = vec![0.0f32; d_z];
    for &i in &idx[..k] {
        mask[i] = 1.0;
    }
    let delta = (0..d_z).map(|_| (spec.epsilon * rng.normal()) as f32).collect();
    (mask, delta)
}

/// `z' = z + M ⊙ δ`.
pub fn perturb_latent(z: &[f32], mask: &[f32], delta: &[f32]) -> Result<Vec<f32>> {
    if mask.len() != z.len() || delta.len() != z.len() {
        return Err(Error::DimensionMismatch {
            context: "perturb_latent",
            expected: z.len(),
            actual: if mask.len() != z.len() { mask.len() } else { delta.len() },
        });
    }
    Ok(z.iter()
        .zip(mask)
        .zip(delta)
        .map(|((&zi, &mi), &di)| zi + mi * di)
        .collect())
}

/// One near-real sample per real: `D(E(x_r) + M ⊙ δ)` with fresh `(M, δ)`,
/// `δ` scaled per dimension by the training latent std. Image payloads are
/// clamped to `[0, 1]`.
pub fn generate_near_real(
    ae: &Autoencoder,
    reals: &[Sample],
    spec: &PerturbSpec,
    rng: &mut SeededRng,
) -> Result<Vec<Sample>> {
    spec.validate()?;
    let meta = ae.meta.as_ref().ok_or(Error::Untrained("autoencoder has no training record"))?;
    let base = rng.next_u64();
    let d_z = ae.latent_dim();
    reals
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut local = SeededRng::new(mix_seed(base, i as u64), spec.seed);
            let z = ae.encode(r.payload.values())?;
            let (mask, mut delta) = sample_mask_and_noise(d_z, spec, &mut local);
            for (d, s) in delta.iter_mut().zip(&meta.latent_std) {
                *d *= *s;
            }
            let zp = perturb_latent(&z, &mask, &delta)?;
            let x = ae.decode(&zp)?;
            let payload = match &r.payload {
                Payload::Image(img) => {
                    let data = x.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
                    Payload::Image(Image::new(img.width(), img.height(), img.channels(), data)?)
                }
                Payload::Vector(_) => Payload::Vector(x),
            };
            Ok(Sample {
                id: format!("near-{}", r.id),
                payload,
                role: Role::NearReal,
                family: None,
                seed: local.seed(),
                chain: None,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::String;

    fn vec_samples(rows: Vec<Vec<f32>>) -> Vec<Sample> {
        rows.into_iter()
            .enumerate()
            .map(|(i, v)| Sample {
                id: format!("s{i}"),
                payload: Payload::Vector(v),
                role: Role::Real,
                family: None,
                seed: i as u64,
                chain: None,
            })
            .collect()
    }

    fn subspace_corpus(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = SeededRng::new(seed, 0);
        let a: Vec<f64> = (0..8).map(|_| rng.normal() * 0.3).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.normal() * 0.3).collect();
        vec_samples(
            (0..n)
                .map(|_| {
                    let s = rng.uniform(-1.0, 1.0);
                    let t = rng.uniform(-1.0, 1.0);
                    (0..8).map(|i| (s * a[i] + t * b[i]) as f32).collect()
                })
                .collect(),
        )
    }

    fn small_cfg(epochs: usize) -> AutoencoderConfig {
        AutoencoderConfig {
            latent_dim: 2,
            hidden: 32,
            epochs,
            batch_size: 16,
            lr: 3e-3,
        }
    }

    #[test]
    fn linear_subspace_is_reconstructed() {
        let data = subspace_corpus(256, 1);
        let ae = train_autoencoder(&data, &small_cfg(200), &mut SeededRng::new(2, 0)).unwrap();
        let meta = ae.meta.as_ref().unwrap();
        assert!(meta.final_loss().unwrap() <= 1e-3, "{:?}", meta.final_loss());
        assert!(meta.epoch_losses.last().unwrap() <= meta.epoch_losses.first().unwrap());
        let mse: f64 = data
            .iter()
            .map(|s| {
                let r = ae.reconstruct(s.payload.values()).unwrap();
                r.iter()
                    .zip(s.payload.values())
                    .map(|(a, b)| ((a - b) as f64).powi(2))
                    .sum::<f64>()
                    / 8.0
            })
            .sum::<f64>()
            / data.len() as f64;
        assert!(mse <= 1e-3, "{mse}");
    }

    #[test]
    fn training_is_deterministic() {
        let data = subspace_corpus(64, 3);
        let a = train_autoencoder(&data, &small_cfg(5), &mut SeededRng::new(4, 0)).unwrap();
        let b = train_autoencoder(&data, &small_cfg(5), &mut SeededRng::new(4, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_samples_or_bad_latent_rejected() {
        let data = subspace_corpus(16, 3);
        assert!(train_autoencoder(&data, &small_cfg(1), &mut SeededRng::new(0, 0)).is_err());
        let data = subspace_corpus(64, 3);
        let cfg = AutoencoderConfig {
            latent_dim: 8,
            ..small_cfg(1)
        };
        assert!(train_autoencoder(&data, &cfg, &mut SeededRng::new(0, 0)).is_err());
    }

    #[test]
    fn divergence_names_the_epoch() {
        let data = subspace_corpus(64, 5);
        let cfg = AutoencoderConfig {
            lr: 1e300,
            ..small_cfg(5)
        };
        match train_autoencoder(&data, &cfg, &mut SeededRng::new(0, 0)) {
            Err(Error::Divergence { epoch }) => assert!(epoch < 5),
            other => panic!("expected divergence, got {:?}", other.map(|_| String::new())),
        }
    }

    #[test]
    fn mask_has_floor_of_one_and_full_ratio() {
        let mut rng = SeededRng::new(1, 1);
        let spec = PerturbSpec {
            mask_ratio: 0.01,
            epsilon: 1.0,
            seed: 0,
        };
        let (m, _) = sample_mask_and_noise(16, &spec, &mut rng);
        assert_eq!(m.iter().filter(|&&x| x == 1.0).count(), 1);
        let spec = PerturbSpec {
            mask_ratio: 1.0,
            ..spec
        };
        let (m, _) = sample_mask_and_noise(16, &spec, &mut rng);
        assert!(m.iter().all(|&x| x == 1.0));
        let spec = PerturbSpec {
            mask_ratio: 0.25,
            ..spec
        };
        let (m, _) = sample_mask_and_noise(16, &spec, &mut rng);
        assert_eq!(m.iter().filter(|&&x| x == 1.0).count(), 4);
    }

    #[test]
    fn noise_std_matches_epsilon() {
        let mut rng = SeededRng::new(8, 0);
        let spec = PerturbSpec {
            mask_ratio: 1.0,
            epsilon: 0.3,
            seed: 0,
        };
        let mut all = Vec::new();
        while all.len() < 100_000 {
            let (_, d) = sample_mask_and_noise(50, &spec, &mut rng);
            all.extend(d.into_iter().map(|x| x as f64));
        }
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let std = (all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((0.98 * 0.3..=1.02 * 0.3).contains(&std), "{std}");
    }

    #[test]
    fn perturb_latent_is_elementwise() {
        assert_eq!(
            perturb_latent(&[1.0, 2.0, 3.0], &[0.0, 1.0, 0.0], &[9.0, 0.5, 9.0]).unwrap(),
            vec![1.0, 2.5, 3.0]
        );
        assert_eq!(perturb_latent(&[1.0, 2.0], &[0.0, 0.0], &[5.0, 6.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(perturb_latent(&[1.0, 2.0], &[1.0, 1.0], &[5.0, 6.0]).unwrap(), vec![6.0, 8.0]);
        assert!(perturb_latent(&[1.0], &[1.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_epsilon_gives_plain_reconstruction() {
        let data = subspace_corpus(64, 7);
        let ae = train_autoencoder(&data, &small_cfg(3), &mut SeededRng::new(1, 0)).unwrap();
        let spec = PerturbSpec {
            epsilon: 0.0,
            ..Default::default()
        };
        let near = generate_near_real(&ae, &data, &spec, &mut SeededRng::new(3, 0)).unwrap();
        assert_eq!(near.len(), data.len());
        for (n, r) in near.iter().zip(&data) {
            assert_eq!(n.role, Role::NearReal);
            assert_eq!(n.payload.values(), &ae.reconstruct(r.payload.values()).unwrap()[..]);
        }
    }

    #[test]
    fn untrained_autoencoder_rejected() {
        let data = subspace_corpus(4, 7);
        let ae = Autoencoder::new(8, 4, 2, &mut SeededRng::new(0, 0));
        let err = generate_near_real(&ae, &data, &PerturbSpec::default(), &mut SeededRng::new(0, 0));
        assert!(matches!(err, Err(Error::Untrained(_))));
    }
}
