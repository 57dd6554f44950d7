//! End-to-end pipelines: training, the multi-seed generalization and
//! robustness experiments, the spectral discrepancy sweep and attribution.
//!
//! Every corpus and random stream is derived from the master seed through
//! fixed stream ids, so each function is a pure function of its config.

use std::fmt;
use std::str::FromStr;

use rem_core::cdc::AnchorEncoder;
use rem_core::chainsim::{apply_chain, build_chain_with, DegradationChain, Profile};
use rem_core::envelope::{train_envelope, train_envelope_with, EnvelopeConfig, EnvelopeModel, LossWeights};
use rem_core::evalkit::{
    accuracy_metrics, attribute_closed_features, attribute_open_features, freq_discrepancy, AttributionReport,
    Label,
};
use rem_core::mbr::{generate_near_real, train_autoencoder, Autoencoder};
use rem_core::numerics::mix_seed;
use rem_core::worldgen::{gen_fake_with, gen_real_with, Family, Mode, Payload, Role, Sample};
use rem_core::{Image, SeededRng};

use crate::config::{AnchorKind, ExperimentConfig};
use crate::error::{RemError, Result};
use crate::parallel::par_map;

const TRAIN_REALS: u64 = 1;
const TEST_REALS: u64 = 2;
const AE_STREAM: u64 = 3;
const NEAR_STREAM: u64 = 4;
const EE_STREAM: u64 = 5;
const BASELINE_STREAM: u64 = 6;
const EVAL_NEAR_STREAM: u64 = 7;
const CHAIN_STREAM: u64 = 8;
const ATTR_STREAM: u64 = 9;
const HEAD_STREAM: u64 = 10;
const FAMILY_STREAM: u64 = 16;

/// Component removed by an ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Drop {
    /// Near-real negatives come from input-space Gaussian noise instead of
    /// the autoencoder; the anchor falls back to the fixed-seed encoder.
    Mbr,
    /// `λ₁ = 0`.
    Tan,
    /// `λ₂ = λ₃ = 0` and no degraded twins in the classification loss.
    Cdc,
    /// No degraded twins in the classification loss.
    Aug,
}

impl Drop {
    pub const ALL: [Drop; 4] = [Drop::Mbr, Drop::Tan, Drop::Cdc, Drop::Aug];
}

impl FromStr for Drop {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mbr" => Ok(Drop::Mbr),
            "tan" => Ok(Drop::Tan),
            "cdc" => Ok(Drop::Cdc),
            "aug" => Ok(Drop::Aug),
            _ => Err(format!("unknown component `{s}` (valid: mbr, tan, cdc, aug)")),
        }
    }
}

impl fmt::Display for Drop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Drop::Mbr => "mbr",
            Drop::Tan => "tan",
            Drop::Cdc => "cdc",
            Drop::Aug => "aug",
        })
    }
}

/// Config with `drop` applied.
pub fn ablated(cfg: &ExperimentConfig, drop: Option<Drop>) -> ExperimentConfig {
    let mut c = cfg.clone();
    match drop {
        Some(Drop::Tan) => c.ee.weights.tan = 0.0,
        Some(Drop::Cdc) => {
            c.ee.weights.anc = 0.0;
            c.ee.weights.res = 0.0;
            c.ee.aug = false;
        }
        Some(Drop::Aug) => c.ee.aug = false,
        Some(Drop::Mbr) => c.cdc.anchor = AnchorKind::FixedSeed,
        None => {}
    }
    c
}

pub fn with_seed(cfg: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.seed = seed;
    c
}

/// Seeds of a multi-seed experiment: `seed, seed + 1, …`.
pub fn seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.eval.seeds as u64).map(|i| cfg.seed.wrapping_add(i)).collect()
}

pub fn train_reals(cfg: &ExperimentConfig) -> Result<Vec<Sample>> {
    let w = &cfg.worldgen;
    Ok(gen_real_with(&w.world, mix_seed(cfg.seed, TRAIN_REALS), w.n_train, w.mode)?)
}

pub fn test_reals(cfg: &ExperimentConfig, n: usize) -> Result<Vec<Sample>> {
    let w = &cfg.worldgen;
    Ok(gen_real_with(&w.world, mix_seed(cfg.seed, TEST_REALS), n, w.mode)?)
}

pub fn test_fakes(cfg: &ExperimentConfig, family: Family, n: usize) -> Result<Vec<Sample>> {
    let w = &cfg.worldgen;
    let seed = mix_seed(cfg.seed, FAMILY_STREAM + family as u64);
    Ok(gen_fake_with(&w.world, family, seed, n, w.mode)?)
}

pub fn train_mbr(cfg: &ExperimentConfig, reals: &[Sample]) -> Result<Autoencoder> {
    let mut rng = SeededRng::new(cfg.seed, AE_STREAM);
    Ok(train_autoencoder(reals, &cfg.autoencoder_config(), &mut rng)?)
}

/// Negatives for a run without MBR: each coordinate perturbed by Gaussian
/// noise with std `epsilon ×` that coordinate's std over the reals.
pub fn input_noise_negatives(reals: &[Sample], epsilon: f64, rng: &mut SeededRng) -> Vec<Sample> {
    let dim = reals[0].payload.dim();
    let n = reals.len() as f64;
    let mut mean = vec![0.0f64; dim];
    let mut sq = vec![0.0f64; dim];
    for r in reals {
        for (j, &v) in r.payload.values().iter().enumerate() {
            mean[j] += v as f64 / n;
            sq[j] += (v as f64) * (v as f64) / n;
        }
    }
    let std: Vec<f64> = mean.iter().zip(&sq).map(|(m, s)| (s - m * m).max(0.0).sqrt()).collect();
    reals
        .iter()
        .map(|r| {
            let vals: Vec<f32> = r
                .payload
                .values()
                .iter()
                .zip(&std)
                .map(|(&v, s)| (v as f64 + epsilon * s * rng.normal()) as f32)
                .collect();
            let payload = match &r.payload {
                Payload::Image(img) => {
                    let data = vals.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
                    Payload::Image(Image::new(img.width(), img.height(), img.channels(), data).expect("same shape"))
                }
                Payload::Vector(_) => Payload::Vector(vals),
            };
            Sample {
                id: format!("noisy-{}", r.id),
                payload,
                role: Role::NearReal,
                family: None,
                seed: r.seed,
                chain: None,
            }
        })
        .collect()
}

/// Everything a `train` run produces.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub reals: Vec<Sample>,
    pub ae: Autoencoder,
    pub anchor: AnchorEncoder,
    pub model: EnvelopeModel,
}

/// Full pipeline: reals, autoencoder, near-real generation, anchor and
/// envelope training.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainedRun> {
    let reals = train_reals(cfg)?;
    let ae = train_mbr(cfg, &reals)?;
    let model = train_with_ae(cfg, &reals, &ae, None)?;
    let anchor = cfg.anchor(&ae, &reals)?;
    Ok(TrainedRun {
        reals,
        ae,
        anchor,
        model,
    })
}

/// Envelope training on top of an already trained autoencoder, with an
/// optional component dropped.
pub fn train_with_ae(
    cfg: &ExperimentConfig,
    reals: &[Sample],
    ae: &Autoencoder,
    drop: Option<Drop>,
) -> Result<EnvelopeModel> {
    let cfg = ablated(cfg, drop);
    let ee = cfg.envelope_config();
    let anchor = cfg.anchor(ae, reals)?;
    let mut rng = SeededRng::new(cfg.seed, EE_STREAM);
    let mut near_rng = SeededRng::new(cfg.seed, NEAR_STREAM);
    if drop == Some(Drop::Mbr) {
        let epsilon = cfg.mbr.epsilon;
        let near = input_noise_negatives(reals, epsilon, &mut near_rng);
        let resample = cfg.mbr.resample_per_epoch;
        return Ok(train_envelope_with(
            reals,
            &near,
            |_| Ok(resample.then(|| input_noise_negatives(reals, epsilon, &mut near_rng))),
            Some(&anchor),
            &ee,
            &mut rng,
        )?);
    }
    let spec = cfg.perturb_spec();
    let near = generate_near_real(ae, reals, &spec, &mut near_rng)?;
    let resample = cfg.mbr.resample_per_epoch;
    Ok(train_envelope_with(
        reals,
        &near,
        |_| {
            if resample {
                generate_near_real(ae, reals, &spec, &mut near_rng).map(Some)
            } else {
                Ok(None)
            }
        },
        Some(&anchor),
        &ee,
        &mut rng,
    )?)
}

/// Same architecture trained on reals against checker-family fakes with
/// plain classification loss.
pub fn train_baseline(cfg: &ExperimentConfig, reals: &[Sample]) -> Result<EnvelopeModel> {
    let w = &cfg.worldgen;
    let fakes = gen_fake_with(&w.world, Family::Checker, mix_seed(cfg.seed, TRAIN_REALS), reals.len(), w.mode)?;
    let ee = EnvelopeConfig {
        weights: LossWeights::ZERO,
        aug: false,
        ..cfg.envelope_config()
    };
    let mut rng = SeededRng::new(cfg.seed, BASELINE_STREAM);
    Ok(train_envelope(reals, &fakes, None, &ee, &mut rng)?)
}

pub fn score_all(model: &EnvelopeModel, samples: &[Sample]) -> Result<Vec<f64>> {
    par_map(samples, |s| model.score(s.payload.values())).into_iter().collect::<rem_core::Result<_>>().map_err(Into::into)
}

pub fn balanced_accuracy(model: &EnvelopeModel, reals: &[Sample], fakes: &[Sample], threshold: f64) -> Result<f64> {
    let mut scores = score_all(model, reals)?;
    scores.extend(score_all(model, fakes)?);
    let labels: Vec<Label> = std::iter::repeat_n(Label::Real, reals.len())
        .chain(std::iter::repeat_n(Label::Fake, fakes.len()))
        .collect();
    Ok(accuracy_metrics(&scores, &labels, threshold)?.b_acc)
}

// ---------------------------------------------------------------- generalization

/// Balanced accuracies of one seed on the held-out families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizationRow {
    pub seed: u64,
    pub rem_notch: f64,
    pub rem_quant: f64,
    pub base_notch: f64,
    pub base_quant: f64,
}

impl GeneralizationRow {
    pub fn rem(&self) -> f64 {
        (self.rem_notch + self.rem_quant) / 2.0
    }
    pub fn baseline(&self) -> f64 {
        (self.base_notch + self.base_quant) / 2.0
    }
}

pub fn generalization_row(cfg: &ExperimentConfig, rem: &EnvelopeModel, baseline: &EnvelopeModel) -> Result<GeneralizationRow> {
    let n = cfg.eval.n_test;
    let t = cfg.eval.threshold;
    let reals = test_reals(cfg, n)?;
    let notch = test_fakes(cfg, Family::Notch, n)?;
    let quant = test_fakes(cfg, Family::Quant, n)?;
    Ok(GeneralizationRow {
        seed: cfg.seed,
        rem_notch: balanced_accuracy(rem, &reals, &notch, t)?,
        rem_quant: balanced_accuracy(rem, &reals, &quant, t)?,
        base_notch: balanced_accuracy(baseline, &reals, &notch, t)?,
        base_quant: balanced_accuracy(baseline, &reals, &quant, t)?,
    })
}

// ---------------------------------------------------------------- robustness

/// Fits an image back to the model's input size.
pub fn fit_image(img: &Image, width: usize, height: usize) -> Image {
    img.resized(width, height)
}

/// Chain for test item `index` of a given seed.
pub fn eval_chain(cfg: &ExperimentConfig, index: usize, profile: Profile, k_range: (usize, usize)) -> Result<DegradationChain> {
    let mut rng = SeededRng::new(mix_seed(cfg.seed, index as u64), CHAIN_STREAM);
    Ok(build_chain_with(&mut rng, profile, k_range, &cfg.chainsim.presets)?)
}

/// Applies `chains[i]` to sample `i` and fits the result back to the
/// original size.
pub fn degrade_all(samples: &[Sample], chains: &[DegradationChain]) -> Result<Vec<Sample>> {
    let items: Vec<(&Sample, &DegradationChain)> = samples.iter().zip(chains).collect();
    par_map(&items, |(s, chain)| -> Result<Sample> {
        let img = s
            .payload
            .as_image()
            .ok_or_else(|| RemError::Usage("chain degradation needs image payloads".into()))?;
        let out = fit_image(&apply_chain(chain, img)?, img.width(), img.height());
        Ok(Sample {
            payload: Payload::Image(out),
            chain: Some(chain.to_manifest()),
            ..(*s).clone()
        })
    })
    .into_iter()
    .collect()
}

/// Held-out reals and near-reals of one seed, clean and chain-degraded.
#[derive(Debug, Clone)]
pub struct RobustnessSet {
    pub reals: Vec<Sample>,
    pub near: Vec<Sample>,
    pub reals_deg: Vec<Sample>,
    pub near_deg: Vec<Sample>,
}

/// Held-out reals against fresh near-real samples decoded by `ae`; real
/// `i` and near-real `i` share one chain from the configured profile.
pub fn robustness_set(cfg: &ExperimentConfig, ae: &Autoencoder) -> Result<RobustnessSet> {
    if cfg.worldgen.mode != Mode::Image {
        return Err(RemError::Usage("the robustness experiment needs image mode".into()));
    }
    let reals = test_reals(cfg, cfg.eval.n_test)?;
    let mut rng = SeededRng::new(cfg.seed, EVAL_NEAR_STREAM);
    let near = generate_near_real(ae, &reals, &cfg.perturb_spec(), &mut rng)?;
    let chains = (0..reals.len())
        .map(|i| eval_chain(cfg, i, cfg.chainsim.profile, cfg.chainsim.k_range))
        .collect::<Result<Vec<_>>>()?;
    Ok(RobustnessSet {
        reals_deg: degrade_all(&reals, &chains)?,
        near_deg: degrade_all(&near, &chains)?,
        reals,
        near,
    })
}

/// Clean and degraded balanced accuracy of one model variant.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessRow {
    pub seed: u64,
    pub variant: String,
    pub clean: f64,
    pub degraded: f64,
}

impl RobustnessRow {
    pub fn drop(&self) -> f64 {
        self.clean - self.degraded
    }
}

pub fn robustness_row(cfg: &ExperimentConfig, variant: &str, model: &EnvelopeModel, set: &RobustnessSet) -> Result<RobustnessRow> {
    let t = cfg.eval.threshold;
    Ok(RobustnessRow {
        seed: cfg.seed,
        variant: variant.to_string(),
        clean: balanced_accuracy(model, &set.reals, &set.near, t)?,
        degraded: balanced_accuracy(model, &set.reals_deg, &set.near_deg, t)?,
    })
}

/// Full model plus each requested ablation over all seeds.
pub fn ablation_table(cfg: &ExperimentConfig, drops: &[Drop]) -> Result<Vec<RobustnessRow>> {
    let mut rows = Vec::new();
    for seed in seeds(cfg) {
        let c = with_seed(cfg, seed);
        let reals = train_reals(&c)?;
        let ae = train_mbr(&c, &reals)?;
        let set = robustness_set(&c, &ae)?;
        let full = train_with_ae(&c, &reals, &ae, None)?;
        rows.push(robustness_row(&c, "full", &full, &set)?);
        for &d in drops {
            let m = train_with_ae(&c, &reals, &ae, Some(d))?;
            rows.push(robustness_row(&c, &format!("-{d}"), &m, &set)?);
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------- spectral sweep

/// Mean `Δf` between reals and one fake family after the first `k` ops of a
/// shared per-pair chain, for each `k` in `ks`. Pairs share content seeds.
pub fn deltaf_sweep(cfg: &ExperimentConfig, family: Family, n: usize, ks: &[usize]) -> Result<Vec<(usize, f64)>> {
    let w = &cfg.worldgen;
    let seed = mix_seed(cfg.seed, TEST_REALS);
    let reals = gen_real_with(&w.world, seed, n, Mode::Image)?;
    let fakes = gen_fake_with(&w.world, family, seed, n, Mode::Image)?;
    deltaf_sweep_on(cfg, &reals, &fakes, ks)
}

/// `Δf` sweep on given corpora: pair `i` shares the chain of test item `i`
/// drawn with length `max(ks)`, truncated to each `k`.
pub fn deltaf_sweep_on(cfg: &ExperimentConfig, a: &[Sample], b: &[Sample], ks: &[usize]) -> Result<Vec<(usize, f64)>> {
    let n = a.len().min(b.len());
    let max_k = ks.iter().copied().max().unwrap_or(0);
    let chains = (0..n)
        .map(|i| eval_chain(cfg, i, cfg.chainsim.profile, (max_k, max_k)))
        .collect::<Result<Vec<_>>>()?;
    ks.iter()
        .map(|&k| {
            let prefixes: Vec<DegradationChain> = chains.iter().map(|c| c.prefix(k)).collect();
            let images = |set: &[Sample]| -> Result<Vec<Image>> {
                Ok(degrade_all(&set[..n], &prefixes)?
                    .into_iter()
                    .map(|s| s.payload.as_image().expect("degrade_all yields images").clone())
                    .collect())
            };
            Ok((k, freq_discrepancy(&images(a)?, &images(b)?, cfg.eval.freq_mode)?))
        })
        .collect()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}

// ---------------------------------------------------------------- attribution

/// Labeled features of fresh fakes from every family, split into a
/// training/gallery half and a query half.
pub fn attribution_features(
    cfg: &ExperimentConfig,
    model: &EnvelopeModel,
    per_family: usize,
) -> Result<(Vec<(String, Vec<f32>)>, Vec<(String, Vec<f32>)>)> {
    let w = &cfg.worldgen;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for family in Family::ALL {
        let seed = mix_seed(mix_seed(cfg.seed, ATTR_STREAM), family as u64);
        let fakes = gen_fake_with(&w.world, family, seed, 2 * per_family, w.mode)?;
        let feats = par_map(&fakes, |s| model.learner_forward(s.payload.values()))
            .into_iter()
            .collect::<rem_core::Result<Vec<_>>>()?;
        for (i, f) in feats.into_iter().enumerate() {
            let item = (family.to_string(), f);
            if i < per_family {
                train.push(item);
            } else {
                test.push(item);
            }
        }
    }
    Ok((train, test))
}

/// Closed-set report plus one open-set report per held-out family.
#[derive(Debug, Clone)]
pub struct AttributionRun {
    pub closed: AttributionReport,
    pub open: Vec<(Family, AttributionReport)>,
}

impl AttributionRun {
    /// Mean over held-out choices of the unseen family's rejection rate.
    pub fn open_rejection(&self) -> f64 {
        let v: Vec<f64> = self
            .open
            .iter()
            .map(|(f, r)| r.rejection_rate(f.as_str()).unwrap_or(0.0))
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    }

    /// Mean over held-out choices of accuracy on the known families.
    pub fn open_known_accuracy(&self) -> f64 {
        let v: Vec<f64> = self
            .open
            .iter()
            .map(|(held, r)| {
                let known: Vec<&str> = Family::ALL.iter().filter(|f| *f != held).map(|f| f.as_str()).collect();
                r.accuracy_on(&known).unwrap_or(0.0)
            })
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn attribution_run(cfg: &ExperimentConfig, model: &EnvelopeModel, per_family: usize) -> Result<AttributionRun> {
    let (train, test) = attribution_features(cfg, model, per_family)?;
    let mut rng = SeededRng::new(cfg.seed, HEAD_STREAM);
    let closed = attribute_closed_features(&train, &test, &cfg.eval.head, &mut rng)?;
    let open = Family::ALL
        .iter()
        .map(|&held| {
            let gallery: Vec<(String, Vec<f32>)> = train.iter().filter(|(l, _)| l != held.as_str()).cloned().collect();
            Ok((held, attribute_open_features(&gallery, &test, None)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AttributionRun { closed, open })
}
