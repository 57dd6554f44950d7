//! Mini-batch training of the envelope objective.

use alloc::vec::Vec;

use super::{backward, Batch, EnvelopeMeta, EnvelopeModel, Learner, LearnerSpec, LossReport, LossWeights};
use crate::cdc::{degrade_train, AnchorEncoder, DegradePolicy};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig};
use crate::numerics::{pca_variance_target, Matrix, SeededRng};
use crate::worldgen::{Payload, Sample};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeConfig {
    pub learner: LearnerSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weights: LossWeights,
    /// Smallest tangent dimension reaching this explained variance is used,
    /// capped at `D_h − 1`.
    pub variance_target: f64,
    /// Refit the tangent basis at every epoch boundary; otherwise it is fit
    /// once after the first (warm-up) epoch and then frozen.
    pub refresh_basis: bool,
    /// Degraded twins also enter the BCE term.
    pub aug: bool,
    pub policy: DegradePolicy,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        Self {
            learner: LearnerSpec::Dense {
                hidden: 64,
                feature_dim: 16,
            },
            epochs: 20,
            batch_size: 64,
            lr: 1e-3,
            weights: LossWeights::default(),
            variance_target: 0.9,
            refresh_basis: true,
            aug: true,
            policy: DegradePolicy::default(),
        }
    }
}

impl EnvelopeConfig {
    /// Degraded twins are drawn when augmentation or a consistency term
    /// needs them.
    pub fn needs_degraded(&self) -> bool {
        self.aug || self.weights.uses_cdc()
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.policy.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidArgument(alloc::format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.variance_target > 0.0 && self.variance_target <= 1.0) {
            return Err(Error::InvalidArgument("variance_target must be in (0, 1]".into()));
        }
        Ok(())
    }
}

fn fit_basis(model: &mut EnvelopeModel, reals: &[Sample], target: f64) -> Result<usize> {
    let d_h = model.feature_dim();
    let mut data = Vec::with_capacity(reals.len() * d_h);
    for r in reals {
        data.extend(model.features_f64(r.payload.values()).into_iter().map(|v| v as f32));
    }
    let feats = Matrix::from_vec(reals.len(), d_h, data)?;
    let basis = pca_variance_target(&feats, target, d_h.saturating_sub(1).max(1))?;
    let p = basis.p();
    model.basis = Some(basis);
    Ok(p)
}

/// Trains on a fixed near-real corpus.
pub fn train_envelope(
    reals: &[Sample],
    near_reals: &[Sample],
    anchor: Option<&AnchorEncoder>,
    cfg: &EnvelopeConfig,
    rng: &mut SeededRng,
) -> Result<EnvelopeModel> {
    train_envelope_with(reals, near_reals, |_| Ok(None), anchor, cfg, rng)
}

/// Trains the envelope model.
///
/// Before every epoch after the first, `resample(epoch)` may return a fresh
/// near-real corpus (same pairing contract as `near_reals`). Pair `i` is
/// `(reals[i], near[i % near.len()])`. The anchor is required when a
/// consistency weight is nonzero and otherwise ignored.
pub fn train_envelope_with<F>(
    reals: &[Sample],
    near_reals: &[Sample],
    mut resample: F,
    anchor: Option<&AnchorEncoder>,
    cfg: &EnvelopeConfig,
    rng: &mut SeededRng,
) -> Result<EnvelopeModel>
where
    F: FnMut(usize) -> Result<Option<Vec<Sample>>>,
{
    cfg.validate()?;
    if near_reals.is_empty() {
        return Err(Error::InvalidArgument("near-real corpus is empty".into()));
    }
    if reals.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: reals.len(),
        });
    }
    let input_dim = reals[0].payload.dim();
    if let Some(s) = reals.iter().chain(near_reals).find(|s| s.payload.dim() != input_dim) {
        return Err(Error::DimensionMismatch {
            context: "training corpus",
            expected: input_dim,
            actual: s.payload.dim(),
        });
    }
    let anchor = if cfg.weights.uses_cdc() {
        Some(anchor.ok_or_else(|| Error::InvalidArgument("consistency terms need an anchor encoder".into()))?)
    } else {
        None
    };
    let shape = match &reals[0].payload {
        Payload::Image(img) => Some((img.width(), img.height(), img.channels())),
        Payload::Vector(_) => None,
    };
    let learner = Learner::new(cfg.learner, input_dim, shape, rng)?;
    let anchor_dim = anchor.map_or(1, |a| a.dim());
    let mut model = EnvelopeModel::new(learner, anchor_dim, cfg.weights, rng)?;
    let sizes: Vec<usize> = model.blocks().iter().map(|b| b.len()).collect();
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &sizes,
    );

    let mut meta = EnvelopeMeta::default();
    let mut near: Vec<Sample> = near_reals.to_vec();
    let mut p = fit_basis(&mut model, reals, cfg.variance_target)?;
    let mut order: Vec<usize> = (0..reals.len()).collect();
    for epoch in 0..cfg.epochs {
        if epoch > 0 {
            if let Some(fresh) = resample(epoch)? {
                if fresh.is_empty() {
                    return Err(Error::InvalidArgument("near-real corpus is empty".into()));
                }
                near = fresh;
            }
            if cfg.refresh_basis || epoch == 1 {
                p = fit_basis(&mut model, reals, cfg.variance_target)?;
            }
        }
        rng.shuffle(&mut order);
        let mut sum = LossReport::default();
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let r_s: Vec<&Sample> = chunk.iter().map(|&i| &reals[i]).collect();
            let n_s: Vec<&Sample> = chunk.iter().map(|&i| &near[i % near.len()]).collect();
            let (r_d, n_d): (Vec<Sample>, Vec<Sample>) = if cfg.needs_degraded() {
                (
                    r_s.iter().map(|s| degrade_train(s, &cfg.policy, epoch as u64)).collect(),
                    n_s.iter().map(|s| degrade_train(s, &cfg.policy, epoch as u64)).collect(),
                )
            } else {
                (Vec::new(), Vec::new())
            };
            let batch = Batch {
                reals: r_s.iter().map(|s| s.payload.values()).collect(),
                near: n_s.iter().map(|s| s.payload.values()).collect(),
                reals_deg: r_d.iter().map(|s| s.payload.values()).collect(),
                near_deg: n_d.iter().map(|s| s.payload.values()).collect(),
                aug: cfg.aug,
            };
            let (report, grads) = match backward(&model, &batch, anchor) {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => return Err(Error::Divergence { epoch }),
                Err(e) => return Err(e),
            };
            if !report.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            let g: Vec<&[f64]> = grads.blocks.iter().map(|b| b.as_slice()).collect();
            adam.step(&mut model.blocks_mut(), &g);
            if !model.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            sum.l_bce += report.l_bce;
            sum.l_tan += report.l_tan;
            sum.l_anc += report.l_anc;
            sum.l_res += report.l_res;
            sum.total += report.total;
            sum.grad_norm += report.grad_norm;
            batches += 1;
        }
        let b = batches as f64;
        meta.epoch_reports.push(LossReport {
            l_bce: sum.l_bce / b,
            l_tan: sum.l_tan / b,
            l_anc: sum.l_anc / b,
            l_res: sum.l_res / b,
            total: sum.total / b,
            grad_norm: sum.grad_norm / b,
        });
        meta.basis_p.push(p);
    }
    model.meta = Some(meta);
    Ok(model)
}
