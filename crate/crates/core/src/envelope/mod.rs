//! Envelope estimator: learner `φ`, linear discriminator `s`, the BCE and
//! tangency losses, the combined objective with the consistency terms, its
//! analytic gradient, and the training loop.
//!
//! The objective on one batch is
//!
//! ```text
//! L = L_bce + λ₁ L_tan + λ₂ L_anc + λ₃ L_res
//! ```
//!
//! with every term a batch mean. `L_tan` runs over index-paired clean
//! (real, near-real) features; `L_anc` over all clean samples; `L_res` over
//! (clean, degraded) twins. The anchor features and the tangent basis are
//! constants.

mod learner;
mod train;

pub use learner::{DenseLearner, Learner, LearnerSpec, TextureLearner};
pub use train::{train_envelope, train_envelope_with, EnvelopeConfig};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::cdc::AnchorEncoder;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, to_f64, Dense};
use crate::numerics::{Matrix, SeededRng, TangentBasis};

/// Logits are clamped to this magnitude inside the BCE loss.
pub const LOGIT_CLAMP: f64 = 30.0;

/// `(λ₁, λ₂, λ₃)` weighting tangency, anchor and residual terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub tan: f64,
    pub anc: f64,
    pub res: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            tan: 0.1,
            anc: 1.0,
            res: 1.0,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        tan: 0.0,
        anc: 0.0,
        res: 0.0,
    };

    /// True when either consistency term is active.
    pub fn uses_cdc(&self) -> bool {
        self.anc != 0.0 || self.res != 0.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_tan", self.tan), ("lambda_anc", self.anc), ("lambda_res", self.res)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Unweighted loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub bce: f64,
    pub tan: f64,
    pub anc: f64,
    pub res: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub l_bce: f64,
    pub l_tan: f64,
    pub l_anc: f64,
    pub l_res: f64,
    pub total: f64,
    pub grad_norm: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.l_bce, self.l_tan, self.l_anc, self.l_res, self.total, self.grad_norm]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// `total = bce + λ₁·tan + λ₂·anc + λ₃·res`.
pub fn total_loss(parts: LossParts, weights: &LossWeights) -> Result<LossReport> {
    for (name, v) in [("l_bce", parts.bce), ("l_tan", parts.tan), ("l_anc", parts.anc), ("l_res", parts.res)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(String::from(name)));
        }
    }
    Ok(LossReport {
        l_bce: parts.bce,
        l_tan: parts.tan,
        l_anc: parts.anc,
        l_res: parts.res,
        total: parts.bce + weights.tan * parts.tan + weights.anc * parts.anc + weights.res * parts.res,
        grad_norm: 0.0,
    })
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// `−mean log σ(real) − mean log(1 − σ(fake))` on clamped logits.
pub fn loss_bce(real_logits: &[f64], fake_logits: &[f64]) -> Result<f64> {
    if real_logits.is_empty() || fake_logits.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let c = |l: f64| l.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    let r: f64 = real_logits.iter().map(|&l| softplus(-c(l))).sum::<f64>() / real_logits.len() as f64;
    let f: f64 = fake_logits.iter().map(|&l| softplus(c(l))).sum::<f64>() / fake_logits.len() as f64;
    Ok(r + f)
}

/// Mean over pairs of `‖(I − U Uᵀ)(h_f − h_r)‖²`.
pub fn loss_tan(basis: &TangentBasis, pairs: &[(Vec<f32>, Vec<f32>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut total = 0.0;
    for (hr, hf) in pairs {
        for h in [hr, hf] {
            if h.len() != basis.dim() {
                return Err(Error::DimensionMismatch {
                    context: "loss_tan",
                    expected: basis.dim(),
                    actual: h.len(),
                });
            }
        }
        let d: Vec<f64> = hf.iter().zip(hr).map(|(&f, &r)| f as f64 - r as f64).collect();
        total += basis.off_tangent_f64(&d).iter().map(|v| v * v).sum::<f64>();
    }
    Ok(total / pairs.len() as f64)
}

/// Training record.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnvelopeMeta {
    /// Batch-averaged losses per epoch.
    pub epoch_reports: Vec<LossReport>,
    /// Tangent dimension `p` used in each epoch.
    pub basis_p: Vec<usize>,
}

/// Learner, discriminator, anchor projection and tangent basis.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeModel {
    pub learner: Learner,
    /// `1 × D_h`.
    pub disc: Dense,
    /// `W`, stored `D_a × D_h` so that `ĥ = W h`.
    pub proj: Matrix,
    pub basis: Option<TangentBasis>,
    pub weights: LossWeights,
    /// `None` until trained (or loaded from a checkpoint).
    pub meta: Option<EnvelopeMeta>,
}

/// Gradient blocks in [`EnvelopeModel::block_names`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        libm::sqrt(self.blocks.iter().flatten().map(|g| g * g).sum())
    }
}

/// One training batch. `near[i]` is paired with `reals[i]`; degraded twins
/// follow the same indexing and may be empty when no degraded term is used.
#[derive(Debug, Clone, Default)]
pub struct Batch<'a> {
    pub reals: Vec<&'a [f32]>,
    pub near: Vec<&'a [f32]>,
    pub reals_deg: Vec<&'a [f32]>,
    pub near_deg: Vec<&'a [f32]>,
    /// Degraded twins also enter the BCE term with their clean labels.
    pub aug: bool,
}

impl EnvelopeModel {
    /// Fresh model with random `φ`, `s` and zero `W`.
    pub fn new(learner: Learner, anchor_dim: usize, weights: LossWeights, rng: &mut SeededRng) -> Result<Self> {
        weights.validate()?;
        let d_h = learner.feature_dim();
        Ok(Self {
            disc: Dense::init(1, d_h, 1.0, rng),
            proj: Matrix::zeros(anchor_dim, d_h),
            learner,
            basis: None,
            weights,
            meta: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.learner.input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.learner.feature_dim()
    }

    pub fn anchor_dim(&self) -> usize {
        self.proj.rows()
    }

    pub fn is_trained(&self) -> bool {
        self.meta.is_some()
    }

    pub fn block_names(&self) -> [&'static str; 7] {
        let l = self.learner.block_names();
        [l[0], l[1], l[2], l[3], "s.w", "s.b", "W"]
    }

    pub fn blocks(&self) -> [&[f32]; 7] {
        let [a, b] = self.learner.layers();
        [&a.w, &a.b, &b.w, &b.b, &self.disc.w, &self.disc.b, self.proj.data()]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f32]; 7] {
        let [a, b] = self.learner.layers_mut();
        [
            &mut a.w,
            &mut a.b,
            &mut b.w,
            &mut b.b,
            &mut self.disc.w,
            &mut self.disc.b,
            self.proj.data_mut(),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "learner input",
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn features_f64(&self, x: &[f32]) -> Vec<f64> {
        self.learner.forward(&to_f64(x)).0
    }

    fn logit_of(&self, h: &[f64]) -> f64 {
        self.disc.forward_vec(h)[0]
    }

    /// `h = φ(x)`.
    pub fn learner_forward(&self, x: &[f32]) -> Result<Vec<f32>> {
        self.check_input(x)?;
        Ok(self.features_f64(x).into_iter().map(|v| v as f32).collect())
    }

    /// `s(φ(x))`.
    pub fn logit(&self, x: &[f32]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.logit_of(&self.features_f64(x)))
    }

    /// Probability of being real, `σ(s(φ(x)))`.
    pub fn score(&self, x: &[f32]) -> Result<f64> {
        if !self.is_trained() {
            return Err(Error::Untrained("envelope model"));
        }
        Ok(sigmoid(self.logit(x)?))
    }

    pub fn score_batch(&self, xs: &[&[f32]]) -> Result<Vec<f64>> {
        xs.iter().map(|x| self.score(x)).collect()
    }
}

/// Forward pass of one batch group.
struct Group {
    xs: Vec<Vec<f64>>,
    hs: Vec<Vec<f64>>,
    caches: Vec<learner::Cache>,
    gh: Vec<Vec<f64>>,
}

impl Group {
    fn new(model: &EnvelopeModel, inputs: &[&[f32]]) -> Result<Self> {
        let d_h = model.feature_dim();
        let mut g = Group {
            xs: Vec::with_capacity(inputs.len()),
            hs: Vec::with_capacity(inputs.len()),
            caches: Vec::with_capacity(inputs.len()),
            gh: vec![vec![0.0; d_h]; inputs.len()],
        };
        for x in inputs {
            model.check_input(x)?;
            let xf = to_f64(x);
            let (h, c) = model.learner.forward(&xf);
            g.xs.push(xf);
            g.hs.push(h);
            g.caches.push(c);
        }
        Ok(g)
    }

    fn len(&self) -> usize {
        self.xs.len()
    }
}

const REAL: usize = 0;
const NEAR: usize = 1;
const REAL_DEG: usize = 2;
const NEAR_DEG: usize = 3;

/// Loss report and analytic gradients of the full objective on `batch`.
///
/// `anchor` is required when `λ₂` or `λ₃` is nonzero; when given (and the
/// degraded twins are present) the consistency terms are reported even at
/// zero weight. `L_tan` is skipped when the model has no basis yet.
pub fn backward(model: &EnvelopeModel, batch: &Batch<'_>, anchor: Option<&AnchorEncoder>) -> Result<(LossReport, Gradients)> {
    let w = model.weights;
    let (n_r, n_f) = (batch.reals.len(), batch.near.len());
    if n_r == 0 || n_f == 0 {
        return Err(Error::InsufficientSamples {
            needed: 1,
            got: n_r.min(n_f),
        });
    }
    let has_deg = !batch.reals_deg.is_empty() || !batch.near_deg.is_empty();
    if has_deg && (batch.reals_deg.len() != n_r || batch.near_deg.len() != n_f) {
        return Err(Error::InvalidArgument("degraded twins must match the clean batch".into()));
    }
    if (batch.aug || w.uses_cdc()) && !has_deg {
        return Err(Error::InvalidArgument("batch needs degraded twins".into()));
    }
    if w.uses_cdc() && anchor.is_none() {
        return Err(Error::InvalidArgument("consistency terms need an anchor encoder".into()));
    }
    if let Some(a) = anchor {
        if a.dim() != model.anchor_dim() || a.input_dim() != model.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "anchor encoder",
                expected: model.anchor_dim(),
                actual: a.dim(),
            });
        }
    }
    let mut groups = [
        Group::new(model, &batch.reals)?,
        Group::new(model, &batch.near)?,
        Group::new(model, &batch.reals_deg)?,
        Group::new(model, &batch.near_deg)?,
    ];
    let d_h = model.feature_dim();
    let d_a = model.anchor_dim();
    let mut g_sw = vec![0.0; d_h];
    let mut g_sb = 0.0;
    let mut g_w = vec![0.0; d_a * d_h];
    let mut parts = LossParts::default();

    // BCE.
    let (real_ids, fake_ids): (&[usize], &[usize]) = if batch.aug {
        (&[REAL, REAL_DEG], &[NEAR, NEAR_DEG])
    } else {
        (&[REAL], &[NEAR])
    };
    for (ids, is_real) in [(real_ids, true), (fake_ids, false)] {
        let n: usize = ids.iter().map(|&i| groups[i].len()).sum();
        for &gi in ids {
            let g = &mut groups[gi];
            for k in 0..g.len() {
                let l = model.logit_of(&g.hs[k]);
                let lc = l.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
                let (loss, dl) = if is_real {
                    (softplus(-lc), sigmoid(lc) - 1.0)
                } else {
                    (softplus(lc), sigmoid(lc))
                };
                parts.bce += loss / n as f64;
                let dl = if l.abs() > LOGIT_CLAMP { 0.0 } else { dl / n as f64 };
                for j in 0..d_h {
                    g.gh[k][j] += dl * model.disc.w[j] as f64;
                    g_sw[j] += dl * g.hs[k][j];
                }
                g_sb += dl;
            }
        }
    }

    // Tangency over clean pairs.
    if let Some(basis) = &model.basis {
        if basis.dim() != d_h {
            return Err(Error::DimensionMismatch {
                context: "tangent basis",
                expected: d_h,
                actual: basis.dim(),
            });
        }
        let n = n_r.min(n_f);
        for k in 0..n {
            let delta: Vec<f64> = (0..d_h).map(|j| groups[NEAR].hs[k][j] - groups[REAL].hs[k][j]).collect();
            let r = basis.off_tangent_f64(&delta);
            parts.tan += r.iter().map(|v| v * v).sum::<f64>() / n as f64;
            let qr = basis.off_tangent_f64(&r);
            for j in 0..d_h {
                let g = w.tan * 2.0 * qr[j] / n as f64;
                groups[NEAR].gh[k][j] += g;
                groups[REAL].gh[k][j] -= g;
            }
        }
    }

    // Anchor and residual consistency.
    if let (Some(anchor), true) = (anchor, has_deg) {
        let mut resid: [Vec<Vec<f64>>; 4] = Default::default();
        for (gi, g) in groups.iter().enumerate() {
            for k in 0..g.len() {
                let a = anchor.forward_f64(&g.xs[k])?;
                let hat = mat_vec(&model.proj, &g.hs[k]);
                resid[gi].push(a.iter().zip(&hat).map(|(x, y)| x - y).collect());
            }
        }
        let n_c = (n_r + n_f) as f64;
        for gi in [REAL, NEAR] {
            for k in 0..groups[gi].len() {
                let e = &resid[gi][k];
                parts.anc += e.iter().map(|v| v * v).sum::<f64>() / n_c;
                let coef: Vec<f64> = e.iter().map(|v| -2.0 * w.anc * v / n_c).collect();
                add_wt(&model.proj, &coef, &mut groups[gi].gh[k]);
                outer_add(&mut g_w, &coef, &groups[gi].hs[k]);
            }
        }
        for (ci, di) in [(REAL, REAL_DEG), (NEAR, NEAR_DEG)] {
            for k in 0..groups[ci].len() {
                let u: Vec<f64> = resid[ci][k].iter().zip(&resid[di][k]).map(|(x, y)| x - y).collect();
                parts.res += u.iter().map(|v| v * v).sum::<f64>() / n_c;
                let coef: Vec<f64> = u.iter().map(|v| -2.0 * w.res * v / n_c).collect();
                add_wt(&model.proj, &coef, &mut groups[ci].gh[k]);
                let neg: Vec<f64> = coef.iter().map(|v| -v).collect();
                add_wt(&model.proj, &neg, &mut groups[di].gh[k]);
                let dh: Vec<f64> = groups[ci].hs[k].iter().zip(&groups[di].hs[k]).map(|(a, b)| a - b).collect();
                outer_add(&mut g_w, &coef, &dh);
            }
        }
    }

    let mut learner_grads: Vec<Vec<f64>> = model
        .learner
        .layers()
        .iter()
        .flat_map(|l| [vec![0.0; l.w.len()], vec![0.0; l.b.len()]])
        .collect();
    for g in &groups {
        for k in 0..g.len() {
            if g.gh[k].iter().any(|&v| v != 0.0) {
                model.learner.backward(&g.xs[k], &g.hs[k], &g.caches[k], &g.gh[k], &mut learner_grads);
            }
        }
    }
    learner_grads.push(g_sw);
    learner_grads.push(vec![g_sb]);
    learner_grads.push(g_w);
    let grads = Gradients { blocks: learner_grads };
    for (name, block) in model.block_names().iter().zip(&grads.blocks) {
        if block.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient block {name}")));
        }
    }
    let mut report = total_loss(parts, &w)?;
    report.grad_norm = grads.norm();
    Ok((report, grads))
}

fn mat_vec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|r| m.row(r).iter().zip(v).map(|(&a, &b)| a as f64 * b).sum())
        .collect()
}

/// `out += Mᵀ coef`.
fn add_wt(m: &Matrix, coef: &[f64], out: &mut [f64]) {
    for (r, &c) in coef.iter().enumerate() {
        for (o, &a) in out.iter_mut().zip(m.row(r)) {
            *o += c * a as f64;
        }
    }
}

/// `g += coef hᵀ` for a row-major `len(coef) × len(h)` block.
fn outer_add(g: &mut [f64], coef: &[f64], h: &[f64]) {
    let cols = h.len();
    for (r, &c) in coef.iter().enumerate() {
        for (o, &hv) in g[r * cols..(r + 1) * cols].iter_mut().zip(h) {
            *o += c * hv;
        }
    }
}

#[cfg(test)]
mod tests;
