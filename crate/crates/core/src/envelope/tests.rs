use super::*;
use crate::cdc::{anchor_forward, AnchorEncoder, DegradePolicy};
use crate::numerics::pca_top_p;
use crate::worldgen::{Payload, Role, Sample};
use proptest::prelude::*;
use sha2::{Digest, Sha256};
use std::vec::Vec;

fn random_input(n: usize, rng: &mut SeededRng) -> Vec<f32> {
    (0..n).map(|_| rng.uniform(0.0, 1.0) as f32).collect()
}

fn dense_model(input: usize, d_a: usize, weights: LossWeights, seed: u64) -> EnvelopeModel {
    let mut rng = SeededRng::new(seed, 0);
    let learner = Learner::new(
        LearnerSpec::Dense {
            hidden: 6,
            feature_dim: 5,
        },
        input,
        None,
        &mut rng,
    )
    .unwrap();
    let mut m = EnvelopeModel::new(learner, d_a, weights, &mut rng).unwrap();
    for v in m.proj.data_mut() {
        *v = (0.3 * rng.normal()) as f32;
    }
    m
}

fn texture_model(side: usize, d_a: usize, weights: LossWeights, seed: u64) -> EnvelopeModel {
    let mut rng = SeededRng::new(seed, 0);
    let learner = Learner::new(
        LearnerSpec::Texture {
            filters: 3,
            kernel: 3,
            feature_dim: 4,
            input_scale: 4.0,
        },
        side * side,
        Some((side, side, 1)),
        &mut rng,
    )
    .unwrap();
    let mut m = EnvelopeModel::new(learner, d_a, weights, &mut rng).unwrap();
    if let Learner::Texture(t) = &mut m.learner {
        for b in &mut t.conv.b {
            *b = (0.2 * rng.normal()) as f32;
        }
    }
    for v in m.proj.data_mut() {
        *v = (0.3 * rng.normal()) as f32;
    }
    m
}

fn fit_random_basis(m: &mut EnvelopeModel, p: usize, seed: u64) {
    let mut rng = SeededRng::new(seed, 9);
    let d = m.feature_dim();
    let data = (0..20 * d).map(|_| rng.normal() as f32).collect();
    m.basis = Some(pca_top_p(&Matrix::from_vec(20, d, data).unwrap(), p).unwrap());
}

struct Owned {
    reals: Vec<Vec<f32>>,
    near: Vec<Vec<f32>>,
    reals_deg: Vec<Vec<f32>>,
    near_deg: Vec<Vec<f32>>,
}

impl Owned {
    fn new(dim: usize, n: usize, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed, 1);
        let mut gen = |n| (0..n).map(|_| random_input(dim, &mut rng)).collect::<Vec<_>>();
        Owned {
            reals: gen(n),
            near: gen(n),
            reals_deg: gen(n),
            near_deg: gen(n),
        }
    }

    fn batch(&self, aug: bool) -> Batch<'_> {
        fn v(x: &[Vec<f32>]) -> Vec<&[f32]> {
            x.iter().map(|s| s.as_slice()).collect()
        }
        Batch {
            reals: v(&self.reals),
            near: v(&self.near),
            reals_deg: v(&self.reals_deg),
            near_deg: v(&self.near_deg),
            aug,
        }
    }
}

fn objective(m: &EnvelopeModel, batch: &Batch<'_>, anchor: &AnchorEncoder) -> f64 {
    backward(m, batch, Some(anchor)).unwrap().0.total
}

fn finite_difference_check(mut m: EnvelopeModel, data: &Owned, anchor: &AnchorEncoder, seed: u64) {
    let batch = data.batch(true);
    let (_, grads) = backward(&m, &batch, Some(anchor)).unwrap();
    let mut rng = SeededRng::new(seed, 5);
    let names = m.block_names();
    for b in 0..names.len() {
        let len = m.blocks()[b].len();
        let picks = if len <= 20 { (0..len).collect::<Vec<_>>() } else { (0..20).map(|_| rng.below(len as u64) as usize).collect() };
        for i in picks {
            let orig = m.blocks()[b][i];
            let plus = orig + 1e-4;
            let minus = orig - 1e-4;
            m.blocks_mut()[b][i] = plus;
            let lp = objective(&m, &batch, anchor);
            m.blocks_mut()[b][i] = minus;
            let lm = objective(&m, &batch, anchor);
            m.blocks_mut()[b][i] = orig;
            let fd = (lp - lm) / (plus as f64 - minus as f64);
            let an = grads.blocks[b][i];
            let rel = (an - fd).abs() / (an.abs() + 1e-8);
            assert!(
                rel <= 1e-3 || (an - fd).abs() < 1e-9,
                "{} [{i}]: analytic {an:e} vs fd {fd:e} (rel {rel:e})",
                names[b]
            );
        }
    }
}

#[test]
fn dense_gradients_match_finite_differences() {
    let weights = LossWeights {
        tan: 0.7,
        anc: 0.9,
        res: 1.3,
    };
    let mut m = dense_model(7, 3, weights, 1);
    fit_random_basis(&mut m, 2, 1);
    let anchor = AnchorEncoder::fixed_seed(7, 5, 3);
    finite_difference_check(m, &Owned::new(7, 4, 2), &anchor, 3);
}

#[test]
fn texture_gradients_match_finite_differences() {
    let weights = LossWeights {
        tan: 0.5,
        anc: 1.1,
        res: 0.8,
    };
    let mut m = texture_model(6, 3, weights, 4);
    fit_random_basis(&mut m, 2, 4);
    let anchor = AnchorEncoder::fixed_seed(36, 5, 3);
    finite_difference_check(m, &Owned::new(36, 3, 5), &anchor, 6);
}

#[test]
fn zero_consistency_weight_gives_zero_w_gradient() {
    let weights = LossWeights {
        tan: 0.1,
        anc: 0.0,
        res: 0.0,
    };
    let mut m = dense_model(7, 3, weights, 7);
    fit_random_basis(&mut m, 2, 7);
    let anchor = AnchorEncoder::fixed_seed(7, 5, 3);
    let data = Owned::new(7, 4, 8);
    let (report, grads) = backward(&m, &data.batch(true), Some(&anchor)).unwrap();
    assert!(grads.blocks[6].iter().all(|&g| g == 0.0));
    assert!(report.l_anc > 0.0);
    assert_eq!(report.total, report.l_bce + 0.1 * report.l_tan);
}

#[test]
fn duplicated_batch_leaves_gradients_unchanged() {
    let mut m = dense_model(7, 3, LossWeights::default(), 9);
    fit_random_basis(&mut m, 2, 9);
    let anchor = AnchorEncoder::fixed_seed(7, 5, 3);
    let data = Owned::new(7, 3, 10);
    let dup = |v: &Vec<Vec<f32>>| v.iter().chain(v).cloned().collect::<Vec<_>>();
    let doubled = Owned {
        reals: dup(&data.reals),
        near: dup(&data.near),
        reals_deg: dup(&data.reals_deg),
        near_deg: dup(&data.near_deg),
    };
    let (r1, g1) = backward(&m, &data.batch(true), Some(&anchor)).unwrap();
    let (r2, g2) = backward(&m, &doubled.batch(true), Some(&anchor)).unwrap();
    assert!((r1.total - r2.total).abs() <= 1e-12 * r1.total.abs());
    for (a, b) in g1.blocks.iter().flatten().zip(g2.blocks.iter().flatten()) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
    }
}

#[test]
fn backward_rejects_incomplete_batches() {
    let m = dense_model(7, 3, LossWeights::default(), 11);
    let data = Owned::new(7, 2, 12);
    let mut b = data.batch(false);
    b.reals_deg.clear();
    b.near_deg.clear();
    let anchor = AnchorEncoder::fixed_seed(7, 5, 3);
    assert!(backward(&m, &b, Some(&anchor)).is_err());
    assert!(backward(&m, &data.batch(false), None).is_err());
    let mut b = data.batch(false);
    b.near.clear();
    assert!(backward(&m, &b, Some(&anchor)).is_err());
}

#[test]
fn learner_forward_matches_hand_evaluation() {
    let m = dense_model(4, 2, LossWeights::default(), 13);
    let x = [0.2f32, -0.5, 0.9, 0.1];
    let Learner::Dense(d) = &m.learner else { unreachable!() };
    let layer = |l: &crate::nn::Dense, v: &[f64]| -> Vec<f64> {
        (0..l.out_dim)
            .map(|j| libm::tanh((0..l.in_dim).map(|i| l.w[j * l.in_dim + i] as f64 * v[i]).sum::<f64>() + l.b[j] as f64))
            .collect()
    };
    let h = layer(&d.l2, &layer(&d.l1, &x.map(|v| v as f64)));
    let got = m.learner_forward(&x).unwrap();
    for (a, b) in got.iter().zip(&h) {
        assert!((*a as f64 - b).abs() < 1e-6);
    }
    assert_eq!(got, m.learner_forward(&x).unwrap());
    assert!(matches!(m.learner_forward(&x[..3]), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn texture_forward_matches_hand_evaluation() {
    let m = texture_model(5, 2, LossWeights::default(), 14);
    let mut rng = SeededRng::new(14, 3);
    let x = random_input(25, &mut rng);
    let Learner::Texture(t) = &m.learner else { unreachable!() };
    let n = 9;
    let mut g = [0.0f64; 3];
    for c in 0..3 {
        let w = &t.conv.w[c * n..(c + 1) * n];
        let mean = w.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        for py in 0..3 {
            for px in 0..3 {
                let mut r = t.conv.b[c] as f64;
                for dy in 0..3 {
                    for dx in 0..3 {
                        r += (w[dy * 3 + dx] as f64 - mean) * 4.0 * x[(py + dy) * 5 + px + dx] as f64;
                    }
                }
                g[c] += libm::tanh(r).powi(2) / 9.0;
            }
        }
    }
    let h: Vec<f64> = (0..4)
        .map(|j| libm::tanh((0..3).map(|c| t.head.w[j * 3 + c] as f64 * g[c]).sum::<f64>() + t.head.b[j] as f64))
        .collect();
    for (a, b) in m.learner_forward(&x).unwrap().iter().zip(&h) {
        assert!((*a as f64 - b).abs() < 1e-6);
    }
}

#[test]
fn zero_parameters_give_zero_features() {
    let mut m = dense_model(4, 2, LossWeights::default(), 15);
    for b in m.blocks_mut() {
        b.iter_mut().for_each(|v| *v = 0.0);
    }
    assert!(m.learner_forward(&[0.3, 0.1, -0.2, 0.9]).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn bce_examples() {
    assert!((loss_bce(&[0.0], &[0.0]).unwrap() - 2.0 * core::f64::consts::LN_2).abs() < 1e-12);
    assert!(loss_bce(&[30.0, 30.0], &[-30.0]).unwrap() <= 1e-9);
    assert!((loss_bce(&[1.0], &[-1.0]).unwrap() - 0.626523).abs() < 1e-6);
    assert!(loss_bce(&[500.0], &[-500.0]).unwrap().is_finite());
    assert!(loss_bce(&[], &[0.0]).is_err());
    assert!(loss_bce(&[0.0], &[]).is_err());
}

#[test]
fn tangency_examples() {
    let e1 = TangentBasis::from_columns(Matrix::from_vec(2, 1, vec![1.0, 0.0]).unwrap(), 1.0).unwrap();
    assert_eq!(loss_tan(&e1, &[(vec![0.0, 0.0], vec![3.0, 4.0])]).unwrap(), 16.0);
    assert_eq!(loss_tan(&e1, &[(vec![1.0, 2.0], vec![-5.0, 2.0])]).unwrap(), 0.0);
    assert!(loss_tan(&e1, &[(vec![1.0], vec![1.0])]).is_err());
    assert!(loss_tan(&e1, &[]).is_err());
}

#[test]
fn tangency_matches_explicit_projector() {
    let mut rng = SeededRng::new(16, 0);
    let d = 6;
    let data = (0..30 * d).map(|_| rng.normal() as f32).collect();
    let basis = pca_top_p(&Matrix::from_vec(30, d, data).unwrap(), 3).unwrap();
    let u = basis.columns();
    let mut q = vec![0.0f64; d * d];
    for i in 0..d {
        for j in 0..d {
            let uu: f64 = (0..3).map(|k| u.get(i, k) as f64 * u.get(j, k) as f64).sum();
            q[i * d + j] = if i == j { 1.0 } else { 0.0 } - uu;
        }
    }
    let pairs: Vec<(Vec<f32>, Vec<f32>)> = (0..8)
        .map(|_| (random_input(d, &mut rng), random_input(d, &mut rng)))
        .collect();
    let expect: f64 = pairs
        .iter()
        .map(|(r, f)| {
            (0..d)
                .map(|i| (0..d).map(|j| q[i * d + j] * (f[j] as f64 - r[j] as f64)).sum::<f64>().powi(2))
                .sum::<f64>()
        })
        .sum::<f64>()
        / 8.0;
    assert!((loss_tan(&basis, &pairs).unwrap() - expect).abs() < 1e-6);
}

#[test]
fn full_basis_has_zero_tangency() {
    let mut rng = SeededRng::new(17, 0);
    let d = 5;
    let data = (0..40 * d).map(|_| rng.normal() as f32).collect();
    let basis = pca_top_p(&Matrix::from_vec(40, d, data).unwrap(), d).unwrap();
    let pairs: Vec<(Vec<f32>, Vec<f32>)> = (0..8)
        .map(|_| (random_input(d, &mut rng), random_input(d, &mut rng)))
        .collect();
    assert!(loss_tan(&basis, &pairs).unwrap() < 1e-10);
}

#[test]
fn total_loss_examples() {
    let parts = LossParts {
        bce: 1.0,
        tan: 2.0,
        anc: 3.0,
        res: 4.0,
    };
    assert_eq!(total_loss(parts, &LossWeights::ZERO).unwrap().total, 1.0);
    assert!((total_loss(parts, &LossWeights::default()).unwrap().total - 8.2).abs() < 1e-12);
    let bad = LossParts { res: f64::NAN, ..parts };
    assert_eq!(total_loss(bad, &LossWeights::default()), Err(Error::NonFinite("l_res".into())));
}

proptest! {
    #[test]
    fn total_loss_matches_recomputation(p in proptest::array::uniform4(0.0f64..10.0), l in proptest::array::uniform3(0.0f64..2.0)) {
        let w = LossWeights { tan: l[0], anc: l[1], res: l[2] };
        let r = total_loss(LossParts { bce: p[0], tan: p[1], anc: p[2], res: p[3] }, &w).unwrap();
        let expect = p[0] + l[0] * p[1] + l[1] * p[2] + l[2] * p[3];
        prop_assert!((r.total - expect).abs() <= 1e-6);
    }

    #[test]
    fn score_is_monotone_in_logit(a in -40.0f64..40.0, b in -40.0f64..40.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(sigmoid(lo) <= sigmoid(hi));
    }
}

fn vec_samples(rows: Vec<Vec<f32>>, role: Role, tag: &str) -> Vec<Sample> {
    rows.into_iter()
        .enumerate()
        .map(|(i, v)| Sample {
            id: std::format!("{tag}-{i}"),
            payload: Payload::Vector(v),
            role,
            family: None,
            seed: i as u64,
            chain: None,
        })
        .collect()
}

fn gaussian_cloud(center: f64, n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = SeededRng::new(seed, 0);
    (0..n)
        .map(|_| (0..dim).map(|_| (center + 0.5 * rng.normal()) as f32).collect())
        .collect()
}

fn toy_config(tan: f64) -> EnvelopeConfig {
    EnvelopeConfig {
        learner: LearnerSpec::Dense {
            hidden: 8,
            feature_dim: 4,
        },
        epochs: 15,
        batch_size: 16,
        lr: 1e-2,
        weights: LossWeights { tan, anc: 0.0, res: 0.0 },
        aug: false,
        ..EnvelopeConfig::default()
    }
}

#[test]
fn toy_separable_training() {
    let reals = vec_samples(gaussian_cloud(-2.0, 128, 4, 1), Role::Real, "r");
    let near = vec_samples(gaussian_cloud(2.0, 128, 4, 2), Role::NearReal, "n");
    let m = train_envelope(&reals, &near, None, &toy_config(0.1), &mut SeededRng::new(3, 0)).unwrap();
    let test_r = gaussian_cloud(-2.0, 200, 4, 4);
    let test_f = gaussian_cloud(2.0, 200, 4, 5);
    let ok_r = test_r.iter().filter(|x| m.score(x).unwrap() > 0.5).count();
    let ok_f = test_f.iter().filter(|x| m.score(x).unwrap() < 0.5).count();
    assert!(ok_r >= 190 && ok_f >= 190, "{ok_r} {ok_f}");
    let meta = m.meta.as_ref().unwrap();
    assert_eq!(meta.epoch_reports.len(), 15);
    assert!(meta.epoch_reports.last().unwrap().l_bce < meta.epoch_reports[0].l_bce);
}

#[test]
fn training_is_deterministic() {
    let reals = vec_samples(gaussian_cloud(-1.0, 64, 4, 6), Role::Real, "r");
    let near = vec_samples(gaussian_cloud(1.0, 64, 4, 7), Role::NearReal, "n");
    let a = train_envelope(&reals, &near, None, &toy_config(0.1), &mut SeededRng::new(8, 0)).unwrap();
    let b = train_envelope(&reals, &near, None, &toy_config(0.1), &mut SeededRng::new(8, 0)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn tangency_weight_lowers_final_tangency() {
    let reals = vec_samples(gaussian_cloud(-0.5, 128, 6, 9), Role::Real, "r");
    let near = vec_samples(gaussian_cloud(0.5, 128, 6, 10), Role::NearReal, "n");
    let run = |tan| {
        let mut cfg = toy_config(tan);
        cfg.refresh_basis = false;
        let m = train_envelope(&reals, &near, None, &cfg, &mut SeededRng::new(11, 0)).unwrap();
        m.meta.unwrap().epoch_reports.last().unwrap().l_tan
    };
    let (off, on) = (run(0.0), run(0.1));
    assert!(on < off, "l_tan with weight {on} vs without {off}");
}

#[test]
fn training_with_consistency_keeps_anchor_frozen() {
    let reals = vec_samples(gaussian_cloud(-1.0, 64, 5, 12), Role::Real, "r");
    let near = vec_samples(gaussian_cloud(1.0, 64, 5, 13), Role::NearReal, "n");
    let anchor = AnchorEncoder::fixed_seed(5, 6, 3);
    let before = Sha256::digest(anchor.param_bytes());
    let probe = anchor_forward(&anchor, near[0].payload.values()).unwrap();
    let mut cfg = toy_config(0.1);
    cfg.weights = LossWeights::default();
    cfg.epochs = 3;
    cfg.aug = true;
    cfg.policy = DegradePolicy::default();
    let m = train_envelope(&reals, &near, Some(&anchor), &cfg, &mut SeededRng::new(14, 0)).unwrap();
    assert_eq!(Sha256::digest(anchor.param_bytes()), before);
    assert_eq!(anchor_forward(&anchor, near[0].payload.values()).unwrap(), probe);
    assert_eq!(m.anchor_dim(), 3);
    assert!(m.meta.unwrap().epoch_reports.iter().all(|r| r.l_anc > 0.0));
    assert!(train_envelope(&reals, &near, None, &cfg, &mut SeededRng::new(14, 0)).is_err());
}

#[test]
fn divergence_reports_the_epoch() {
    let reals = vec_samples(gaussian_cloud(-1.0, 32, 4, 15), Role::Real, "r");
    let near = vec_samples(gaussian_cloud(1.0, 32, 4, 16), Role::NearReal, "n");
    let mut cfg = toy_config(0.1);
    cfg.lr = 1e300;
    let err = train_envelope(&reals, &near, None, &cfg, &mut SeededRng::new(17, 0)).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err:?}");
    assert!(train_envelope(&reals, &[], None, &cfg, &mut SeededRng::new(17, 0)).is_err());
}

#[test]
fn scoring_contract() {
    let mut m = dense_model(4, 2, LossWeights::default(), 18);
    let x = [0.1f32, 0.2, 0.3, 0.4];
    assert_eq!(m.score(&x), Err(Error::Untrained("envelope model")));
    m.meta = Some(EnvelopeMeta::default());
    let xs: Vec<Vec<f32>> = (0..5).map(|i| vec![i as f32 * 0.1; 4]).collect();
    let refs: Vec<&[f32]> = xs.iter().map(|v| v.as_slice()).collect();
    let batch = m.score_batch(&refs).unwrap();
    for (x, s) in xs.iter().zip(&batch) {
        assert_eq!(m.score(x).unwrap(), *s);
    }
    let decisions: Vec<bool> = batch.iter().map(|&s| s >= 0.5).collect();
    m.disc.w.iter_mut().chain(m.disc.b.iter_mut()).for_each(|v| *v *= 2.0);
    let scaled: Vec<bool> = m.score_batch(&refs).unwrap().iter().map(|&s| s >= 0.5).collect();
    assert_eq!(decisions, scaled);
    m.disc.w.iter_mut().chain(m.disc.b.iter_mut()).for_each(|v| *v = 0.0);
    assert_eq!(m.score(&x).unwrap(), 0.5);
}
