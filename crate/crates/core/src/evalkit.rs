//! Detection metrics, discrepancy diagnostics and forgery attribution.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::cdc::{anchor_forward, AnchorEncoder};
use crate::envelope::EnvelopeModel;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{Adam, AdamConfig};
use crate::numerics::{dft2_magnitude, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Real,
    Fake,
}

/// Real and fake accuracy at a threshold on probability-real scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyReport {
    pub r_acc: f64,
    pub f_acc: f64,
    pub b_acc: f64,
    pub n_real: usize,
    pub n_fake: usize,
}

/// Accuracy metrics plus AP and a per-family breakdown of fake accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub r_acc: f64,
    pub f_acc: f64,
    pub b_acc: f64,
    pub ap: f64,
    pub n_real: usize,
    pub n_fake: usize,
    /// Family tag to the report restricted to all reals plus that family.
    pub per_family: BTreeMap<String, AccuracyReport>,
}

/// `r_acc` = reals with score ≥ threshold, `f_acc` = fakes below it,
/// `b_acc = (r_acc + f_acc) / 2`.
pub fn accuracy_metrics(scores: &[f64], labels: &[Label], threshold: f64) -> Result<AccuracyReport> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "accuracy_metrics labels",
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    let (mut n_real, mut n_fake, mut ok_real, mut ok_fake) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match l {
            Label::Real => {
                n_real += 1;
                ok_real += (s >= threshold) as usize;
            }
            Label::Fake => {
                n_fake += 1;
                ok_fake += (s < threshold) as usize;
            }
        }
    }
    if n_real == 0 || n_fake == 0 {
        return Err(Error::UndefinedMetric("b_acc needs both real and fake samples"));
    }
    let r_acc = ok_real as f64 / n_real as f64;
    let f_acc = ok_fake as f64 / n_fake as f64;
    Ok(AccuracyReport {
        r_acc,
        f_acc,
        b_acc: (r_acc + f_acc) / 2.0,
        n_real,
        n_fake,
    })
}

/// AP of a ranking where larger `ranking` means more likely positive.
///
/// Items are ordered by `(−ranking, index)`; AP is the mean over positives
/// of the precision at each positive's rank.
pub fn average_precision_ranked(ranking: &[f64], positive: &[bool]) -> Result<f64> {
    if ranking.len() != positive.len() {
        return Err(Error::DimensionMismatch {
            context: "average_precision labels",
            expected: ranking.len(),
            actual: positive.len(),
        });
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("average precision needs at least one positive"));
    }
    if ranking.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("average_precision scores".into()));
    }
    let mut order: Vec<usize> = (0..ranking.len()).collect();
    order.sort_by(|&a, &b| ranking[b].total_cmp(&ranking[a]).then(a.cmp(&b)));
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            tp += 1;
            sum += tp as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

/// Detection AP with fakes as the positive class, ranked by `1 − score`
/// where `score` is probability-real.
pub fn average_precision(scores: &[f64], labels: &[Label]) -> Result<f64> {
    let ranking: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
    let positive: Vec<bool> = labels.iter().map(|&l| l == Label::Fake).collect();
    average_precision_ranked(&ranking, &positive)
}

/// Full report; `families[i]` tags fake `i` (ignored for reals).
pub fn evaluate(scores: &[f64], labels: &[Label], families: &[Option<String>], threshold: f64) -> Result<EvalReport> {
    let acc = accuracy_metrics(scores, labels, threshold)?;
    let ap = average_precision(scores, labels)?;
    if families.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            context: "evaluate families",
            expected: scores.len(),
            actual: families.len(),
        });
    }
    let mut tags: Vec<&String> = families
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == Label::Fake)
        .filter_map(|(f, _)| f.as_ref())
        .collect();
    tags.sort();
    tags.dedup();
    let mut per_family = BTreeMap::new();
    for tag in tags {
        let (s, l): (Vec<f64>, Vec<Label>) = scores
            .iter()
            .zip(labels)
            .zip(families)
            .filter(|((_, &l), f)| l == Label::Real || f.as_ref() == Some(tag))
            .map(|((&s, &l), _)| (s, l))
            .unzip();
        per_family.insert(tag.clone(), accuracy_metrics(&s, &l, threshold)?);
    }
    Ok(EvalReport {
        r_acc: acc.r_acc,
        f_acc: acc.f_acc,
        b_acc: acc.b_acc,
        ap,
        n_real: acc.n_real,
        n_fake: acc.n_fake,
        per_family,
    })
}

/// Anything that embeds a payload into a feature space.
pub trait FeatureMap {
    fn features(&self, x: &[f32]) -> Result<Vec<f32>>;
}

impl FeatureMap for EnvelopeModel {
    fn features(&self, x: &[f32]) -> Result<Vec<f32>> {
        self.learner_forward(x)
    }
}

impl FeatureMap for AnchorEncoder {
    fn features(&self, x: &[f32]) -> Result<Vec<f32>> {
        anchor_forward(self, x)
    }
}

/// The payload itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityMap;

impl FeatureMap for IdentityMap {
    fn features(&self, x: &[f32]) -> Result<Vec<f32>> {
        Ok(x.to_vec())
    }
}

fn mean_features(map: &dyn FeatureMap, set: &[&[f32]]) -> Result<Vec<f64>> {
    if set.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut mean: Vec<f64> = Vec::new();
    for x in set {
        let f = map.features(x)?;
        if mean.is_empty() {
            mean = vec![0.0; f.len()];
        } else if f.len() != mean.len() {
            return Err(Error::DimensionMismatch {
                context: "feature_discrepancy",
                expected: mean.len(),
                actual: f.len(),
            });
        }
        for (m, v) in mean.iter_mut().zip(&f) {
            *m += *v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= set.len() as f64);
    Ok(mean)
}

/// `d_g = ‖mean φ(x_r) − mean φ(x_f)‖₂`.
pub fn feature_discrepancy(map: &dyn FeatureMap, reals: &[&[f32]], fakes: &[&[f32]]) -> Result<f64> {
    let a = mean_features(map, reals)?;
    let b = mean_features(map, fakes)?;
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "feature_discrepancy",
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(libm::sqrt(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum()))
}

/// How spectra of the two sets are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FreqMode {
    /// Mean over index pairs of the Frobenius distance between magnitudes.
    #[default]
    Paired,
    /// Frobenius distance between the two mean magnitude spectra.
    MeanSpectrum,
}

impl core::str::FromStr for FreqMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paired" => Ok(FreqMode::Paired),
            "mean_spectrum" => Ok(FreqMode::MeanSpectrum),
            other => Err(Error::InvalidArgument(format!(
                "unknown freq mode `{other}` (valid: paired, mean_spectrum)"
            ))),
        }
    }
}

impl core::fmt::Display for FreqMode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            FreqMode::Paired => "paired",
            FreqMode::MeanSpectrum => "mean_spectrum",
        })
    }
}

fn magnitude(img: &Image) -> Vec<f32> {
    (0..img.channels())
        .flat_map(|c| dft2_magnitude(img.plane(c), img.height(), img.width()))
        .collect()
}

/// `Δf = ‖|F(x_r)| − |F(x_f)|‖₂`, aggregated per `mode`. Multi-channel
/// images stack their per-channel spectra.
pub fn freq_discrepancy(reals: &[Image], fakes: &[Image], mode: FreqMode) -> Result<f64> {
    if reals.is_empty() || fakes.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if mode == FreqMode::Paired && reals.len() != fakes.len() {
        return Err(Error::DimensionMismatch {
            context: "freq_discrepancy pairs",
            expected: reals.len(),
            actual: fakes.len(),
        });
    }
    let shape = &reals[0];
    if let Some(bad) = reals.iter().chain(fakes).find(|i| !i.same_shape(shape)) {
        return Err(Error::DimensionMismatch {
            context: "freq_discrepancy image size",
            expected: shape.data().len(),
            actual: bad.data().len(),
        });
    }
    let dist = |a: &[f64], b: &[f64]| libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum());
    let spec = |img: &Image| magnitude(img).into_iter().map(|v| v as f64).collect::<Vec<f64>>();
    match mode {
        FreqMode::Paired => {
            let total: f64 = reals.iter().zip(fakes).map(|(a, b)| dist(&spec(a), &spec(b))).sum();
            Ok(total / reals.len() as f64)
        }
        FreqMode::MeanSpectrum => {
            let mean = |set: &[Image]| {
                let mut m = vec![0.0f64; shape.data().len()];
                for img in set {
                    for (a, v) in m.iter_mut().zip(spec(img)) {
                        *a += v;
                    }
                }
                m.iter_mut().for_each(|a| *a /= set.len() as f64);
                m
            };
            Ok(dist(&mean(reals), &mean(fakes)))
        }
    }
}

/// Label reported for rejected open-set queries.
pub const UNKNOWN: &str = "unknown";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttributionMode {
    Closed,
    Open,
}

/// Attribution outcome. `confusion[i][j]` counts queries of true label
/// `rows[i]` predicted as `cols[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionReport {
    pub mode: AttributionMode,
    pub accuracy: f64,
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub confusion: Vec<Vec<usize>>,
    /// Rejection radius used in open mode.
    pub tau: Option<f64>,
}

impl AttributionReport {
    fn row(&self, label: &str) -> Option<&Vec<usize>> {
        self.rows.iter().position(|r| r == label).map(|i| &self.confusion[i])
    }

    /// Fraction of `label` queries predicted as [`UNKNOWN`].
    pub fn rejection_rate(&self, label: &str) -> Option<f64> {
        let row = self.row(label)?;
        let u = self.cols.iter().position(|c| c == UNKNOWN)?;
        let n: usize = row.iter().sum();
        (n > 0).then(|| row[u] as f64 / n as f64)
    }

    /// Accuracy restricted to queries whose true label is in `labels`.
    pub fn accuracy_on(&self, labels: &[&str]) -> Option<f64> {
        let (mut ok, mut n) = (0usize, 0usize);
        for (i, r) in self.rows.iter().enumerate() {
            if !labels.contains(&r.as_str()) {
                continue;
            }
            n += self.confusion[i].iter().sum::<usize>();
            if let Some(j) = self.cols.iter().position(|c| c == r) {
                ok += self.confusion[i][j];
            }
        }
        (n > 0).then(|| ok as f64 / n as f64)
    }
}

/// Labels in first-appearance order.
fn label_order<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for l in items {
        if !out.iter().any(|o| o == l) {
            out.push(l.to_string());
        }
    }
    out
}

fn build_report(
    mode: AttributionMode,
    classes: &[String],
    truth: &[&str],
    predicted: &[String],
    tau: Option<f64>,
) -> AttributionReport {
    let mut rows: Vec<String> = classes.to_vec();
    for t in label_order(truth.iter().copied()) {
        if !rows.contains(&t) {
            rows.push(t);
        }
    }
    let mut cols: Vec<String> = classes.to_vec();
    if mode == AttributionMode::Open {
        cols.push(UNKNOWN.to_string());
    }
    let mut confusion = vec![vec![0usize; cols.len()]; rows.len()];
    let mut ok = 0usize;
    for (t, p) in truth.iter().zip(predicted) {
        let i = rows.iter().position(|r| r == t).expect("row exists");
        let j = cols.iter().position(|c| c == p).expect("column exists");
        confusion[i][j] += 1;
        let expected = if classes.iter().any(|c| c == t) { *t } else { UNKNOWN };
        ok += (p == expected) as usize;
    }
    AttributionReport {
        mode,
        accuracy: ok as f64 / truth.len().max(1) as f64,
        rows,
        cols,
        confusion,
        tau,
    }
}

fn dist(a: &[f32], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(&x, y)| (x as f64 - y) * (x as f64 - y)).sum())
}

/// Nearest-centroid gallery.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidGallery {
    pub classes: Vec<String>,
    pub centroids: Vec<Vec<f64>>,
    /// Default rejection radius: 3 × the median within-family distance to
    /// the family centroid.
    pub tau: f64,
}

impl CentroidGallery {
    pub fn fit(gallery: &[(String, Vec<f32>)]) -> Result<Self> {
        if gallery.is_empty() {
            return Err(Error::InsufficientSamples { needed: 2, got: 0 });
        }
        let classes = label_order(gallery.iter().map(|(l, _)| l.as_str()));
        let d = gallery[0].1.len();
        let mut centroids = vec![vec![0.0f64; d]; classes.len()];
        let mut counts = vec![0usize; classes.len()];
        for (l, f) in gallery {
            if f.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "gallery features",
                    expected: d,
                    actual: f.len(),
                });
            }
            let c = classes.iter().position(|x| x == l).expect("known class");
            counts[c] += 1;
            for (a, &v) in centroids[c].iter_mut().zip(f) {
                *a += v as f64;
            }
        }
        if !counts.iter().any(|&n| n >= 2) {
            return Err(Error::InvalidArgument("gallery needs a family with at least 2 samples".into()));
        }
        for (c, n) in centroids.iter_mut().zip(&counts) {
            c.iter_mut().for_each(|v| *v /= *n as f64);
        }
        let mut radii: Vec<f64> = gallery
            .iter()
            .map(|(l, f)| dist(f, &centroids[classes.iter().position(|x| x == l).unwrap()]))
            .collect();
        radii.sort_by(f64::total_cmp);
        let m = radii.len();
        let median = if m % 2 == 1 { radii[m / 2] } else { (radii[m / 2 - 1] + radii[m / 2]) / 2.0 };
        Ok(Self {
            classes,
            centroids,
            tau: 3.0 * median,
        })
    }

    /// Nearest class and its distance. Ties go to the earlier class.
    pub fn nearest(&self, f: &[f32]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.centroids.iter().enumerate() {
            let d = dist(f, c);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    pub fn predict(&self, f: &[f32], tau: f64) -> String {
        let (i, d) = self.nearest(f);
        if d > tau {
            UNKNOWN.to_string()
        } else {
            self.classes[i].clone()
        }
    }
}

/// Open-set attribution on precomputed features. `tau = None` uses the
/// gallery default.
pub fn attribute_open_features(
    gallery: &[(String, Vec<f32>)],
    queries: &[(String, Vec<f32>)],
    tau: Option<f64>,
) -> Result<AttributionReport> {
    let g = CentroidGallery::fit(gallery)?;
    let tau = tau.unwrap_or(g.tau);
    let predicted: Vec<String> = queries.iter().map(|(_, f)| g.predict(f, tau)).collect();
    let truth: Vec<&str> = queries.iter().map(|(l, _)| l.as_str()).collect();
    Ok(build_report(AttributionMode::Open, &g.classes, &truth, &predicted, Some(tau)))
}

fn embed(map: &dyn FeatureMap, items: &[(String, &[f32])]) -> Result<Vec<(String, Vec<f32>)>> {
    items.iter().map(|(l, x)| Ok((l.clone(), map.features(x)?))).collect()
}

/// Nearest-centroid attribution in the feature space of `map`, rejecting
/// queries farther than `tau` from every centroid.
pub fn attribute_open(
    map: &dyn FeatureMap,
    gallery: &[(String, &[f32])],
    queries: &[(String, &[f32])],
    tau: Option<f64>,
) -> Result<AttributionReport> {
    attribute_open_features(&embed(map, gallery)?, &embed(map, queries)?, tau)
}

/// Softmax head training settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            lr: 1e-2,
        }
    }
}

/// Linear softmax classifier over standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub classes: Vec<String>,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    /// `classes × dim`, row-major.
    w: Vec<f32>,
    b: Vec<f32>,
}

impl LinearHead {
    fn standardize(&self, f: &[f32]) -> Vec<f64> {
        f.iter()
            .zip(&self.mean)
            .zip(&self.inv_std)
            .map(|((&v, m), s)| (v as f64 - m) * s)
            .collect()
    }

    fn logits(&self, z: &[f64]) -> Vec<f64> {
        let d = z.len();
        (0..self.classes.len())
            .map(|c| self.b[c] as f64 + self.w[c * d..(c + 1) * d].iter().zip(z).map(|(&w, x)| w as f64 * x).sum::<f64>())
            .collect()
    }

    pub fn predict(&self, f: &[f32]) -> String {
        let l = self.logits(&self.standardize(f));
        let mut best = 0;
        for (i, v) in l.iter().enumerate() {
            if *v > l[best] {
                best = i;
            }
        }
        self.classes[best].clone()
    }

    /// Cross-entropy training with Adam.
    pub fn fit(train: &[(String, Vec<f32>)], cfg: &HeadConfig, rng: &mut SeededRng) -> Result<Self> {
        let classes = label_order(train.iter().map(|(l, _)| l.as_str()));
        if classes.len() < 2 {
            return Err(Error::InvalidArgument("closed-set attribution needs at least 2 families".into()));
        }
        if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
            return Err(Error::InvalidArgument("head config needs positive epochs, batch size and lr".into()));
        }
        let d = train[0].1.len();
        if let Some((_, f)) = train.iter().find(|(_, f)| f.len() != d) {
            return Err(Error::DimensionMismatch {
                context: "head features",
                expected: d,
                actual: f.len(),
            });
        }
        let n = train.len() as f64;
        let mut mean = vec![0.0f64; d];
        for (_, f) in train {
            for (m, &v) in mean.iter_mut().zip(f) {
                *m += v as f64 / n;
            }
        }
        let mut var = vec![0.0f64; d];
        for (_, f) in train {
            for ((s, &v), m) in var.iter_mut().zip(f).zip(&mean) {
                *s += (v as f64 - m) * (v as f64 - m) / n;
            }
        }
        let inv_std = var.iter().map(|v| 1.0 / libm::sqrt(v.max(1e-12))).collect();
        let k = classes.len();
        let mut head = LinearHead {
            mean,
            inv_std,
            w: (0..k * d).map(|_| (0.01 * rng.normal()) as f32).collect(),
            b: vec![0.0; k],
            classes,
        };
        let data: Vec<(usize, Vec<f64>)> = train
            .iter()
            .map(|(l, f)| (head.classes.iter().position(|c| c == l).unwrap(), head.standardize(f)))
            .collect();
        let mut adam = Adam::new(
            AdamConfig {
                lr: cfg.lr,
                ..AdamConfig::default()
            },
            &[k * d, k],
        );
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..cfg.epochs {
            rng.shuffle(&mut order);
            for chunk in order.chunks(cfg.batch_size) {
                let mut gw = vec![0.0f64; k * d];
                let mut gb = vec![0.0f64; k];
                for &i in chunk {
                    let (y, z) = &data[i];
                    let l = head.logits(z);
                    let mx = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = l.iter().map(|v| libm::exp(v - mx)).collect();
                    let s: f64 = e.iter().sum();
                    for c in 0..k {
                        let g = (e[c] / s - (c == *y) as u8 as f64) / chunk.len() as f64;
                        gb[c] += g;
                        for (gwj, zj) in gw[c * d..(c + 1) * d].iter_mut().zip(z) {
                            *gwj += g * zj;
                        }
                    }
                }
                adam.step(&mut [&mut head.w, &mut head.b], &[&gw, &gb]);
            }
        }
        Ok(head)
    }
}

/// Closed-set attribution on precomputed features.
pub fn attribute_closed_features(
    train: &[(String, Vec<f32>)],
    test: &[(String, Vec<f32>)],
    cfg: &HeadConfig,
    rng: &mut SeededRng,
) -> Result<AttributionReport> {
    let head = LinearHead::fit(train, cfg, rng)?;
    let predicted: Vec<String> = test.iter().map(|(_, f)| head.predict(f)).collect();
    let truth: Vec<&str> = test.iter().map(|(l, _)| l.as_str()).collect();
    Ok(build_report(AttributionMode::Closed, &head.classes, &truth, &predicted, None))
}

/// Fits a linear softmax head on frozen features of `map` and reports test
/// accuracy and confusion.
pub fn attribute_closed(
    map: &dyn FeatureMap,
    train: &[(String, &[f32])],
    test: &[(String, &[f32])],
    cfg: &HeadConfig,
    rng: &mut SeededRng,
) -> Result<AttributionReport> {
    attribute_closed_features(&embed(map, train)?, &embed(map, test)?, cfg, rng)
}
