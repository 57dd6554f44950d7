//! Seeded procedural corpora: "real" samples and artifact-injecting fake
//! generator families.
//!
//! Image-mode reals are low-pass filtered noise fields with a natural-image
//! style detail texture, sensor noise and a few anti-aliased shapes.
//! Vector-mode reals lie near a fixed smooth 4-dimensional manifold embedded
//! in `R^64`. Fakes of every family start from exactly the content the real
//! generator produces for the same `(seed, index)` and then inject their
//! artifact, so the artifact is the only separating signal.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::numerics::{dft2, idft2_real, mix_seed, Complex, SeededRng};

/// Provenance role of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Real,
    NearReal,
    Fake,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Real => "real",
            Role::NearReal => "near_real",
            Role::Fake => "fake",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(Role::Real),
            "near_real" => Ok(Role::NearReal),
            "fake" => Ok(Role::Fake),
            other => Err(Error::InvalidArgument(format!(
                "unknown role `{other}` (valid roles: real, near_real, fake)"
            ))),
        }
    }
}

/// Fake generator family; each injects one artifact signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    /// Nearest-neighbor 2x down/up sampling: periodic block structure.
    Checker,
    /// A fixed annulus of DFT bins removed.
    Notch,
    /// Pixel values quantized to 16 levels.
    Quant,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Checker, Family::Notch, Family::Quant];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Checker => "checker",
            Family::Notch => "notch",
            Family::Quant => "quant",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "checker" => Ok(Family::Checker),
            "notch" => Ok(Family::Notch),
            "quant" => Ok(Family::Quant),
            other => Err(Error::UnknownFamily(other.into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Image,
    Vector,
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(Mode::Image),
            "vector" => Ok(Mode::Vector),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode `{other}` (valid modes: image, vector)"
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Image => "image",
            Mode::Vector => "vector",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Image(Image),
    Vector(Vec<f32>),
}

impl Payload {
    /// Flat view of the values (planar for images).
    pub fn values(&self) -> &[f32] {
        match self {
            Payload::Image(img) => img.data(),
            Payload::Vector(v) => v,
        }
    }

    pub fn dim(&self) -> usize {
        self.values().len()
    }

    pub fn as_image(&self) -> Option<&Image> {
        match self {
            Payload::Image(img) => Some(img),
            Payload::Vector(_) => None,
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            Payload::Image(_) => Mode::Image,
            Payload::Vector(_) => Mode::Vector,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub payload: Payload,
    pub role: Role,
    pub family: Option<Family>,
    pub seed: u64,
    /// Chain manifest string of the degradation applied, if any.
    pub chain: Option<String>,
}

impl Sample {
    pub fn is_real(&self) -> bool {
        self.role == Role::Real
    }
}

/// Generator settings. Defaults are the desk-scale configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub image_size: usize,
    pub channels: usize,
    /// Gaussian low-pass cutoff (in DFT bins) of the smooth base field.
    pub field_cutoff: f64,
    pub field_std: f64,
    /// Std of the 1/f detail texture.
    pub detail_std: f64,
    pub sensor_noise: f64,
    pub max_shapes: usize,
    /// Annulus of DFT bins (radius, inclusive) zeroed by the notch family.
    pub notch_band: (f64, f64),
    pub quant_levels: usize,
    pub latent_dim: usize,
    pub ambient_dim: usize,
    pub vector_noise: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            channels: 1,
            field_cutoff: 3.0,
            field_std: 0.12,
            detail_std: 0.035,
            sensor_noise: 0.012,
            max_shapes: 3,
            notch_band: (4.0, 9.0),
            quant_levels: 16,
            latent_dim: 4,
            ambient_dim: 64,
            vector_noise: 0.01,
        }
    }
}

/// Named seed freezing the vector-mode embedding.
pub const EMBEDDING_SEED: u64 = 0x5EED_E3BE_DD16_0001;
const EMBED_HIDDEN: usize = 32;

/// Fixed smooth embedding `psi: [-1,1]^m -> R^D`,
/// `psi(u) = tanh(A2 tanh(A1 u + b1) + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    m: usize,
    d: usize,
    a1: Vec<f64>,
    b1: Vec<f64>,
    a2: Vec<f64>,
    b2: Vec<f64>,
}

impl Embedding {
    pub fn new(m: usize, d: usize) -> Self {
        let mut rng = SeededRng::new(EMBEDDING_SEED, 0);
        let s1 = 2.0 / libm::sqrt(m as f64);
        let s2 = 1.5 / libm::sqrt(EMBED_HIDDEN as f64);
        let a1 = (0..EMBED_HIDDEN * m).map(|_| s1 * rng.normal()).collect();
        let b1 = (0..EMBED_HIDDEN).map(|_| 0.5 * rng.normal()).collect();
        let a2 = (0..d * EMBED_HIDDEN).map(|_| s2 * rng.normal()).collect();
        let b2 = (0..d).map(|_| 0.2 * rng.normal()).collect();
        Self { m, d, a1, b1, a2, b2 }
    }

    pub fn latent_dim(&self) -> usize {
        self.m
    }

    pub fn ambient_dim(&self) -> usize {
        self.d
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.m);
        let hidden: Vec<f64> = (0..EMBED_HIDDEN)
            .map(|j| {
                let row = &self.a1[j * self.m..(j + 1) * self.m];
                let s: f64 = row.iter().zip(u).map(|(a, x)| a * x).sum();
                libm::tanh(s + self.b1[j])
            })
            .collect();
        (0..self.d)
            .map(|i| {
                let row = &self.a2[i * EMBED_HIDDEN..(i + 1) * EMBED_HIDDEN];
                let s: f64 = row.iter().zip(&hidden).map(|(a, h)| a * h).sum();
                libm::tanh(s + self.b2[i])
            })
            .collect()
    }
}

fn sample_seed(seed: u64, index: usize) -> u64 {
    mix_seed(seed, index as u64)
}

/// Radius in DFT bins of frequency `(u, v)` for an `n × n` grid.
fn bin_radius(u: usize, v: usize, n: usize) -> f64 {
    let fu = crate::numerics::dft::signed_freq(u, n) * n as f64;
    let fv = crate::numerics::dft::signed_freq(v, n) * n as f64;
    libm::sqrt(fu * fu + fv * fv)
}

/// White noise shaped in the frequency domain by `gain(radius)` and
/// normalized to standard deviation `std`.
fn shaped_noise(rng: &mut SeededRng, n: usize, std: f64, gain: impl Fn(f64) -> f64) -> Vec<f32> {
    let white: Vec<f32> = (0..n * n).map(|_| rng.normal() as f32).collect();
    let mut spec = dft2(&white, n, n);
    for u in 0..n {
        for v in 0..n {
            let g = if u == 0 && v == 0 { 0.0 } else { gain(bin_radius(u, v, n)) };
            let c = &mut spec[u * n + v];
            *c = Complex::new(c.re * g, c.im * g);
        }
    }
    let field = idft2_real(&spec, n, n);
    let var = field.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>() / (n * n) as f64;
    let scale = if var > 0.0 { std / libm::sqrt(var) } else { 0.0 };
    field.iter().map(|&x| (x as f64 * scale) as f32).collect()
}

/// Anti-aliased shape coverage at pixel `(y, x)` by 4x4 supersampling.
fn coverage(shape: &Shape, y: usize, x: usize) -> f64 {
    let mut hits = 0u32;
    for sy in 0..4 {
        for sx in 0..4 {
            let py = y as f64 + (sy as f64 + 0.5) / 4.0;
            let px = x as f64 + (sx as f64 + 0.5) / 4.0;
            let inside = match *shape {
                Shape::Disc { cy, cx, r, .. } => (py - cy) * (py - cy) + (px - cx) * (px - cx) <= r * r,
                Shape::Rect { y0, x0, y1, x1, .. } => py >= y0 && py <= y1 && px >= x0 && px <= x1,
            };
            if inside {
                hits += 1;
            }
        }
    }
    hits as f64 / 16.0
}

enum Shape {
    Disc { cy: f64, cx: f64, r: f64 },
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
}

fn real_image(cfg: &WorldConfig, seed: u64) -> Image {
    let n = cfg.image_size;
    let mut rng = SeededRng::new(seed, 1);
    let base = rng.uniform(0.35, 0.65);
    let cutoff = cfg.field_cutoff;
    let field = shaped_noise(&mut rng, n, cfg.field_std, |r| libm::exp(-r * r / (2.0 * cutoff * cutoff)));
    let detail = shaped_noise(&mut rng, n, cfg.detail_std, |r| 1.0 / r.max(1.0));
    let n_shapes = rng.range_inclusive(1, cfg.max_shapes.max(1));
    let mut shapes = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        let amp = rng.uniform(0.1, 0.3) * if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
        let shape = if rng.next_f64() < 0.5 {
            Shape::Disc {
                cy: rng.uniform(4.0, n as f64 - 4.0),
                cx: rng.uniform(4.0, n as f64 - 4.0),
                r: rng.uniform(2.5, n as f64 / 4.0),
            }
        } else {
            let y0 = rng.uniform(1.0, n as f64 * 0.6);
            let x0 = rng.uniform(1.0, n as f64 * 0.6);
            Shape::Rect {
                y0,
                x0,
                y1: (y0 + rng.uniform(4.0, n as f64 * 0.45)).min(n as f64 - 1.0),
                x1: (x0 + rng.uniform(4.0, n as f64 * 0.45)).min(n as f64 - 1.0),
            }
        };
        let tints: Vec<f64> = (0..cfg.channels).map(|_| rng.uniform(0.7, 1.0)).collect();
        shapes.push((shape, amp, tints));
    }
    let channel_gain: Vec<f64> = (0..cfg.channels)
        .map(|c| if c == 0 { 1.0 } else { rng.uniform(0.85, 1.15) })
        .collect();
    let mut data = vec![0.0f32; cfg.channels * n * n];
    for c in 0..cfg.channels {
        for y in 0..n {
            for x in 0..n {
                let i = y * n + x;
                let mut v = base + field[i] as f64 + detail[i] as f64;
                for (shape, amp, tints) in &shapes {
                    let cov = coverage(shape, y, x);
                    if cov > 0.0 {
                        v += cov * amp * tints[c];
                    }
                }
                v *= channel_gain[c];
                v += cfg.sensor_noise * rng.normal();
                data[c * n * n + i] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Image::new(n, n, cfg.channels, data).expect("generated image is well formed")
}

fn real_vector(cfg: &WorldConfig, emb: &Embedding, seed: u64) -> Vec<f32> {
    let mut rng = SeededRng::new(seed, 2);
    let u: Vec<f64> = (0..emb.latent_dim()).map(|_| rng.uniform(-1.0, 1.0)).collect();
    emb.apply(&u)
        .into_iter()
        .map(|y| (y + cfg.vector_noise * rng.normal()) as f32)
        .collect()
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("corpus size n must be at least 1".into()));
    }
    Ok(())
}

/// Real corpus with the default configuration.
pub fn gen_real(seed: u64, n: usize, mode: Mode) -> Result<Vec<Sample>> {
    gen_real_with(&WorldConfig::default(), seed, n, mode)
}

pub fn gen_real_with(cfg: &WorldConfig, seed: u64, n: usize, mode: Mode) -> Result<Vec<Sample>> {
    check_n(n)?;
    let emb = (mode == Mode::Vector).then(|| Embedding::new(cfg.latent_dim, cfg.ambient_dim));
    Ok((0..n)
        .map(|i| {
            let s = sample_seed(seed, i);
            let payload = match &emb {
                None => Payload::Image(real_image(cfg, s)),
                Some(e) => Payload::Vector(real_vector(cfg, e, s)),
            };
            Sample {
                id: format!("real-{seed}-{i:06}"),
                payload,
                role: Role::Real,
                family: None,
                seed: s,
                chain: None,
            }
        })
        .collect())
}

/// Fake corpus of one family with the default configuration.
pub fn gen_fake(family: Family, seed: u64, n: usize, mode: Mode) -> Result<Vec<Sample>> {
    gen_fake_with(&WorldConfig::default(), family, seed, n, mode)
}

pub fn gen_fake_with(
    cfg: &WorldConfig,
    family: Family,
    seed: u64,
    n: usize,
    mode: Mode,
) -> Result<Vec<Sample>> {
    let reals = gen_real_with(cfg, seed, n, mode)?;
    Ok(reals
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let payload = inject_artifact(cfg, family, &r.payload);
            Sample {
                id: format!("fake-{family}-{seed}-{i:06}"),
                payload,
                role: Role::Fake,
                family: Some(family),
                seed: r.seed,
                chain: None,
            }
        })
        .collect())
}

/// Applies a family's artifact to a payload.
pub fn inject_artifact(cfg: &WorldConfig, family: Family, payload: &Payload) -> Payload {
    match payload {
        Payload::Image(img) => Payload::Image(match family {
            Family::Checker => checker_image(img),
            Family::Notch => notch_image(img, cfg.notch_band),
            Family::Quant => quantize_image(img, cfg.quant_levels),
        }),
        Payload::Vector(v) => Payload::Vector(match family {
            Family::Checker => checker_vector(v),
            Family::Notch => notch_vector(v),
            Family::Quant => quantize_vector(v, cfg.quant_levels),
        }),
    }
}

fn checker_image(img: &Image) -> Image {
    let (w, h) = (img.width(), img.height());
    img.map_planes(w, h, |p, w, h| {
        let mut out = vec![0.0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] = p[(y & !1) * w + (x & !1)];
            }
        }
        out
    })
}

fn notch_image(img: &Image, band: (f64, f64)) -> Image {
    let (w, h) = (img.width(), img.height());
    img.map_planes(w, h, |p, w, h| {
        let mut spec = dft2(p, h, w);
        for u in 0..h {
            for v in 0..w {
                let fu = crate::numerics::dft::signed_freq(u, h) * h as f64;
                let fv = crate::numerics::dft::signed_freq(v, w) * w as f64;
                let r = libm::sqrt(fu * fu + fv * fv);
                if r >= band.0 && r <= band.1 {
                    spec[u * w + v] = Complex::default();
                }
            }
        }
        idft2_real(&spec, h, w).into_iter().map(|x| x.clamp(0.0, 1.0)).collect()
    })
}

fn quantize_image(img: &Image, levels: usize) -> Image {
    let q = (levels.max(2) - 1) as f32;
    let (w, h) = (img.width(), img.height());
    img.map_planes(w, h, |p, _, _| p.iter().map(|&x| libm::roundf(x * q) / q).collect())
}

fn checker_vector(v: &[f32]) -> Vec<f32> {
    (0..v.len()).map(|i| v[i & !1]).collect()
}

fn notch_vector(v: &[f32]) -> Vec<f32> {
    let n = v.len();
    let mut spec = dft2(v, 1, n);
    let (lo, hi) = (n / 8, n / 4);
    for (k, c) in spec.iter_mut().enumerate() {
        let f = k.min(n - k);
        if f >= lo && f <= hi {
            *c = Complex::default();
        }
    }
    idft2_real(&spec, 1, n)
}

fn quantize_vector(v: &[f32], levels: usize) -> Vec<f32> {
    let q = (levels.max(2) - 1) as f32;
    v.iter()
        .map(|&x| {
            let t = libm::roundf((x.clamp(-1.0, 1.0) + 1.0) * 0.5 * q);
            t / q * 2.0 - 1.0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::high_frequency_ratio;

    #[test]
    fn same_seed_is_identical() {
        assert_eq!(gen_real(3, 4, Mode::Image).unwrap(), gen_real(3, 4, Mode::Image).unwrap());
        assert_eq!(gen_real(3, 4, Mode::Vector).unwrap(), gen_real(3, 4, Mode::Vector).unwrap());
    }

    #[test]
    fn different_seeds_differ() {
        let a = gen_real(1, 2, Mode::Image).unwrap();
        let b = gen_real(2, 2, Mode::Image).unwrap();
        assert!(a.iter().zip(&b).any(|(x, y)| x.payload != y.payload));
    }

    #[test]
    fn zero_samples_is_an_error() {
        assert!(gen_real(1, 0, Mode::Image).is_err());
    }

    #[test]
    fn image_pixels_in_unit_range() {
        for s in gen_real(5, 8, Mode::Image).unwrap() {
            let img = s.payload.as_image().unwrap();
            assert_eq!((img.width(), img.height()), (32, 32));
            assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn fakes_carry_role_and_family() {
        for fam in Family::ALL {
            let fakes = gen_fake(fam, 9, 5, Mode::Image).unwrap();
            assert_eq!(fakes, gen_fake(fam, 9, 5, Mode::Image).unwrap());
            for f in &fakes {
                assert_eq!(f.role, Role::Fake);
                assert_eq!(f.family, Some(fam));
                assert!(f.payload.values().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn unknown_family_lists_valid_ones() {
        let err = "blur".parse::<Family>().unwrap_err();
        let msg = alloc::string::ToString::to_string(&err);
        assert!(msg.contains("checker") && msg.contains("notch") && msg.contains("quant"));
    }

    #[test]
    fn checker_raises_high_frequency_share() {
        for seed in [1u64, 2, 3] {
            let reals = gen_real(seed, 16, Mode::Image).unwrap();
            let fakes = gen_fake(Family::Checker, seed, 16, Mode::Image).unwrap();
            let mean = |s: &[Sample]| {
                s.iter()
                    .map(|x| high_frequency_ratio(x.payload.values(), 32, 32))
                    .sum::<f64>()
                    / s.len() as f64
            };
            assert!(mean(&fakes) > mean(&reals), "seed {seed}");
        }
    }

    #[test]
    fn quant_has_sixteen_levels() {
        let f = gen_fake(Family::Quant, 4, 3, Mode::Image).unwrap();
        for s in &f {
            for &v in s.payload.values() {
                let k = v * 15.0;
                assert!((k - libm::roundf(k)).abs() < 1e-4);
            }
        }
    }
}
