//! Evaluation-time degradation chains `x⁽ᵏ⁾ = T_k ∘ … ∘ T_1(x)`: the operator
//! library, seeded random chain construction and the text manifest that
//! replays a chain bit-exactly.
//!
//! Manifest grammar (empty chain is the empty string):
//!
//! ```text
//! chain := "" | op ("|" op)*
//! op    := kind "(" (key "=" number ",")* "seed=" uint ")"
//! ```
//!
//! e.g. `jpeg(q=50,seed=17)|blur(sigma=1,seed=3)`.

pub mod jpeg;
mod manifest;
pub mod ops;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::numerics::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Jpeg,
    Resize,
    Blur,
    Noise,
    Color,
    CropAspect,
    Sticker,
    Screenshot,
}

/// Accepted range of one operator parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSpec {
    pub key: &'static str,
    pub min: f64,
    pub max: f64,
    pub min_exclusive: bool,
    pub integer: bool,
}

const fn p(key: &'static str, min: f64, max: f64) -> ParamSpec {
    ParamSpec {
        key,
        min,
        max,
        min_exclusive: false,
        integer: false,
    }
}

const fn int(key: &'static str, min: f64, max: f64) -> ParamSpec {
    ParamSpec {
        key,
        min,
        max,
        min_exclusive: false,
        integer: true,
    }
}

const JPEG_PARAMS: [ParamSpec; 1] = [int("q", 10.0, 100.0)];
const RESIZE_PARAMS: [ParamSpec; 1] = [p("scale", 0.25, 2.0)];
const BLUR_PARAMS: [ParamSpec; 1] = [p("sigma", 0.3, 3.0)];
/// Noise std in 8-bit units (`sigma / 255` in pixel units).
const NOISE_PARAMS: [ParamSpec; 1] = [p("sigma", 0.0, 16.0)];
const COLOR_PARAMS: [ParamSpec; 2] = [p("gain", 0.5, 1.5), p("contrast", 0.5, 1.5)];
const CROP_PARAMS: [ParamSpec; 2] = [p("keep", 0.5, 1.0), int("axis", 0.0, 1.0)];
const STICKER_PARAMS: [ParamSpec; 2] = [
    ParamSpec {
        key: "area",
        min: 0.0,
        max: 0.1,
        min_exclusive: true,
        integer: false,
    },
    p("value", 0.0, 1.0),
];
const SCREENSHOT_PARAMS: [ParamSpec; 3] = [p("scale", 0.8, 1.2), int("q", 70.0, 90.0), int("border", 0.0, 1.0)];

impl OpKind {
    pub const ALL: [OpKind; 8] = [
        OpKind::Jpeg,
        OpKind::Resize,
        OpKind::Blur,
        OpKind::Noise,
        OpKind::Color,
        OpKind::CropAspect,
        OpKind::Sticker,
        OpKind::Screenshot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Jpeg => "jpeg",
            OpKind::Resize => "resize",
            OpKind::Blur => "blur",
            OpKind::Noise => "noise",
            OpKind::Color => "color",
            OpKind::CropAspect => "crop_aspect",
            OpKind::Sticker => "sticker",
            OpKind::Screenshot => "screenshot",
        }
    }

    /// Parameters in canonical (serialization) order.
    pub fn params(self) -> &'static [ParamSpec] {
        match self {
            OpKind::Jpeg => &JPEG_PARAMS,
            OpKind::Resize => &RESIZE_PARAMS,
            OpKind::Blur => &BLUR_PARAMS,
            OpKind::Noise => &NOISE_PARAMS,
            OpKind::Color => &COLOR_PARAMS,
            OpKind::CropAspect => &CROP_PARAMS,
            OpKind::Sticker => &STICKER_PARAMS,
            OpKind::Screenshot => &SCREENSHOT_PARAMS,
        }
    }

    /// True when the operator can change the image dimensions.
    pub fn changes_size(self) -> bool {
        matches!(self, OpKind::Resize | OpKind::CropAspect | OpKind::Screenshot)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OpKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown op kind `{s}`")))
    }
}

/// One parameterized operator `T_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOp {
    pub kind: OpKind,
    /// Values aligned with [`OpKind::params`].
    values: Vec<f64>,
    pub seed: u64,
}

impl ChainOp {
    /// Builds an op from `(key, value)` pairs; every key of the kind must be
    /// given exactly once.
    pub fn new(kind: OpKind, params: &[(&str, f64)], seed: u64) -> Result<Self> {
        let specs = kind.params();
        let mut values = Vec::with_capacity(specs.len());
        for spec in specs {
            let mut found = params.iter().filter(|(k, _)| *k == spec.key);
            let v = found
                .next()
                .ok_or_else(|| Error::InvalidArgument(format!("{kind}: missing parameter `{}`", spec.key)))?;
            if found.next().is_some() {
                return Err(Error::InvalidArgument(format!("{kind}: duplicate parameter `{}`", spec.key)));
            }
            values.push(v.1);
        }
        if let Some((k, _)) = params.iter().find(|(k, _)| !specs.iter().any(|s| s.key == *k)) {
            return Err(Error::InvalidArgument(format!("{kind}: unknown parameter `{k}`")));
        }
        Ok(Self { kind, values, seed })
    }

    pub fn param(&self, key: &str) -> Option<f64> {
        self.kind
            .params()
            .iter()
            .position(|s| s.key == key)
            .map(|i| self.values[i])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn get(&self, key: &str) -> f64 {
        self.param(key).expect("parameter present by construction")
    }

    /// Checks every parameter against its documented range.
    pub fn validate(&self) -> core::result::Result<(), String> {
        for (spec, &v) in self.kind.params().iter().zip(&self.values) {
            let low_ok = if spec.min_exclusive { v > spec.min } else { v >= spec.min };
            if !v.is_finite() || !low_ok || v > spec.max {
                let open = if spec.min_exclusive { "(" } else { "[" };
                return Err(format!("{} = {v} outside {open}{}, {}]", spec.key, spec.min, spec.max));
            }
            if spec.integer && libm::floor(v) != v {
                return Err(format!("{} = {v} must be an integer", spec.key));
            }
        }
        Ok(())
    }

    fn rng(&self) -> SeededRng {
        SeededRng::new(self.seed, 0xC4A1_0000 + self.kind as u64)
    }

    fn apply_unchecked(&self, img: &Image) -> Image {
        match self.kind {
            OpKind::Jpeg => ops::jpeg(img, self.get("q") as u32),
            OpKind::Resize => ops::resize(img, self.get("scale")),
            OpKind::Blur => ops::blur(img, self.get("sigma")),
            OpKind::Noise => ops::noise(img, self.get("sigma") / 255.0, &mut self.rng()),
            OpKind::Color => ops::color(img, self.get("gain"), self.get("contrast")),
            OpKind::CropAspect => ops::crop_aspect(img, self.get("keep"), self.get("axis") as u32, &mut self.rng()),
            OpKind::Sticker => ops::sticker(img, self.get("area"), self.get("value") as f32, &mut self.rng()),
            OpKind::Screenshot => ops::screenshot(
                img,
                self.get("scale"),
                self.get("q") as u32,
                self.get("border") != 0.0,
            ),
        }
    }
}

/// Validates `op` and applies it.
pub fn op_apply(op: &ChainOp, image: &Image) -> Result<Image> {
    apply_indexed(op, 0, image)
}

fn apply_indexed(op: &ChainOp, index: usize, image: &Image) -> Result<Image> {
    op.validate().map_err(|message| Error::ChainOp {
        index,
        kind: op.kind.as_str(),
        message,
    })?;
    Ok(op.apply_unchecked(image))
}

/// Ordered operator list; `ops[0]` is applied first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DegradationChain {
    pub ops: Vec<ChainOp>,
}

impl DegradationChain {
    pub fn new(ops: Vec<ChainOp>) -> Self {
        Self { ops }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// The first `k` operators.
    pub fn prefix(&self, k: usize) -> DegradationChain {
        DegradationChain {
            ops: self.ops[..k.min(self.ops.len())].to_vec(),
        }
    }

    pub fn to_manifest(&self) -> String {
        manifest::format_chain(self)
    }

    pub fn from_manifest(s: &str) -> Result<Self> {
        manifest::parse_chain(s)
    }
}

impl fmt::Display for DegradationChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_manifest())
    }
}

impl FromStr for DegradationChain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::from_manifest(s)
    }
}

/// Applies the operators strictly in order. Errors name the failing index.
pub fn apply_chain(chain: &DegradationChain, image: &Image) -> Result<Image> {
    let mut cur = image.clone();
    for (i, op) in chain.ops.iter().enumerate() {
        cur = apply_indexed(op, i, &cur)?;
    }
    Ok(cur)
}

/// Which operator pool random chains draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Platform round trips: re-encoding and rescaling.
    Propagation,
    /// User edits: filters, stickers, crops, screenshots.
    Postprocess,
    /// Every operator kind.
    Mixed,
}

impl FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "propagation" => Ok(Profile::Propagation),
            "postprocess" => Ok(Profile::Postprocess),
            "mixed" => Ok(Profile::Mixed),
            other => Err(Error::InvalidArgument(format!(
                "unknown profile `{other}` (valid profiles: propagation, postprocess, mixed)"
            ))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Propagation => "propagation",
            Profile::Postprocess => "postprocess",
            Profile::Mixed => "mixed",
        })
    }
}

/// Parameter ranges used when drawing random chains.
///
/// Propagation routes: PC to PC re-encodes at `pc_quality`; any route with a
/// mobile end either downscales by `mobile_scale` or re-encodes at
/// `mobile_quality`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPresets {
    pub pc_quality: (u32, u32),
    pub mobile_quality: (u32, u32),
    pub mobile_scale: (f64, f64),
    pub blur_sigma: (f64, f64),
    /// 8-bit units.
    pub noise_sigma: (f64, f64),
    pub color_gain: (f64, f64),
    pub color_contrast: (f64, f64),
    pub crop_keep: (f64, f64),
    pub sticker_area: (f64, f64),
    pub screenshot_scale: (f64, f64),
    pub screenshot_quality: (u32, u32),
    /// Chains never shrink either side below this fraction of the input.
    pub min_relative_size: f64,
}

impl Default for ChainPresets {
    fn default() -> Self {
        Self {
            pc_quality: (70, 85),
            mobile_quality: (50, 75),
            mobile_scale: (0.6, 0.8),
            blur_sigma: (0.5, 1.5),
            noise_sigma: (1.0, 8.0),
            color_gain: (0.8, 1.2),
            color_contrast: (0.8, 1.2),
            crop_keep: (0.7, 1.0),
            sticker_area: (0.02, 0.08),
            screenshot_scale: (0.8, 1.2),
            screenshot_quality: (70, 90),
            min_relative_size: 0.5,
        }
    }
}

fn round3(x: f64) -> f64 {
    libm::round(x * 1000.0) / 1000.0
}

struct ChainBuilder<'a> {
    presets: &'a ChainPresets,
    // Relative width and height of the image after the ops drawn so far.
    size: (f64, f64),
}

impl ChainBuilder<'_> {
    fn quality(rng: &mut SeededRng, range: (u32, u32)) -> f64 {
        rng.range_inclusive(range.0 as usize, range.1 as usize) as f64
    }

    fn rescale(&mut self, s: f64, up: f64) -> f64 {
        let smallest = self.size.0.min(self.size.1);
        let s = if smallest * s < self.presets.min_relative_size { up } else { s };
        self.size = (self.size.0 * s, self.size.1 * s);
        s
    }

    fn draw(&mut self, kind: OpKind, rng: &mut SeededRng) -> ChainOp {
        let pr = self.presets;
        let seed = rng.next_u64();
        let op = match kind {
            OpKind::Jpeg => {
                let pc_to_pc = rng.below(4) == 0;
                let q = Self::quality(rng, if pc_to_pc { pr.pc_quality } else { pr.mobile_quality });
                ChainOp::new(kind, &[("q", q)], seed)
            }
            OpKind::Resize => {
                let s = round3(rng.uniform(pr.mobile_scale.0, pr.mobile_scale.1));
                let s = self.rescale(s, round3(1.0 / s));
                ChainOp::new(kind, &[("scale", s)], seed)
            }
            OpKind::Blur => ChainOp::new(kind, &[("sigma", round3(rng.uniform(pr.blur_sigma.0, pr.blur_sigma.1)))], seed),
            OpKind::Noise => ChainOp::new(kind, &[("sigma", round3(rng.uniform(pr.noise_sigma.0, pr.noise_sigma.1)))], seed),
            OpKind::Color => {
                let g = round3(rng.uniform(pr.color_gain.0, pr.color_gain.1));
                let c = round3(rng.uniform(pr.color_contrast.0, pr.color_contrast.1));
                ChainOp::new(kind, &[("gain", g), ("contrast", c)], seed)
            }
            OpKind::CropAspect => {
                let axis = rng.below(2) as usize;
                let mut keep = round3(rng.uniform(pr.crop_keep.0, pr.crop_keep.1));
                let side = if axis == 0 { &mut self.size.0 } else { &mut self.size.1 };
                if *side * keep < pr.min_relative_size {
                    keep = 1.0;
                }
                *side *= keep;
                ChainOp::new(kind, &[("keep", keep), ("axis", axis as f64)], seed)
            }
            OpKind::Sticker => {
                let a = round3(rng.uniform(pr.sticker_area.0, pr.sticker_area.1));
                let v = round3(rng.next_f64());
                ChainOp::new(kind, &[("area", a), ("value", v)], seed)
            }
            OpKind::Screenshot => {
                let s = round3(rng.uniform(pr.screenshot_scale.0, pr.screenshot_scale.1));
                let s = self.rescale(s, pr.screenshot_scale.1);
                let q = Self::quality(rng, pr.screenshot_quality);
                let border = rng.below(2) as f64;
                ChainOp::new(kind, &[("scale", s), ("q", q), ("border", border)], seed)
            }
        };
        op.expect("drawn parameters use the kind's keys")
    }
}

/// Maximum chain length accepted by [`build_chain`].
pub const MAX_CHAIN_LEN: usize = 8;

/// Random chain with the default presets.
pub fn build_chain(rng: &mut SeededRng, profile: Profile, k_range: (usize, usize)) -> Result<DegradationChain> {
    build_chain_with(rng, profile, k_range, &ChainPresets::default())
}

/// Draws `k` uniformly from `k_range` (inclusive), then `k` operators from
/// the profile's pool. Per-op seeds come from `rng`.
pub fn build_chain_with(
    rng: &mut SeededRng,
    profile: Profile,
    k_range: (usize, usize),
    presets: &ChainPresets,
) -> Result<DegradationChain> {
    let (lo, hi) = k_range;
    if lo > hi || hi > MAX_CHAIN_LEN {
        return Err(Error::InvalidArgument(format!(
            "k range [{lo}, {hi}] must satisfy 0 <= lo <= hi <= {MAX_CHAIN_LEN}"
        )));
    }
    let k = rng.range_inclusive(lo, hi);
    let mut b = ChainBuilder {
        presets,
        size: (1.0, 1.0),
    };
    let ops = (0..k)
        .map(|_| {
            let kind = match profile {
                Profile::Propagation => {
                    // Mobile routes (3 of 4) may rescale instead of re-encoding.
                    if rng.below(4) != 0 && rng.below(2) == 0 {
                        OpKind::Resize
                    } else {
                        OpKind::Jpeg
                    }
                }
                Profile::Postprocess => {
                    [OpKind::Color, OpKind::Sticker, OpKind::CropAspect, OpKind::Screenshot][rng.below(4) as usize]
                }
                Profile::Mixed => OpKind::ALL[rng.below(OpKind::ALL.len() as u64) as usize],
            };
            b.draw(kind, rng)
        })
        .collect();
    Ok(DegradationChain { ops })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::psnr;
    use crate::worldgen::{gen_real, Mode};

    fn test_image(seed: u64) -> Image {
        gen_real(seed, 1, Mode::Image).unwrap()[0].payload.as_image().unwrap().clone()
    }

    #[test]
    fn empty_range_gives_empty_chain() {
        let c = build_chain(&mut SeededRng::new(1, 0), Profile::Mixed, (0, 0)).unwrap();
        assert!(c.is_empty());
        assert_eq!(c.to_manifest(), "");
    }

    #[test]
    fn invalid_k_range_rejected() {
        assert!(build_chain(&mut SeededRng::new(1, 0), Profile::Mixed, (3, 2)).is_err());
        assert!(build_chain(&mut SeededRng::new(1, 0), Profile::Mixed, (0, 9)).is_err());
        assert!("social".parse::<Profile>().is_err());
    }

    #[test]
    fn same_seed_same_manifest() {
        let a = build_chain(&mut SeededRng::new(7, 0), Profile::Mixed, (2, 6)).unwrap();
        let b = build_chain(&mut SeededRng::new(7, 0), Profile::Mixed, (2, 6)).unwrap();
        assert_eq!(a.to_manifest(), b.to_manifest());
    }

    #[test]
    fn mixed_profile_covers_every_kind() {
        let mut rng = SeededRng::new(3, 0);
        let mut seen = [0usize; 8];
        for _ in 0..1000 {
            for op in build_chain(&mut rng, Profile::Mixed, (1, 4)).unwrap().ops {
                seen[op.kind as usize] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c > 0), "{seen:?}");
    }

    #[test]
    fn profiles_draw_from_their_pools() {
        let mut rng = SeededRng::new(4, 0);
        for _ in 0..200 {
            for op in build_chain(&mut rng, Profile::Propagation, (1, 8)).unwrap().ops {
                assert!(matches!(op.kind, OpKind::Jpeg | OpKind::Resize));
                assert!(op.validate().is_ok());
            }
            for op in build_chain(&mut rng, Profile::Postprocess, (1, 8)).unwrap().ops {
                assert!(matches!(
                    op.kind,
                    OpKind::Color | OpKind::Sticker | OpKind::CropAspect | OpKind::Screenshot
                ));
                assert!(op.validate().is_ok());
            }
        }
    }

    #[test]
    fn empty_chain_is_identity() {
        let img = test_image(1);
        assert_eq!(apply_chain(&DegradationChain::default(), &img).unwrap(), img);
    }

    #[test]
    fn singleton_chain_equals_direct_op() {
        let img = test_image(2);
        let op = ChainOp::new(OpKind::Blur, &[("sigma", 1.0)], 5).unwrap();
        let chain = DegradationChain::new(alloc::vec![op.clone()]);
        assert_eq!(apply_chain(&chain, &img).unwrap(), op_apply(&op, &img).unwrap());
    }

    #[test]
    fn jpeg_and_blur_do_not_commute() {
        let img = test_image(3);
        let j = ChainOp::new(OpKind::Jpeg, &[("q", 50.0)], 1).unwrap();
        let b = ChainOp::new(OpKind::Blur, &[("sigma", 1.0)], 2).unwrap();
        let jb = apply_chain(&DegradationChain::new(alloc::vec![j.clone(), b.clone()]), &img).unwrap();
        let bj = apply_chain(&DegradationChain::new(alloc::vec![b, j]), &img).unwrap();
        assert_ne!(jb, bj);
    }

    #[test]
    fn higher_jpeg_quality_has_higher_psnr() {
        for seed in 0..5 {
            let img = test_image(seed);
            let hi = op_apply(&ChainOp::new(OpKind::Jpeg, &[("q", 90.0)], 0).unwrap(), &img).unwrap();
            let lo = op_apply(&ChainOp::new(OpKind::Jpeg, &[("q", 30.0)], 0).unwrap(), &img).unwrap();
            assert!(psnr(&img, &hi).unwrap() >= psnr(&img, &lo).unwrap());
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let img = test_image(4);
        let op = ChainOp::new(OpKind::Noise, &[("sigma", 0.0)], 9).unwrap();
        assert_eq!(op_apply(&op, &img).unwrap(), img);
    }

    #[test]
    fn sticker_changes_only_its_rectangle() {
        let img = test_image(5);
        let op = ChainOp::new(OpKind::Sticker, &[("area", 0.08), ("value", 0.99)], 11).unwrap();
        let out = op_apply(&op, &img).unwrap();
        let (x0, y0, rw, rh) = ops::sticker_rect(32, 32, 0.08, &mut op.rng());
        for y in 0..32 {
            for x in 0..32 {
                let inside = x >= x0 && x < x0 + rw && y >= y0 && y < y0 + rh;
                if inside {
                    assert_eq!(out.get(0, y, x), 0.99);
                } else {
                    assert_eq!(out.get(0, y, x).to_bits(), img.get(0, y, x).to_bits());
                }
            }
        }
    }

    #[test]
    fn out_of_range_params_name_the_op() {
        let img = test_image(6);
        let bad = ChainOp::new(OpKind::Jpeg, &[("q", 5.0)], 0).unwrap();
        let ok = ChainOp::new(OpKind::Blur, &[("sigma", 1.0)], 0).unwrap();
        let err = apply_chain(&DegradationChain::new(alloc::vec![ok, bad]), &img).unwrap_err();
        assert!(matches!(err, Error::ChainOp { index: 1, kind: "jpeg", .. }));
        assert!(ChainOp::new(OpKind::Sticker, &[("area", 0.2), ("value", 0.5)], 0)
            .unwrap()
            .validate()
            .is_err());
        assert!(ChainOp::new(OpKind::Jpeg, &[("q", 50.5)], 0).unwrap().validate().is_err());
    }

    #[test]
    fn ops_keep_unit_range_and_channels() {
        let mut rng = SeededRng::new(8, 0);
        let img = test_image(7);
        for _ in 0..30 {
            let chain = build_chain(&mut rng, Profile::Mixed, (1, 8)).unwrap();
            let out = apply_chain(&chain, &img).unwrap();
            assert_eq!(out.channels(), 1);
            assert!(out.width() >= 16 && out.height() >= 16);
            assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
