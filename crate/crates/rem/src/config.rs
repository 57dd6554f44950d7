//! Experiment configuration: sectioned `key = value` text.
//!
//! Every key is listed in [`KEYS`] with its documentation. Parsing rejects
//! unknown sections, unknown keys and duplicates; serialization writes every
//! key with its doc line, so `parse(serialize(c)) == c`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rem_core::cdc::{AnchorEncoder, DegradePolicy};
use rem_core::chainsim::{ChainPresets, Profile};
use rem_core::envelope::{EnvelopeConfig, LearnerSpec, LossWeights};
use rem_core::evalkit::{FreqMode, HeadConfig};
use rem_core::mbr::{Autoencoder, AutoencoderConfig, PerturbSpec};
use rem_core::worldgen::{Mode, Sample, WorldConfig};

use crate::error::{RemError, Result};

/// Learner architecture; `auto` picks texture for images, dense for vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnerKind {
    Auto,
    Dense,
    Texture,
}

impl FromStr for LearnerKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "auto" => Ok(Self::Auto),
            "dense" => Ok(Self::Dense),
            "texture" => Ok(Self::Texture),
            _ => Err(format!("unknown learner `{s}` (valid: auto, dense, texture)")),
        }
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Auto => "auto",
            Self::Dense => "dense",
            Self::Texture => "texture",
        })
    }
}

/// Where the frozen anchor encoder comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorKind {
    MbrEncoder,
    FixedSeed,
}

impl FromStr for AnchorKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mbr-encoder" => Ok(Self::MbrEncoder),
            "fixed-seed" => Ok(Self::FixedSeed),
            _ => Err(format!("unknown anchor `{s}` (valid: mbr-encoder, fixed-seed)")),
        }
    }
}

impl fmt::Display for AnchorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MbrEncoder => "mbr-encoder",
            Self::FixedSeed => "fixed-seed",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldSection {
    pub mode: Mode,
    pub n_train: usize,
    pub world: WorldConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MbrSection {
    /// `None` uses 16 for images and 8 for vectors.
    pub latent_dim: Option<usize>,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub mask_ratio: f64,
    pub epsilon: f64,
    pub resample_per_epoch: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EeSection {
    pub learner: LearnerKind,
    pub hidden: usize,
    pub feature_dim: usize,
    pub filters: usize,
    pub kernel: usize,
    pub input_scale: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub variance_target: f64,
    pub refresh_basis: bool,
    pub aug: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdcSection {
    pub anchor: AnchorKind,
    /// Hidden width and output dim of a fixed-seed anchor.
    pub anchor_hidden: usize,
    pub anchor_dim: usize,
    pub policy: DegradePolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSection {
    pub profile: Profile,
    pub k_range: (usize, usize),
    pub presets: ChainPresets,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub threshold: f64,
    pub freq_mode: FreqMode,
    /// Test samples per class.
    pub n_test: usize,
    /// Seeds averaged by multi-seed experiments.
    pub seeds: usize,
    pub head: HeadConfig,
}

/// Full experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: String,
    pub worldgen: WorldSection,
    pub mbr: MbrSection,
    pub ee: EeSection,
    pub cdc: CdcSection,
    pub chainsim: ChainSection,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let ae = AutoencoderConfig::default();
        let ee = EnvelopeConfig::default();
        Self {
            seed: 1,
            out_dir: "runs/default".into(),
            worldgen: WorldSection {
                mode: Mode::Image,
                n_train: 512,
                world: WorldConfig::default(),
            },
            mbr: MbrSection {
                latent_dim: None,
                hidden: ae.hidden,
                epochs: ae.epochs,
                batch_size: ae.batch_size,
                lr: ae.lr,
                mask_ratio: 0.25,
                epsilon: 0.1,
                resample_per_epoch: true,
            },
            ee: EeSection {
                learner: LearnerKind::Auto,
                hidden: 64,
                feature_dim: 16,
                filters: 8,
                kernel: 5,
                input_scale: 20.0,
                epochs: ee.epochs,
                batch_size: ee.batch_size,
                lr: 3e-3,
                weights: LossWeights::default(),
                variance_target: ee.variance_target,
                refresh_basis: true,
                aug: true,
            },
            cdc: CdcSection {
                anchor: AnchorKind::MbrEncoder,
                anchor_hidden: 128,
                anchor_dim: 16,
                policy: DegradePolicy::default(),
            },
            chainsim: ChainSection {
                profile: Profile::Mixed,
                k_range: (2, 4),
                presets: ChainPresets::default(),
            },
            eval: EvalSection {
                threshold: 0.5,
                freq_mode: FreqMode::Paired,
                n_test: 1000,
                seeds: 5,
                head: HeadConfig::default(),
            },
        }
    }
}

/// Text form of one config value.
trait Value: Sized {
    fn show(&self) -> String;
    fn read(s: &str) -> std::result::Result<Self, String>;
}

macro_rules! scalar_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn show(&self) -> String {
                self.to_string()
            }
            fn read(s: &str) -> std::result::Result<Self, String> {
                s.parse::<$t>().map_err(|e| format!("`{s}`: {e}"))
            }
        }
    )*};
}

scalar_value!(usize, u32, u64, f64, bool, String, LearnerKind, AnchorKind);

macro_rules! core_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn show(&self) -> String {
                self.to_string()
            }
            fn read(s: &str) -> std::result::Result<Self, String> {
                s.parse::<$t>().map_err(|e| e.to_string())
            }
        }
    )*};
}

core_value!(Mode, Profile, FreqMode);

impl<T: Value> Value for (T, T) {
    fn show(&self) -> String {
        format!("{},{}", self.0.show(), self.1.show())
    }
    fn read(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s.split_once(',').ok_or_else(|| format!("`{s}`: expected `lo,hi`"))?;
        Ok((T::read(a.trim())?, T::read(b.trim())?))
    }
}

impl Value for Option<usize> {
    fn show(&self) -> String {
        self.map_or_else(|| "auto".into(), |v| v.to_string())
    }
    fn read(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            Ok(None)
        } else {
            usize::read(s).map(Some)
        }
    }
}

/// One documented configuration key.
pub struct Key {
    /// Empty for top-level keys.
    pub section: &'static str,
    pub name: &'static str,
    pub doc: &'static str,
    get: fn(&ExperimentConfig) -> String,
    set: fn(&mut ExperimentConfig, &str) -> std::result::Result<(), String>,
}

macro_rules! key {
    ($section:literal, $name:literal, $doc:literal, $($field:ident).+) => {
        Key {
            section: $section,
            name: $name,
            doc: $doc,
            get: |c| Value::show(&c.$($field).+),
            set: |c, v| {
                c.$($field).+ = Value::read(v)?;
                Ok(())
            },
        }
    };
}

/// Every accepted key, in serialization order.
pub static KEYS: &[Key] = &[
    key!("", "seed", "Master seed; every random stream derives from it.", seed),
    key!("", "out_dir", "Default output directory for runs.", out_dir),
    key!("worldgen", "mode", "Payload kind: image or vector.", worldgen.mode),
    key!("worldgen", "n_train", "Real training samples.", worldgen.n_train),
    key!("worldgen", "image_size", "Image side in pixels.", worldgen.world.image_size),
    key!("worldgen", "channels", "Image channels, 1 or 3.", worldgen.world.channels),
    key!("worldgen", "field_cutoff", "Gaussian low-pass cutoff of the base field, in DFT bins.", worldgen.world.field_cutoff),
    key!("worldgen", "field_std", "Standard deviation of the base field.", worldgen.world.field_std),
    key!("worldgen", "detail_std", "Standard deviation of the 1/f detail texture.", worldgen.world.detail_std),
    key!("worldgen", "sensor_noise", "Per-pixel Gaussian noise std.", worldgen.world.sensor_noise),
    key!("worldgen", "max_shapes", "Upper bound on shapes per image (at least one is drawn).", worldgen.world.max_shapes),
    key!("worldgen", "notch_band", "Inclusive DFT radius band zeroed by the notch family.", worldgen.world.notch_band),
    key!("worldgen", "quant_levels", "Levels used by the quant family.", worldgen.world.quant_levels),
    key!("worldgen", "latent_dim", "Vector mode: manifold dimension m.", worldgen.world.latent_dim),
    key!("worldgen", "ambient_dim", "Vector mode: ambient dimension D.", worldgen.world.ambient_dim),
    key!("worldgen", "vector_noise", "Vector mode: additive noise std.", worldgen.world.vector_noise),
    key!("mbr", "latent_dim", "Autoencoder code size d_z; auto = 16 for images, 8 for vectors.", mbr.latent_dim),
    key!("mbr", "hidden", "Autoencoder hidden width.", mbr.hidden),
    key!("mbr", "epochs", "Autoencoder training epochs.", mbr.epochs),
    key!("mbr", "batch_size", "Autoencoder batch size.", mbr.batch_size),
    key!("mbr", "lr", "Autoencoder Adam learning rate.", mbr.lr),
    key!("mbr", "mask_ratio", "Fraction rho of latent dimensions perturbed (at least one).", mbr.mask_ratio),
    key!("mbr", "epsilon", "Perturbation std in units of per-dimension latent std.", mbr.epsilon),
    key!("mbr", "resample_per_epoch", "Draw fresh near-real samples every epoch.", mbr.resample_per_epoch),
    key!("ee", "learner", "Learner architecture: auto, dense or texture.", ee.learner),
    key!("ee", "hidden", "Dense learner hidden width.", ee.hidden),
    key!("ee", "feature_dim", "Feature dimension D_h.", ee.feature_dim),
    key!("ee", "filters", "Texture learner filter count.", ee.filters),
    key!("ee", "kernel", "Texture learner filter side.", ee.kernel),
    key!("ee", "input_scale", "Texture learner pixel gain before filtering.", ee.input_scale),
    key!("ee", "epochs", "Envelope training epochs.", ee.epochs),
    key!("ee", "batch_size", "Pairs per batch.", ee.batch_size),
    key!("ee", "lr", "Adam learning rate.", ee.lr),
    key!("ee", "lambda_tan", "Weight of the tangency penalty.", ee.weights.tan),
    key!("ee", "lambda_anc", "Weight of the anchor consistency term.", ee.weights.anc),
    key!("ee", "lambda_res", "Weight of the residual consistency term.", ee.weights.res),
    key!("ee", "variance_target", "Explained variance selecting the tangent dimension p.", ee.variance_target),
    key!("ee", "refresh_basis", "Refit the tangent basis every epoch; otherwise once after the first.", ee.refresh_basis),
    key!("ee", "aug", "Degraded twins also enter the classification loss.", ee.aug),
    key!("cdc", "anchor", "Anchor encoder source: mbr-encoder or fixed-seed.", cdc.anchor),
    key!("cdc", "anchor_hidden", "Fixed-seed anchor hidden width.", cdc.anchor_hidden),
    key!("cdc", "anchor_dim", "Fixed-seed anchor output dimension D_a.", cdc.anchor_dim),
    key!("cdc", "jpeg_quality", "Training degradation: JPEG quality range.", cdc.policy.jpeg_quality),
    key!("cdc", "resize_scale", "Training degradation: down-scale range (resampled back).", cdc.policy.resize_scale),
    key!("cdc", "blur_sigma", "Training degradation: Gaussian blur sigma range in pixels.", cdc.policy.blur_sigma),
    key!("cdc", "noise_sigma", "Training degradation: noise sigma range in 8-bit units.", cdc.policy.noise_sigma),
    key!("cdc", "color_gain", "Training degradation: color gain range.", cdc.policy.color_gain),
    key!("cdc", "k_train", "Training degradation: ops per draw.", cdc.policy.k_train),
    key!("cdc", "vector_noise", "Vector mode degradation: additive noise std.", cdc.policy.vector_noise),
    key!("cdc", "vector_dropout", "Vector mode degradation: coordinate dropout rate.", cdc.policy.vector_dropout),
    key!("cdc", "seed", "Training degradation seed (mixed with the master seed).", cdc.policy.seed),
    key!("chainsim", "profile", "Evaluation chain profile: propagation, postprocess or mixed.", chainsim.profile),
    key!("chainsim", "k_range", "Evaluation chain length range.", chainsim.k_range),
    key!("chainsim", "pc_quality", "PC-to-PC re-encode quality range.", chainsim.presets.pc_quality),
    key!("chainsim", "mobile_quality", "Mobile re-encode quality range.", chainsim.presets.mobile_quality),
    key!("chainsim", "mobile_scale", "Mobile rescale range.", chainsim.presets.mobile_scale),
    key!("chainsim", "blur_sigma", "Blur sigma range.", chainsim.presets.blur_sigma),
    key!("chainsim", "noise_sigma", "Noise sigma range in 8-bit units.", chainsim.presets.noise_sigma),
    key!("chainsim", "color_gain", "Color gain range.", chainsim.presets.color_gain),
    key!("chainsim", "color_contrast", "Color contrast range.", chainsim.presets.color_contrast),
    key!("chainsim", "crop_keep", "Aspect crop kept fraction range.", chainsim.presets.crop_keep),
    key!("chainsim", "sticker_area", "Sticker area fraction range.", chainsim.presets.sticker_area),
    key!("chainsim", "screenshot_scale", "Screenshot rescale range.", chainsim.presets.screenshot_scale),
    key!("chainsim", "screenshot_quality", "Screenshot re-encode quality range.", chainsim.presets.screenshot_quality),
    key!("chainsim", "min_relative_size", "Smallest side fraction a chain may shrink to.", chainsim.presets.min_relative_size),
    key!("eval", "threshold", "Probability-real threshold for accuracies.", eval.threshold),
    key!("eval", "freq_mode", "Spectral discrepancy: paired or mean_spectrum.", eval.freq_mode),
    key!("eval", "n_test", "Test samples per class in experiments.", eval.n_test),
    key!("eval", "seeds", "Seeds averaged by multi-seed experiments.", eval.seeds),
    key!("eval", "head_epochs", "Closed-set attribution head epochs.", eval.head.epochs),
    key!("eval", "head_batch_size", "Closed-set attribution head batch size.", eval.head.batch_size),
    key!("eval", "head_lr", "Closed-set attribution head learning rate.", eval.head.lr),
];

pub const SECTIONS: [&str; 6] = ["worldgen", "mbr", "ee", "cdc", "chainsim", "eval"];

impl ExperimentConfig {
    /// Parses config text. Keys not given keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let ini = ini::Ini::load_from_str_noescape(text).map_err(|e| RemError::Config(e.to_string()))?;
        let mut cfg = Self::default();
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("");
            if !section.is_empty() && !SECTIONS.contains(&section) {
                return Err(RemError::Config(format!(
                    "unknown section [{section}] (valid: {})",
                    SECTIONS.join(", ")
                )));
            }
            let mut seen: Vec<&str> = Vec::new();
            for (name, value) in props.iter() {
                let key = KEYS
                    .iter()
                    .find(|k| k.section == section && k.name == name)
                    .ok_or_else(|| RemError::Config(format!("unknown key `{}`", qualified(section, name))))?;
                if seen.contains(&name) {
                    return Err(RemError::Config(format!("duplicate key `{}`", qualified(section, name))));
                }
                seen.push(name);
                (key.set)(&mut cfg, value.trim())
                    .map_err(|e| RemError::Config(format!("{}: {e}", qualified(section, name))))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| RemError::io(path, e))?;
        Self::parse(&text)
    }

    /// Every key with its doc comment.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for key in KEYS {
            if key.section != current {
                current = key.section;
                out.push_str(&format!("\n[{current}]\n"));
            }
            out.push_str(&format!("# {}\n{} = {}\n", key.doc, key.name, (key.get)(self)));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.serialize()).map_err(|e| RemError::io(path, e))
    }

    pub fn get(&self, qualified_key: &str) -> Option<String> {
        find_key(qualified_key).map(|k| (k.get)(self))
    }

    /// Sets `section.key` (or a top-level key) from text.
    pub fn set(&mut self, qualified_key: &str, value: &str) -> Result<()> {
        let key = find_key(qualified_key).ok_or_else(|| RemError::Config(format!("unknown key `{qualified_key}`")))?;
        (key.set)(self, value).map_err(|e| RemError::Config(format!("{qualified_key}: {e}")))?;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.worldgen;
        if w.n_train < rem_core::mbr::MIN_TRAINING_SAMPLES {
            return Err(RemError::Config(format!(
                "worldgen.n_train must be at least {}",
                rem_core::mbr::MIN_TRAINING_SAMPLES
            )));
        }
        if w.world.image_size < 8 || !matches!(w.world.channels, 1 | 3) {
            return Err(RemError::Config("worldgen.image_size must be >= 8 and channels 1 or 3".into()));
        }
        if w.world.quant_levels < 2 || w.world.latent_dim == 0 || w.world.ambient_dim <= w.world.latent_dim {
            return Err(RemError::Config(
                "worldgen: quant_levels >= 2 and 0 < latent_dim < ambient_dim required".into(),
            ));
        }
        if self.eval.n_test == 0 || self.eval.seeds == 0 {
            return Err(RemError::Config("eval.n_test and eval.seeds must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(RemError::Config("eval.threshold must be in [0, 1]".into()));
        }
        if self.eval.head.epochs == 0 || self.eval.head.batch_size == 0 || !(self.eval.head.lr > 0.0) {
            return Err(RemError::Config("eval head settings must be positive".into()));
        }
        let (lo, hi) = self.chainsim.k_range;
        if lo > hi || hi > rem_core::chainsim::MAX_CHAIN_LEN {
            return Err(RemError::Config(format!(
                "chainsim.k_range must satisfy lo <= hi <= {}",
                rem_core::chainsim::MAX_CHAIN_LEN
            )));
        }
        self.perturb_spec().validate()?;
        let ae = self.autoencoder_config();
        if ae.hidden == 0 || ae.epochs == 0 || ae.batch_size == 0 || !(ae.lr > 0.0) {
            return Err(RemError::Config("mbr hidden, epochs, batch_size and lr must be positive".into()));
        }
        self.envelope_config().validate()?;
        Ok(())
    }

    pub fn autoencoder_config(&self) -> AutoencoderConfig {
        let default_dim = match self.worldgen.mode {
            Mode::Image => 16,
            Mode::Vector => 8,
        };
        AutoencoderConfig {
            latent_dim: self.mbr.latent_dim.unwrap_or(default_dim),
            hidden: self.mbr.hidden,
            epochs: self.mbr.epochs,
            batch_size: self.mbr.batch_size,
            lr: self.mbr.lr,
        }
    }

    /// Perturbation spec; its seed is the master seed.
    pub fn perturb_spec(&self) -> PerturbSpec {
        PerturbSpec {
            mask_ratio: self.mbr.mask_ratio,
            epsilon: self.mbr.epsilon,
            seed: self.seed,
        }
    }

    pub fn learner_spec(&self) -> LearnerSpec {
        let ee = &self.ee;
        let kind = match (ee.learner, self.worldgen.mode) {
            (LearnerKind::Auto, Mode::Image) => LearnerKind::Texture,
            (LearnerKind::Auto, Mode::Vector) => LearnerKind::Dense,
            (k, _) => k,
        };
        match kind {
            LearnerKind::Texture => LearnerSpec::Texture {
                filters: ee.filters,
                kernel: ee.kernel,
                feature_dim: ee.feature_dim,
                input_scale: ee.input_scale,
            },
            _ => LearnerSpec::Dense {
                hidden: ee.hidden,
                feature_dim: ee.feature_dim,
            },
        }
    }

    pub fn envelope_config(&self) -> EnvelopeConfig {
        let ee = &self.ee;
        let mut policy = self.cdc.policy.clone();
        policy.seed = rem_core::numerics::mix_seed(self.seed, policy.seed);
        EnvelopeConfig {
            learner: self.learner_spec(),
            epochs: ee.epochs,
            batch_size: ee.batch_size,
            lr: ee.lr,
            weights: ee.weights,
            variance_target: ee.variance_target,
            refresh_basis: ee.refresh_basis,
            aug: ee.aug,
            policy,
        }
    }

    /// Anchor encoder for a trained autoencoder and its training reals.
    pub fn anchor(&self, ae: &Autoencoder, reals: &[Sample]) -> Result<AnchorEncoder> {
        Ok(match self.cdc.anchor {
            AnchorKind::MbrEncoder => AnchorEncoder::from_autoencoder(ae, reals)?,
            AnchorKind::FixedSeed => {
                AnchorEncoder::fixed_seed(ae.input_dim(), self.cdc.anchor_hidden, self.cdc.anchor_dim)
            }
        })
    }
}

fn qualified(section: &str, name: &str) -> String {
    if section.is_empty() {
        name.to_string()
    } else {
        format!("{section}.{name}")
    }
}

fn find_key(qualified_key: &str) -> Option<&'static Key> {
    let (section, name) = qualified_key.split_once('.').unwrap_or(("", qualified_key));
    KEYS.iter().find(|k| k.section == section && k.name == name)
}
