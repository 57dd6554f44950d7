//! Real-centric envelope modeling for synthetic image detection.
//!
//! The detector is trained only on real samples and on *near-real* negatives
//! produced by decoding masked, noise-perturbed autoencoder latents. A learner
//! encoder plus a linear discriminator draw an envelope around the real
//! distribution; a tangency penalty keeps real-to-near-real feature
//! displacements along the principal directions of the real features, and a
//! frozen anchor encoder ties clean and degraded views together.
//!
//! This crate is `no_std` (it needs `alloc`). All floating point math goes
//! through `libm` so results are bit-identical across platforms. File
//! formats, the command line and experiment orchestration live in the `rem`
//! crate.
//!
//! Module map:
//!
//! - [`numerics`]: dense matrices, PCA tangent bases, 2-D DFT, seeded RNG.
//! - [`image`]: planar float images, resampling and PSNR.
//! - [`worldgen`]: procedural real corpora and artifact-injecting fake families.
//! - [`mbr`]: autoencoder training and near-real generation.
//! - [`envelope`]: learner encoders, losses, analytic gradients and training.
//! - [`cdc`]: frozen anchor encoder, training-time degradation, consistency losses.
//! - [`chainsim`]: evaluation degradation operators, random chains, manifests.
//! - [`evalkit`]: accuracy metrics, AP, discrepancy diagnostics, attribution.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod cdc;
pub mod chainsim;
pub mod envelope;
pub mod error;
pub mod evalkit;
pub mod image;
pub mod mbr;
pub mod nn;
pub mod numerics;
pub mod worldgen;

pub use error::{Error, Result};
pub use image::Image;
pub use numerics::{Matrix, SeededRng, TangentBasis};
pub use worldgen::{Family, Mode, Payload, Role, Sample};
