//! Deterministic dense linear algebra, PCA tangent bases, 2-D DFT magnitude
//! and the seeded random number generator shared by every other module.
//!
//! Storage is `f32`; every reduction accumulates in `f64`.

pub(crate) mod dft;
mod matrix;
mod pca;
mod rng;

pub use dft::{dft2, dft2_magnitude, high_frequency_ratio, idft2_real, Complex};
pub use matrix::Matrix;
pub use pca::{pca_top_p, pca_variance_target, symmetric_eigen, TangentBasis};
pub use rng::{mix_seed, seed_from_str, SeededRng};

/// Squared Euclidean norm accumulated in `f64`.
pub fn norm_sq(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum()
}

/// Dot product accumulated in `f64`.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub(crate) fn all_finite(v: &[f32]) -> bool {
    v.iter().all(|x| x.is_finite())
}
