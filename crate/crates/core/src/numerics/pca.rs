use alloc::vec;
use alloc::vec::Vec;

use super::Matrix;
use crate::error::{Error, Result};

/// Orthonormal basis of the top principal directions of a feature set.
///
/// The projector `P = U Uᵀ` is never materialized; projections are applied
/// as `v - U (Uᵀ v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentBasis {
    dim: usize,
    /// `dim × p`, orthonormal columns.
    u: Matrix,
    explained_variance: f64,
    clamped: bool,
}

impl TangentBasis {
    /// Wraps an explicit basis. Columns must be orthonormal within `1e-5`.
    pub fn from_columns(u: Matrix, explained_variance: f64) -> Result<Self> {
        let p = u.cols();
        if p == 0 || p > u.rows() {
            return Err(Error::InvalidArgument(alloc::format!(
                "basis needs 1 <= p <= dim, got p = {p}, dim = {}",
                u.rows()
            )));
        }
        let gram = u.transpose().matmul(&u)?;
        for i in 0..p {
            for j in 0..p {
                let target = if i == j { 1.0 } else { 0.0 };
                if libm::fabs(gram.get(i, j) as f64 - target) > 1e-5 {
                    return Err(Error::InvalidArgument("basis columns are not orthonormal".into()));
                }
            }
        }
        Ok(Self {
            dim: u.rows(),
            u,
            explained_variance: explained_variance.clamp(0.0, 1.0),
            clamped: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn p(&self) -> usize {
        self.u.cols()
    }

    pub fn columns(&self) -> &Matrix {
        &self.u
    }

    pub fn explained_variance(&self) -> f64 {
        self.explained_variance
    }

    /// True when the requested `p` exceeded the covariance rank and was
    /// reduced.
    pub fn was_clamped(&self) -> bool {
        self.clamped
    }

    /// `(I - U Uᵀ) delta`.
    pub fn project_off_tangent(&self, delta: &[f32]) -> Result<Vec<f32>> {
        if delta.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "project_off_tangent",
                expected: self.dim,
                actual: delta.len(),
            });
        }
        let d: Vec<f64> = delta.iter().map(|&x| x as f64).collect();
        Ok(self.off_tangent_f64(&d).into_iter().map(|x| x as f32).collect())
    }

    /// `f64` variant used on gradient paths. Panics on length mismatch.
    pub(crate) fn off_tangent_f64(&self, delta: &[f64]) -> Vec<f64> {
        assert_eq!(delta.len(), self.dim);
        let p = self.p();
        let mut coeff = vec![0.0f64; p];
        for (r, &d) in delta.iter().enumerate() {
            let row = self.u.row(r);
            for k in 0..p {
                coeff[k] += row[k] as f64 * d;
            }
        }
        let mut out = delta.to_vec();
        for (r, o) in out.iter_mut().enumerate() {
            let row = self.u.row(r);
            let mut acc = 0.0;
            for k in 0..p {
                acc += row[k] as f64 * coeff[k];
            }
            *o -= acc;
        }
        out
    }
}

/// Eigendecomposition of a symmetric `n × n` matrix (row-major, `f64`) by
/// cyclic Jacobi rotations. Returns eigenvalues in descending order and the
/// matching unit eigenvectors as columns of a row-major `n × n` array.
pub fn symmetric_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + libm::sqrt(1.0 + theta * theta))
                } else {
                    -1.0 / (-theta + libm::sqrt(1.0 + theta * theta))
                };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps the original column order for equal eigenvalues.
    order.sort_by(|&i, &j| {
        m[j * n + j]
            .partial_cmp(&m[i * n + i])
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    let values: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0f64; n * n];
    for (new_c, &old_c) in order.iter().enumerate() {
        // Sign convention: the largest-magnitude component is nonnegative.
        let mut best = 0usize;
        for r in 0..n {
            if libm::fabs(v[r * n + old_c]) > libm::fabs(v[best * n + old_c]) {
                best = r;
            }
        }
        let sign = if v[best * n + old_c] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[r * n + new_c] = sign * v[r * n + old_c];
        }
    }
    (values, vectors)
}

struct Spectrum {
    dim: usize,
    values: Vec<f64>,
    vectors: Vec<f64>,
    total: f64,
    rank: usize,
}

fn covariance_spectrum(features: &Matrix) -> Result<Spectrum> {
    let n = features.rows();
    let d = features.cols();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    if !super::all_finite(features.data()) {
        return Err(Error::NonFinite("pca features".into()));
    }
    let mut mean = vec![0.0f64; d];
    for r in 0..n {
        for (m, &x) in mean.iter_mut().zip(features.row(r)) {
            *m += x as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0f64; d * d];
    let mut centered = vec![0.0f64; d];
    for r in 0..n {
        for ((c, &x), &m) in centered.iter_mut().zip(features.row(r)).zip(&mean) {
            *c = x as f64 - m;
        }
        for i in 0..d {
            let ci = centered[i];
            for j in i..d {
                cov[i * d + j] += ci * centered[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    let (values, vectors) = symmetric_eigen(&cov, d);
    let total: f64 = values.iter().map(|&v| v.max(0.0)).sum();
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    let tol = top * 1e-9 * d as f64;
    let rank = values.iter().filter(|&&v| v > tol && v > 0.0).count();
    Ok(Spectrum {
        dim: d,
        values,
        vectors,
        total,
        rank,
    })
}

fn basis_from_spectrum(s: &Spectrum, requested: usize) -> Result<TangentBasis> {
    if s.rank == 0 {
        return Err(Error::InvalidArgument(
            "covariance is zero; no principal directions".into(),
        ));
    }
    let p = requested.min(s.rank);
    let d = s.dim;
    let mut u = Matrix::zeros(d, p);
    for r in 0..d {
        for c in 0..p {
            u.set(r, c, s.vectors[r * d + c] as f32);
        }
    }
    let top: f64 = s.values[..p].iter().map(|&v| v.max(0.0)).sum();
    let explained = if s.total > 0.0 { top / s.total } else { 0.0 };
    Ok(TangentBasis {
        dim: d,
        u,
        explained_variance: explained.clamp(0.0, 1.0),
        clamped: p < requested,
    })
}

/// Top-`p` principal directions of the mean-centered covariance of the rows
/// of `features` (`n × D`), ordered by descending eigenvalue.
///
/// When the covariance rank `r` is below `p` the basis is clamped to `r`
/// columns and [`TangentBasis::was_clamped`] reports it.
pub fn pca_top_p(features: &Matrix, p: usize) -> Result<TangentBasis> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let max_p = (n - 1).min(features.cols());
    if p == 0 || p > max_p {
        return Err(Error::InvalidArgument(alloc::format!(
            "p must be in 1..={max_p}, got {p}"
        )));
    }
    let s = covariance_spectrum(features)?;
    basis_from_spectrum(&s, p)
}

/// Smallest basis whose explained variance reaches `target`, capped at
/// `max_p` columns (and at `n - 1`).
pub fn pca_variance_target(features: &Matrix, target: f64, max_p: usize) -> Result<TangentBasis> {
    let s = covariance_spectrum(features)?;
    let cap = max_p.min(features.rows() - 1).min(s.dim).max(1);
    let mut p = cap;
    let mut acc = 0.0;
    for (i, &v) in s.values.iter().enumerate().take(cap) {
        acc += v.max(0.0);
        if s.total > 0.0 && acc / s.total >= target {
            p = i + 1;
            break;
        }
    }
    let mut basis = basis_from_spectrum(&s, p)?;
    basis.clamped = false;
    Ok(basis)
}
