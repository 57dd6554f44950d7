use alloc::vec;
use alloc::vec::Vec;

use core::f64::consts::PI;

/// Minimal complex number for the DFT paths.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub fn norm(self) -> f64 {
        libm::hypot(self.re, self.im)
    }

    #[inline]
    fn mul(self, o: Complex) -> Complex {
        Complex::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
}

fn twiddles(n: usize, sign: f64) -> Vec<Complex> {
    (0..n)
        .map(|k| {
            let a = sign * 2.0 * PI * k as f64 / n as f64;
            Complex::new(libm::cos(a), libm::sin(a))
        })
        .collect()
}

/// Naive 1-D DFT along strided data, writing into `out`.
fn dft_line(input: &[Complex], out: &mut [Complex], tw: &[Complex]) {
    let n = input.len();
    for (u, o) in out.iter_mut().enumerate() {
        let mut acc = Complex::default();
        for (x, &v) in input.iter().enumerate() {
            let t = tw[(u * x) % n];
            let p = v.mul(t);
            acc.re += p.re;
            acc.im += p.im;
        }
        *o = acc;
    }
}

fn transform(data: &mut [Complex], h: usize, w: usize, sign: f64) {
    let tw_w = twiddles(w, sign);
    let tw_h = twiddles(h, sign);
    let mut line_in = vec![Complex::default(); w.max(h)];
    let mut line_out = vec![Complex::default(); w.max(h)];
    for r in 0..h {
        line_in[..w].copy_from_slice(&data[r * w..(r + 1) * w]);
        dft_line(&line_in[..w], &mut line_out[..w], &tw_w);
        data[r * w..(r + 1) * w].copy_from_slice(&line_out[..w]);
    }
    for c in 0..w {
        for r in 0..h {
            line_in[r] = data[r * w + c];
        }
        dft_line(&line_in[..h], &mut line_out[..h], &tw_h);
        for r in 0..h {
            data[r * w + c] = line_out[r];
        }
    }
}

/// Forward 2-D DFT of a real `h × w` row-major image:
/// `F(u,v) = Σ img(x,y) exp(-2πi(ux/h + vy/w))`, with `x` the row index.
pub fn dft2(image: &[f32], h: usize, w: usize) -> Vec<Complex> {
    assert_eq!(image.len(), h * w, "dft2: image length");
    let mut data: Vec<Complex> = image.iter().map(|&x| Complex::new(x as f64, 0.0)).collect();
    transform(&mut data, h, w, -1.0);
    data
}

/// Inverse 2-D DFT keeping the real part.
pub fn idft2_real(spectrum: &[Complex], h: usize, w: usize) -> Vec<f32> {
    assert_eq!(spectrum.len(), h * w, "idft2: spectrum length");
    let mut data = spectrum.to_vec();
    transform(&mut data, h, w, 1.0);
    let scale = 1.0 / (h * w) as f64;
    data.iter().map(|c| (c.re * scale) as f32).collect()
}

/// Magnitude spectrum `|F(u,v)|`, same layout as the input.
pub fn dft2_magnitude(image: &[f32], h: usize, w: usize) -> Vec<f32> {
    dft2(image, h, w).iter().map(|c| c.norm() as f32).collect()
}

/// Signed frequency of bin `k` in an `n`-point DFT, in cycles per sample.
pub(crate) fn signed_freq(k: usize, n: usize) -> f64 {
    let k = k as f64;
    let n = n as f64;
    if k > n / 2.0 {
        (k - n) / n
    } else {
        k / n
    }
}

/// Fraction of spectral energy (excluding DC) at radial frequencies above a
/// quarter cycle per pixel, the outer half of the frequency range.
pub fn high_frequency_ratio(image: &[f32], h: usize, w: usize) -> f64 {
    let spec = dft2(image, h, w);
    let mut total = 0.0;
    let mut high = 0.0;
    for u in 0..h {
        for v in 0..w {
            if u == 0 && v == 0 {
                continue;
            }
            let c = spec[u * w + v];
            let e = c.re * c.re + c.im * c.im;
            total += e;
            let fu = signed_freq(u, h);
            let fv = signed_freq(v, w);
            if libm::sqrt(fu * fu + fv * fv) > 0.25 {
                high += e;
            }
        }
    }
    if total > 0.0 {
        high / total
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use std::vec::Vec;

    /// Straight O(N^4) definition used as an independent oracle.
    fn naive(img: &[f32], h: usize, w: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for u in 0..h {
            for v in 0..w {
                let (mut re, mut im) = (0.0f64, 0.0f64);
                for x in 0..h {
                    for y in 0..w {
                        let a = -2.0 * PI * ((u * x) as f64 / h as f64 + (v * y) as f64 / w as f64);
                        re += img[x * w + y] as f64 * a.cos();
                        im += img[x * w + y] as f64 * a.sin();
                    }
                }
                out.push((re * re + im * im).sqrt());
            }
        }
        out
    }

    #[test]
    fn constant_image_has_only_dc() {
        let m = dft2_magnitude(&[1.0; 4], 2, 2);
        assert!((m[0] - 4.0).abs() < 1e-6);
        assert!(m[1..].iter().all(|x| x.abs() < 1e-6));
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let m = dft2_magnitude(&[1.0, 0.0, 0.0, 0.0], 2, 2);
        assert!(m.iter().all(|x| (x - 1.0).abs() < 1e-6));
    }

    #[test]
    fn matches_naive_dft() {
        let mut rng = SeededRng::new(4, 4);
        for (h, w) in [(4, 4), (3, 5), (6, 2)] {
            let img: Vec<f32> = (0..h * w).map(|_| rng.next_f64() as f32).collect();
            let fast = dft2_magnitude(&img, h, w);
            let slow = naive(&img, h, w);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((*a as f64 - b).abs() < 1e-4, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn parseval_holds() {
        let mut rng = SeededRng::new(5, 0);
        let (h, w) = (8, 8);
        let img: Vec<f32> = (0..h * w).map(|_| rng.normal() as f32).collect();
        let spec = dft2_magnitude(&img, h, w);
        let lhs: f64 = spec.iter().map(|&x| (x as f64).powi(2)).sum();
        let rhs = (h * w) as f64 * img.iter().map(|&x| (x as f64).powi(2)).sum::<f64>();
        assert!((lhs - rhs).abs() / rhs < 1e-4);
    }

    #[test]
    fn inverse_round_trips() {
        let mut rng = SeededRng::new(6, 0);
        let img: Vec<f32> = (0..32).map(|_| rng.next_f64() as f32).collect();
        let back = idft2_real(&dft2(&img, 4, 8), 4, 8);
        for (a, b) in img.iter().zip(&back) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
