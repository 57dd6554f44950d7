//! Baseline JPEG round trip: 8x8 block DCT, quantization with the standard
//! luminance table scaled by quality, dequantization and inverse DCT. Every
//! channel is coded as its own grayscale plane (no chroma subsampling).

use alloc::vec;
use alloc::vec::Vec;

const LUMA: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Quantization table for `quality` in `1..=100` (IJG scaling).
pub fn quant_table(quality: u32) -> [f64; 64] {
    let q = quality.clamp(1, 100);
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut t = [0.0; 64];
    for (o, &b) in t.iter_mut().zip(LUMA.iter()) {
        *o = ((b as u32 * scale + 50) / 100).clamp(1, 255) as f64;
    }
    t
}

fn cos_table() -> [f64; 64] {
    let mut c = [0.0; 64];
    for x in 0..8 {
        for u in 0..8 {
            let cu = if u == 0 { libm::sqrt(0.5) } else { 1.0 };
            c[x * 8 + u] = 0.5 * cu * libm::cos((2 * x + 1) as f64 * u as f64 * core::f64::consts::PI / 16.0);
        }
    }
    c
}

fn dct_block(block: &[f64; 64], c: &[f64; 64]) -> [f64; 64] {
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            let mut s = 0.0;
            for x in 0..8 {
                s += block[y * 8 + x] * c[x * 8 + u];
            }
            tmp[y * 8 + u] = s;
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            let mut s = 0.0;
            for y in 0..8 {
                s += tmp[y * 8 + u] * c[y * 8 + v];
            }
            out[v * 8 + u] = s;
        }
    }
    out
}

fn idct_block(coef: &[f64; 64], c: &[f64; 64]) -> [f64; 64] {
    let mut tmp = [0.0; 64];
    for v in 0..8 {
        for x in 0..8 {
            let mut s = 0.0;
            for u in 0..8 {
                s += coef[v * 8 + u] * c[x * 8 + u];
            }
            tmp[v * 8 + x] = s;
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            let mut s = 0.0;
            for v in 0..8 {
                s += tmp[v * 8 + x] * c[y * 8 + v];
            }
            out[y * 8 + x] = s;
        }
    }
    out
}

/// Encodes and decodes one `w × h` plane of `[0, 1]` values at `quality`.
/// Output values lie on the 8-bit grid `k / 255`.
pub fn jpeg_plane(plane: &[f32], w: usize, h: usize, quality: u32) -> Vec<f32> {
    let table = quant_table(quality);
    let c = cos_table();
    let bw = w.div_ceil(8) * 8;
    let bh = h.div_ceil(8) * 8;
    // Edge-replicated padding to whole blocks.
    let mut padded = vec![0.0f64; bw * bh];
    for y in 0..bh {
        for x in 0..bw {
            let v = plane[y.min(h - 1) * w + x.min(w - 1)];
            padded[y * bw + x] = libm::round(v.clamp(0.0, 1.0) as f64 * 255.0) - 128.0;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for by in (0..bh).step_by(8) {
        for bx in (0..bw).step_by(8) {
            let mut block = [0.0; 64];
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = padded[(by + y) * bw + bx + x];
                }
            }
            let mut coef = dct_block(&block, &c);
            for (k, v) in coef.iter_mut().enumerate() {
                *v = libm::round(*v / table[k]) * table[k];
            }
            let rec = idct_block(&coef, &c);
            for y in 0..8 {
                for x in 0..8 {
                    let (py, px) = (by + y, bx + x);
                    if py < h && px < w {
                        let v = libm::round(rec[y * 8 + x] + 128.0).clamp(0.0, 255.0);
                        out[py * w + px] = (v / 255.0) as f32;
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quality_scaling_matches_reference_points() {
        // q = 50 leaves the base table unchanged; q = 100 is all ones.
        assert_eq!(quant_table(50)[0], 16.0);
        assert_eq!(quant_table(50)[63], 99.0);
        assert!(quant_table(100).iter().all(|&v| v == 1.0));
        // q = 10: scale 500 -> 16*5 = 80.
        assert_eq!(quant_table(10)[0], 80.0);
    }

    #[test]
    fn dct_round_trip_is_exact_without_quantization() {
        let c = cos_table();
        let mut b = [0.0; 64];
        for (i, v) in b.iter_mut().enumerate() {
            *v = (i as f64 * 7.3) % 50.0 - 25.0;
        }
        let back = idct_block(&dct_block(&b, &c), &c);
        for (a, r) in b.iter().zip(&back) {
            assert!((a - r).abs() < 1e-9);
        }
    }

    #[test]
    fn quality_100_is_near_lossless() {
        let plane: Vec<f32> = (0..100).map(|i| ((i * 37) % 255) as f32 / 255.0).collect();
        let out = jpeg_plane(&plane, 10, 10, 100);
        for (a, b) in plane.iter().zip(&out) {
            assert!((a - b).abs() <= 2.0 / 255.0 + 1e-6);
        }
    }
}
