//! Raw degradation operators. Parameters are taken as given; range checks
//! live in [`super::ChainOp`].

use alloc::vec;
use alloc::vec::Vec;

use super::jpeg::jpeg_plane;
use crate::image::Image;
use crate::numerics::SeededRng;

/// Gray level of the frame drawn by screenshots.
pub const SCREENSHOT_BORDER: f32 = 0.2;

pub fn jpeg(img: &Image, quality: u32) -> Image {
    img.map_planes(img.width(), img.height(), |p, w, h| jpeg_plane(p, w, h, quality))
}

/// Rescales by `scale` (dimensions rounded, at least 1 pixel).
pub fn resize(img: &Image, scale: f64) -> Image {
    let w = libm::round(img.width() as f64 * scale).max(1.0) as usize;
    let h = libm::round(img.height() as f64 * scale).max(1.0) as usize;
    let mut out = img.resized(w, h);
    out.clamp01();
    out
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = libm::ceil(3.0 * sigma).max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with reflect padding. `sigma <= 0` is identity.
pub fn blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    img.map_planes(img.width(), img.height(), |p, w, h| {
        let mut tmp = vec![0.0f64; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, &kv) in k.iter().enumerate() {
                    let xx = reflect(x as isize + j as isize - r, w);
                    acc += kv * p[y * w + xx] as f64;
                }
                tmp[y * w + x] = acc;
            }
        }
        let mut out = vec![0.0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, &kv) in k.iter().enumerate() {
                    let yy = reflect(y as isize + j as isize - r, h);
                    acc += kv * tmp[yy * w + x];
                }
                out[y * w + x] = (acc as f32).clamp(0.0, 1.0);
            }
        }
        out
    })
}

/// Additive Gaussian noise of std `sigma` (in `[0, 1]` units), clamped.
pub fn noise(img: &Image, sigma: f64, rng: &mut SeededRng) -> Image {
    let mut out = img.clone();
    if sigma > 0.0 {
        for v in out.data_mut() {
            *v = (*v as f64 + sigma * rng.normal()).clamp(0.0, 1.0) as f32;
        }
    }
    out
}

/// Brightness gain followed by contrast about mid-gray.
pub fn color(img: &Image, gain: f64, contrast: f64) -> Image {
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = (((*v as f64 * gain) - 0.5) * contrast + 0.5).clamp(0.0, 1.0) as f32;
    }
    out
}

/// Keeps a `keep` fraction of the width (`axis = 0`) or height (`axis = 1`)
/// at a seeded offset.
pub fn crop_aspect(img: &Image, keep: f64, axis: u32, rng: &mut SeededRng) -> Image {
    let (w, h) = (img.width(), img.height());
    let (nw, nh) = if axis == 0 {
        ((libm::round(w as f64 * keep) as usize).clamp(1, w), h)
    } else {
        (w, (libm::round(h as f64 * keep) as usize).clamp(1, h))
    };
    let ox = rng.below((w - nw + 1) as u64) as usize;
    let oy = rng.below((h - nh + 1) as u64) as usize;
    img.map_planes(nw, nh, |p, w, _| {
        let mut out = Vec::with_capacity(nw * nh);
        for y in 0..nh {
            out.extend_from_slice(&p[(y + oy) * w + ox..(y + oy) * w + ox + nw]);
        }
        out
    })
}

/// Rectangle covered by a sticker of relative `area` on a `w × h` image,
/// as `(x0, y0, rw, rh)`.
pub fn sticker_rect(w: usize, h: usize, area: f64, rng: &mut SeededRng) -> (usize, usize, usize, usize) {
    let pixels = area * (w * h) as f64;
    let rw = (libm::round(libm::sqrt(pixels)) as usize).clamp(1, w);
    let rh = (libm::floor(pixels / rw as f64) as usize).clamp(1, h);
    let x0 = rng.below((w - rw + 1) as u64) as usize;
    let y0 = rng.below((h - rh + 1) as u64) as usize;
    (x0, y0, rw, rh)
}

/// Opaque solid rectangle of gray `value` at a seeded position.
pub fn sticker(img: &Image, area: f64, value: f32, rng: &mut SeededRng) -> Image {
    let (x0, y0, rw, rh) = sticker_rect(img.width(), img.height(), area, rng);
    let mut out = img.clone();
    for c in 0..out.channels() {
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                out.set(c, y, x, value);
            }
        }
    }
    out
}

/// Screen capture: rescale, re-encode, optionally frame with a 1-px border.
pub fn screenshot(img: &Image, scale: f64, quality: u32, border: bool) -> Image {
    let mut out = jpeg(&resize(img, scale), quality);
    if border {
        let (w, h) = (out.width(), out.height());
        for c in 0..out.channels() {
            for y in 0..h {
                for x in 0..w {
                    if y == 0 || x == 0 || y == h - 1 || x == w - 1 {
                        out.set(c, y, x, SCREENSHOT_BORDER);
                    }
                }
            }
        }
    }
    out
}
