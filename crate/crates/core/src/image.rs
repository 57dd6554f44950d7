//! Planar `f32` images with values nominally in `[0, 1]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Planar image: channel `c` occupies `data[c*w*h .. (c+1)*w*h]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidArgument("image dimensions must be positive".into()));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch {
                context: "image data",
                expected: width * height * channels,
                actual: data.len(),
            });
        }
        if !crate::numerics::all_finite(&data) {
            return Err(Error::NonFinite("image pixels".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[c * self.plane_len() + y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let n = self.plane_len();
        self.data[c * n + y * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Applies `f` to each plane, producing planes of a possibly new size.
    pub fn map_planes<F>(&self, new_w: usize, new_h: usize, mut f: F) -> Image
    where
        F: FnMut(&[f32], usize, usize) -> Vec<f32>,
    {
        let mut data = Vec::with_capacity(new_w * new_h * self.channels);
        for c in 0..self.channels {
            let out = f(self.plane(c), self.width, self.height);
            debug_assert_eq!(out.len(), new_w * new_h);
            data.extend_from_slice(&out);
        }
        Image {
            width: new_w,
            height: new_h,
            channels: self.channels,
            data,
        }
    }

    /// Bilinear resampling with pixel-center alignment. Downscaling by more
    /// than 2x first box-averages so the result is not dominated by aliasing.
    pub fn resized(&self, new_w: usize, new_h: usize) -> Image {
        let new_w = new_w.max(1);
        let new_h = new_h.max(1);
        if new_w == self.width && new_h == self.height {
            return self.clone();
        }
        self.map_planes(new_w, new_h, |p, w, h| resample_plane(p, w, h, new_w, new_h))
    }
}

fn resample_plane(p: &[f32], w: usize, h: usize, nw: usize, nh: usize) -> Vec<f32> {
    let sx = w as f64 / nw as f64;
    let sy = h as f64 / nh as f64;
    let mut out = Vec::with_capacity(nw * nh);
    if sx > 2.0 || sy > 2.0 {
        // Area average over the source footprint of each output pixel.
        for oy in 0..nh {
            let y0 = oy as f64 * sy;
            let y1 = y0 + sy;
            for ox in 0..nw {
                let x0 = ox as f64 * sx;
                let x1 = x0 + sx;
                let mut acc = 0.0f64;
                let mut wsum = 0.0f64;
                let mut yy = libm::floor(y0) as usize;
                while (yy as f64) < y1 && yy < h {
                    let wy = (y1.min(yy as f64 + 1.0) - y0.max(yy as f64)).max(0.0);
                    let mut xx = libm::floor(x0) as usize;
                    while (xx as f64) < x1 && xx < w {
                        let wx = (x1.min(xx as f64 + 1.0) - x0.max(xx as f64)).max(0.0);
                        acc += wx * wy * p[yy * w + xx] as f64;
                        wsum += wx * wy;
                        xx += 1;
                    }
                    yy += 1;
                }
                out.push((acc / wsum.max(f64::MIN_POSITIVE)) as f32);
            }
        }
        return out;
    }
    for oy in 0..nh {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = libm::floor(fy) as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for ox in 0..nw {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = libm::floor(fx) as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let a = p[y0 * w + x0] as f64 * (1.0 - tx) + p[y0 * w + x1] as f64 * tx;
            let b = p[y1 * w + x0] as f64 * (1.0 - tx) + p[y1 * w + x1] as f64 * tx;
            out.push((a * (1.0 - ty) + b * ty) as f32);
        }
    }
    out
}

/// Mean squared error between two same-shape images.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch {
            context: "mse",
            expected: a.data.len(),
            actual: b.data.len(),
        });
    }
    let s: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(s / a.data.len() as f64)
}

/// Peak signal-to-noise ratio in dB for peak value 1. Identical images give
/// `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * libm::log10(1.0 / m))
}
