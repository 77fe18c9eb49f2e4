use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::renderer::Image;

/// Annex K luminance table, natural order.
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

/// Annex K chrominance table, natural order.
const CHROMA: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// libjpeg's quality scaling of a base table.
pub fn quant_table(base: &[u16; 64], quality: u32) -> Result<[u16; 64]> {
    if !(1..=100).contains(&quality) {
        return Err(Error::Range(format!("jpeg quality {quality} must lie in [1, 100]")));
    }
    let scale = if quality < 50 { 5000 / quality } else { 200 - 2 * quality };
    Ok(base.map(|b| ((b as u32 * scale + 50) / 100).clamp(1, 255) as u16))
}

pub fn luma_table(quality: u32) -> Result<[u16; 64]> {
    quant_table(&LUMA, quality)
}

pub fn chroma_table(quality: u32) -> Result<[u16; 64]> {
    quant_table(&CHROMA, quality)
}

struct Dct {
    /// `basis[u][x] = c(u)/2 · cos((2x+1)uπ/16)`
    basis: [[f64; 8]; 8],
}

impl Dct {
    fn new() -> Self {
        let mut basis = [[0.0; 8]; 8];
        for (u, row) in basis.iter_mut().enumerate() {
            let c = if u == 0 { 0.5f64.sqrt() } else { 1.0 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = 0.5 * c * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos();
            }
        }
        Dct { basis }
    }

    fn forward(&self, block: &[f64; 64]) -> [f64; 64] {
        let b = &self.basis;
        let mut tmp = [0.0; 64];
        for y in 0..8 {
            for u in 0..8 {
                tmp[y * 8 + u] = (0..8).map(|x| b[u][x] * block[y * 8 + x]).sum();
            }
        }
        let mut out = [0.0; 64];
        for v in 0..8 {
            for u in 0..8 {
                out[v * 8 + u] = (0..8).map(|y| b[v][y] * tmp[y * 8 + u]).sum();
            }
        }
        out
    }

    fn inverse(&self, coef: &[f64; 64]) -> [f64; 64] {
        let b = &self.basis;
        let mut tmp = [0.0; 64];
        for v in 0..8 {
            for x in 0..8 {
                tmp[v * 8 + x] = (0..8).map(|u| b[u][x] * coef[v * 8 + u]).sum();
            }
        }
        let mut out = [0.0; 64];
        for y in 0..8 {
            for x in 0..8 {
                out[y * 8 + x] = (0..8).map(|v| b[v][y] * tmp[v * 8 + x]).sum();
            }
        }
        out
    }
}

/// A sample plane padded by edge replication to a multiple of 8.
struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    fn padded(src: &[f64], h: usize, w: usize) -> Self {
        let (ph, pw) = (h.div_ceil(8) * 8, w.div_ceil(8) * 8);
        let mut data = vec![0.0; ph * pw];
        for y in 0..ph {
            for x in 0..pw {
                data[y * pw + x] = src[y.min(h - 1) * w + x.min(w - 1)];
            }
        }
        Plane { h: ph, w: pw, data }
    }

    fn quantize(&mut self, dct: &Dct, table: &[u16; 64]) {
        for by in (0..self.h).step_by(8) {
            for bx in (0..self.w).step_by(8) {
                let mut block = [0.0; 64];
                for y in 0..8 {
                    for x in 0..8 {
                        block[y * 8 + x] = self.data[(by + y) * self.w + bx + x] - 128.0;
                    }
                }
                let mut c = dct.forward(&block);
                for (v, &q) in c.iter_mut().zip(table) {
                    *v = (*v / q as f64).round() * q as f64;
                }
                let r = dct.inverse(&c);
                for y in 0..8 {
                    for x in 0..8 {
                        self.data[(by + y) * self.w + bx + x] = r[y * 8 + x] + 128.0;
                    }
                }
            }
        }
    }
}

/// Lossy JPEG round trip without entropy coding: 8-bit samples, JFIF
/// YCbCr, 4:2:0 chroma by 2×2 averaging, quantised 8×8 DCT, replicated
/// chroma upsampling, 8-bit output.
pub fn jpeg_roundtrip(img: &Image, quality: u32) -> Result<Image> {
    let (lq, cq) = (luma_table(quality)?, chroma_table(quality)?);
    let (h, w) = (img.height, img.width);
    let plane = h * w;
    let px = |c: usize, i: usize| (img.data[c * plane + i].clamp(0.0, 1.0) * 255.0).round();
    let mut yp = vec![0.0; plane];
    let mut cb = vec![0.0; plane];
    let mut cr = vec![0.0; plane];
    for i in 0..plane {
        let (r, g, b) = (px(0, i), px(1, i), px(2, i));
        yp[i] = 0.299 * r + 0.587 * g + 0.114 * b;
        cb[i] = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0;
        cr[i] = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0;
    }
    let (ch, cw) = (h.div_ceil(2), w.div_ceil(2));
    let subsample = |p: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; ch * cw];
        for y in 0..ch {
            for x in 0..cw {
                let mut s = 0.0;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    s += p[(2 * y + dy).min(h - 1) * w + (2 * x + dx).min(w - 1)];
                }
                out[y * cw + x] = s / 4.0;
            }
        }
        out
    };
    let dct = Dct::new();
    let mut lum = Plane::padded(&yp, h, w);
    lum.quantize(&dct, &lq);
    let mut chroma = [subsample(&cb), subsample(&cr)].map(|p| Plane::padded(&p, ch, cw));
    for p in chroma.iter_mut() {
        p.quantize(&dct, &cq);
    }
    let mut out = Image::filled(h, w, [0.0; 3]);
    for y in 0..h {
        for x in 0..w {
            let l = lum.data[y * lum.w + x];
            let b = chroma[0].data[(y / 2) * chroma[0].w + x / 2] - 128.0;
            let r = chroma[1].data[(y / 2) * chroma[1].w + x / 2] - 128.0;
            let rgb = [l + 1.402 * r, l - 0.344136 * b - 0.714136 * r, l + 1.772 * b];
            for (c, v) in rgb.iter().enumerate() {
                out.set(c, y, x, v.round().clamp(0.0, 255.0) / 255.0);
            }
        }
    }
    Ok(out)
}
