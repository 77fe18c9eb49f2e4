use std::io::{Read, Write};
use std::path::Path;

use gseal_grad::Tensor;

use crate::error::{Error, Result};

/// Planar RGB image, `3×H×W`, unclamped until written out.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

const GSIMG_MAGIC: &[u8; 6] = b"GSIMG1";

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != 3 * height * width {
            return Err(Error::Validation(format!(
                "image {height}x{width} needs {} values, got {}",
                3 * height * width,
                data.len()
            )));
        }
        Ok(Image { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let plane = height * width;
        let mut data = vec![0.0; 3 * plane];
        for c in 0..3 {
            data[c * plane..(c + 1) * plane].fill(rgb[c]);
        }
        Image { height, width, data }
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[c * self.plane() + y * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let p = self.plane();
        self.data[c * p + y * self.width + x] = v;
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[3, self.height, self.width], self.data.clone()).expect("image extents are positive")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [3, h, w] => Image::new(h, w, t.data().to_vec()),
            _ => Err(Error::Validation(format!("expected [3, H, W], got {:?}", t.shape()))),
        }
    }

    pub fn clamped(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Fraction of pixels whose colour differs from `bg` by more than `tol`
    /// in any channel.
    pub fn foreground_fraction(&self, bg: [f64; 3], tol: f64) -> f64 {
        let p = self.plane();
        let fg = (0..p)
            .filter(|&i| (0..3).any(|c| (self.data[c * p + i] - bg[c]).abs() > tol))
            .count();
        fg as f64 / p as f64
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let p = self.plane();
        let mut buf = Vec::with_capacity(3 * p);
        for i in 0..p {
            for c in 0..3 {
                buf.push((self.data[c * p + i].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        image::save_buffer(path, &buf, self.width as u32, self.height as u32, image::ColorType::Rgb8)
            .map_err(|e| Error::Image(e.to_string()))
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image(e.to_string()))?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Image::filled(h, w, [0.0; 3]);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, y as usize, x as usize, px[c] as f64 / 255.0);
            }
        }
        Ok(out)
    }

    /// Lossless float dump: magic, `u32` H, `u32` W, `3·H·W` LE `f32`.
    pub fn write_gsimg<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(GSIMG_MAGIC)?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_gsimg<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        if buf.len() < 14 || &buf[..6] != GSIMG_MAGIC {
            return Err(Error::Format("not a GSIMG1 image".into()));
        }
        let h = u32::from_le_bytes(buf[6..10].try_into().unwrap()) as usize;
        let w = u32::from_le_bytes(buf[10..14].try_into().unwrap()) as usize;
        let need = h.checked_mul(w).and_then(|p| p.checked_mul(12)).and_then(|n| n.checked_add(14));
        if need != Some(buf.len()) || h == 0 || w == 0 {
            return Err(Error::Format(format!("GSIMG1 {h}x{w} does not match {} bytes", buf.len())));
        }
        let data = buf[14..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Image::new(h, w, data)
    }
}
