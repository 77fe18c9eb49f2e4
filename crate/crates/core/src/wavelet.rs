//! Single-level 2-D Haar transform. The decoder reads the low-pass (LL)
//! subband.

use gseal_grad::{Tape, Var};

use crate::error::{Error, Result};
use crate::renderer::Image;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Normalization {
    /// `LL = (a+b+c+d)/4`; LL is the 2×2 block mean.
    #[default]
    Averaging,
    /// Orthonormal Haar, `LL = (a+b+c+d)/2`; preserves energy.
    Orthonormal,
}

impl Normalization {
    fn analysis(self) -> f64 {
        match self {
            Normalization::Averaging => 0.25,
            Normalization::Orthonormal => 0.5,
        }
    }
}

/// Subbands of a `3×H×W` image, each `3×(H/2)×(W/2)`. For a 2×2 block
/// `[a b; c d]`, HL holds the column difference `a−b+c−d` and LH the row
/// difference `a+b−c−d`.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandSet {
    pub ll: Vec<f64>,
    pub lh: Vec<f64>,
    pub hl: Vec<f64>,
    pub hh: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub normalization: Normalization,
}

impl SubbandSet {
    pub fn ll_image(&self) -> Image {
        Image::new(self.height / 2, self.width / 2, self.ll.clone()).expect("subband extents are positive")
    }

    pub fn energy(&self) -> f64 {
        [&self.ll, &self.lh, &self.hl, &self.hh]
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum()
    }
}

fn check_even(h: usize, w: usize) -> Result<()> {
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Validation(format!("wavelet transform needs even extents, got {h}x{w}")));
    }
    Ok(())
}

pub fn dwt2(img: &Image) -> Result<SubbandSet> {
    dwt2_with(img, Normalization::Averaging)
}

pub fn dwt2_with(img: &Image, norm: Normalization) -> Result<SubbandSet> {
    let (h, w) = (img.height, img.width);
    check_even(h, w)?;
    let (h2, w2) = (h / 2, w / 2);
    let n = 3 * h2 * w2;
    let k = norm.analysis();
    let mut s = SubbandSet {
        ll: vec![0.0; n],
        lh: vec![0.0; n],
        hl: vec![0.0; n],
        hh: vec![0.0; n],
        height: h,
        width: w,
        normalization: norm,
    };
    for c in 0..3 {
        for y in 0..h2 {
            for x in 0..w2 {
                let a = img.get(c, 2 * y, 2 * x);
                let b = img.get(c, 2 * y, 2 * x + 1);
                let cc = img.get(c, 2 * y + 1, 2 * x);
                let d = img.get(c, 2 * y + 1, 2 * x + 1);
                let i = (c * h2 + y) * w2 + x;
                s.ll[i] = k * (a + b + cc + d);
                s.hl[i] = k * (a - b + cc - d);
                s.lh[i] = k * (a + b - cc - d);
                s.hh[i] = k * (a - b - cc + d);
            }
        }
    }
    Ok(s)
}

pub fn idwt2(s: &SubbandSet) -> Result<Image> {
    check_even(s.height, s.width)?;
    let (h2, w2) = (s.height / 2, s.width / 2);
    let n = 3 * h2 * w2;
    if [&s.ll, &s.lh, &s.hl, &s.hh].iter().any(|b| b.len() != n) {
        return Err(Error::Validation(format!(
            "subbands must each hold {n} values for a {}x{} image",
            s.height, s.width
        )));
    }
    // synthesis gain undoing the analysis scale: 4·k² = 1/k
    let g = 0.25 / s.normalization.analysis();
    let mut img = Image::filled(s.height, s.width, [0.0; 3]);
    for c in 0..3 {
        for y in 0..h2 {
            for x in 0..w2 {
                let i = (c * h2 + y) * w2 + x;
                let (ll, hl, lh, hh) = (s.ll[i], s.hl[i], s.lh[i], s.hh[i]);
                img.set(c, 2 * y, 2 * x, g * (ll + hl + lh + hh));
                img.set(c, 2 * y, 2 * x + 1, g * (ll - hl + lh - hh));
                img.set(c, 2 * y + 1, 2 * x, g * (ll + hl - lh - hh));
                img.set(c, 2 * y + 1, 2 * x + 1, g * (ll - hl - lh + hh));
            }
        }
    }
    Ok(img)
}

/// LL subband (averaging convention) of an image.
pub fn ll(img: &Image) -> Result<Image> {
    Ok(dwt2(img)?.ll_image())
}

/// LL subband repeated `levels` times.
pub fn ll_levels(img: &Image, levels: usize) -> Result<Image> {
    (0..levels).try_fold(img.clone(), |acc, _| ll(&acc))
}

/// Differentiable LL of `[3, H, W]` or `[N, 3, H, W]`: the 2×2 block mean.
pub fn ll_on_tape(tape: &Tape, x: Var) -> Result<Var> {
    let shape = tape.shape(x);
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    check_even(h, w)?;
    Ok(tape.avg_pool2(x)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_mean_example() {
        let mut img = Image::filled(2, 2, [0.0; 3]);
        for (i, v) in [1.0, 3.0, 5.0, 7.0].iter().enumerate() {
            img.set(0, i / 2, i % 2, *v);
        }
        let s = dwt2(&img).unwrap();
        assert_eq!(s.ll[0], 4.0);
        assert_eq!(s.hl[0], -1.0);
        assert_eq!(s.lh[0], -2.0);
        assert_eq!(s.hh[0], 0.0);
        assert_eq!(idwt2(&s).unwrap(), img);
    }

    #[test]
    fn odd_extent_rejected() {
        assert!(dwt2(&Image::filled(3, 4, [0.0; 3])).is_err());
        let mut s = dwt2(&Image::filled(4, 4, [0.0; 3])).unwrap();
        s.hh.pop();
        assert!(idwt2(&s).is_err());
    }

    #[test]
    fn checkerboard_ll_is_half() {
        let mut img = Image::filled(4, 4, [0.0; 3]);
        for y in 0..4 {
            for x in 0..4 {
                for c in 0..3 {
                    img.set(c, y, x, ((x + y) % 2) as f64);
                }
            }
        }
        assert!(ll(&img).unwrap().data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn ll_gradient_is_quarter() {
        let tape = Tape::new();
        let x = tape.leaf(gseal_grad::Tensor::full(&[3, 4, 6], 0.3));
        let y = ll_on_tape(&tape, x).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 0.25));
    }
}
