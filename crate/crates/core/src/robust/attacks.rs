use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::jpeg::jpeg_roundtrip;
use crate::error::{Error, Result};
use crate::gaussians::{prune, GaussianCloud, PruneStrategy};
use crate::renderer::{Image, WHITE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttackKind {
    Prune,
    Noise,
    Crop,
    Rotate,
    Brightness,
    Jpeg,
    Blur,
}

impl AttackKind {
    pub const ALL: [AttackKind; 7] = [
        AttackKind::Prune,
        AttackKind::Noise,
        AttackKind::Crop,
        AttackKind::Rotate,
        AttackKind::Brightness,
        AttackKind::Jpeg,
        AttackKind::Blur,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::Prune => "prune",
            AttackKind::Noise => "noise",
            AttackKind::Crop => "crop",
            AttackKind::Rotate => "rotate",
            AttackKind::Brightness => "brightness",
            AttackKind::Jpeg => "jpeg",
            AttackKind::Blur => "blur",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown attack {s:?}")))
    }

    /// Parameter of the standard robustness table.
    pub fn default_param(&self) -> f64 {
        match self {
            AttackKind::Prune => 0.05,
            AttackKind::Noise => 0.1,
            AttackKind::Crop => 0.4,
            AttackKind::Rotate => 60.0,
            AttackKind::Brightness => 2.0,
            AttackKind::Jpeg => 10.0,
            AttackKind::Blur => 5.0,
        }
    }

    /// Whether the attack acts on the cloud rather than on rendered views.
    pub fn is_3d(&self) -> bool {
        *self == AttackKind::Prune
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub param: f64,
    pub seed: u64,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, param: f64, seed: u64) -> Result<Self> {
        let s = AttackSpec { kind, param, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.param;
        let integral = p.fract() == 0.0;
        let ok = p.is_finite()
            && match self.kind {
                AttackKind::Prune => (0.0..1.0).contains(&p),
                AttackKind::Noise => p >= 0.0,
                AttackKind::Crop => p > 0.0 && p <= 1.0,
                AttackKind::Rotate => true,
                AttackKind::Brightness => p > 0.0,
                AttackKind::Jpeg => integral && (1.0..=100.0).contains(&p),
                AttackKind::Blur => integral && p >= 1.0 && p as u64 % 2 == 1,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::Range(format!("parameter {p} outside the domain of the {} attack", self.kind)))
        }
    }

    /// Applies a pruning attack; other kinds leave the cloud unchanged.
    pub fn apply_cloud(&self, cloud: &GaussianCloud) -> Result<GaussianCloud> {
        self.validate()?;
        match self.kind {
            AttackKind::Prune => prune(cloud, self.param, PruneStrategy::LowestOpacity),
            _ => Ok(cloud.clone()),
        }
    }

    /// Applies an image attack; pruning leaves the image unchanged.
    pub fn apply_image(&self, img: &Image) -> Result<Image> {
        self.validate()?;
        match self.kind {
            AttackKind::Prune => Ok(img.clone()),
            AttackKind::Noise => Ok(attack_noise(img, self.param, self.seed)),
            AttackKind::Crop => attack_crop(img, self.param),
            AttackKind::Rotate => Ok(attack_rotate(img, self.param)),
            AttackKind::Brightness => attack_brightness(img, self.param),
            AttackKind::Jpeg => attack_jpeg(img, self.param as u32),
            AttackKind::Blur => attack_blur(img, self.param as usize),
        }
    }
}

/// Adds i.i.d. `N(0, σ²)` noise and clamps to `[0, 1]`.
pub fn attack_noise(img: &Image, sigma: f64, seed: u64) -> Image {
    if sigma == 0.0 {
        return img.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    let data = img.data.iter().map(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0)).collect();
    Image { data, ..img.clone() }
}

/// Keeps the centred region of area fraction `keep`; the rest becomes white.
pub fn attack_crop(img: &Image, keep: f64) -> Result<Image> {
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::Range(format!("crop keep fraction {keep} must lie in (0, 1]")));
    }
    let side = |n: usize| ((n as f64 * keep.sqrt()).round() as usize).clamp(1, n);
    let (kh, kw) = (side(img.height), side(img.width));
    let (y0, x0) = ((img.height - kh) / 2, (img.width - kw) / 2);
    let mut out = Image::filled(img.height, img.width, WHITE);
    for c in 0..3 {
        for y in y0..y0 + kh {
            for x in x0..x0 + kw {
                out.set(c, y, x, img.get(c, y, x));
            }
        }
    }
    Ok(out)
}

/// Rotates about the image centre with bilinear sampling; samples outside
/// the image read white.
pub fn attack_rotate(img: &Image, degrees: f64) -> Image {
    let (h, w) = (img.height, img.width);
    let (s, c) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let fetch = |ch: usize, y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            WHITE[ch]
        } else {
            img.get(ch, y as usize, x as usize)
        }
    };
    let mut out = Image::filled(h, w, WHITE);
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            // inverse rotation of the output pixel into the source
            let sx = c * dx + s * dy + cx;
            let sy = -s * dx + c * dy + cy;
            let (fx, fy) = (sx.floor(), sy.floor());
            let (tx, ty) = (sx - fx, sy - fy);
            let (ix, iy) = (fx as isize, fy as isize);
            for ch in 0..3 {
                let v = (1.0 - ty) * ((1.0 - tx) * fetch(ch, iy, ix) + tx * fetch(ch, iy, ix + 1))
                    + ty * ((1.0 - tx) * fetch(ch, iy + 1, ix) + tx * fetch(ch, iy + 1, ix + 1));
                out.set(ch, y, x, v);
            }
        }
    }
    out
}

/// Multiplies every value by `factor` and clamps to `[0, 1]`.
pub fn attack_brightness(img: &Image, factor: f64) -> Result<Image> {
    if !(factor > 0.0) {
        return Err(Error::Range(format!("brightness factor {factor} must be positive")));
    }
    let data = img.data.iter().map(|v| (v * factor).clamp(0.0, 1.0)).collect();
    Ok(Image { data, ..img.clone() })
}

pub fn attack_jpeg(img: &Image, quality: u32) -> Result<Image> {
    jpeg_roundtrip(img, quality)
}

/// Gaussian blur with OpenCV's default σ for kernel size `k` and
/// edge-replicating borders.
pub fn attack_blur(img: &Image, k: usize) -> Result<Image> {
    if k % 2 == 0 {
        return Err(Error::Range(format!("blur kernel size {k} must be odd")));
    }
    let sigma = 0.3 * ((k as f64 - 1.0) / 2.0 - 1.0) + 0.8;
    let r = (k / 2) as isize;
    let mut kernel: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= total);
    let (h, w) = (img.height, img.width);
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = img.clone();
    let mut out = img.clone();
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let v = (-r..=r).zip(&kernel).map(|(d, kv)| kv * img.get(c, y, clampi(x as isize + d, w))).sum();
                tmp.set(c, y, x, v);
            }
        }
        for y in 0..h {
            for x in 0..w {
                let v = (-r..=r).zip(&kernel).map(|(d, kv)| kv * tmp.get(c, clampi(y as isize + d, h), x)).sum();
                out.set(c, y, x, v);
            }
        }
    }
    Ok(out)
}
