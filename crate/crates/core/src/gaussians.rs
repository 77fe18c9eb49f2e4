//! Explicit 3-D Gaussian clouds, the generator's 14-channel tensor form, the
//! activation map between them, and cloud pruning.

use std::io::{Read, Write};
use std::sync::Arc;

use gseal_grad::{sigmoid, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::{mat3_mul, transpose3, Mat3, Vec3};

/// Values per Gaussian, in channel-layout order.
pub const PARAMS_PER_GAUSSIAN: usize = 14;
pub const POS: usize = 0;
pub const OPACITY: usize = 3;
pub const SCALE: usize = 4;
pub const ROT: usize = 7;
pub const RGB: usize = 11;

const QUAT_FALLBACK_NORM: f64 = 1e-8;

/// Unit direction of splat-grid cell `(row, col)` on a `side×side`
/// latitude-longitude layout: rows sweep the polar angle from +y, columns
/// the azimuth.
pub fn grid_direction(row: usize, col: usize, side: usize) -> Vec3 {
    let theta = std::f64::consts::PI * (row as f64 + 0.5) / side as f64;
    let phi = std::f64::consts::TAU * (col as f64 + 0.5) / side as f64;
    [theta.sin() * phi.cos(), theta.cos(), theta.sin() * phi.sin()]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian {
    pub position: Vec3,
    /// Unit quaternion, `w, x, y, z`.
    pub rotation: [f64; 4],
    pub scale: Vec3,
    pub opacity: f64,
    pub color: Vec3,
}

impl Gaussian {
    pub fn validate(&self) -> Result<()> {
        let n = quat_norm(&self.rotation);
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::Validation(format!("quaternion norm {n} is not 1")));
        }
        if self.scale.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Validation(format!("scale {:?} must be positive", self.scale)));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::Validation(format!("opacity {} outside [0,1]", self.opacity)));
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Validation(format!("color {:?} outside [0,1]", self.color)));
        }
        if self.position.iter().any(|p| !p.is_finite()) {
            return Err(Error::Validation("non-finite position".into()));
        }
        Ok(())
    }

    pub fn to_params(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        let mut p = [0.0; PARAMS_PER_GAUSSIAN];
        p[POS..POS + 3].copy_from_slice(&self.position);
        p[OPACITY] = self.opacity;
        p[SCALE..SCALE + 3].copy_from_slice(&self.scale);
        p[ROT..ROT + 4].copy_from_slice(&self.rotation);
        p[RGB..RGB + 3].copy_from_slice(&self.color);
        p
    }

    pub fn from_params(p: &[f64]) -> Self {
        Gaussian {
            position: [p[POS], p[POS + 1], p[POS + 2]],
            opacity: p[OPACITY],
            scale: [p[SCALE], p[SCALE + 1], p[SCALE + 2]],
            rotation: [p[ROT], p[ROT + 1], p[ROT + 2], p[ROT + 3]],
            color: [p[RGB], p[RGB + 1], p[RGB + 2]],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian>,
}

impl GaussianCloud {
    pub fn new(gaussians: Vec<Gaussian>) -> Self {
        GaussianCloud { gaussians }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.gaussians.iter().try_for_each(Gaussian::validate)
    }

    /// `[N, 14]` parameter matrix in channel-layout order.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.gaussians.iter().flat_map(|g| g.to_params()).collect();
        Tensor::new(&[self.len().max(1), PARAMS_PER_GAUSSIAN], data)
            .unwrap_or_else(|_| Tensor::zeros(&[1, PARAMS_PER_GAUSSIAN]))
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 2 || t.shape()[1] != PARAMS_PER_GAUSSIAN {
            return Err(Error::Validation(format!("expected [N, 14] parameters, got {:?}", t.shape())));
        }
        Ok(GaussianCloud {
            gaussians: t.data().chunks_exact(PARAMS_PER_GAUSSIAN).map(Gaussian::from_params).collect(),
        })
    }

    /// Writes the `GSEAL1` splat file: magic, `u32` count, then 14
    /// little-endian `f32` per Gaussian in channel-layout order.
    pub fn write_gseal<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(GSEAL_MAGIC)?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        for g in &self.gaussians {
            for v in g.to_params() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_gseal<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        if buf.len() < 10 || &buf[..6] != GSEAL_MAGIC {
            return Err(Error::Format("not a GSEAL1 splat file".into()));
        }
        let count = u32::from_le_bytes(buf[6..10].try_into().unwrap()) as usize;
        let need = count
            .checked_mul(PARAMS_PER_GAUSSIAN * 4)
            .and_then(|n| n.checked_add(10))
            .ok_or_else(|| Error::Format("count overflow".into()))?;
        if buf.len() != need {
            return Err(Error::Format(format!(
                "GSEAL1 declares {count} Gaussians ({need} bytes) but file has {} bytes",
                buf.len()
            )));
        }
        let vals: Vec<f64> = buf[10..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(GaussianCloud {
            gaussians: vals.chunks_exact(PARAMS_PER_GAUSSIAN).map(Gaussian::from_params).collect(),
        })
    }
}

const GSEAL_MAGIC: &[u8; 6] = b"GSEAL1";

/// Raw (pre-activation) generator output, `[14, S, S]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatTensor {
    tensor: Tensor,
}

impl SplatTensor {
    pub fn new(tensor: Tensor) -> Result<Self> {
        match *tensor.shape() {
            [PARAMS_PER_GAUSSIAN, h, w] if h == w => Ok(SplatTensor { tensor }),
            _ => Err(Error::Validation(format!(
                "splat tensor must be [14, S, S], got {:?}",
                tensor.shape()
            ))),
        }
    }

    pub fn size(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }
}

/// How raw channels map to Gaussian attributes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActivationSpec {
    /// Positions are `pos_range · tanh(raw)`.
    pub pos_range: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for ActivationSpec {
    fn default() -> Self {
        ActivationSpec {
            pos_range: 1.0,
            scale_min: 0.005,
            scale_max: 0.3,
        }
    }
}

impl ActivationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_min > 0.0 && self.scale_max > self.scale_min && self.pos_range > 0.0) {
            return Err(Error::Validation(format!("invalid activation spec {self:?}")));
        }
        Ok(())
    }

    /// Activates one cell's 14 raw values.
    pub fn activate(&self, raw: &[f64]) -> [f64; PARAMS_PER_GAUSSIAN] {
        let mut p = [0.0; PARAMS_PER_GAUSSIAN];
        for k in 0..3 {
            p[POS + k] = self.pos_range * raw[POS + k].tanh();
            p[SCALE + k] = self.scale_min + (self.scale_max - self.scale_min) * sigmoid(raw[SCALE + k]);
            p[RGB + k] = sigmoid(raw[RGB + k]);
        }
        p[OPACITY] = sigmoid(raw[OPACITY]);
        let q = [raw[ROT], raw[ROT + 1], raw[ROT + 2], raw[ROT + 3]];
        let n = quat_norm(&q);
        if n < QUAT_FALLBACK_NORM {
            p[ROT..ROT + 4].copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        } else {
            for k in 0..4 {
                p[ROT + k] = q[k] / n;
            }
        }
        p
    }

    /// Inverse of [`activate`](Self::activate) for values strictly inside
    /// every activation range.
    pub fn deactivate(&self, g: &Gaussian) -> Result<[f64; PARAMS_PER_GAUSSIAN]> {
        let logit = |v: f64, what: &str| {
            if v > 0.0 && v < 1.0 {
                Ok((v / (1.0 - v)).ln())
            } else {
                Err(Error::Range(format!("{what} {v} not strictly inside (0, 1)")))
            }
        };
        let mut raw = [0.0; PARAMS_PER_GAUSSIAN];
        for k in 0..3 {
            let u = g.position[k] / self.pos_range;
            if u.abs() >= 1.0 {
                return Err(Error::Range(format!("position {} outside ±{}", g.position[k], self.pos_range)));
            }
            raw[POS + k] = u.atanh();
            raw[SCALE + k] = logit((g.scale[k] - self.scale_min) / (self.scale_max - self.scale_min), "normalised scale")?;
            raw[RGB + k] = logit(g.color[k], "color")?;
        }
        raw[OPACITY] = logit(g.opacity, "opacity")?;
        let n = quat_norm(&g.rotation);
        for k in 0..4 {
            raw[ROT + k] = g.rotation[k] / n;
        }
        Ok(raw)
    }
}

fn quat_norm(q: &[f64; 4]) -> f64 {
    q.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Activates a raw splat tensor into `S²` Gaussians in row-major cell order.
pub fn splat_to_cloud(t: &SplatTensor, spec: &ActivationSpec) -> GaussianCloud {
    let s = t.size();
    let cells = s * s;
    let d = t.tensor().data();
    let mut raw = [0.0; PARAMS_PER_GAUSSIAN];
    let gaussians = (0..cells)
        .map(|i| {
            for (c, r) in raw.iter_mut().enumerate() {
                *r = d[c * cells + i];
            }
            Gaussian::from_params(&spec.activate(&raw))
        })
        .collect();
    GaussianCloud { gaussians }
}

/// Inverse activation onto an `S×S` grid; the cloud must hold exactly `S²`
/// Gaussians with interior values.
pub fn cloud_to_splat(cloud: &GaussianCloud, spec: &ActivationSpec) -> Result<SplatTensor> {
    let cells = cloud.len();
    let s = (cells as f64).sqrt().round() as usize;
    if s == 0 || s * s != cells {
        return Err(Error::Validation(format!("{cells} Gaussians do not fill a square grid")));
    }
    let mut data = vec![0.0; PARAMS_PER_GAUSSIAN * cells];
    for (i, g) in cloud.gaussians.iter().enumerate() {
        let raw = spec.deactivate(g)?;
        for (c, v) in raw.iter().enumerate() {
            data[c * cells + i] = *v;
        }
    }
    SplatTensor::new(Tensor::new(&[PARAMS_PER_GAUSSIAN, s, s], data)?)
}

/// Differentiable activation: raw `[14, S, S]` to parameters `[S², 14]`.
pub fn activate_on_tape(tape: &Tape, raw: Var, spec: &ActivationSpec) -> Result<Var> {
    let rv = tape.value(raw);
    let shape = rv.shape().to_vec();
    if shape.len() != 3 || shape[0] != PARAMS_PER_GAUSSIAN {
        return Err(Error::Validation(format!("expected [14, S, S], got {shape:?}")));
    }
    let cells = shape[1] * shape[2];
    let mut out = vec![0.0; cells * PARAMS_PER_GAUSSIAN];
    let mut raw_cell = [0.0; PARAMS_PER_GAUSSIAN];
    for i in 0..cells {
        for (c, r) in raw_cell.iter_mut().enumerate() {
            *r = rv.data()[c * cells + i];
        }
        out[i * PARAMS_PER_GAUSSIAN..(i + 1) * PARAMS_PER_GAUSSIAN].copy_from_slice(&spec.activate(&raw_cell));
    }
    let activated = Arc::new(out.clone());
    let spec = *spec;
    let y = Tensor::new(&[cells, PARAMS_PER_GAUSSIAN], out)?;
    Ok(tape.op(y, &[raw], move |g, _| {
        let gd = g.data();
        let mut d = vec![0.0; PARAMS_PER_GAUSSIAN * cells];
        for i in 0..cells {
            let a = &activated[i * PARAMS_PER_GAUSSIAN..(i + 1) * PARAMS_PER_GAUSSIAN];
            let gi = &gd[i * PARAMS_PER_GAUSSIAN..(i + 1) * PARAMS_PER_GAUSSIAN];
            let at = |c: usize| c * cells + i;
            for k in 0..3 {
                let p = a[POS + k] / spec.pos_range;
                d[at(POS + k)] = gi[POS + k] * spec.pos_range * (1.0 - p * p);
                let u = (a[SCALE + k] - spec.scale_min) / (spec.scale_max - spec.scale_min);
                d[at(SCALE + k)] = gi[SCALE + k] * (spec.scale_max - spec.scale_min) * u * (1.0 - u);
                d[at(RGB + k)] = gi[RGB + k] * a[RGB + k] * (1.0 - a[RGB + k]);
            }
            d[at(OPACITY)] = gi[OPACITY] * a[OPACITY] * (1.0 - a[OPACITY]);
            let q: [f64; 4] = std::array::from_fn(|k| rv.data()[at(ROT + k)]);
            let n = quat_norm(&q);
            if n >= QUAT_FALLBACK_NORM {
                let qhat = &a[ROT..ROT + 4];
                let dot: f64 = (0..4).map(|k| qhat[k] * gi[ROT + k]).sum();
                for k in 0..4 {
                    d[at(ROT + k)] = (gi[ROT + k] - qhat[k] * dot) / n;
                }
            }
        }
        vec![Some(Tensor::new(&shape, d).unwrap())]
    }))
}

/// Rotation matrix of a unit quaternion `w, x, y, z`.
pub fn quat_to_rotmat(q: &[f64; 4]) -> Result<Mat3> {
    let n = quat_norm(q);
    if (n - 1.0).abs() > 1e-6 {
        return Err(Error::Validation(format!("quaternion norm {n} is not 1")));
    }
    Ok(rotmat_unchecked(q))
}

/// The quaternion-to-matrix polynomial, evaluated without normalisation.
pub(crate) fn rotmat_unchecked(q: &[f64; 4]) -> Mat3 {
    let [w, x, y, z] = *q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// `Σ = R SᵀS Rᵀ` with `S = diag(s)`.
pub fn covariance(q: &[f64; 4], s: &Vec3) -> Result<Mat3> {
    if s.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Validation(format!("scale {s:?} must be positive")));
    }
    let r = quat_to_rotmat(q)?;
    Ok(covariance_unchecked(&r, s))
}

pub(crate) fn covariance_unchecked(r: &Mat3, s: &Vec3) -> Mat3 {
    let sts = [[s[0] * s[0], 0.0, 0.0], [0.0, s[1] * s[1], 0.0], [0.0, 0.0, s[2] * s[2]]];
    mat3_mul(&mat3_mul(r, &sts), &transpose3(r))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PruneStrategy {
    LowestOpacity,
    Random { seed: u64 },
}

/// Removes `⌊len·ratio⌋` Gaussians; survivors keep their order.
pub fn prune(cloud: &GaussianCloud, ratio: f64, strategy: PruneStrategy) -> Result<GaussianCloud> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Range(format!("prune ratio {ratio} must lie in [0, 1)")));
    }
    let n = cloud.len();
    let remove = (n as f64 * ratio).floor() as usize;
    if remove >= n {
        return Err(Error::Range(format!("pruning {remove} of {n} Gaussians leaves none")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    match strategy {
        PruneStrategy::LowestOpacity => order.sort_by(|&a, &b| {
            cloud.gaussians[a]
                .opacity
                .total_cmp(&cloud.gaussians[b].opacity)
                .then(a.cmp(&b))
        }),
        PruneStrategy::Random { seed } => order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
    }
    let mut drop = vec![false; n];
    for &i in &order[..remove] {
        drop[i] = true;
    }
    Ok(GaussianCloud {
        gaussians: cloud
            .gaussians
            .iter()
            .zip(&drop)
            .filter(|(_, &d)| !d)
            .map(|(g, _)| *g)
            .collect(),
    })
}
