use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussians::{Gaussian, GaussianCloud};

use super::project::{project, project_backward, project_unculled, Grad2D, CUTOFF_D2};
use super::{Camera, Image, Projected2D};

pub const TILE: usize = 16;
pub const WHITE: [f64; 3] = [1.0, 1.0, 1.0];
/// Compositing stops once transmittance falls below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderConfig {
    pub background: [f64; 3],
    /// Enables the `d² > 18` weight cutoff, bounding-box binning and culling,
    /// and early termination.
    pub cutoffs: bool,
    /// Rasterize tiles on the rayon pool. Output is identical either way.
    pub parallel: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            background: WHITE,
            cutoffs: true,
            parallel: true,
        }
    }
}

impl RenderConfig {
    pub fn serial(self) -> Self {
        RenderConfig { parallel: false, ..self }
    }

    pub fn without_cutoffs(self) -> Self {
        RenderConfig { cutoffs: false, ..self }
    }
}

/// Front-to-back compositing of an already sorted, already weighted list of
/// `(σ, colour)` pairs over `bg`.
pub fn composite(layers: &[(f64, [f64; 3])], bg: [f64; 3]) -> [f64; 3] {
    let mut t = 1.0;
    let mut c = [0.0; 3];
    for (sigma, col) in layers {
        for k in 0..3 {
            c[k] += col[k] * sigma * t;
        }
        t *= 1.0 - sigma;
    }
    for k in 0..3 {
        c[k] += t * bg[k];
    }
    c
}

/// Depth-sorted projections of the visible part of a cloud. Stable by index on
/// equal depth.
fn sorted_projections(gaussians: &[Gaussian], cam: &Camera, cull: bool) -> Vec<Projected2D> {
    let mut pgs: Vec<Projected2D> = gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| if cull { project(g, i, cam) } else { project_unculled(g, i, cam) })
        .collect();
    pgs.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    pgs
}

struct Tiles {
    cols: usize,
    rows: usize,
    lists: Vec<Vec<u32>>,
}

fn bin(pgs: &[Projected2D], cam: &Camera, cutoffs: bool) -> Tiles {
    let cols = cam.width.div_ceil(TILE);
    let rows = cam.height.div_ceil(TILE);
    let mut lists = vec![Vec::new(); cols * rows];
    for (k, pg) in pgs.iter().enumerate() {
        if !cutoffs {
            lists.iter_mut().for_each(|l| l.push(k as u32));
            continue;
        }
        // tile range from the cutoff box, then exact per-tile test
        let tx0 = ((pg.mean[0] - pg.extent[0] - 0.5) / TILE as f64).floor().max(0.0) as usize;
        let ty0 = ((pg.mean[1] - pg.extent[1] - 0.5) / TILE as f64).floor().max(0.0) as usize;
        let tx1 = (((pg.mean[0] + pg.extent[0] - 0.5) / TILE as f64).floor().max(-1.0) + 1.0) as usize;
        let ty1 = (((pg.mean[1] + pg.extent[1] - 0.5) / TILE as f64).floor().max(-1.0) + 1.0) as usize;
        for ty in ty0..ty1.min(rows) {
            for tx in tx0..tx1.min(cols) {
                let (x0, y0) = ((tx * TILE) as f64, (ty * TILE) as f64);
                let x1 = ((tx + 1) * TILE).min(cam.width) as f64;
                let y1 = ((ty + 1) * TILE).min(cam.height) as f64;
                if pg.touches(x0, x1, y0, y1) {
                    lists[ty * cols + tx].push(k as u32);
                }
            }
        }
    }
    Tiles { cols, rows, lists }
}

/// `exp(−½·18)`: the falloff at the cutoff ellipse.
const CUTOFF_FLOOR: f64 = 1.2340980408667956e-4;

/// Rasterizer weight at a pixel: `(σ, ∂σ/∂a, ∂σ/∂power, dx, dy)`.
///
/// With cutoffs the falloff is shifted and rescaled so it reaches exactly
/// zero on the `d² = 18` ellipse, keeping σ continuous there (the plain
/// falloff would jump by `a·e⁻⁹`). At the centre σ is still `a`.
#[inline]
fn weight(pg: &Projected2D, px: f64, py: f64, cutoffs: bool) -> (f64, f64, f64, f64, f64) {
    let dx = px - pg.mean[0];
    let dy = py - pg.mean[1];
    let d2 = pg.conic[0] * dx * dx + 2.0 * pg.conic[1] * dx * dy + pg.conic[2] * dy * dy;
    if !cutoffs {
        let e = (-0.5 * d2).exp();
        let sigma = pg.opacity * e;
        return (sigma, e, sigma, dx, dy);
    }
    if d2 >= CUTOFF_D2 {
        return (0.0, 0.0, 0.0, dx, dy);
    }
    let e = (-0.5 * d2).exp();
    let k = 1.0 / (1.0 - CUTOFF_FLOOR);
    let falloff = (e - CUTOFF_FLOOR) * k;
    (pg.opacity * falloff, falloff, pg.opacity * e * k, dx, dy)
}

struct TileOut {
    /// `(x, y, rgb, transmittance)` for each pixel of the tile.
    pixels: Vec<(usize, usize, [f64; 3], f64)>,
}

fn shade_tile(pgs: &[Projected2D], list: &[u32], cam: &Camera, cfg: &RenderConfig, tx: usize, ty: usize) -> TileOut {
    let mut pixels = Vec::with_capacity(TILE * TILE);
    for y in ty * TILE..((ty + 1) * TILE).min(cam.height) {
        for x in tx * TILE..((tx + 1) * TILE).min(cam.width) {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut c = [0.0; 3];
            for &k in list {
                let pg = &pgs[k as usize];
                let (sigma, ..) = weight(pg, px, py, cfg.cutoffs);
                if sigma == 0.0 {
                    continue;
                }
                for ch in 0..3 {
                    c[ch] += pg.color[ch] * sigma * t;
                }
                t *= 1.0 - sigma;
                if cfg.cutoffs && t < MIN_TRANSMITTANCE {
                    break;
                }
            }
            for ch in 0..3 {
                c[ch] += t * cfg.background[ch];
            }
            pixels.push((x, y, c, t));
        }
    }
    TileOut { pixels }
}

fn check(cloud: &GaussianCloud, cam: &Camera) -> Result<()> {
    if cloud.is_empty() {
        return Err(Error::Validation("cannot render an empty cloud".into()));
    }
    cam.validate()
}

/// Tiled rasterization; returns the image and per-pixel final transmittance.
pub fn render_with_alpha(gaussians: &[Gaussian], cam: &Camera, cfg: &RenderConfig) -> (Image, Vec<f64>) {
    let pgs = sorted_projections(gaussians, cam, cfg.cutoffs);
    let tiles = bin(&pgs, cam, cfg.cutoffs);
    let job = |i: usize| shade_tile(&pgs, &tiles.lists[i], cam, cfg, i % tiles.cols, i / tiles.cols);
    let outs: Vec<TileOut> = if cfg.parallel {
        (0..tiles.cols * tiles.rows).into_par_iter().map(job).collect()
    } else {
        (0..tiles.cols * tiles.rows).map(job).collect()
    };
    let mut img = Image::filled(cam.height, cam.width, [0.0; 3]);
    let mut alpha = vec![0.0; cam.height * cam.width];
    for out in outs {
        for (x, y, c, t) in out.pixels {
            for ch in 0..3 {
                img.set(ch, y, x, c[ch]);
            }
            alpha[y * cam.width + x] = t;
        }
    }
    (img, alpha)
}

pub fn render(cloud: &GaussianCloud, cam: &Camera, cfg: &RenderConfig) -> Result<Image> {
    check(cloud, cam)?;
    Ok(render_with_alpha(&cloud.gaussians, cam, cfg).0)
}

/// Brute-force oracle: every pixel visits every Gaussian in front of the near
/// plane, no cutoffs, no early termination, no tiles. White background.
pub fn render_reference(cloud: &GaussianCloud, cam: &Camera) -> Result<Image> {
    render_reference_bg(cloud, cam, WHITE)
}

pub fn render_reference_bg(cloud: &GaussianCloud, cam: &Camera, bg: [f64; 3]) -> Result<Image> {
    check(cloud, cam)?;
    let pgs = sorted_projections(&cloud.gaussians, cam, false);
    let mut img = Image::filled(cam.height, cam.width, [0.0; 3]);
    let mut layers = Vec::with_capacity(pgs.len());
    for y in 0..cam.height {
        for x in 0..cam.width {
            layers.clear();
            let p = [x as f64 + 0.5, y as f64 + 0.5];
            layers.extend(pgs.iter().map(|pg| (super::pixel_weight(p, pg), pg.color)));
            let c = composite(&layers, bg);
            for ch in 0..3 {
                img.set(ch, y, x, c[ch]);
            }
        }
    }
    Ok(img)
}

/// Gradient of `Σ dL/dC · C` with respect to each Gaussian's 14 parameters,
/// in channel-layout order, for the image produced by [`render`] with the
/// same arguments. `d_image` is `3·H·W`, planar.
pub fn render_backward(gaussians: &[Gaussian], cam: &Camera, cfg: &RenderConfig, d_image: &[f64]) -> Vec<[f64; 14]> {
    let pgs = sorted_projections(gaussians, cam, cfg.cutoffs);
    let tiles = bin(&pgs, cam, cfg.cutoffs);
    let plane = cam.width * cam.height;
    let job = |i: usize| {
        let (tx, ty) = (i % tiles.cols, i / tiles.cols);
        let list = &tiles.lists[i];
        let mut acc = vec![Grad2D::default(); list.len()];
        // (slot in list, σ, ∂σ/∂a, ∂σ/∂power, dx, dy, transmittance before)
        let mut hits: Vec<(usize, f64, f64, f64, f64, f64, f64)> = Vec::new();
        for y in ty * TILE..((ty + 1) * TILE).min(cam.height) {
            for x in tx * TILE..((tx + 1) * TILE).min(cam.width) {
                let pix = y * cam.width + x;
                let dc = [d_image[pix], d_image[plane + pix], d_image[2 * plane + pix]];
                if dc == [0.0; 3] {
                    continue;
                }
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                hits.clear();
                let mut t = 1.0;
                for (slot, &k) in list.iter().enumerate() {
                    let (sigma, ds_da, ds_dp, dx, dy) = weight(&pgs[k as usize], px, py, cfg.cutoffs);
                    if sigma == 0.0 {
                        continue;
                    }
                    hits.push((slot, sigma, ds_da, ds_dp, dx, dy, t));
                    t *= 1.0 - sigma;
                    if cfg.cutoffs && t < MIN_TRANSMITTANCE {
                        break;
                    }
                }
                // colour of everything behind layer i, composited over bg
                let mut behind = cfg.background;
                for &(slot, sigma, ds_da, ds_dp, dx, dy, ti) in hits.iter().rev() {
                    let pg = &pgs[list[slot] as usize];
                    let g = &mut acc[slot];
                    let mut dsigma = 0.0;
                    for ch in 0..3 {
                        dsigma += dc[ch] * ti * (pg.color[ch] - behind[ch]);
                        g.color[ch] += dc[ch] * sigma * ti;
                        behind[ch] = pg.color[ch] * sigma + (1.0 - sigma) * behind[ch];
                    }
                    g.opacity += dsigma * ds_da;
                    let dpower = dsigma * ds_dp;
                    let cn = &pg.conic;
                    g.conic[0] += -0.5 * dx * dx * dpower;
                    g.conic[1] += -dx * dy * dpower;
                    g.conic[2] += -0.5 * dy * dy * dpower;
                    g.mean[0] += dpower * (cn[0] * dx + cn[1] * dy);
                    g.mean[1] += dpower * (cn[1] * dx + cn[2] * dy);
                }
            }
        }
        acc
    };
    let per_tile: Vec<Vec<Grad2D>> = if cfg.parallel {
        (0..tiles.lists.len()).into_par_iter().map(job).collect()
    } else {
        (0..tiles.lists.len()).map(job).collect()
    };
    let mut g2 = vec![Grad2D::default(); pgs.len()];
    for (list, acc) in tiles.lists.iter().zip(&per_tile) {
        for (&k, g) in list.iter().zip(acc) {
            g2[k as usize].add(g);
        }
    }
    let mut out = vec![[0.0; 14]; gaussians.len()];
    for (pg, g) in pgs.iter().zip(&g2) {
        if *g != Grad2D::default() {
            out[pg.index] = project_backward(&gaussians[pg.index], cam, g);
        }
    }
    out
}
