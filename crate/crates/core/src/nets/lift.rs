use std::sync::Arc;

use gseal_grad::{Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::gaussians::{grid_direction, ActivationSpec, Gaussian, PARAMS_PER_GAUSSIAN};
use crate::math::{normalize, sub};
use crate::renderer::Camera;

/// Radius of the proxy sphere the views are resampled from.
pub const LIFT_RADIUS: f64 = 0.5;

/// Fixed resampling of the input views onto the splat grid. Each cell reads
/// every view bilinearly at the projection of its proxy-sphere point (zero
/// where that point faces away from the camera), followed by three planes
/// holding the cell's direction.
#[derive(Clone, Debug)]
pub struct ViewLift {
    pub side: usize,
    views: usize,
    height: usize,
    width: usize,
    /// Per view and cell: `(pixel index, weight)` taps into one view plane.
    taps: Arc<Vec<Vec<(usize, f64)>>>,
}

impl ViewLift {
    /// `cams` are the cameras of the input views, in input order.
    pub fn new(cams: &[Camera], side: usize) -> Result<Self> {
        let (h, w) = match cams.first() {
            Some(c) => (c.height, c.width),
            None => return Err(Error::Validation("view lift needs at least one camera".into())),
        };
        if side == 0 || cams.iter().any(|c| (c.height, c.width) != (h, w)) {
            return Err(Error::Validation("view lift needs a positive side and equal view sizes".into()));
        }
        let mut taps = Vec::with_capacity(cams.len() * side * side);
        for cam in cams {
            let eye = cam.eye();
            for r in 0..side {
                for c in 0..side {
                    let d = grid_direction(r, c, side);
                    let p = d.map(|v| v * LIFT_RADIUS);
                    let to_eye = normalize(&sub(&eye, &p));
                    let facing = d[0] * to_eye[0] + d[1] * to_eye[1] + d[2] * to_eye[2];
                    let q = cam.world_to_camera(&p);
                    if facing <= 0.0 || q[2] <= cam.near {
                        taps.push(Vec::new());
                        continue;
                    }
                    let u = cam.focal * q[0] / q[2] + cam.cx - 0.5;
                    let v = cam.focal * q[1] / q[2] + cam.cy - 0.5;
                    taps.push(bilinear_taps(u, v, h, w));
                }
            }
        }
        Ok(ViewLift { side, views: cams.len(), height: h, width: w, taps: Arc::new(taps) })
    }

    /// Channels produced: three per view plus three direction planes.
    pub fn channels(&self) -> usize {
        3 * self.views + 3
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [3 * self.views, self.height, self.width]
    }

    fn directions(&self) -> Vec<f64> {
        let s = self.side;
        let mut out = vec![0.0; 3 * s * s];
        for r in 0..s {
            for c in 0..s {
                let d = grid_direction(r, c, s);
                for k in 0..3 {
                    out[(k * s + r) * s + c] = d[k];
                }
            }
        }
        out
    }

    /// `[3V, H, W]` views to `[3V + 3, S, S]` grid features.
    pub fn apply(&self, tape: &Tape, x: Var) -> Result<Var> {
        let shape = tape.shape(x);
        if shape != self.input_shape() {
            return Err(Error::Validation(format!("view lift expects {:?}, got {shape:?}", self.input_shape())));
        }
        let xv = tape.value(x);
        let (cells, plane) = (self.side * self.side, self.height * self.width);
        let mut out = Vec::with_capacity(self.channels() * cells);
        for view in 0..self.views {
            for ch in 0..3 {
                let src = &xv.data()[(3 * view + ch) * plane..(3 * view + ch + 1) * plane];
                for t in &self.taps[view * cells..(view + 1) * cells] {
                    out.push(t.iter().map(|&(i, wt)| wt * src[i]).sum());
                }
            }
        }
        out.extend(self.directions());
        let value = Tensor::new(&[self.channels(), self.side, self.side], out)?;
        let taps = Arc::clone(&self.taps);
        let (views, n_in) = (self.views, xv.numel());
        Ok(tape.op(value, &[x], move |g, _| {
            let mut d = vec![0.0; n_in];
            for view in 0..views {
                for ch in 0..3 {
                    let base = (3 * view + ch) * plane;
                    let go = &g.data()[(3 * view + ch) * cells..(3 * view + ch + 1) * cells];
                    for (t, gv) in taps[view * cells..(view + 1) * cells].iter().zip(go) {
                        for &(i, wt) in t {
                            d[base + i] += wt * gv;
                        }
                    }
                }
            }
            vec![Some(Tensor::new(&shape, d).unwrap())]
        }))
    }
}

/// Bilinear taps at continuous pixel-centre coordinates `(u, v)`, clamped
/// to the image.
fn bilinear_taps(u: f64, v: f64, h: usize, w: usize) -> Vec<(usize, f64)> {
    let u = u.clamp(0.0, (w - 1) as f64);
    let v = v.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (u.floor() as usize, v.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (tx, ty) = (u - x0 as f64, v - y0 as f64);
    [
        (y0 * w + x0, (1.0 - tx) * (1.0 - ty)),
        (y0 * w + x1, tx * (1.0 - ty)),
        (y1 * w + x0, (1.0 - tx) * ty),
        (y1 * w + x1, tx * ty),
    ]
    .into_iter()
    .filter(|&(_, wt)| wt != 0.0)
    .collect()
}

/// Raw splat tensor `[14, S, S]` of Gaussians on the proxy sphere, one per
/// cell at its direction: the additive head prior of a lifted generator.
pub fn proxy_prior(side: usize, spec: &ActivationSpec) -> Result<Tensor> {
    let spacing = LIFT_RADIUS * (4.0 * std::f64::consts::PI / (side * side) as f64).sqrt();
    let cells = side * side;
    let mut data = vec![0.0; PARAMS_PER_GAUSSIAN * cells];
    for r in 0..side {
        for c in 0..side {
            let d = grid_direction(r, c, side);
            let g = Gaussian {
                position: d.map(|v| v * LIFT_RADIUS),
                rotation: [1.0, 0.0, 0.0, 0.0],
                scale: [(0.7 * spacing).clamp(spec.scale_min * 1.5, spec.scale_max * 0.5); 3],
                opacity: 0.8,
                color: [0.5; 3],
            };
            for (k, v) in spec.deactivate(&g)?.iter().enumerate() {
                data[k * cells + r * side + c] = *v;
            }
        }
    }
    Ok(Tensor::new(&[PARAMS_PER_GAUSSIAN, side, side], data)?)
}
