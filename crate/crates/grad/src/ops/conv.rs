use crate::error::{dim_err, shape_err, Result};
use crate::gemm::{gemm, Mat};
use crate::ops::shape::{nchw, with_chw};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    stride: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let p = g.cols();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *o = if ix >= 0 && ix < g.w as isize { src[ix as usize] } else { 0.0 };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let p = g.cols();
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

impl Tape {
    /// 2-D cross-correlation with zero padding `k/2` for an odd square kernel
    /// `[Cout, Cin, k, k]`. Input is `[Cin,H,W]` or `[N,Cin,H,W]`.
    pub fn conv2d(&self, x: Var, kernel: Var, bias: Option<Var>, stride: usize) -> Result<Var> {
        let (xv, kv) = (self.value(x), self.value(kernel));
        let (n, cin, h, w) = nchw("conv2d", xv.shape())?;
        let [cout, kcin, k, k2] = *kv.shape() else {
            return Err(dim_err("conv2d", format!("kernel must be rank 4, got {:?}", kv.shape())));
        };
        if kcin != cin {
            return Err(dim_err("conv2d", format!("kernel expects {kcin} input channels, input has {cin}")));
        }
        if k != k2 || k % 2 == 0 {
            return Err(dim_err("conv2d", format!("kernel must be odd and square, got {k}x{k2}")));
        }
        if stride == 0 {
            return Err(dim_err("conv2d", "stride must be positive"));
        }
        let bv = match bias {
            Some(b) => {
                let bv = self.value(b);
                if bv.shape() != [cout] {
                    return Err(shape_err("conv2d", &[cout], bv.shape()));
                }
                Some(bv)
            }
            None => None,
        };
        let pad = k / 2;
        let geom = ConvGeom {
            cin,
            h,
            w,
            k,
            pad,
            stride,
            oh: (h + 2 * pad - k) / stride + 1,
            ow: (w + 2 * pad - k) / stride + 1,
        };
        let (kr, p) = (geom.rows(), geom.cols());
        let mut out = vec![0.0; n * cout * p];
        let mut col = vec![0.0; kr * p];
        for i in 0..n {
            im2col(&xv.data()[i * cin * h * w..(i + 1) * cin * h * w], &geom, &mut col);
            let o = &mut out[i * cout * p..(i + 1) * cout * p];
            gemm(Mat::new(kv.data(), cout, kr), Mat::new(&col, kr, p), o, 0.0);
            if let Some(bv) = &bv {
                for (co, row) in o.chunks_exact_mut(p).enumerate() {
                    let b = bv.data()[co];
                    row.iter_mut().for_each(|v| *v += b);
                }
            }
        }
        let y = Tensor::new(&with_chw(xv.shape(), cout, geom.oh, geom.ow), out)?;
        let mut parents = vec![x, kernel];
        parents.extend(bias);
        Ok(self.op(y, &parents, move |g, need| {
            let gd = g.data();
            let mut dx = need[0].then(|| Tensor::zeros(xv.shape()));
            let mut dk = need[1].then(|| vec![0.0; cout * kr]);
            let mut col = vec![0.0; kr * p];
            for i in 0..n {
                let gi = &gd[i * cout * p..(i + 1) * cout * p];
                if let Some(dk) = &mut dk {
                    im2col(&xv.data()[i * cin * h * w..(i + 1) * cin * h * w], &geom, &mut col);
                    gemm(Mat::new(gi, cout, p), Mat::new(&col, kr, p).t(), dk, 1.0);
                }
                if let Some(dx) = &mut dx {
                    gemm(Mat::new(kv.data(), cout, kr).t(), Mat::new(gi, cout, p), &mut col, 0.0);
                    col2im(&col, &geom, &mut dx.data_mut()[i * cin * h * w..(i + 1) * cin * h * w]);
                }
            }
            let mut res = vec![dx, dk.map(|d| Tensor::new(kv.shape(), d).unwrap())];
            if need.len() == 3 {
                res.push(need[2].then(|| {
                    let mut db = vec![0.0; cout];
                    for i in 0..n {
                        for (co, row) in gd[i * cout * p..(i + 1) * cout * p].chunks_exact(p).enumerate() {
                            db[co] += row.iter().sum::<f64>();
                        }
                    }
                    Tensor::from_vec(db)
                }));
            }
            res
        }))
    }

    /// 2×2 mean pooling over the last two axes (even extents required).
    pub fn avg_pool2(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let r = xv.rank();
        if r < 2 {
            return Err(dim_err("avg_pool2", "need at least two axes"));
        }
        let (h, w) = (xv.shape()[r - 2], xv.shape()[r - 1]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(dim_err("avg_pool2", format!("spatial extents must be even, got {h}x{w}")));
        }
        let planes = xv.numel() / (h * w);
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0; planes * oh * ow];
        for pl in 0..planes {
            let src = &xv.data()[pl * h * w..(pl + 1) * h * w];
            let dst = &mut out[pl * oh * ow..(pl + 1) * oh * ow];
            for y in 0..oh {
                for x in 0..ow {
                    let a = src[2 * y * w + 2 * x];
                    let b = src[2 * y * w + 2 * x + 1];
                    let c = src[(2 * y + 1) * w + 2 * x];
                    let d = src[(2 * y + 1) * w + 2 * x + 1];
                    dst[y * ow + x] = (a + b + c + d) * 0.25;
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        shape[r - 2] = oh;
        shape[r - 1] = ow;
        let full = xv.shape().to_vec();
        let y = Tensor::new(&shape, out)?;
        Ok(self.op(y, &[x], move |g, _| {
            let mut d = vec![0.0; planes * h * w];
            for pl in 0..planes {
                let gs = &g.data()[pl * oh * ow..(pl + 1) * oh * ow];
                let dst = &mut d[pl * h * w..(pl + 1) * h * w];
                for y in 0..h {
                    for x in 0..w {
                        dst[y * w + x] = gs[(y / 2) * ow + x / 2] * 0.25;
                    }
                }
            }
            vec![Some(Tensor::new(&full, d).unwrap())]
        }))
    }

    /// Nearest-neighbour 2× upsampling over the last two axes.
    pub fn upsample2(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let r = xv.rank();
        if r < 2 {
            return Err(dim_err("upsample2", "need at least two axes"));
        }
        let (h, w) = (xv.shape()[r - 2], xv.shape()[r - 1]);
        let planes = xv.numel() / (h * w);
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0; planes * oh * ow];
        for pl in 0..planes {
            let src = &xv.data()[pl * h * w..(pl + 1) * h * w];
            let dst = &mut out[pl * oh * ow..(pl + 1) * oh * ow];
            for y in 0..oh {
                for x in 0..ow {
                    dst[y * ow + x] = src[(y / 2) * w + x / 2];
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        shape[r - 2] = oh;
        shape[r - 1] = ow;
        let full = xv.shape().to_vec();
        let y = Tensor::new(&shape, out)?;
        Ok(self.op(y, &[x], move |g, _| {
            let mut d = vec![0.0; planes * h * w];
            for pl in 0..planes {
                let gs = &g.data()[pl * oh * ow..(pl + 1) * oh * ow];
                let dst = &mut d[pl * h * w..(pl + 1) * h * w];
                for y in 0..oh {
                    for x in 0..ow {
                        dst[(y / 2) * w + x / 2] += gs[y * ow + x];
                    }
                }
            }
            vec![Some(Tensor::new(&full, d).unwrap())]
        }))
    }

    /// `[N,C,H,W] -> [N,C]` spatial mean (`[C,H,W] -> [C]`).
    pub fn global_avg_pool(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = nchw("global_avg_pool", xv.shape())?;
        let hw = h * w;
        let out: Vec<f64> = xv
            .data()
            .chunks_exact(hw)
            .map(|pl| pl.iter().sum::<f64>() / hw as f64)
            .collect();
        let shape = if xv.rank() == 4 { vec![n, c] } else { vec![c] };
        let full = xv.shape().to_vec();
        let y = Tensor::new(&shape, out)?;
        Ok(self.op(y, &[x], move |g, _| {
            let mut d = Vec::with_capacity(n * c * hw);
            for &gv in g.data() {
                d.extend(std::iter::repeat_n(gv / hw as f64, hw));
            }
            vec![Some(Tensor::new(&full, d).unwrap())]
        }))
    }

    /// Bilinear resize of the last two axes (half-pixel centres, edge clamp).
    pub fn resize_bilinear(&self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let xv = self.value(x);
        let r = xv.rank();
        if r < 2 || oh == 0 || ow == 0 {
            return Err(dim_err("resize_bilinear", "need at least two axes and positive target"));
        }
        let (h, w) = (xv.shape()[r - 2], xv.shape()[r - 1]);
        if (h, w) == (oh, ow) {
            return self.reshape(x, &xv.shape().to_vec());
        }
        let ry = bilinear_taps(h, oh);
        let rx = bilinear_taps(w, ow);
        let planes = xv.numel() / (h * w);
        let mut out = vec![0.0; planes * oh * ow];
        for pl in 0..planes {
            let src = &xv.data()[pl * h * w..(pl + 1) * h * w];
            let dst = &mut out[pl * oh * ow..(pl + 1) * oh * ow];
            for (y, &(y0, y1, fy)) in ry.iter().enumerate() {
                for (x, &(x0, x1, fx)) in rx.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                    let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                    dst[y * ow + x] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        shape[r - 2] = oh;
        shape[r - 1] = ow;
        let full = xv.shape().to_vec();
        let y = Tensor::new(&shape, out)?;
        Ok(self.op(y, &[x], move |g, _| {
            let mut d = vec![0.0; planes * h * w];
            for pl in 0..planes {
                let gs = &g.data()[pl * oh * ow..(pl + 1) * oh * ow];
                let dst = &mut d[pl * h * w..(pl + 1) * h * w];
                for (y, &(y0, y1, fy)) in ry.iter().enumerate() {
                    for (x, &(x0, x1, fx)) in rx.iter().enumerate() {
                        let gv = gs[y * ow + x];
                        dst[y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                        dst[y0 * w + x1] += gv * (1.0 - fy) * fx;
                        dst[y1 * w + x0] += gv * fy * (1.0 - fx);
                        dst[y1 * w + x1] += gv * fy * fx;
                    }
                }
            }
            vec![Some(Tensor::new(&full, d).unwrap())]
        }))
    }
}

fn bilinear_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_reproduces_input() {
        let t = Tape::new();
        let x = Tensor::new(&[1, 3, 3], (0..9).map(|v| v as f64).collect()).unwrap();
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        let xv = t.constant(x.clone());
        let kv = t.constant(k);
        let y = t.conv2d(xv, kv, None, 1).unwrap();
        assert_eq!(*t.value(y), x);
    }

    #[test]
    fn zero_kernel_gives_zero() {
        let t = Tape::new();
        let x = t.constant(Tensor::full(&[2, 4, 4], 1.5));
        let k = t.constant(Tensor::zeros(&[3, 2, 3, 3]));
        let y = t.value(t.conv2d(x, k, None, 1).unwrap());
        assert_eq!(y.shape(), &[3, 4, 4]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let t = Tape::new();
        let x = t.constant(Tensor::zeros(&[2, 4, 4]));
        let k = t.constant(Tensor::zeros(&[1, 3, 3, 3]));
        assert!(matches!(t.conv2d(x, k, None, 1), Err(crate::GradError::Dimension { .. })));
    }

    #[test]
    fn stride_two_halves_extent() {
        let t = Tape::new();
        let x = t.constant(Tensor::full(&[1, 1, 8, 8], 1.0));
        let k = t.constant(Tensor::ones(&[1, 1, 3, 3]));
        let y = t.value(t.conv2d(x, k, None, 2).unwrap());
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        // top-left output sees a 2×2 valid window, interior ones see 3×3
        assert_eq!(y.data()[0], 4.0);
        assert_eq!(y.data()[5], 9.0);
    }

    #[test]
    fn half_size_bilinear_is_block_mean() {
        let t = Tape::new();
        let data: Vec<f64> = (0..16).map(|v| (v * v) as f64).collect();
        let x = t.constant(Tensor::new(&[1, 4, 4], data).unwrap());
        let a = t.value(t.resize_bilinear(x, 2, 2).unwrap());
        let b = t.value(t.avg_pool2(x).unwrap());
        assert!(a.max_abs_diff(&b) < 1e-12);
    }
}
