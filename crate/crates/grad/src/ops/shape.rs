use crate::error::{dim_err, shape_err, Result};
use crate::gemm::{gemm, Mat};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Splits an `[N,]C,H,W` shape into `(n, c, h, w)`.
pub(crate) fn nchw(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((1, c, h, w)),
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(dim_err(op, format!("expected [C,H,W] or [N,C,H,W], got {shape:?}"))),
    }
}

/// Same leading layout as `like`, with new channel/spatial extents.
pub(crate) fn with_chw(like: &[usize], c: usize, h: usize, w: usize) -> Vec<usize> {
    if like.len() == 4 {
        vec![like[0], c, h, w]
    } else {
        vec![c, h, w]
    }
}

impl Tape {
    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let old = xv.shape().to_vec();
        let y = (*xv).clone().reshape(shape)?;
        Ok(self.op(y, &[x], move |g, _| {
            vec![Some(g.clone().reshape(&old).unwrap())]
        }))
    }

    /// `y = x·W + b` for `x: [N, Din]` (or `[Din]`), `W: [Din, Dout]`, `b: [Dout]`.
    pub fn linear(&self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (n, din, rank1) = match *xv.shape() {
            [d] => (1, d, true),
            [n, d] => (n, d, false),
            _ => return Err(dim_err("linear", format!("input must be rank 1 or 2, got {:?}", xv.shape()))),
        };
        let [wd, dout] = *wv.shape() else {
            return Err(dim_err("linear", format!("weight must be rank 2, got {:?}", wv.shape())));
        };
        if wd != din {
            return Err(shape_err("linear", &[din, dout], wv.shape()));
        }
        if bv.shape() != [dout] {
            return Err(shape_err("linear", &[dout], bv.shape()));
        }
        let mut out = Vec::with_capacity(n * dout);
        for _ in 0..n {
            out.extend_from_slice(bv.data());
        }
        gemm(Mat::new(xv.data(), n, din), Mat::new(wv.data(), din, dout), &mut out, 1.0);
        let shape = if rank1 { vec![dout] } else { vec![n, dout] };
        let y = Tensor::new(&shape, out)?;
        Ok(self.op(y, &[x, w, b], move |g, need| {
            let gd = g.data();
            let dx = need[0].then(|| {
                let mut d = vec![0.0; n * din];
                gemm(Mat::new(gd, n, dout), Mat::new(wv.data(), din, dout).t(), &mut d, 0.0);
                Tensor::new(xv.shape(), d).unwrap()
            });
            let dw = need[1].then(|| {
                let mut d = vec![0.0; din * dout];
                gemm(Mat::new(xv.data(), n, din).t(), Mat::new(gd, n, dout), &mut d, 0.0);
                Tensor::new(&[din, dout], d).unwrap()
            });
            let db = need[2].then(|| {
                let mut d = vec![0.0; dout];
                for row in gd.chunks_exact(dout) {
                    for (a, b) in d.iter_mut().zip(row) {
                        *a += b;
                    }
                }
                Tensor::from_vec(d)
            });
            vec![dx, dw, db]
        }))
    }

    /// Concatenates two `[N,]C,H,W` tensors along channels.
    pub fn concat_channels(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (na, ca, ha, wa) = nchw("concat_channels", av.shape())?;
        let (nb, cb, hb, wb) = nchw("concat_channels", bv.shape())?;
        if (na, ha, wa) != (nb, hb, wb) || av.rank() != bv.rank() {
            return Err(shape_err("concat_channels", av.shape(), bv.shape()));
        }
        let hw = ha * wa;
        let mut out = Vec::with_capacity(na * (ca + cb) * hw);
        for i in 0..na {
            out.extend_from_slice(&av.data()[i * ca * hw..(i + 1) * ca * hw]);
            out.extend_from_slice(&bv.data()[i * cb * hw..(i + 1) * cb * hw]);
        }
        let y = Tensor::new(&with_chw(av.shape(), ca + cb, ha, wa), out)?;
        let (sa, sb) = (av.shape().to_vec(), bv.shape().to_vec());
        Ok(self.op(y, &[a, b], move |g, _| {
            let gd = g.data();
            let mut da = Vec::with_capacity(na * ca * hw);
            let mut db = Vec::with_capacity(na * cb * hw);
            for i in 0..na {
                let base = i * (ca + cb) * hw;
                da.extend_from_slice(&gd[base..base + ca * hw]);
                db.extend_from_slice(&gd[base + ca * hw..base + (ca + cb) * hw]);
            }
            vec![
                Some(Tensor::new(&sa, da).unwrap()),
                Some(Tensor::new(&sb, db).unwrap()),
            ]
        }))
    }

    /// Channels `start..start+len` of a `[N,]C,H,W` tensor.
    pub fn slice_channels(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = nchw("slice_channels", xv.shape())?;
        if len == 0 || start + len > c {
            return Err(dim_err("slice_channels", format!("range {start}..{} exceeds {c} channels", start + len)));
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * len * hw);
        for i in 0..n {
            let base = (i * c + start) * hw;
            out.extend_from_slice(&xv.data()[base..base + len * hw]);
        }
        let y = Tensor::new(&with_chw(xv.shape(), len, h, w), out)?;
        let full = xv.shape().to_vec();
        Ok(self.op(y, &[x], move |g, _| {
            let mut d = Tensor::zeros(&full);
            let dd = d.data_mut();
            for i in 0..n {
                let base = (i * c + start) * hw;
                dd[base..base + len * hw].copy_from_slice(&g.data()[i * len * hw..(i + 1) * len * hw]);
            }
            vec![Some(d)]
        }))
    }

    /// Mean over the leading axis: `[V, ...] -> [...]`.
    pub fn mean_axis0(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() < 2 {
            return Err(dim_err("mean_axis0", format!("need rank >= 2, got {:?}", xv.shape())));
        }
        let v = xv.shape()[0];
        let rest = xv.shape()[1..].to_vec();
        let m: usize = rest.iter().product();
        let mut out = vec![0.0; m];
        for row in xv.data().chunks_exact(m) {
            for (a, b) in out.iter_mut().zip(row) {
                *a += b;
            }
        }
        out.iter_mut().for_each(|a| *a /= v as f64);
        let y = Tensor::new(&rest, out)?;
        let full = xv.shape().to_vec();
        Ok(self.op(y, &[x], move |g, _| {
            let mut d = Vec::with_capacity(v * m);
            for _ in 0..v {
                d.extend(g.data().iter().map(|x| x / v as f64));
            }
            vec![Some(Tensor::new(&full, d).unwrap())]
        }))
    }

    /// Stacks equal-shape values along a new leading axis.
    pub fn stack(&self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| dim_err("stack", "nothing to stack"))?;
        let shape = self.shape(*first);
        let m: usize = shape.iter().product();
        let mut out = Vec::with_capacity(xs.len() * m);
        for &x in xs {
            let v = self.value(x);
            if v.shape() != shape.as_slice() {
                return Err(shape_err("stack", &shape, v.shape()));
            }
            out.extend_from_slice(v.data());
        }
        let mut full = vec![xs.len()];
        full.extend_from_slice(&shape);
        let y = Tensor::new(&full, out)?;
        Ok(self.op(y, xs, move |g, need| {
            g.data()
                .chunks_exact(m)
                .zip(need)
                .map(|(c, &nd)| nd.then(|| Tensor::new(&shape, c.to_vec()).unwrap()))
                .collect()
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_trivial_cases() {
        let t = Tape::new();
        let x = t.constant(Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap());
        let w = t.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = t.constant(Tensor::zeros(&[2]));
        assert_eq!(t.value(t.linear(x, w, b).unwrap()).data(), &[1.0, 2.0]);

        let x = t.constant(Tensor::new(&[1, 2], vec![1.0, 1.0]).unwrap());
        let w = t.constant(Tensor::zeros(&[2, 2]));
        let b = t.constant(Tensor::from_vec(vec![3.0, 4.0]));
        assert_eq!(t.value(t.linear(x, w, b).unwrap()).data(), &[3.0, 4.0]);
    }

    #[test]
    fn linear_rejects_inner_mismatch() {
        let t = Tape::new();
        let x = t.constant(Tensor::zeros(&[1, 3]));
        let w = t.constant(Tensor::zeros(&[2, 2]));
        let b = t.constant(Tensor::zeros(&[2]));
        assert!(t.linear(x, w, b).is_err());
    }

    #[test]
    fn concat_then_slice_recovers_parts() {
        let t = Tape::new();
        let a = t.constant(Tensor::new(&[1, 2, 1, 2], vec![1., 2., 3., 4.]).unwrap());
        let b = t.constant(Tensor::new(&[1, 1, 1, 2], vec![5., 6.]).unwrap());
        let c = t.concat_channels(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[1., 2., 3., 4., 5., 6.]);
        let s = t.slice_channels(c, 1, 2).unwrap();
        assert_eq!(t.value(s).data(), &[3., 4., 5., 6.]);
    }
}
