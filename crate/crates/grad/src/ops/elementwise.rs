use crate::error::{shape_err, Result};
use crate::ops::sigmoid;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

impl Tape {
    /// Pointwise map whose derivative is expressed through input and output.
    fn unary(
        &self,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let xv = self.value(x);
        let y = xv.map(f);
        let yv = std::sync::Arc::new(y.clone());
        self.op(y, &[x], move |g, _| {
            let d = g
                .data()
                .iter()
                .zip(xv.data())
                .zip(yv.data())
                .map(|((g, &x), &y)| g * df(x, y))
                .collect();
            vec![Some(Tensor::new(g.shape(), d).unwrap())]
        })
    }

    pub fn silu(&self, x: Var) -> Var {
        self.unary(
            x,
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            },
        )
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, f64::tanh, |_, y| 1.0 - y * y)
    }

    fn binary_check(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, &sa, &sb));
        }
        Ok(())
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_check("add", a, b)?;
        let y = self.value(a).zip_map(&self.value(b), |x, y| x + y);
        Ok(self.op(y, &[a, b], |g, _| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_check("sub", a, b)?;
        let y = self.value(a).zip_map(&self.value(b), |x, y| x - y);
        Ok(self.op(y, &[a, b], |g, _| vec![Some(g.clone()), Some(g.scaled(-1.0))]))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_check("mul", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let y = av.zip_map(&bv, |x, y| x * y);
        Ok(self.op(y, &[a, b], move |g, need| {
            vec![
                need[0].then(|| g.zip_map(&bv, |g, b| g * b)),
                need[1].then(|| g.zip_map(&av, |g, a| g * a)),
            ]
        }))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let y = self.value(a).scaled(c);
        self.op(y, &[a], move |g, _| vec![Some(g.scaled(c))])
    }

    /// `s·a` for a one-element `s`.
    pub fn scale_by(&self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.numel() != 1 {
            return Err(shape_err("scale_by", &[], sv.shape()));
        }
        let av = self.value(a);
        let k = sv.item();
        let s_shape = sv.shape().to_vec();
        let y = av.scaled(k);
        Ok(self.op(y, &[a, s], move |g, need| {
            vec![
                need[0].then(|| g.scaled(k)),
                need[1].then(|| {
                    let d: f64 = g.data().iter().zip(av.data()).map(|(g, a)| g * a).sum();
                    Tensor::full(&s_shape, d)
                }),
            ]
        }))
    }
}
