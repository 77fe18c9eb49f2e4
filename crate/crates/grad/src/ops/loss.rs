use crate::error::{shape_err, GradError, Result};
use crate::ops::sigmoid;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

impl Tape {
    pub fn sum(&self, x: Var) -> Var {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        self.op(Tensor::scalar(xv.sum()), &[x], move |g, _| {
            vec![Some(Tensor::full(&shape, g.item()))]
        })
    }

    pub fn mean(&self, x: Var) -> Var {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let n = xv.numel() as f64;
        self.op(Tensor::scalar(xv.sum() / n), &[x], move |g, _| {
            vec![Some(Tensor::full(&shape, g.item() / n))]
        })
    }

    /// Mean of squared elementwise differences.
    pub fn mse(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("mse", av.shape(), bv.shape()));
        }
        let diff = av.zip_map(&bv, |x, y| x - y);
        let n = diff.numel() as f64;
        let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / n;
        Ok(self.op(Tensor::scalar(loss), &[a, b], move |g, need| {
            let k = 2.0 * g.item() / n;
            vec![
                need[0].then(|| diff.scaled(k)),
                need[1].then(|| diff.scaled(-k)),
            ]
        }))
    }

    /// Mean binary cross-entropy of `logits` against binary `targets`, in the
    /// form `max(l,0) − l·t + ln(1 + e^{−|l|})`.
    pub fn bce_with_logits(&self, logits: Var, targets: &Tensor) -> Result<Var> {
        let lv = self.value(logits);
        if lv.shape() != targets.shape() {
            return Err(shape_err("bce_with_logits", lv.shape(), targets.shape()));
        }
        if let Some(t) = targets.data().iter().find(|&&t| t != 0.0 && t != 1.0) {
            return Err(GradError::Validation(format!("bce target {t} is not binary")));
        }
        let n = lv.numel() as f64;
        let loss = lv
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&l, &t)| l.max(0.0) - l * t + (-l.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        let t = targets.clone();
        Ok(self.op(Tensor::scalar(loss), &[logits], move |g, _| {
            let k = g.item() / n;
            vec![Some(lv.zip_map(&t, |l, t| k * (sigmoid(l) - t)))]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bce(logits: Vec<f64>, targets: Vec<f64>) -> f64 {
        let t = Tape::new();
        let l = t.constant(Tensor::from_vec(logits));
        t.value(t.bce_with_logits(l, &Tensor::from_vec(targets)).unwrap()).item()
    }

    #[test]
    fn bce_reference_values() {
        assert!((bce(vec![0.0; 4], vec![1.0, 0.0, 1.0, 1.0]) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce(vec![50.0, -50.0], vec![1.0, 0.0]) < 1e-20);
        assert!((bce(vec![2.0], vec![1.0]) - 0.126_928_011_042_972_6).abs() < 1e-12);
    }

    #[test]
    fn bce_never_overflows() {
        let v = bce(vec![1e4, -1e4, 1e4, -1e4], vec![0.0, 1.0, 1.0, 0.0]);
        assert!(v.is_finite());
        assert!((v - 1e4 / 2.0).abs() < 1e-6);
    }

    #[test]
    fn bce_rejects_non_binary_targets() {
        let t = Tape::new();
        let l = t.constant(Tensor::from_vec(vec![0.0]));
        assert!(t.bce_with_logits(l, &Tensor::from_vec(vec![0.5])).is_err());
    }

    #[test]
    fn mse_trivial() {
        let t = Tape::new();
        let a = t.constant(Tensor::from_vec(vec![0.0, 0.0]));
        let b = t.constant(Tensor::from_vec(vec![1.0, 1.0]));
        assert_eq!(t.value(t.mse(a, b).unwrap()).item(), 1.0);
        assert_eq!(t.value(t.mse(a, a).unwrap()).item(), 0.0);
        let c = t.constant(Tensor::zeros(&[3]));
        assert!(t.mse(a, c).is_err());
    }

    #[test]
    fn backward_of_mse_to_zero() {
        let t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let z = t.constant(Tensor::scalar(0.0));
        let l = t.mse(x, z).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let t = Tape::new();
        let x = t.leaf(Tensor::zeros(&[2]));
        let y = t.scale(x, 2.0);
        assert!(matches!(t.backward(y), Err(GradError::Usage(_))));
    }
}
