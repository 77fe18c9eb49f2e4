use std::sync::Arc;

use crate::error::{shape_err, Result};
use crate::ops::shape::nchw;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;

/// Per-channel batch mean and (biased) variance observed in training mode.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Tape {
    fn bn_check(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let xs = self.shape(x);
        let (n, c, h, w) = nchw("batch_norm", &xs)?;
        for p in [gamma, beta] {
            let s = self.shape(p);
            if s != [c] {
                return Err(shape_err("batch_norm", &[c], &s));
            }
        }
        Ok((n, c, h * w))
    }

    /// Batch normalisation with statistics of the current batch.
    pub fn batch_norm_train(&self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats)> {
        let (n, c, hw) = self.bn_check(x, gamma, beta)?;
        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let m = (n * hw) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for i in 0..n {
            for ch in 0..c {
                let pl = &xv.data()[(i * c + ch) * hw..(i * c + ch + 1) * hw];
                mean[ch] += pl.iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for i in 0..n {
            for ch in 0..c {
                let pl = &xv.data()[(i * c + ch) * hw..(i * c + ch + 1) * hw];
                var[ch] += pl.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= m);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; xv.numel()];
        let mut out = vec![0.0; xv.numel()];
        for i in 0..n {
            for ch in 0..c {
                let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                for j in r {
                    let xh = (xv.data()[j] - mean[ch]) * inv_std[ch];
                    xhat[j] = xh;
                    out[j] = gv.data()[ch] * xh + bv.data()[ch];
                }
            }
        }
        let y = Tensor::new(xv.shape(), out)?;
        let xhat = Arc::new(xhat);
        let shape = xv.shape().to_vec();
        let stats = BatchStats { mean, var };
        let var = self.op(y, &[x, gamma, beta], move |g, need| {
            let gd = g.data();
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            for i in 0..n {
                for ch in 0..c {
                    for j in (i * c + ch) * hw..(i * c + ch + 1) * hw {
                        dgamma[ch] += gd[j] * xhat[j];
                        dbeta[ch] += gd[j];
                    }
                }
            }
            let dx = need[0].then(|| {
                let mut d = vec![0.0; gd.len()];
                for i in 0..n {
                    for ch in 0..c {
                        let k = gv.data()[ch] * inv_std[ch] / m;
                        for j in (i * c + ch) * hw..(i * c + ch + 1) * hw {
                            d[j] = k * (m * gd[j] - dbeta[ch] - xhat[j] * dgamma[ch]);
                        }
                    }
                }
                Tensor::new(&shape, d).unwrap()
            });
            vec![
                dx,
                need[1].then(|| Tensor::from_vec(dgamma)),
                need[2].then(|| Tensor::from_vec(dbeta)),
            ]
        });
        Ok((var, stats))
    }

    /// Batch normalisation with fixed running statistics (a per-channel affine map).
    pub fn batch_norm_eval(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor,
        running_var: &Tensor,
    ) -> Result<Var> {
        let (n, c, hw) = self.bn_check(x, gamma, beta)?;
        if running_mean.shape() != [c] || running_var.shape() != [c] {
            return Err(shape_err("batch_norm_eval", &[c], running_mean.shape()));
        }
        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let inv_std: Vec<f64> = running_var.data().iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mean = running_mean.data().to_vec();
        let mut out = vec![0.0; xv.numel()];
        for i in 0..n {
            for ch in 0..c {
                let k = gv.data()[ch] * inv_std[ch];
                let b = bv.data()[ch] - k * mean[ch];
                for j in (i * c + ch) * hw..(i * c + ch + 1) * hw {
                    out[j] = k * xv.data()[j] + b;
                }
            }
        }
        let y = Tensor::new(xv.shape(), out)?;
        let shape = xv.shape().to_vec();
        Ok(self.op(y, &[x, gamma, beta], move |g, need| {
            let gd = g.data();
            let dx = need[0].then(|| {
                let mut d = vec![0.0; gd.len()];
                for i in 0..n {
                    for ch in 0..c {
                        let k = gv.data()[ch] * inv_std[ch];
                        for j in (i * c + ch) * hw..(i * c + ch + 1) * hw {
                            d[j] = k * gd[j];
                        }
                    }
                }
                Tensor::new(&shape, d).unwrap()
            });
            let (mut dgamma, mut dbeta) = (vec![0.0; c], vec![0.0; c]);
            if need[1] || need[2] {
                for i in 0..n {
                    for ch in 0..c {
                        for j in (i * c + ch) * hw..(i * c + ch + 1) * hw {
                            dgamma[ch] += gd[j] * (xv.data()[j] - mean[ch]) * inv_std[ch];
                            dbeta[ch] += gd[j];
                        }
                    }
                }
            }
            vec![
                dx,
                need[1].then(|| Tensor::from_vec(dgamma)),
                need[2].then(|| Tensor::from_vec(dbeta)),
            ]
        }))
    }
}
