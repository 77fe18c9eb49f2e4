use gseal_grad::{Parameter, Tape, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::Result;

/// 3×3 convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: Parameter,
    pub bias: Parameter,
    pub stride: usize,
}

impl Conv {
    /// He-uniform weights, zero bias.
    pub fn new(name: &str, cin: usize, cout: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (cin * 9) as f64).sqrt();
        Conv {
            weight: Parameter::new(format!("{name}.weight"), uniform(&[cout, cin, 3, 3], bound, rng)),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[cout])),
            stride,
        }
    }

    pub fn zeros(name: &str, cin: usize, cout: usize) -> Self {
        Conv {
            weight: Parameter::new(format!("{name}.weight"), Tensor::zeros(&[cout, cin, 3, 3])),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[cout])),
            stride: 1,
        }
    }

    pub fn forward(&self, tape: &Tape, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(&self.weight), tape.param(&self.bias));
        Ok(tape.conv2d(x, w, Some(b), self.stride)?)
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    pub fn new(name: &str, din: usize, dout: usize, rng: &mut impl Rng) -> Self {
        let bound = (1.0 / din as f64).sqrt();
        Linear {
            weight: Parameter::new(format!("{name}.weight"), uniform(&[din, dout], bound, rng)),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[dout])),
        }
    }

    pub fn zeros(name: &str, din: usize, dout: usize) -> Self {
        Linear {
            weight: Parameter::new(format!("{name}.weight"), Tensor::zeros(&[din, dout])),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[dout])),
        }
    }

    pub fn forward(&self, tape: &Tape, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(&self.weight), tape.param(&self.bias));
        Ok(tape.linear(x, w, b)?)
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("positive extents")
}
