use gseal_grad::{Parameter, Tape, Tensor, Var};
use rand::Rng;

use super::layers::{Conv, Linear};
use crate::error::{Error, Result};

/// Spatial side of the learned message block.
pub const BLOCK: usize = 8;
/// Channels of `b_in`'s block, cycled over the stem width.
pub const INPUT_BLOCK_CHANNELS: usize = 4;
/// Initial value of α, β and γ.
pub const COEFF_INIT: f64 = 0.1;

/// Repeats a `C×8×8` block over an `H×W` field and cycles channels up to
/// `c_target`.
pub fn tile_block(e: &Tensor, h: usize, w: usize, c_target: usize) -> Result<Tensor> {
    let (_, idx) = tile_index(e.shape(), h, w, c_target)?;
    let d = e.data();
    Ok(Tensor::new(&[c_target, h, w], idx.iter().map(|&i| d[i]).collect())?)
}

fn tile_index(shape: &[usize], h: usize, w: usize, c_target: usize) -> Result<(usize, Vec<usize>)> {
    let c = match *shape {
        [c, BLOCK, BLOCK] => c,
        _ => return Err(Error::Validation(format!("expected a [C, 8, 8] block, got {shape:?}"))),
    };
    if h == 0 || w == 0 || h % BLOCK != 0 || w % BLOCK != 0 || c_target == 0 {
        return Err(Error::Validation(format!("cannot tile 8x8 blocks over {c_target}x{h}x{w}")));
    }
    let mut idx = Vec::with_capacity(c_target * h * w);
    for ch in 0..c_target {
        for y in 0..h {
            for x in 0..w {
                idx.push(((ch % c) * BLOCK + y % BLOCK) * BLOCK + x % BLOCK);
            }
        }
    }
    Ok((c, idx))
}

/// Differentiable [`tile_block`]; the backward pass sums over repeats.
pub fn tile_block_on_tape(tape: &Tape, e: Var, h: usize, w: usize, c_target: usize) -> Result<Var> {
    let ev = tape.value(e);
    let (_, idx) = tile_index(ev.shape(), h, w, c_target)?;
    let out = Tensor::new(&[c_target, h, w], idx.iter().map(|&i| ev.data()[i]).collect())?;
    let n = ev.numel();
    let shape = ev.shape().to_vec();
    Ok(tape.op(out, &[e], move |g, _| {
        let mut d = vec![0.0; n];
        for (&i, v) in idx.iter().zip(g.data()) {
            d[i] += v;
        }
        vec![Some(Tensor::new(&shape, d).unwrap())]
    }))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ModulationInit {
    /// Every weight and bias zero.
    #[default]
    AllZero,
    /// Random linear layer, zero convolution: output still exactly zero, but
    /// the convolution weights receive gradient from the first step.
    ZeroOutput,
}

/// One bit-embedding network: linear `L → C·64`, SiLU, reshape to `C×8×8`,
/// 3×3 convolution.
#[derive(Clone, Debug)]
pub struct ModulationNet {
    pub linear: Linear,
    pub conv: Conv,
    pub channels: usize,
}

impl ModulationNet {
    pub fn new(name: &str, bits: usize, channels: usize, init: ModulationInit, rng: &mut impl Rng) -> Self {
        let n = channels * BLOCK * BLOCK;
        let linear = match init {
            ModulationInit::AllZero => Linear::zeros(&format!("{name}.linear"), bits, n),
            ModulationInit::ZeroOutput => Linear::new(&format!("{name}.linear"), bits, n, rng),
        };
        ModulationNet {
            linear,
            conv: Conv::zeros(&format!("{name}.conv"), channels, channels),
            channels,
        }
    }

    /// `[C, 8, 8]` block for a message tensor `[L]`.
    pub fn forward(&self, tape: &Tape, m: Var) -> Result<Var> {
        let h = self.linear.forward(tape, m)?;
        let h = tape.silu(h);
        let h = tape.reshape(h, &[self.channels, BLOCK, BLOCK])?;
        self.conv.forward(tape, h)
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut v = self.linear.params();
        v.extend(self.conv.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.linear.params_mut();
        v.extend(self.conv.params_mut());
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SiteSet {
    pub input: bool,
    pub mid: bool,
    pub out: bool,
}

impl SiteSet {
    pub const ALL: SiteSet = SiteSet { input: true, mid: true, out: true };
    pub const NONE: SiteSet = SiteSet { input: false, mid: false, out: false };

    /// The eight subsets, empty set first, all sites last.
    pub fn subsets() -> [SiteSet; 8] {
        let s = |input, mid, out| SiteSet { input, mid, out };
        [
            s(false, false, false),
            s(true, false, false),
            s(false, true, false),
            s(false, false, true),
            s(true, true, false),
            s(true, false, true),
            s(false, true, true),
            s(true, true, true),
        ]
    }

    pub fn is_empty(&self) -> bool {
        !(self.input || self.mid || self.out)
    }

    pub fn count(&self) -> usize {
        self.input as usize + self.mid as usize + self.out as usize
    }

    /// `in+mid+out` style label; `none` for the empty set.
    pub fn label(&self) -> String {
        let parts: Vec<&str> = [(self.input, "in"), (self.mid, "mid"), (self.out, "out")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| *n)
            .collect();
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let mut set = SiteSet::NONE;
        if s == "none" {
            return Ok(set);
        }
        for part in s.split('+') {
            match part.trim() {
                "in" | "input" => set.input = true,
                "mid" => set.mid = true,
                "out" => set.out = true,
                other => return Err(Error::Config(format!("unknown modulation site {other:?}"))),
            }
        }
        Ok(set)
    }
}

impl Default for SiteSet {
    fn default() -> Self {
        SiteSet::ALL
    }
}

/// The three bit-embedding networks and their adaptive coefficients.
#[derive(Clone, Debug)]
pub struct ModulationSet {
    pub b_in: ModulationNet,
    pub b_mid: ModulationNet,
    pub b_out: ModulationNet,
    pub alpha: Parameter,
    pub beta: Parameter,
    pub gamma: Parameter,
}

impl ModulationSet {
    /// `in_channels` is the width of `b_in`'s block; `mid_channels` and
    /// `out_channels` match the generator features at those sites.
    pub fn new(
        bits: usize,
        in_channels: usize,
        mid_channels: usize,
        out_channels: usize,
        init: ModulationInit,
        rng: &mut impl Rng,
    ) -> Self {
        let coeff = |n: &str| Parameter::new(n, Tensor::from_vec(vec![COEFF_INIT]));
        ModulationSet {
            b_in: ModulationNet::new("b_in", bits, in_channels, init, rng),
            b_mid: ModulationNet::new("b_mid", bits, mid_channels, init, rng),
            b_out: ModulationNet::new("b_out", bits, out_channels, init, rng),
            alpha: coeff("alpha"),
            beta: coeff("beta"),
            gamma: coeff("gamma"),
        }
    }

    pub fn bits(&self) -> usize {
        self.b_in.linear.weight.value().shape()[0]
    }

    /// Weights of the three networks (the `lr 1e-4` group).
    pub fn net_params(&self) -> Vec<&Parameter> {
        let mut v = self.b_in.params();
        v.extend(self.b_mid.params());
        v.extend(self.b_out.params());
        v
    }

    pub fn net_params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.b_in.params_mut();
        v.extend(self.b_mid.params_mut());
        v.extend(self.b_out.params_mut());
        v
    }

    /// α, β, γ (the `lr 1e-3` group).
    pub fn coeff_params(&self) -> Vec<&Parameter> {
        vec![&self.alpha, &self.beta, &self.gamma]
    }

    pub fn coeff_params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.alpha, &mut self.beta, &mut self.gamma]
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut v = self.net_params();
        v.extend(self.coeff_params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let ModulationSet { b_in, b_mid, b_out, alpha, beta, gamma } = self;
        let mut v = b_in.params_mut();
        v.extend(b_mid.params_mut());
        v.extend(b_out.params_mut());
        v.extend([alpha, beta, gamma]);
        v
    }
}

/// `z + c·tile(net(m))`, tiled to `z`'s channel count and extent.
pub fn modulate(tape: &Tape, z: Var, m: Var, net: &ModulationNet, coeff: &Parameter) -> Result<Var> {
    let shape = tape.shape(z);
    let (c, h, w) = match shape.as_slice() {
        [c, h, w] => (*c, *h, *w),
        _ => return Err(Error::Validation(format!("modulation expects [C, H, W] features, got {shape:?}"))),
    };
    let block = net.forward(tape, m)?;
    let field = tile_block_on_tape(tape, block, h, w, c)?;
    let scaled = tape.scale_by(field, tape.param(coeff))?;
    Ok(tape.add(z, scaled)?)
}
