use gseal_grad::{BatchStats, Parameter, Tape, Tensor, Var};
use rand::Rng;

use super::layers::{Conv, Linear};
use super::modulation::BLOCK;
use crate::error::{Error, Result};

pub const DECODER_WIDTH: usize = 64;
/// Residual bound of the pretraining encoder.
pub const RESIDUAL_BOUND: f64 = 0.1;
const STRIDES: [usize; 6] = [1, 2, 1, 2, 1, 1];
const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct NormConv {
    pub conv: Conv,
    pub gamma: Parameter,
    pub beta: Parameter,
    /// Frozen state; checkpointed with the weights.
    pub running_mean: Parameter,
    pub running_var: Parameter,
}

impl NormConv {
    fn new(name: &str, cin: usize, cout: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let frozen = |n: String, t: Tensor| {
            let mut p = Parameter::new(n, t);
            p.set_frozen(true);
            p
        };
        NormConv {
            conv: Conv::new(&format!("{name}.conv"), cin, cout, stride, rng),
            gamma: Parameter::new(format!("{name}.bn.gamma"), Tensor::ones(&[cout])),
            beta: Parameter::new(format!("{name}.bn.beta"), Tensor::zeros(&[cout])),
            running_mean: frozen(format!("{name}.bn.running_mean"), Tensor::zeros(&[cout])),
            running_var: frozen(format!("{name}.bn.running_var"), Tensor::ones(&[cout])),
        }
    }

    fn forward(&self, tape: &Tape, x: Var, train: bool) -> Result<(Var, Option<BatchStats>)> {
        let h = self.conv.forward(tape, x)?;
        let (g, b) = (tape.param(&self.gamma), tape.param(&self.beta));
        let (h, stats) = if train {
            let (h, s) = tape.batch_norm_train(h, g, b)?;
            (h, Some(s))
        } else {
            let h = tape.batch_norm_eval(h, g, b, self.running_mean.value(), self.running_var.value())?;
            (h, None)
        };
        Ok((tape.relu(h), stats))
    }

    fn update_running(&mut self, s: &BatchStats) {
        let blend = |p: &mut Parameter, v: &[f64]| {
            for (r, x) in p.value_mut().data_mut().iter_mut().zip(v) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * x;
            }
        };
        blend(&mut self.running_mean, &s.mean);
        blend(&mut self.running_var, &s.var);
    }

    fn params(&self) -> Vec<&Parameter> {
        let mut v = self.conv.params();
        v.extend([&self.gamma, &self.beta, &self.running_mean, &self.running_var]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let NormConv { conv, gamma, beta, running_mean, running_var } = self;
        let mut v = conv.params_mut();
        v.extend([gamma, beta, running_mean, running_var]);
        v
    }
}

/// Watermark extractor: six conv–norm–ReLU blocks at width 64 (stride 2 in
/// the second and fourth), global average pooling, linear to `L` logits.
#[derive(Clone, Debug)]
pub struct HiddenDecoder {
    pub blocks: Vec<NormConv>,
    pub head: Linear,
    pub in_channels: usize,
    /// Inputs of another size are bilinearly resized to this side first;
    /// `None` accepts any size.
    pub input_size: Option<usize>,
}

impl HiddenDecoder {
    pub fn new(bits: usize, in_channels: usize, input_size: Option<usize>, rng: &mut impl Rng) -> Self {
        let blocks = STRIDES
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let cin = if i == 0 { in_channels } else { DECODER_WIDTH };
                NormConv::new(&format!("dec.block{i}"), cin, DECODER_WIDTH, s, rng)
            })
            .collect();
        HiddenDecoder {
            blocks,
            head: Linear::new("dec.head", DECODER_WIDTH, bits, rng),
            in_channels,
            input_size,
        }
    }

    pub fn bits(&self) -> usize {
        self.head.weight.value().shape()[1]
    }

    /// Logits `[N, L]` for a batch `[N, C, H, W]`. In training mode the
    /// batch statistics of each block are returned.
    pub fn forward(&self, tape: &Tape, x: Var, train: bool) -> Result<(Var, Vec<BatchStats>)> {
        let shape = tape.shape(x);
        let (n, c, h, w) = match *shape.as_slice() {
            [n, c, h, w] => (n, c, h, w),
            _ => return Err(Error::Validation(format!("decoder expects [N, C, H, W], got {shape:?}"))),
        };
        if c != self.in_channels {
            return Err(Error::Validation(format!("decoder reads {} channels, got {c}", self.in_channels)));
        }
        let mut z = match self.input_size {
            Some(s) if (h, w) != (s, s) => tape.resize_bilinear(x, s, s)?,
            _ => x,
        };
        let mut stats = Vec::new();
        for b in &self.blocks {
            let (y, s) = b.forward(tape, z, train)?;
            z = y;
            stats.extend(s);
        }
        let pooled = tape.global_avg_pool(z)?;
        let pooled = tape.reshape(pooled, &[n, DECODER_WIDTH])?;
        Ok((self.head.forward(tape, pooled)?, stats))
    }

    pub fn update_running(&mut self, stats: &[BatchStats]) {
        for (b, s) in self.blocks.iter_mut().zip(stats) {
            b.update_running(s);
        }
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut v: Vec<&Parameter> = self.blocks.iter().flat_map(|b| b.params()).collect();
        v.extend(self.head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let HiddenDecoder { blocks, head, .. } = self;
        let mut v: Vec<&mut Parameter> = blocks.iter_mut().flat_map(|b| b.params_mut()).collect();
        v.extend(head.params_mut());
        v
    }

    /// Freezes or unfreezes the learnable weights; running statistics stay
    /// frozen either way.
    pub fn set_frozen(&mut self, frozen: bool) {
        for p in self.params_mut() {
            if !p.name().contains("running_") {
                p.set_frozen(frozen);
            }
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.params().iter().all(|p| p.is_frozen())
    }
}

/// Message embedder used only to pretrain the decoder: adds a bounded,
/// message-conditioned residual `0.1·tanh(·)` to its input. The message
/// enters as a learned 8×8 block tiled over the image.
#[derive(Clone, Debug)]
pub struct HiddenEncoder {
    pub trunk: Vec<Conv>,
    pub embed: Linear,
    pub fuse: Conv,
    /// Zero-initialised, so the encoder starts as the identity.
    pub head: Conv,
    pub channels: usize,
    pub bits: usize,
}

const ENCODER_WIDTH: usize = 32;
/// Channels of the tiled message block.
const EMBED_CHANNELS: usize = 8;

impl HiddenEncoder {
    pub fn new(bits: usize, channels: usize, rng: &mut impl Rng) -> Self {
        HiddenEncoder {
            trunk: vec![
                Conv::new("enc.conv0", channels, ENCODER_WIDTH, 1, rng),
                Conv::new("enc.conv1", ENCODER_WIDTH, ENCODER_WIDTH, 1, rng),
            ],
            embed: Linear::new("enc.embed", bits, EMBED_CHANNELS * BLOCK * BLOCK, rng),
            fuse: Conv::new("enc.fuse", ENCODER_WIDTH + EMBED_CHANNELS + channels, ENCODER_WIDTH, 1, rng),
            head: Conv::zeros("enc.head", ENCODER_WIDTH, channels),
            channels,
            bits,
        }
    }

    /// Encoded images for a batch `[N, C, H, W]` and messages `[N, L]`.
    pub fn forward(&self, tape: &Tape, x: Var, messages: &Tensor) -> Result<Var> {
        let shape = tape.shape(x);
        let (n, h, w) = match *shape.as_slice() {
            [n, c, h, w] if c == self.channels => (n, h, w),
            _ => return Err(Error::Validation(format!("encoder expects [N, {}, H, W], got {shape:?}", self.channels))),
        };
        if messages.shape() != [n, self.bits] {
            return Err(Error::Validation(format!("expected [{n}, {}] messages, got {:?}", self.bits, messages.shape())));
        }
        let mut z = x;
        for c in &self.trunk {
            z = tape.relu(c.forward(tape, z)?);
        }
        let m = tape.constant(messages.clone());
        let blocks = tape.silu(self.embed.forward(tape, m)?);
        let planes = tile_batch(tape, blocks, n, h, w)?;
        let z = tape.concat_channels(z, planes)?;
        let z = tape.concat_channels(z, x)?;
        let z = tape.relu(self.fuse.forward(tape, z)?);
        let r = tape.tanh(self.head.forward(tape, z)?);
        let r = tape.scale(r, RESIDUAL_BOUND);
        Ok(tape.add(x, r)?)
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut v: Vec<&Parameter> = self.trunk.iter().flat_map(|c| c.params()).collect();
        v.extend(self.embed.params());
        v.extend(self.fuse.params());
        v.extend(self.head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let HiddenEncoder { trunk, embed, fuse, head, .. } = self;
        let mut v: Vec<&mut Parameter> = trunk.iter_mut().flat_map(|c| c.params_mut()).collect();
        v.extend(embed.params_mut());
        v.extend(fuse.params_mut());
        v.extend(head.params_mut());
        v
    }
}

/// `[N, E·64]` message blocks tiled to `[N, E, H, W]`.
fn tile_batch(tape: &Tape, blocks: Var, n: usize, h: usize, w: usize) -> Result<Var> {
    if h % BLOCK != 0 || w % BLOCK != 0 {
        return Err(Error::Validation(format!("encoder needs sides divisible by {BLOCK}, got {h}x{w}")));
    }
    let bv = tape.value(blocks);
    let per = EMBED_CHANNELS * BLOCK * BLOCK;
    let mut idx = Vec::with_capacity(n * EMBED_CHANNELS * h * w);
    for s in 0..n {
        for c in 0..EMBED_CHANNELS {
            for y in 0..h {
                for x in 0..w {
                    idx.push(s * per + (c * BLOCK + y % BLOCK) * BLOCK + x % BLOCK);
                }
            }
        }
    }
    let out = Tensor::new(&[n, EMBED_CHANNELS, h, w], idx.iter().map(|&i| bv.data()[i]).collect())?;
    let shape = bv.shape().to_vec();
    Ok(tape.op(out, &[blocks], move |g, _| {
        let mut d = vec![0.0; n * per];
        for (&i, v) in idx.iter().zip(g.data()) {
            d[i] += v;
        }
        vec![Some(Tensor::new(&shape, d).unwrap())]
    }))
}

#[derive(Clone, Debug)]
pub struct HiddenCodec {
    pub encoder: HiddenEncoder,
    pub decoder: HiddenDecoder,
}

impl HiddenCodec {
    pub fn new(bits: usize, channels: usize, input_size: Option<usize>, rng: &mut impl Rng) -> Self {
        HiddenCodec {
            encoder: HiddenEncoder::new(bits, channels, rng),
            decoder: HiddenDecoder::new(bits, channels, input_size, rng),
        }
    }
}

/// View-averaged logits `[L]` of a stack of decoder inputs `[V, C, H, W]`.
pub fn hidden_decode(tape: &Tape, views: Var, decoder: &HiddenDecoder) -> Result<Var> {
    let (logits, _) = decoder.forward(tape, views, false)?;
    Ok(tape.mean_axis0(logits)?)
}

/// Off-tape decode of a view stack; returns averaged logits.
pub fn decode_logits(views: &Tensor, decoder: &HiddenDecoder) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let x = tape.constant(views.clone());
    let l = hidden_decode(&tape, x, decoder)?;
    Ok(tape.value(l).data().to_vec())
}

/// Off-tape encode of a batch.
pub fn hidden_encode(images: &Tensor, messages: &Tensor, encoder: &HiddenEncoder) -> Result<Tensor> {
    let tape = Tape::new();
    let x = tape.constant(images.clone());
    let y = encoder.forward(&tape, x, messages)?;
    Ok((*tape.value(y)).clone())
}
