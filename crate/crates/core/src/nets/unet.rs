use gseal_grad::{Parameter, Tape, Tensor, Var};
use rand::Rng;

use super::layers::Conv;
use super::lift::{proxy_prior, ViewLift};
use crate::renderer::Camera;
use super::modulation::{modulate, ModulationSet, SiteSet};
use crate::error::{Error, Result};
use crate::gaussians::{ActivationSpec, SplatTensor, PARAMS_PER_GAUSSIAN};

#[derive(Clone, Debug, PartialEq)]
pub struct UNetConfig {
    /// Views concatenated channel-wise at the input.
    pub views: usize,
    /// Encoder widths; the first is also the stem width, the last is the
    /// bottleneck. Decoder blocks mirror all but the last.
    pub widths: Vec<usize>,
    /// Output grid side `S`.
    pub splat_size: usize,
    /// Input view side; either `S` or `2S` (average-pooled to `S`).
    pub image_size: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            views: 4,
            widths: vec![32, 64, 128],
            splat_size: 32,
            image_size: 64,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        let depth = self.widths.len();
        if depth < 1 || self.views == 0 || self.widths.contains(&0) {
            return Err(Error::Config(format!("invalid generator layout {self:?}")));
        }
        let down = 1usize << (depth - 1);
        if self.splat_size % down != 0 || (self.splat_size / down) % 8 != 0 {
            return Err(Error::Config(format!(
                "splat size {} incompatible with {depth} encoder blocks (bottleneck must be a multiple of 8)",
                self.splat_size
            )));
        }
        if self.image_size != self.splat_size && self.image_size != 2 * self.splat_size {
            return Err(Error::Config(format!(
                "view size {} must equal the splat size {} or twice it",
                self.image_size, self.splat_size
            )));
        }
        Ok(())
    }

    pub fn stem_width(&self) -> usize {
        self.widths[0]
    }

    pub fn mid_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn out_width(&self) -> usize {
        self.widths[0]
    }
}

/// Toy image-to-splat generator: stem, encoder blocks with pooling, decoder
/// blocks with nearest upsampling and skip concatenation, 14-channel head.
#[derive(Clone, Debug)]
pub struct ToyUNet {
    pub config: UNetConfig,
    pub conv_in: Conv,
    pub encoder: Vec<Conv>,
    pub decoder: Vec<Conv>,
    pub conv_out: Conv,
    /// Optional fixed resampling of the views onto the splat grid.
    pub lift: Option<ViewLift>,
    /// Constant raw splat tensor added to the head output.
    pub prior: Option<Tensor>,
}

/// Watermark arguments of a generator forward pass.
pub struct Watermark<'a> {
    pub mods: &'a ModulationSet,
    /// Message tensor `[L]` on the same tape.
    pub message: Var,
    pub sites: SiteSet,
}

impl ToyUNet {
    pub fn new(config: UNetConfig, rng: &mut impl Rng) -> Result<Self> {
        Self::build(config, None, rng)
    }

    /// Generator whose input views (taken by `cams`) are first resampled
    /// onto the splat grid.
    pub fn lifted(config: UNetConfig, cams: &[Camera], rng: &mut impl Rng) -> Result<Self> {
        if cams.len() != config.views || cams.iter().any(|c| (c.height, c.width) != (config.image_size, config.image_size)) {
            return Err(Error::Config(format!(
                "{} cameras of {}x{} expected for the view lift",
                config.views, config.image_size, config.image_size
            )));
        }
        let lift = ViewLift::new(cams, config.splat_size)?;
        let mut gen = Self::build(config, Some(lift), rng)?;
        gen.prior = Some(proxy_prior(gen.config.splat_size, &ActivationSpec::default())?);
        Ok(gen)
    }

    fn build(config: UNetConfig, lift: Option<ViewLift>, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let w = &config.widths;
        let cin = lift.as_ref().map_or(3 * config.views, |l| l.channels());
        let conv_in = Conv::new("gen.conv_in", cin, w[0], 1, rng);
        let mut encoder = Vec::new();
        for i in 0..w.len() {
            let cin = if i == 0 { w[0] } else { w[i - 1] };
            encoder.push(Conv::new(&format!("gen.enc{i}"), cin, w[i], 1, rng));
        }
        let mut decoder = Vec::new();
        for j in 0..w.len() - 1 {
            let level = w.len() - 2 - j;
            let below = w[level + 1];
            decoder.push(Conv::new(&format!("gen.dec{j}"), below + w[level], w[level], 1, rng));
        }
        let mut conv_out = Conv::new("gen.conv_out", w[0], PARAMS_PER_GAUSSIAN, 1, rng);
        // start near the neutral splat so early renders are well behaved
        *conv_out.weight.value_mut() = conv_out.weight.value().scaled(0.1);
        Ok(ToyUNet { config, conv_in, encoder, decoder, conv_out, lift, prior: None })
    }

    /// Raw splat tensor `[14, S, S]` for stacked views `[3V, H, W]`.
    pub fn forward(&self, tape: &Tape, x: Var, wm: Option<&Watermark>) -> Result<Var> {
        let shape = tape.shape(x);
        let cfg = &self.config;
        if shape != [3 * cfg.views, cfg.image_size, cfg.image_size] {
            return Err(Error::Validation(format!(
                "generator expects [{}, {s}, {s}] input, got {shape:?}",
                3 * cfg.views,
                s = cfg.image_size
            )));
        }
        let x = match &self.lift {
            Some(l) => l.apply(tape, x)?,
            None if cfg.image_size == cfg.splat_size => x,
            None => tape.avg_pool2(x)?,
        };
        let site = |on: fn(&SiteSet) -> bool| wm.filter(|w| on(&w.sites));

        let mut z = self.conv_in.forward(tape, x)?;
        if let Some(w) = site(|s| s.input) {
            z = modulate(tape, z, w.message, &w.mods.b_in, &w.mods.alpha)?;
        }
        let mut skips = Vec::new();
        let depth = self.encoder.len();
        for (i, block) in self.encoder.iter().enumerate() {
            z = tape.silu(block.forward(tape, z)?);
            if i + 1 < depth {
                skips.push(z);
                z = tape.avg_pool2(z)?;
            }
        }
        if let Some(w) = site(|s| s.mid) {
            z = modulate(tape, z, w.message, &w.mods.b_mid, &w.mods.beta)?;
        }
        for block in &self.decoder {
            let up = tape.upsample2(z)?;
            let skip = skips.pop().expect("one skip per decoder block");
            z = tape.silu(block.forward(tape, tape.concat_channels(up, skip)?)?);
        }
        if let Some(w) = site(|s| s.out) {
            z = modulate(tape, z, w.message, &w.mods.b_out, &w.mods.gamma)?;
        }
        let out = self.conv_out.forward(tape, z)?;
        match &self.prior {
            Some(p) => Ok(tape.add(out, tape.constant(p.clone()))?),
            None => Ok(out),
        }
    }

    /// Forward pass off the tape.
    pub fn generate(&self, views: &gseal_grad::Tensor, wm: Option<(&ModulationSet, &super::Message, SiteSet)>) -> Result<SplatTensor> {
        let tape = Tape::new();
        let x = tape.constant(views.clone());
        let out = match wm {
            Some((mods, msg, sites)) => {
                let message = tape.constant(msg.to_tensor());
                self.forward(&tape, x, Some(&Watermark { mods, message, sites }))?
            }
            None => self.forward(&tape, x, None)?,
        };
        let t = (*tape.value(out)).clone();
        SplatTensor::new(t)
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut v = self.conv_in.params();
        self.encoder.iter().chain(&self.decoder).for_each(|c| v.extend(c.params()));
        v.extend(self.conv_out.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let ToyUNet { conv_in, encoder, decoder, conv_out, .. } = self;
        let mut v = conv_in.params_mut();
        encoder.iter_mut().chain(decoder.iter_mut()).for_each(|c| v.extend(c.params_mut()));
        v.extend(conv_out.params_mut());
        v
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.params_mut().into_iter().for_each(|p| p.set_frozen(frozen));
    }

    pub fn is_frozen(&self) -> bool {
        self.params().iter().all(|p| p.is_frozen())
    }
}
