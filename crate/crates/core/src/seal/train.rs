use gseal_grad::{AdamW, AdamWConfig, Gradients, Parameter, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{DecodeTarget, TrainConfig};
use super::losses::{loss_consistency, loss_msg, total_loss, LossBreakdown};
use super::system::render_views;
use crate::error::{Error, Result};
use crate::gaussians::{activate_on_tape, splat_to_cloud, ActivationSpec};
use crate::nets::{hidden_decode, HiddenDecoder, Message, ModulationSet, SiteSet, ToyUNet, Watermark};
use crate::renderer::{render_on_tape, Camera, RenderConfig};
use crate::robust::bit_accuracy;
use crate::toolkit::{CameraRig, Scene, INPUT_VIEWS};
use crate::wavelet::ll_on_tape;

/// Trainable parameter groups of the enabled sites: network weights and
/// adaptive coefficients.
pub fn site_params_mut(mods: &mut ModulationSet, sites: SiteSet) -> (Vec<&mut Parameter>, Vec<&mut Parameter>) {
    let ModulationSet { b_in, b_mid, b_out, alpha, beta, gamma } = mods;
    let mut nets = Vec::new();
    let mut coeffs = Vec::new();
    for (on, net, c) in [(sites.input, b_in, alpha), (sites.mid, b_mid, beta), (sites.out, b_out, gamma)] {
        if on {
            nets.extend(net.params_mut());
            coeffs.push(c);
        }
    }
    (nets, coeffs)
}

/// Random decode cameras on the rig's sphere band.
pub fn sample_cameras(rig: &CameraRig, count: usize, rng: &mut impl Rng) -> Result<Vec<Camera>> {
    (0..count)
        .map(|_| {
            let az = rng.random_range(0.0..std::f64::consts::TAU);
            let (lo, hi) = rig.elevation;
            let el = if lo == hi { lo } else { rng.random_range(lo..hi) };
            rig.camera_at(az, el)
        })
        .collect()
}

/// Everything a seal training run reads but never modifies.
pub struct SealFrozen<'a> {
    pub generator: &'a ToyUNet,
    pub decoder: &'a HiddenDecoder,
    pub rig: &'a CameraRig,
    pub activation: ActivationSpec,
    pub render: RenderConfig,
}

impl<'a> SealFrozen<'a> {
    pub fn new(generator: &'a ToyUNet, decoder: &'a HiddenDecoder, rig: &'a CameraRig) -> Self {
        SealFrozen {
            generator,
            decoder,
            rig,
            activation: ActivationSpec::default(),
            render: RenderConfig::default(),
        }
    }
}

struct SceneTerms {
    l_msg: Var,
    l_gs: Var,
    l_rgb: Var,
    logits: Var,
}

/// Forward pass of one scene on the tape: watermarked generation, renders,
/// decoding and the three loss terms against the clean pass.
fn scene_terms(
    tape: &Tape,
    fz: &SealFrozen,
    mods: &ModulationSet,
    message: &Message,
    input: &Tensor,
    cams: &[Camera],
    cfg: &TrainConfig,
) -> Result<SceneTerms> {
    let clean = fz.generator.generate(input, None)?;
    let clean_views = render_views(&splat_to_cloud(&clean, &fz.activation), cams, &fz.render)?;
    let size = clean.size();
    let x = tape.constant(input.clone());
    let m = tape.constant(message.to_tensor());
    let wm = Watermark { mods, message: m, sites: cfg.sites };
    let g = fz.generator.forward(tape, x, Some(&wm))?;
    let params = activate_on_tape(tape, g, &fz.activation)?;
    let renders = cams
        .iter()
        .map(|c| render_on_tape(tape, params, c, &fz.render))
        .collect::<Result<Vec<_>>>()?;
    let r = tape.stack(&renders)?;
    let r_clean = tape.constant(super::system::batch_views(clean_views)?);
    let g_clean = tape.constant(clean.into_tensor());
    let (l_gs, l_rgb) = loss_consistency(tape, g, g_clean, r, r_clean)?;
    let d = match cfg.target {
        DecodeTarget::RawSplat => tape.reshape(g, &[1, crate::gaussians::PARAMS_PER_GAUSSIAN, size, size])?,
        DecodeTarget::Rendered => r,
        DecodeTarget::RenderedDwt => ll_on_tape(tape, r)?,
    };
    let logits = hidden_decode(tape, d, fz.decoder)?;
    Ok(SceneTerms { l_msg: loss_msg(tape, logits, message)?, l_gs, l_rgb, logits })
}

/// Batch-mean losses of one training step and their gradients; the row's
/// `step` is left at zero.
pub fn loss_gradients(
    fz: &SealFrozen,
    mods: &ModulationSet,
    message: &Message,
    inputs: &[&Tensor],
    cams: &[Camera],
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, Gradients)> {
    if inputs.is_empty() {
        return Err(Error::Validation("empty training batch".into()));
    }
    let tape = Tape::new();
    let terms = inputs
        .iter()
        .map(|x| scene_terms(&tape, fz, mods, message, x, cams, cfg))
        .collect::<Result<Vec<_>>>()?;
    let inv = 1.0 / terms.len() as f64;
    let mean = |pick: fn(&SceneTerms) -> Var| -> Result<Var> {
        let mut acc = pick(&terms[0]);
        for t in &terms[1..] {
            acc = tape.add(acc, pick(t))?;
        }
        Ok(tape.scale(acc, inv))
    };
    let (l_msg, l_gs, l_rgb) = (mean(|t| t.l_msg)?, mean(|t| t.l_gs)?, mean(|t| t.l_rgb)?);
    let total = total_loss(&tape, l_msg, l_gs, l_rgb, cfg)?;
    let mut acc = 0.0;
    for t in &terms {
        let decoded = Message::from_logits(tape.value(t.logits).data())?;
        acc += bit_accuracy(decoded.bits(), message.bits())?;
    }
    let value = |v: Var| tape.value(v).item();
    let row = LossBreakdown {
        step: 0,
        l_msg: value(l_msg),
        l_gs: value(l_gs),
        l_rgb: value(l_rgb),
        total: value(total),
        bit_acc: acc * inv,
    };
    Ok((row, tape.backward(total)?))
}

/// Trains the modulation networks and coefficients of the enabled sites to
/// embed `message`, with the generator and decoder frozen. Returns one log
/// row per step.
pub fn train_seal(
    scenes: &[Scene],
    fz: &SealFrozen,
    mods: &mut ModulationSet,
    message: &Message,
    cfg: &TrainConfig,
) -> Result<Vec<LossBreakdown>> {
    cfg.validate()?;
    if !fz.generator.is_frozen() {
        return Err(Error::Config("generator must be frozen before watermark training".into()));
    }
    if !fz.decoder.is_frozen() {
        return Err(Error::Config("decoder must be frozen before watermark training".into()));
    }
    if scenes.is_empty() {
        return Err(Error::Config("watermark training needs at least one scene".into()));
    }
    if message.len() != cfg.message_length || mods.bits() != message.len() || fz.decoder.bits() != message.len() {
        return Err(Error::Config(format!(
            "message length {} disagrees with config {}, modulation {} or decoder {}",
            message.len(),
            cfg.message_length,
            mods.bits(),
            fz.decoder.bits()
        )));
    }
    let inputs = scenes.iter().map(|s| s.input_tensor(&INPUT_VIEWS)).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt_net = AdamW::new(AdamWConfig::with_lr(cfg.lr_modulation));
    let mut opt_coeff = AdamW::new(AdamWConfig::with_lr(cfg.lr_coefficients));
    // with no enabled site there is nothing to optimise: log the identity step
    let steps = if cfg.sites.is_empty() { 1 } else { cfg.total_steps(scenes.len()) };
    let mut order: Vec<usize> = Vec::new();
    let mut log = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if order.is_empty() {
                order = (0..scenes.len()).collect();
                order.shuffle(&mut rng);
            }
            batch.push(order.pop().expect("refilled above"));
        }
        let cams = sample_cameras(fz.rig, cfg.views_per_step, &mut rng)?;
        let batch: Vec<&Tensor> = batch.iter().map(|&i| &inputs[i]).collect();
        let (mut row, grads) = loss_gradients(fz, mods, message, &batch, &cams, cfg)?;
        row.step = step;
        log.push(row);
        if cfg.sites.is_empty() {
            break;
        }
        let (mut nets, mut coeffs) = site_params_mut(mods, cfg.sites);
        grads.accumulate_into(nets.iter_mut().map(|p| &mut **p))?;
        grads.accumulate_into(coeffs.iter_mut().map(|p| &mut **p))?;
        opt_net.step(nets)?;
        opt_coeff.step(coeffs)?;
    }
    Ok(log)
}
