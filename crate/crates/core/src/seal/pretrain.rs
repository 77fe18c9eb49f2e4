use gseal_grad::{AdamW, AdamWConfig, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{DecodeTarget, GeneratorTrainConfig, HiddenTrainConfig};
use super::system::{batch_views, render_views};
use crate::error::{Error, Result};
use crate::gaussians::{activate_on_tape, cloud_to_splat, splat_to_cloud, ActivationSpec, RGB};
use crate::nets::{HiddenCodec, Message, ToyUNet};
use crate::renderer::{render_on_tape, RenderConfig};
use crate::robust::psnr;
use crate::toolkit::{CameraRig, Scene, INPUT_VIEWS};
use crate::wavelet::ll;

/// Smallest image set accepted for decoder pretraining.
pub const MIN_CODEC_IMAGES: usize = 100;

/// Fits the generator to reproduce ground-truth views (render MSE) and
/// ground-truth splat tensors (weighted splat MSE). Returns the loss per step.
pub fn pretrain_generator(scenes: &[Scene], gen: &mut ToyUNet, rig: &CameraRig, cfg: &GeneratorTrainConfig) -> Result<Vec<f64>> {
    if scenes.is_empty() || cfg.batch_size == 0 || cfg.views_per_step == 0 {
        return Err(Error::Config("generator pretraining needs scenes, a batch size and views".into()));
    }
    if gen.is_frozen() {
        return Err(Error::Config("cannot pretrain a frozen generator".into()));
    }
    let spec = ActivationSpec::default();
    let rcfg = RenderConfig::default();
    let cams = rig.cameras()?;
    let inputs = scenes.iter().map(|s| s.input_tensor(&INPUT_VIEWS)).collect::<Result<Vec<_>>>()?;
    let targets = scenes
        .iter()
        .map(|s| Ok(cloud_to_splat(&s.cloud, &spec)?.into_tensor()))
        .collect::<Result<Vec<_>>>()?;
    let grid = gen.config.splat_size;
    if let Some(t) = targets.iter().find(|t| t.shape()[1] != grid) {
        return Err(Error::Validation(format!(
            "scene splat grid {0}x{0} does not match the generator's {grid}x{grid} (budget must be {1})",
            t.shape()[1],
            grid * grid
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(AdamWConfig::with_lr(cfg.lr));
    let mut order = Vec::new();
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        opt.config.lr = cosine_lr(cfg.lr, step, cfg.steps);
        let tape = Tape::new();
        let mut total = None;
        for _ in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..scenes.len()).collect();
                order.shuffle(&mut rng);
            }
            let i = order.pop().expect("refilled above");
            let perm = if cfg.permute_colors { PERMUTATIONS[rng.random_range(0..6)] } else { PERMUTATIONS[0] };
            let g = gen.forward(&tape, tape.constant(permute_channels(&inputs[i], perm)), None)?;
            let params = activate_on_tape(&tape, g, &spec)?;
            let mut views: Vec<usize> = (0..cams.len()).collect();
            views.shuffle(&mut rng);
            views.truncate(cfg.views_per_step);
            let renders = views
                .iter()
                .map(|&v| render_on_tape(&tape, params, &cams[v], &rcfg))
                .collect::<Result<Vec<_>>>()?;
            let r = tape.stack(&renders)?;
            let gt = batch_views(views.iter().map(|&v| scenes[i].views[v].clone()))?;
            let l_render = tape.mse(r, tape.constant(permute_channels(&gt, perm)))?;
            let l_splat = tape.mse(g, tape.constant(permute_splat_colors(&targets[i], perm)))?;
            let l = tape.add(l_render, tape.scale(l_splat, cfg.lambda_splat))?;
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l)?,
            });
        }
        let total = tape.scale(total.expect("batch is nonempty"), 1.0 / cfg.batch_size as f64);
        log.push(tape.value(total).item());
        let grads = tape.backward(total)?;
        grads.accumulate_into(gen.params_mut())?;
        opt.step(gen.params_mut())?;
    }
    Ok(log)
}

const PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Reorders every RGB triple of channels in a `[3V, H, W]` or
/// `[V, 3, H, W]` tensor: output channel `k` reads input channel `perm[k]`.
fn permute_channels(t: &Tensor, perm: [usize; 3]) -> Tensor {
    if perm == [0, 1, 2] {
        return t.clone();
    }
    let plane = t.shape()[t.rank() - 2] * t.shape()[t.rank() - 1];
    let d = t.data();
    let mut out = d.to_vec();
    for (tri, chunk) in out.chunks_mut(3 * plane).enumerate() {
        for (k, &src) in perm.iter().enumerate() {
            let base = tri * 3 * plane + src * plane;
            chunk[k * plane..(k + 1) * plane].copy_from_slice(&d[base..base + plane]);
        }
    }
    Tensor::new(t.shape(), out).expect("same shape")
}

/// Applies a colour permutation to the RGB channels of a raw splat tensor.
fn permute_splat_colors(t: &Tensor, perm: [usize; 3]) -> Tensor {
    let plane = t.shape()[1] * t.shape()[2];
    let mut out = t.data().to_vec();
    for (k, &src) in perm.iter().enumerate() {
        let from = (RGB + src) * plane;
        out[(RGB + k) * plane..(RGB + k + 1) * plane].copy_from_slice(&t.data()[from..from + plane]);
    }
    Tensor::new(t.shape(), out).expect("same shape")
}

/// Cosine decay from `lr` to 5% of it over `total` steps.
pub fn cosine_lr(lr: f64, step: usize, total: usize) -> f64 {
    let t = step as f64 / total.max(1) as f64;
    lr * (0.05 + 0.95 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}

/// Mean PSNR of the generator's reconstructions against the ground-truth
/// views of `scenes` over the full rig.
pub fn reconstruction_psnr(gen: &ToyUNet, scenes: &[Scene], rig: &CameraRig) -> Result<f64> {
    if scenes.is_empty() {
        return Err(Error::Validation("no scenes to reconstruct".into()));
    }
    let spec = ActivationSpec::default();
    let cams = rig.cameras()?;
    let mut total = 0.0;
    for s in scenes {
        let splat = gen.generate(&s.input_tensor(&INPUT_VIEWS)?, None)?;
        let views = render_views(&splat_to_cloud(&splat, &spec), &cams, &RenderConfig::default())?;
        for (a, b) in views.iter().zip(&s.views) {
            total += psnr(a, b)?;
        }
    }
    Ok(total / (scenes.len() * cams.len()) as f64)
}

/// PSNR of an all-background prediction against the views of `scenes`.
pub fn background_psnr(scenes: &[Scene]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0;
    for s in scenes {
        for v in &s.views {
            let bg = crate::renderer::Image::filled(v.height, v.width, crate::renderer::WHITE);
            total += psnr(&bg, v)?;
            n += 1;
        }
    }
    Ok(total / n.max(1) as f64)
}

/// Codec training images: the views (or their LL subbands) of the
/// ground-truth scenes and, given a generator, of its reconstructions; for
/// the raw target the ground-truth (and generated) splat tensors with their
/// flips.
pub fn codec_images(target: DecodeTarget, scenes: &[Scene], gen: Option<&ToyUNet>, rig: &CameraRig) -> Result<Vec<Tensor>> {
    let spec = ActivationSpec::default();
    let cams = rig.cameras()?;
    let mut out = Vec::new();
    for s in scenes {
        let splat = gen.map(|g| g.generate(&s.input_tensor(&INPUT_VIEWS)?, None)).transpose()?;
        match target {
            DecodeTarget::RawSplat => {
                out.extend(flips(cloud_to_splat(&s.cloud, &spec)?.tensor()));
                if let Some(sp) = &splat {
                    out.extend(flips(sp.tensor()));
                }
            }
            DecodeTarget::Rendered | DecodeTarget::RenderedDwt => {
                let recon = match &splat {
                    Some(sp) => render_views(&splat_to_cloud(sp, &spec), &cams, &RenderConfig::default())?,
                    None => Vec::new(),
                };
                for v in s.views.iter().chain(&recon) {
                    let img = if target == DecodeTarget::Rendered { v.clone() } else { ll(v)? };
                    out.push(img.to_tensor());
                }
            }
        }
    }
    Ok(out)
}

/// The identity, horizontal, vertical and double flips of a `[C, H, W]` tensor.
fn flips(t: &Tensor) -> Vec<Tensor> {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let d = t.data();
    [(false, false), (true, false), (false, true), (true, true)]
        .iter()
        .map(|&(fy, fx)| {
            let mut out = Vec::with_capacity(d.len());
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let sy = if fy { h - 1 - y } else { y };
                        let sx = if fx { w - 1 - x } else { x };
                        out.push(d[(ch * h + sy) * w + sx]);
                    }
                }
            }
            Tensor::new(&[c, h, w], out).expect("same shape")
        })
        .collect()
}

fn stack_batch(images: &[Tensor], idx: &[usize]) -> Result<Tensor> {
    let shape = images[idx[0]].shape().to_vec();
    let mut data = Vec::with_capacity(idx.len() * images[idx[0]].numel());
    for &i in idx {
        if images[i].shape() != shape {
            return Err(Error::Validation("codec images differ in shape".into()));
        }
        data.extend_from_slice(images[i].data());
    }
    let mut full = vec![idx.len()];
    full.extend(shape);
    Ok(Tensor::new(&full, data)?)
}

fn random_messages(n: usize, bits: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..n * bits).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
    Tensor::new(&[n, bits], data).expect("sized above")
}

/// Jointly trains the encoder and decoder (BCE on decoded bits plus MSE on
/// the image residual, weighted 1:1) on random messages, then freezes the
/// decoder. Returns the loss per step.
pub fn pretrain_hidden(images: &[Tensor], codec: &mut HiddenCodec, cfg: &HiddenTrainConfig) -> Result<Vec<f64>> {
    if images.len() < MIN_CODEC_IMAGES {
        return Err(Error::Config(format!(
            "decoder pretraining needs at least {MIN_CODEC_IMAGES} images, got {}",
            images.len()
        )));
    }
    if cfg.batch_size < 2 {
        return Err(Error::Config("decoder pretraining needs batches of at least 2 for normalisation".into()));
    }
    if images[0].shape()[0] != codec.decoder.in_channels {
        return Err(Error::Config(format!(
            "decoder reads {} channels but the images have {}",
            codec.decoder.in_channels,
            images[0].shape()[0]
        )));
    }
    let bits = codec.decoder.bits();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(AdamWConfig::with_lr(cfg.lr));
    let mut order = Vec::new();
    let mut log = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut idx = Vec::with_capacity(cfg.batch_size);
        while idx.len() < cfg.batch_size {
            if order.is_empty() {
                order = (0..images.len()).collect();
                order.shuffle(&mut rng);
            }
            idx.push(order.pop().expect("refilled above"));
        }
        let msgs = random_messages(idx.len(), bits, &mut rng);
        let tape = Tape::new();
        let x = tape.constant(stack_batch(images, &idx)?);
        let y = codec.encoder.forward(&tape, x, &msgs)?;
        let (logits, stats) = codec.decoder.forward(&tape, y, true)?;
        let l_bits = tape.bce_with_logits(logits, &msgs)?;
        let l_img = tape.mse(y, x)?;
        let loss = tape.add(l_bits, l_img)?;
        log.push(tape.value(loss).item());
        let grads = tape.backward(loss)?;
        codec.decoder.update_running(&stats);
        let mut params = codec.encoder.params_mut();
        params.extend(codec.decoder.params_mut());
        grads.accumulate_into(params.iter_mut().map(|p| &mut **p))?;
        opt.step(params)?;
    }
    codec.decoder.set_frozen(true);
    Ok(log)
}

/// Bit accuracy of the decoder (inference mode) on encoded `images` with
/// seeded random messages.
pub fn codec_accuracy(images: &[Tensor], codec: &HiddenCodec, seed: u64) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::Validation("no images to score".into()));
    }
    let bits = codec.decoder.bits();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for chunk in (0..images.len()).collect::<Vec<_>>().chunks(32) {
        let msgs = random_messages(chunk.len(), bits, &mut rng);
        let tape = Tape::new();
        let x = tape.constant(stack_batch(images, chunk)?);
        let y = codec.encoder.forward(&tape, x, &msgs)?;
        let (logits, _) = codec.decoder.forward(&tape, y, false)?;
        let l = tape.value(logits);
        for (r, row) in l.data().chunks(bits).enumerate() {
            let decoded = Message::from_logits(row)?;
            let truth = &msgs.data()[r * bits..(r + 1) * bits];
            hits += decoded.bits().iter().zip(truth).filter(|(a, b)| **a as f64 == **b).count();
        }
    }
    Ok(hits as f64 / (images.len() * bits) as f64)
}
