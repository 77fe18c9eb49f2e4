use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{DecodeTarget, TrainConfig};
use super::losses::LossBreakdown;
use super::system::{render_views, EvalSummary, SealSystem};
use super::train::{train_seal, SealFrozen};
use crate::error::{Error, Result};
use crate::nets::{HiddenDecoder, INPUT_BLOCK_CHANNELS, Message, ModulationSet, SiteSet, ToyUNet};
use crate::robust::bit_accuracy;
use crate::toolkit::{format_metric, format_percent, CameraRig, Scene, Table, INPUT_VIEWS};

/// Shared inputs of the ablation harnesses.
#[derive(Clone, Copy)]
pub struct SealSetup<'a> {
    pub train: &'a [Scene],
    pub held_out: &'a [Scene],
    pub generator: &'a ToyUNet,
    pub decoder: &'a HiddenDecoder,
    pub rig: &'a CameraRig,
    pub message: &'a Message,
    pub base: &'a TrainConfig,
}

/// Modulation set sized for `gen`, initialised from `cfg.seed`.
pub fn modulation_for(gen: &ToyUNet, cfg: &TrainConfig) -> ModulationSet {
    let c = &gen.config;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EA1);
    ModulationSet::new(cfg.message_length, INPUT_BLOCK_CHANNELS, c.mid_width(), c.out_width(), cfg.init, &mut rng)
}

/// Trains a fresh modulation set under `cfg` and wraps the result.
pub fn train_system(setup: &SealSetup, decoder: &HiddenDecoder, cfg: &TrainConfig) -> Result<(SealSystem, Vec<LossBreakdown>)> {
    let mut mods = modulation_for(setup.generator, cfg);
    let fz = SealFrozen::new(setup.generator, decoder, setup.rig);
    let log = train_seal(setup.train, &fz, &mut mods, setup.message, cfg)?;
    let system = SealSystem {
        generator: setup.generator.clone(),
        decoder: decoder.clone(),
        mods,
        message: setup.message.clone(),
        sites: cfg.sites,
        target: cfg.target,
        activation: fz.activation,
        render: fz.render,
    };
    Ok((system, log))
}

/// Bit accuracy of decoding the clean generator's output against a panel
/// of seeded random messages: the chance baseline of an unmodulated model.
pub fn clean_panel_accuracy(system: &SealSystem, scenes: &[Scene], rig: &CameraRig, panel: usize, seed: u64) -> Result<f64> {
    let cams = rig.cameras()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let messages = (0..panel)
        .map(|_| Message::random(system.message.len(), &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for s in scenes {
        let splat = system.splat(&s.input_tensor(&INPUT_VIEWS)?, false)?;
        let views = render_views(&system.cloud(&splat), &cams, &system.render)?;
        let decoded = Message::from_logits(&system.decode(Some(&splat), &views)?)?;
        for m in &messages {
            total += bit_accuracy(decoded.bits(), m.bits())?;
        }
    }
    Ok(total / (scenes.len() * panel) as f64)
}

/// Messages in the chance panel of the no-site ablation row.
pub const CHANCE_PANEL: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub sites: SiteSet,
    /// `∞` for the unmodulated row.
    pub psnr: f64,
    pub ssim: f64,
    pub bit_acc: f64,
}

/// Trains one system per modulation-site subset and evaluates it on the
/// held-out scenes. The empty subset reports an infinite PSNR and the
/// decoder's accuracy on clean outputs against a random-message panel.
pub fn ablate_positions(setup: &SealSetup) -> Result<Vec<AblationRow>> {
    let cams = setup.rig.cameras()?;
    let mut rows = Vec::new();
    for sites in SiteSet::subsets() {
        let cfg = TrainConfig { sites, ..setup.base.clone() };
        let (system, _) = train_system(setup, setup.decoder, &cfg)?;
        let row = if sites.is_empty() {
            AblationRow {
                sites,
                psnr: f64::INFINITY,
                ssim: 1.0,
                bit_acc: clean_panel_accuracy(&system, setup.held_out, setup.rig, CHANCE_PANEL, setup.base.seed)?,
            }
        } else {
            let e = system.evaluate(setup.held_out, &cams)?;
            AblationRow { sites, psnr: e.psnr, ssim: e.ssim, bit_acc: e.bit_acc }
        };
        rows.push(row);
    }
    Ok(rows)
}

pub fn ablation_table(rows: &[AblationRow]) -> Table {
    let mark = |on: bool| if on { "x" } else { "-" }.to_string();
    let mut t = Table::new(&["input", "mid", "out", "psnr", "bit_acc"]);
    for r in rows {
        t.push(vec![
            mark(r.sites.input),
            mark(r.sites.mid),
            mark(r.sites.out),
            format_metric(r.psnr),
            format_percent(r.bit_acc),
        ]);
    }
    t
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightRow {
    pub lambda_gs: f64,
    pub lambda_rgb: f64,
    pub psnr: f64,
    pub bit_acc: f64,
}

/// One training run per `(λ_gs, λ_rgb)` candidate.
pub fn grid_search_weights(setup: &SealSetup, candidates: &[(f64, f64)]) -> Result<Vec<WeightRow>> {
    if candidates.is_empty() {
        return Err(Error::Config("grid search needs at least one candidate".into()));
    }
    let cams = setup.rig.cameras()?;
    candidates
        .iter()
        .map(|&(lambda_gs, lambda_rgb)| {
            let cfg = TrainConfig { lambda_gs, lambda_rgb, ..setup.base.clone() };
            let (system, _) = train_system(setup, setup.decoder, &cfg)?;
            let e = system.evaluate(setup.held_out, &cams)?;
            Ok(WeightRow { lambda_gs, lambda_rgb, psnr: e.psnr, bit_acc: e.bit_acc })
        })
        .collect()
}

pub fn weights_table(rows: &[WeightRow]) -> Table {
    let mut t = Table::new(&["lambda_gs", "lambda_rgb", "psnr", "bit_acc"]);
    for r in rows {
        t.push(vec![r.lambda_gs.to_string(), r.lambda_rgb.to_string(), format_metric(r.psnr), format_percent(r.bit_acc)]);
    }
    t
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetRow {
    pub target: DecodeTarget,
    pub psnr: f64,
    pub ssim: f64,
    pub bit_acc: f64,
}

/// One training run per decoding target, each with its own pretrained
/// decoder and otherwise identical settings.
pub fn decoding_target_report(setup: &SealSetup, decoders: &[(DecodeTarget, &HiddenDecoder)]) -> Result<Vec<TargetRow>> {
    let cams = setup.rig.cameras()?;
    decoders
        .iter()
        .map(|&(target, decoder)| {
            let cfg = TrainConfig { target, ..setup.base.clone() };
            let (system, _) = train_system(setup, decoder, &cfg)?;
            let EvalSummary { psnr, ssim, bit_acc, .. } = system.evaluate(setup.held_out, &cams)?;
            Ok(TargetRow { target, psnr, ssim, bit_acc })
        })
        .collect()
}

pub fn targets_table(rows: &[TargetRow]) -> Table {
    let mut t = Table::new(&["target", "psnr", "ssim", "bit_acc"]);
    for r in rows {
        t.push(vec![r.target.to_string(), format_metric(r.psnr), format_metric(r.ssim), format_percent(r.bit_acc)]);
    }
    t
}
