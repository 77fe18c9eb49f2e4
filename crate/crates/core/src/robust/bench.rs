use rayon::prelude::*;

use super::attacks::AttackSpec;
use super::metrics::{bit_accuracy, psnr, ssim};
use crate::error::{Error, Result};
use crate::nets::Message;
use crate::renderer::Camera;
use crate::seal::{render_views, DecodeTarget, SealSystem};
use crate::toolkit::{format_metric, format_percent, Scene, Table, INPUT_VIEWS};

/// Averages over scenes for one attack; `attack` is `None` for the clean row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub attack: Option<AttackSpec>,
    pub psnr: f64,
    pub ssim: f64,
    pub bit_accuracy: f64,
}

impl MetricReport {
    pub fn label(&self) -> &'static str {
        self.attack.map_or("none", |a| a.kind.name())
    }

    pub fn param(&self) -> f64 {
        self.attack.map_or(0.0, |a| a.param)
    }
}

struct SceneScore {
    psnr: f64,
    ssim: f64,
    bit_acc: f64,
}

/// Seed of the image attack on view `view` of scene `scene`.
fn view_seed(attack: &AttackSpec, scene: usize, view: usize) -> u64 {
    attack.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((scene as u64) << 16 | view as u64)
}

fn score_scene(system: &SealSystem, attack: Option<&AttackSpec>, scene: &Scene, index: usize, cams: &[Camera]) -> Result<SceneScore> {
    let input = scene.input_tensor(&INPUT_VIEWS)?;
    let clean = render_views(&system.cloud(&system.splat(&input, false)?), cams, &system.render)?;
    let splat = system.splat(&input, true)?;
    let mut cloud = system.cloud(&splat);
    if let Some(a) = attack {
        cloud = a.apply_cloud(&cloud)?;
    }
    let mut views = render_views(&cloud, cams, &system.render)?;
    if let Some(a) = attack {
        for (v, img) in views.iter_mut().enumerate() {
            let spec = AttackSpec { seed: view_seed(a, index, v), ..*a };
            *img = spec.apply_image(img)?;
        }
    }
    let (mut p, mut s) = (0.0, 0.0);
    for (a, b) in views.iter().zip(&clean) {
        p += psnr(a, b)?;
        s += ssim(a, b)?;
    }
    let decoded = Message::from_logits(&system.decode(Some(&splat), &views)?)?;
    Ok(SceneScore {
        psnr: p / cams.len() as f64,
        ssim: s / cams.len() as f64,
        bit_acc: bit_accuracy(decoded.bits(), system.message.bits())?,
    })
}

/// Scores the watermarked system under each attack (plus a leading clean
/// row): 3-D attack, render, 2-D attack, DWT, decode. Fidelity compares the
/// attacked views with clean renders of the unwatermarked output.
pub fn run_robustness(system: &SealSystem, attacks: &[AttackSpec], scenes: &[Scene], cams: &[Camera]) -> Result<Vec<MetricReport>> {
    if scenes.is_empty() || cams.is_empty() {
        return Err(Error::Validation("robustness runs need scenes and cameras".into()));
    }
    if system.target == DecodeTarget::RawSplat {
        return Err(Error::Config("robustness runs decode rendered views".into()));
    }
    for a in attacks {
        a.validate()?;
    }
    let rows: Vec<Option<&AttackSpec>> = std::iter::once(None).chain(attacks.iter().map(Some)).collect();
    let jobs: Vec<(usize, usize)> = (0..rows.len()).flat_map(|r| (0..scenes.len()).map(move |s| (r, s))).collect();
    let scores = jobs
        .par_iter()
        .map(|&(r, s)| score_scene(system, rows[r], &scenes[s], s, cams))
        .collect::<Result<Vec<_>>>()?;
    let n = scenes.len() as f64;
    Ok(rows
        .iter()
        .zip(scores.chunks(scenes.len()))
        .map(|(attack, chunk)| MetricReport {
            attack: attack.copied(),
            psnr: chunk.iter().map(|c| c.psnr).sum::<f64>() / n,
            ssim: chunk.iter().map(|c| c.ssim).sum::<f64>() / n,
            bit_accuracy: chunk.iter().map(|c| c.bit_acc).sum::<f64>() / n,
        })
        .collect())
}

pub fn robustness_table(rows: &[MetricReport]) -> Table {
    let mut t = Table::new(&["attack", "param", "psnr", "ssim", "bit_acc"]);
    for r in rows {
        t.push(vec![
            r.label().to_string(),
            r.param().to_string(),
            format_metric(r.psnr),
            format_metric(r.ssim),
            format_percent(r.bit_accuracy),
        ]);
    }
    t
}
