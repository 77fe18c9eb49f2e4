use gseal_grad::Tensor;

use super::config::DecodeTarget;
use crate::error::{Error, Result};
use crate::gaussians::{splat_to_cloud, ActivationSpec, GaussianCloud, SplatTensor};
use crate::nets::{decode_logits, HiddenDecoder, Message, ModulationSet, SiteSet, ToyUNet};
use crate::renderer::{render, Camera, Image, RenderConfig};
use crate::robust::{bit_accuracy, psnr, ssim};
use crate::toolkit::{stack_views, Scene, INPUT_VIEWS};
use crate::wavelet::ll;

/// A frozen generator and decoder with one trained modulation set and the
/// message it embeds.
#[derive(Clone, Debug)]
pub struct SealSystem {
    pub generator: ToyUNet,
    pub decoder: HiddenDecoder,
    pub mods: ModulationSet,
    pub message: Message,
    pub sites: SiteSet,
    pub target: DecodeTarget,
    pub activation: ActivationSpec,
    pub render: RenderConfig,
}

/// Decoder input for a target: `[1, 14, S, S]` for the raw tensor,
/// `[V, 3, H, W]` for renders, `[V, 3, H/2, W/2]` for their LL subbands.
pub fn decoder_input(target: DecodeTarget, splat: Option<&SplatTensor>, views: &[Image]) -> Result<Tensor> {
    match target {
        DecodeTarget::RawSplat => {
            let s = splat.ok_or_else(|| Error::Validation("raw-splat decoding needs the splat tensor".into()))?;
            let t = s.tensor();
            let mut shape = vec![1];
            shape.extend_from_slice(t.shape());
            Ok(t.clone().reshape(&shape)?)
        }
        DecodeTarget::Rendered => batch_views(views.iter().cloned()),
        DecodeTarget::RenderedDwt => batch_views(views.iter().map(ll).collect::<Result<Vec<_>>>()?),
    }
}

/// Stacks images into `[V, 3, H, W]`.
pub fn batch_views(views: impl IntoIterator<Item = Image>) -> Result<Tensor> {
    let views: Vec<Image> = views.into_iter().collect();
    let t = stack_views(&views)?;
    let (h, w) = (t.shape()[1], t.shape()[2]);
    Ok(t.reshape(&[views.len(), 3, h, w])?)
}

pub fn render_views(cloud: &GaussianCloud, cams: &[Camera], cfg: &RenderConfig) -> Result<Vec<Image>> {
    cams.iter().map(|c| render(cloud, c, cfg)).collect()
}

/// Per-scene evaluation of a watermarked generator against its clean output.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneEval {
    pub psnr: f64,
    pub ssim: f64,
    pub bit_acc: f64,
    pub decoded: Message,
}

/// Averages over scenes.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub psnr: f64,
    pub ssim: f64,
    pub bit_acc: f64,
    pub scenes: Vec<SceneEval>,
}

impl SealSystem {
    /// Generator output for a scene, watermarked when `watermark` is set.
    pub fn splat(&self, input: &Tensor, watermark: bool) -> Result<SplatTensor> {
        if watermark && !self.sites.is_empty() {
            self.generator.generate(input, Some((&self.mods, &self.message, self.sites)))
        } else {
            self.generator.generate(input, None)
        }
    }

    pub fn cloud(&self, splat: &SplatTensor) -> GaussianCloud {
        splat_to_cloud(splat, &self.activation)
    }

    /// View-averaged logits for rendered views (and the splat tensor when
    /// decoding it directly).
    pub fn decode(&self, splat: Option<&SplatTensor>, views: &[Image]) -> Result<Vec<f64>> {
        decode_logits(&decoder_input(self.target, splat, views)?, &self.decoder)
    }

    /// Renders clean and watermarked outputs of `scene` from `cams`, then
    /// scores fidelity and decodes the watermarked views.
    pub fn evaluate_scene(&self, scene: &Scene, cams: &[Camera]) -> Result<SceneEval> {
        let input = scene.input_tensor(&INPUT_VIEWS)?;
        let clean = self.splat(&input, false)?;
        let marked = self.splat(&input, true)?;
        let rc = render_views(&self.cloud(&clean), cams, &self.render)?;
        let rm = render_views(&self.cloud(&marked), cams, &self.render)?;
        let mut p = 0.0;
        let mut s = 0.0;
        for (a, b) in rm.iter().zip(&rc) {
            p += psnr(a, b)?;
            s += ssim(a, b)?;
        }
        let decoded = Message::from_logits(&self.decode(Some(&marked), &rm)?)?;
        Ok(SceneEval {
            psnr: p / cams.len() as f64,
            ssim: s / cams.len() as f64,
            bit_acc: bit_accuracy(decoded.bits(), self.message.bits())?,
            decoded,
        })
    }

    pub fn evaluate(&self, scenes: &[Scene], cams: &[Camera]) -> Result<EvalSummary> {
        if scenes.is_empty() || cams.is_empty() {
            return Err(Error::Validation("evaluation needs scenes and cameras".into()));
        }
        let evals = scenes.iter().map(|s| self.evaluate_scene(s, cams)).collect::<Result<Vec<_>>>()?;
        let n = evals.len() as f64;
        Ok(EvalSummary {
            psnr: evals.iter().map(|e| e.psnr).sum::<f64>() / n,
            ssim: evals.iter().map(|e| e.ssim).sum::<f64>() / n,
            bit_acc: evals.iter().map(|e| e.bit_acc).sum::<f64>() / n,
            scenes: evals,
        })
    }
}
