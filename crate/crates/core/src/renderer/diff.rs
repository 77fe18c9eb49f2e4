use std::sync::Arc;

use gseal_grad::{Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::gaussians::{Gaussian, PARAMS_PER_GAUSSIAN};

use super::raster::{render_backward, render_with_alpha};
use super::{Camera, RenderConfig};

/// Renders activated parameters `[N, 14]` to a `[3, H, W]` image on the tape.
pub fn render_on_tape(tape: &Tape, params: Var, cam: &Camera, cfg: &RenderConfig) -> Result<Var> {
    let pv = tape.value(params);
    if pv.rank() != 2 || pv.shape()[1] != PARAMS_PER_GAUSSIAN {
        return Err(Error::Validation(format!("expected [N, 14] parameters, got {:?}", pv.shape())));
    }
    cam.validate()?;
    let gaussians: Arc<Vec<Gaussian>> = Arc::new(
        pv.data()
            .chunks_exact(PARAMS_PER_GAUSSIAN)
            .map(Gaussian::from_params)
            .collect(),
    );
    let (img, _) = render_with_alpha(&gaussians, cam, cfg);
    let out = Tensor::new(&[3, cam.height, cam.width], img.data)?;
    let (cam, cfg) = (*cam, *cfg);
    Ok(tape.op(out, &[params], move |g, _| {
        let grads = render_backward(&gaussians, &cam, &cfg, g.data());
        let flat = grads.into_iter().flatten().collect();
        vec![Some(Tensor::new(&[gaussians.len(), PARAMS_PER_GAUSSIAN], flat).unwrap())]
    }))
}
