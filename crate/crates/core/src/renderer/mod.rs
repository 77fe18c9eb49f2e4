//! Differentiable splatting of Gaussian clouds: EWA projection, tiled
//! front-to-back compositing, a brute-force reference, and the analytic
//! backward pass.

mod camera;
mod diff;
mod image;
mod project;
mod raster;

pub use camera::{Camera, DEFAULT_NEAR};
pub use diff::render_on_tape;
pub use image::Image;
pub use project::{
    pixel_weight, project, project_backward, project_unculled, Grad2D, Projected2D, COV_REGULARIZATION, CUTOFF_D2,
};
pub use raster::{
    composite, render, render_backward, render_reference, render_reference_bg, render_with_alpha, RenderConfig,
    MIN_TRANSMITTANCE, TILE, WHITE,
};
