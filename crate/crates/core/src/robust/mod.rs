//! Attack suite, quality metrics and the robustness benchmark.

mod attacks;
mod bench;
mod jpeg;
mod metrics;

pub use attacks::{
    attack_blur, attack_brightness, attack_crop, attack_jpeg, attack_noise, attack_rotate, AttackKind, AttackSpec,
};
pub use bench::{robustness_table, run_robustness, MetricReport};
pub use jpeg::{chroma_table, jpeg_roundtrip, luma_table, quant_table};
pub use metrics::{bit_accuracy, mse, psnr, ssim, PSNR_CAP};
