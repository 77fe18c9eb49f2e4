use gseal_grad::{Tape, Var};

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::nets::Message;

/// Message loss: BCE between view-averaged logits `[L]` and the message.
pub fn loss_msg(tape: &Tape, logits: Var, m: &Message) -> Result<Var> {
    let shape = tape.shape(logits);
    if shape != [m.len()] {
        return Err(Error::Validation(format!("expected {} logits, got shape {shape:?}", m.len())));
    }
    Ok(tape.bce_with_logits(logits, &m.to_tensor())?)
}

/// Consistency losses `(MSE(g, g_clean), MSE(R, R_clean))`; the clean
/// operands must be constants on the tape.
pub fn loss_consistency(tape: &Tape, g: Var, g_clean: Var, r: Var, r_clean: Var) -> Result<(Var, Var)> {
    if tape.requires_grad(g_clean) || tape.requires_grad(r_clean) {
        return Err(Error::Validation("clean targets must be detached".into()));
    }
    Ok((tape.mse(g, g_clean)?, tape.mse(r, r_clean)?))
}

/// `L_msg + λ_gs·L_gs + λ_rgb·L_rgb`.
pub fn total_loss(tape: &Tape, l_msg: Var, l_gs: Var, l_rgb: Var, cfg: &TrainConfig) -> Result<Var> {
    let a = tape.add(l_msg, tape.scale(l_gs, cfg.lambda_gs))?;
    Ok(tape.add(a, tape.scale(l_rgb, cfg.lambda_rgb))?)
}

/// Losses of one training step, each averaged over the batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub step: usize,
    pub l_msg: f64,
    pub l_gs: f64,
    pub l_rgb: f64,
    pub total: f64,
    pub bit_acc: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "step,L_msg,L_gs,L_rgb,total,bit_acc";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{}",
            self.step, self.l_msg, self.l_gs, self.l_rgb, self.total, self.bit_acc
        )
    }

    /// `|total − (L_msg + λ_gs·L_gs + λ_rgb·L_rgb)|`.
    pub fn composition_error(&self, cfg: &TrainConfig) -> f64 {
        (self.total - (self.l_msg + cfg.lambda_gs * self.l_gs + cfg.lambda_rgb * self.l_rgb)).abs()
    }
}

pub fn log_to_csv(log: &[LossBreakdown]) -> String {
    let mut s = String::from(LossBreakdown::CSV_HEADER);
    s.push('\n');
    for row in log {
        s.push_str(&row.csv_row());
        s.push('\n');
    }
    s
}
