//! Differentiable ops, implemented as methods on [`Tape`](crate::Tape).

mod conv;
mod elementwise;
mod loss;
mod norm;
mod shape;

pub use norm::BatchStats;

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
