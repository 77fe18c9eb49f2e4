//! Reverse-mode automatic differentiation over dense `f64` tensors, with the
//! layer ops, losses and AdamW optimizer the watermarking pipeline trains with.
//!
//! A [`Tape`] records ops as they run; [`Tape::backward`] sweeps it in reverse
//! and returns [`Gradients`] for leaves and [`Parameter`]s.
//!
//! ```
//! use gseal_grad::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let zero = tape.constant(Tensor::scalar(0.0));
//! let loss = tape.mse(x, zero).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

mod error;
mod gemm;
pub mod ops;
mod optim;
mod param;
mod tape;
mod tensor;

pub use error::{GradError, Result};
pub use ops::{sigmoid, BatchStats};
pub use optim::{AdamW, AdamWConfig};
pub use param::{load_into, read_checkpoint, write_checkpoint, ParamId, Parameter};
pub use tape::{BackwardFn, Gradients, Tape, Var};
pub use tensor::Tensor;
