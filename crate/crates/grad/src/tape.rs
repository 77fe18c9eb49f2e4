//! Dynamic gradient tape.
//!
//! Every op appends a node holding its output value and, when any input
//! requires a gradient, a closure mapping the output gradient to input
//! gradients. Nodes are appended in evaluation order, so a reverse sweep is a
//! valid topological order.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{GradError, Result};
use crate::param::{ParamId, Parameter};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Maps the output gradient to one optional gradient per parent. The flag
/// slice says which parents need a gradient; others may be `None`.
pub type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

enum Source {
    Op,
    Constant,
    Leaf,
    Param(ParamId),
}

struct Node {
    value: Arc<Tensor>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    source: Source,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, node: Node) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var(nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, t: Tensor) -> Var {
        self.push(Node {
            value: Arc::new(t),
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
            source: Source::Constant,
        })
    }

    /// A free input whose gradient is reported in [`Gradients::get`].
    pub fn leaf(&self, t: Tensor) -> Var {
        self.push(Node {
            value: Arc::new(t),
            requires_grad: true,
            parents: Vec::new(),
            backward: None,
            source: Source::Leaf,
        })
    }

    /// Records a parameter. Frozen parameters become constants.
    pub fn param(&self, p: &Parameter) -> Var {
        let frozen = p.is_frozen();
        self.push(Node {
            value: p.shared_value(),
            requires_grad: !frozen,
            parents: Vec::new(),
            backward: None,
            source: if frozen { Source::Constant } else { Source::Param(p.id()) },
        })
    }

    pub fn value(&self, v: Var) -> Arc<Tensor> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a custom differentiable op. The closure is dropped when no
    /// parent requires a gradient.
    pub fn op(
        &self,
        value: Tensor,
        parents: &[Var],
        backward: impl Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>> + 'static,
    ) -> Var {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.0].requires_grad)
        };
        self.push(Node {
            value: Arc::new(value),
            requires_grad,
            parents: parents.iter().map(|p| p.0).collect(),
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
            source: Source::Op,
        })
    }

    /// Reverse sweep from a one-element `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let numel = self.nodes.borrow()[loss.0].value.numel();
        if numel != 1 {
            return Err(GradError::Usage(format!(
                "backward needs a scalar loss, got {numel} elements"
            )));
        }
        let shape = self.shape(loss);
        self.backward_from(loss, Tensor::ones(&shape))
    }

    /// Reverse sweep seeded with an explicit output gradient.
    pub fn backward_from(self, output: Var, seed: Tensor) -> Result<Gradients> {
        let nodes = self.nodes.into_inner();
        if seed.shape() != nodes[output.0].value.shape() {
            return Err(GradError::Shape {
                op: "backward",
                expected: nodes[output.0].value.shape().to_vec(),
                got: seed.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);
        let mut out = Gradients::default();
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            match node.source {
                Source::Leaf => {
                    out.leaves.insert(i, g);
                }
                Source::Param(id) => match out.params.get_mut(&id) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        out.params.insert(id, g);
                    }
                },
                Source::Constant => {}
                Source::Op => {
                    let Some(bw) = &node.backward else { continue };
                    let needs: Vec<bool> = node
                        .parents
                        .iter()
                        .map(|&p| nodes[p].requires_grad)
                        .collect();
                    let pgrads = bw(&g, &needs);
                    debug_assert_eq!(pgrads.len(), node.parents.len());
                    for ((&p, pg), need) in node.parents.iter().zip(pgrads).zip(needs) {
                        let (Some(pg), true) = (pg, need) else { continue };
                        debug_assert_eq!(pg.shape(), nodes[p].value.shape());
                        match &mut grads[p] {
                            Some(acc) => acc.add_assign(&pg),
                            slot => *slot = Some(pg),
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Gradients produced by one reverse sweep.
#[derive(Default, Debug)]
pub struct Gradients {
    leaves: HashMap<usize, Tensor>,
    params: HashMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient of a leaf; `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v.0)
    }

    pub fn param(&self, p: &Parameter) -> Option<&Tensor> {
        self.params.get(&p.id())
    }

    /// Adds these gradients into each non-frozen parameter's accumulator.
    /// Unreached parameters receive an explicit zero gradient.
    pub fn accumulate_into<'a>(
        &self,
        params: impl IntoIterator<Item = &'a mut Parameter>,
    ) -> Result<()> {
        for p in params {
            if p.is_frozen() {
                continue;
            }
            match self.params.get(&p.id()) {
                Some(g) => p.accumulate_grad(g)?,
                None => {
                    let z = Tensor::zeros(p.value().shape());
                    p.accumulate_grad(&z)?
                }
            }
        }
        Ok(())
    }
}
