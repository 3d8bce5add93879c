use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Backward rule of a recorded operation.
///
/// Returns one entry per input: the gradient of the loss with respect to that
/// input, or `None` when the input does not require a gradient.
pub(crate) trait Backward {
    fn backward(&self, tape: &Tape, inputs: &[Var], output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>>;
}

struct Node {
    op: &'static str,
    value: Tensor,
    inputs: Vec<Var>,
    requires_grad: bool,
    rule: Option<Box<dyn Backward>>,
}

/// Define-by-run record of differentiable operations.
///
/// Nodes are appended in execution order, so every node's inputs precede it.
/// A tape is single-threaded and is rebuilt for every forward pass.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Records a trainable leaf whose gradient [`Tape::backward`] will report.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: "leaf",
            value,
            inputs: Vec::new(),
            requires_grad,
            rule: None,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.check(v).expect("variable belongs to another tape");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    pub(crate) fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Lookup(format!(
                "variable #{} is not recorded on this tape",
                v.index
            )));
        }
        Ok(())
    }

    /// Appends an operation result. Non-finite outputs abort with an error.
    pub(crate) fn push(
        &mut self,
        op: &'static str,
        value: Tensor,
        inputs: Vec<Var>,
        rule: impl Backward + 'static,
    ) -> Result<Var> {
        for &v in &inputs {
            self.check(v)?;
        }
        if !value.all_finite() {
            return Err(Error::NonFinite { op });
        }
        let requires_grad = inputs.iter().any(|&v| self.nodes[v.index].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            inputs,
            requires_grad,
            rule: requires_grad.then(|| Box::new(rule) as Box<dyn Backward>),
        });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Gradients of fanned-out values accumulate additively.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        let loss_value = &self.nodes[loss.index].value;
        if loss_value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.index + 1];
        grads[loss.index] = Some(vec![1.0]);
        for i in (0..=loss.index).rev() {
            let node = &self.nodes[i];
            let Some(rule) = node.rule.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else { continue };
            let input_grads = rule.backward(self, &node.inputs, &node.value, &g);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (&inp, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !self.nodes[inp.index].requires_grad {
                    continue;
                }
                debug_assert_eq!(ig.len(), self.nodes[inp.index].value.numel());
                match &mut grads[inp.index] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        op: self.nodes[i].op,
                    });
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            trainable: self.nodes.iter().map(|n| n.requires_grad && n.rule.is_none()).collect(),
        })
    }
}

/// Gradients produced by one backward sweep.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    trainable: Vec<bool>,
}

impl Gradients {
    /// `∂loss/∂v` for a trainable leaf; a zero tensor when the loss never touched `v`.
    pub fn get(&self, v: Var) -> Result<Tensor> {
        if v.tape != self.tape || v.index >= self.shapes.len() {
            return Err(Error::Lookup(format!(
                "variable #{} is not recorded on this tape",
                v.index
            )));
        }
        if !self.trainable[v.index] {
            return Err(Error::Lookup(format!(
                "variable #{} is not a trainable leaf",
                v.index
            )));
        }
        let shape = self.shapes[v.index].clone();
        Ok(match self.grads.get(v.index).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        })
    }
}
