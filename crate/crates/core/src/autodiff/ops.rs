//! Core differentiable tensor operations.

use super::tape::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

fn grad_if(tape: &Tape, v: Var, f: impl FnOnce() -> Vec<f64>) -> Option<Vec<f64>> {
    tape.requires_grad(v).then(f)
}

struct AddRule;

impl Backward for AddRule {
    fn backward(&self, tape: &Tape, inputs: &[Var], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        inputs
            .iter()
            .map(|&v| grad_if(tape, v, || grad.to_vec()))
            .collect()
    }
}

/// Elementwise `a + b` on identically shaped tensors.
pub fn add(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    tape.check(a)?;
    tape.check(b)?;
    let (ta, tb) = (tape.value(a), tape.value(b));
    if ta.shape() != tb.shape() {
        return Err(Error::dim("add", ta.shape(), tb.shape()));
    }
    let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
    let out = Tensor::from_parts(ta.shape().to_vec(), data);
    tape.push("add", out, vec![a, b], AddRule)
}

struct SubRule;

impl Backward for SubRule {
    fn backward(&self, tape: &Tape, inputs: &[Var], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![
            grad_if(tape, inputs[0], || grad.to_vec()),
            grad_if(tape, inputs[1], || grad.iter().map(|g| -g).collect()),
        ]
    }
}

pub fn sub(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    tape.check(a)?;
    tape.check(b)?;
    let (ta, tb) = (tape.value(a), tape.value(b));
    if ta.shape() != tb.shape() {
        return Err(Error::dim("sub", ta.shape(), tb.shape()));
    }
    let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
    let out = Tensor::from_parts(ta.shape().to_vec(), data);
    tape.push("sub", out, vec![a, b], SubRule)
}

struct MulRule;

impl Backward for MulRule {
    fn backward(&self, tape: &Tape, inputs: &[Var], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let a = tape.value(inputs[0]).data();
        let b = tape.value(inputs[1]).data();
        vec![
            grad_if(tape, inputs[0], || grad.iter().zip(b).map(|(g, y)| g * y).collect()),
            grad_if(tape, inputs[1], || grad.iter().zip(a).map(|(g, x)| g * x).collect()),
        ]
    }
}

/// Elementwise (Hadamard) product.
pub fn mul(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    tape.check(a)?;
    tape.check(b)?;
    let (ta, tb) = (tape.value(a), tape.value(b));
    if ta.shape() != tb.shape() {
        return Err(Error::dim("mul", ta.shape(), tb.shape()));
    }
    let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
    let out = Tensor::from_parts(ta.shape().to_vec(), data);
    tape.push("mul", out, vec![a, b], MulRule)
}

struct ScaleRule(f64);

impl Backward for ScaleRule {
    fn backward(&self, tape: &Tape, inputs: &[Var], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![grad_if(tape, inputs[0], || grad.iter().map(|g| g * self.0).collect())]
    }
}

/// `s · a` for a constant scalar `s`.
pub fn scale(tape: &mut Tape, a: Var, s: f64) -> Result<Var> {
    tape.check(a)?;
    let out = tape.value(a).map(|v| v * s);
    tape.push("scale", out, vec![a], ScaleRule(s))
}

struct ShiftRule;

impl Backward for ShiftRule {
    fn backward(&self, tape: &Tape, inputs: &[Var], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![grad_if(tape, inputs[0], || grad.to_vec())]
    }
}

/// `a + c` for a constant scalar `c`.
pub fn shift(tape: &mut Tape, a: Var, c: f64) -> Result<Var> {
    tape.check(a)?;
    let out = tape.value(a).map(|v| v + c);
    tape.push("shift", out, vec![a], ShiftRule)
}

struct SumRule;

impl Backward for SumRule {
    fn backward(&self, tape: &Tape, inputs: &[Var], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let n = tape.value(inputs[0]).numel();
        vec![grad_if(tape, inputs[0], || vec![grad[0]; n])]
    }
}

/// Sum of all elements, as a scalar.
pub fn sum(tape: &mut Tape, a: Var) -> Result<Var> {
    tape.check(a)?;
    let s = tape.value(a).sum();
    tape.push("sum", Tensor::scalar(s), vec![a], SumRule)
}

struct ReshapeRule;

impl Backward for ReshapeRule {
    fn backward(&self, tape: &Tape, inputs: &[Var], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![grad_if(tape, inputs[0], || grad.to_vec())]
    }
}

pub fn reshape(tape: &mut Tape, a: Var, shape: &[usize]) -> Result<Var> {
    tape.check(a)?;
    let out = tape.value(a).clone().reshape(shape)?;
    tape.push("reshape", out, vec![a], ReshapeRule)
}

/// Collapses every axis after the first: `N×…` → `N×rest`.
pub fn flatten(tape: &mut Tape, a: Var) -> Result<Var> {
    tape.check(a)?;
    let shape = tape.shape(a);
    let n = *shape
        .first()
        .ok_or_else(|| Error::Contract("flatten of a rank-0 tensor".into()))?;
    let rest: usize = shape[1..].iter().product();
    reshape(tape, a, &[n, rest])
}

struct MatMulRule {
    m: usize,
    k: usize,
    n: usize,
}

impl Backward for MatMulRule {
    fn backward(&self, tape: &Tape, inputs: &[Var], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (m, k, n) = (self.m, self.k, self.n);
        let a = tape.value(inputs[0]).data();
        let b = tape.value(inputs[1]).data();
        // dA = dC · Bᵀ, dB = Aᵀ · dC
        let da = grad_if(tape, inputs[0], || {
            let mut out = vec![0.0; m * k];
            gemm(m, n, k, grad, (n as isize, 1), b, (1, n as isize), 0.0, &mut out);
            out
        });
        let db = grad_if(tape, inputs[1], || {
            let mut out = vec![0.0; k * n];
            gemm(k, m, n, a, (1, k as isize), grad, (n as isize, 1), 0.0, &mut out);
            out
        });
        vec![da, db]
    }
}

/// Matrix product `A[m×k] · B[k×n]`.
pub fn matmul(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    tape.check(a)?;
    tape.check(b)?;
    let (ta, tb) = (tape.value(a), tape.value(b));
    let (m, k, k2, n) = match (ta.shape(), tb.shape()) {
        (&[m, k], &[k2, n]) => (m, k, k2, n),
        _ => return Err(Error::dim("matmul", ta.shape(), tb.shape())),
    };
    if k != k2 {
        return Err(Error::dim("matmul", ta.shape(), tb.shape()));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, ta.data(), (k as isize, 1), tb.data(), (n as isize, 1), 0.0, &mut out);
    let out = Tensor::from_parts(vec![m, n], out);
    tape.push("matmul", out, vec![a, b], MatMulRule { m, k, n })
}

struct AddBiasRule;

impl Backward for AddBiasRule {
    fn backward(&self, tape: &Tape, inputs: &[Var], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let cols = tape.value(inputs[1]).numel();
        let db = grad_if(tape, inputs[1], || {
            let mut acc = vec![0.0; cols];
            for row in grad.chunks_exact(cols) {
                acc.iter_mut().zip(row).for_each(|(a, g)| *a += g);
            }
            acc
        });
        vec![grad_if(tape, inputs[0], || grad.to_vec()), db]
    }
}

/// Adds a length-`n` bias to every row of an `m×n` matrix.
pub fn add_bias(tape: &mut Tape, x: Var, bias: Var) -> Result<Var> {
    tape.check(x)?;
    tape.check(bias)?;
    let (tx, tb) = (tape.value(x), tape.value(bias));
    let cols = match tx.shape() {
        &[_, n] if tb.shape() == [n] => n,
        _ => return Err(Error::dim("add_bias", tx.shape(), tb.shape())),
    };
    let mut data = tx.data().to_vec();
    for row in data.chunks_exact_mut(cols) {
        row.iter_mut().zip(tb.data()).for_each(|(v, b)| *v += b);
    }
    let out = Tensor::from_parts(tx.shape().to_vec(), data);
    tape.push("add_bias", out, vec![x, bias], AddBiasRule)
}
