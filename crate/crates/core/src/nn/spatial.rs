//! Layers that rearrange feature maps: crop, elementwise addition, channel concatenation.

use crate::autodiff::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct CropRule {
    in_shape: (usize, usize, usize, usize),
    offset: (usize, usize),
    out_hw: (usize, usize),
}

impl Backward for CropRule {
    fn backward(&self, _: &Tape, inputs: &[Var], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (n, c, h, w) = self.in_shape;
        let (oy, ox) = self.offset;
        let (ch, cw) = self.out_hw;
        let mut dx = vec![0.0; n * c * h * w];
        for plane in 0..n * c {
            for y in 0..ch {
                let dst = plane * h * w + (oy + y) * w + ox;
                let src = plane * ch * cw + y * cw;
                dx[dst..dst + cw].copy_from_slice(&grad[src..src + cw]);
            }
        }
        let mut out = vec![Some(dx)];
        out.resize(inputs.len(), None);
        out
    }
}

/// Copies the `h×w` window at `offset` out of `x[N×C×H×W]`, where `h×w` are
/// the spatial extents of `reference`.
///
/// The reference only fixes the output size; no gradient flows into it.
pub fn crop(tape: &mut Tape, x: Var, reference: Var, offset: (usize, usize)) -> Result<Var> {
    tape.check(reference)?;
    let (_, _, rh, rw) = tape.value(reference).dims4()?;
    let rn = tape.shape(reference)[0];
    if tape.value(x).dims4()?.0 != rn {
        return Err(Error::dim("crop", tape.shape(x), tape.shape(reference)));
    }
    crop_window(tape, x, (rh, rw), offset, Some(reference))
}

/// [`crop`] to an explicit extent.
pub fn crop_to(tape: &mut Tape, x: Var, extent: (usize, usize), offset: (usize, usize)) -> Result<Var> {
    crop_window(tape, x, extent, offset, None)
}

fn crop_window(
    tape: &mut Tape,
    x: Var,
    (ch, cw): (usize, usize),
    (oy, ox): (usize, usize),
    reference: Option<Var>,
) -> Result<Var> {
    tape.check(x)?;
    let (n, c, h, w) = tape.value(x).dims4()?;
    if oy + ch > h || ox + cw > w {
        return Err(Error::dim("crop", &[n, c, h, w], &[oy + ch, ox + cw]));
    }
    let xd = tape.value(x).data();
    let mut out = Vec::with_capacity(n * c * ch * cw);
    for plane in 0..n * c {
        for y in 0..ch {
            let src = plane * h * w + (oy + y) * w + ox;
            out.extend_from_slice(&xd[src..src + cw]);
        }
    }
    let out = Tensor::from_parts(vec![n, c, ch, cw], out);
    let rule = CropRule {
        in_shape: (n, c, h, w),
        offset: (oy, ox),
        out_hw: (ch, cw),
    };
    let mut inputs = vec![x];
    inputs.extend(reference);
    tape.push("crop", out, inputs, rule)
}

/// Offset that centers an `inner` extent inside an `outer` one.
pub fn center_offset(outer: (usize, usize), inner: (usize, usize)) -> (usize, usize) {
    (outer.0.saturating_sub(inner.0) / 2, outer.1.saturating_sub(inner.1) / 2)
}

/// Elementwise addition of two feature maps of identical shape.
pub fn add_elementwise(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    crate::autodiff::add(tape, a, b)
}

struct ConcatRule {
    n: usize,
    a_block: usize,
    b_block: usize,
}

impl Backward for ConcatRule {
    fn backward(&self, tape: &Tape, inputs: &[Var], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let stride = self.a_block + self.b_block;
        let da = tape.requires_grad(inputs[0]).then(|| {
            (0..self.n)
                .flat_map(|b| grad[b * stride..b * stride + self.a_block].iter().copied())
                .collect()
        });
        let db = tape.requires_grad(inputs[1]).then(|| {
            (0..self.n)
                .flat_map(|b| grad[b * stride + self.a_block..(b + 1) * stride].iter().copied())
                .collect()
        });
        vec![da, db]
    }
}

/// Stacks `a[N×Ca×H×W]` and `b[N×Cb×H×W]` into `N×(Ca+Cb)×H×W`, `a` first.
pub fn concat_channels(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    tape.check(a)?;
    tape.check(b)?;
    let (n, ca, h, w) = tape.value(a).dims4()?;
    let (nb, cb, hb, wb) = tape.value(b).dims4()?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::dim("concat_channels", tape.shape(a), tape.shape(b)));
    }
    let (a_block, b_block) = (ca * h * w, cb * h * w);
    let (ad, bd) = (tape.value(a).data(), tape.value(b).data());
    let mut out = Vec::with_capacity(n * (a_block + b_block));
    for s in 0..n {
        out.extend_from_slice(&ad[s * a_block..(s + 1) * a_block]);
        out.extend_from_slice(&bd[s * b_block..(s + 1) * b_block]);
    }
    let out = Tensor::from_parts(vec![n, ca + cb, h, w], out);
    tape.push("concat_channels", out, vec![a, b], ConcatRule { n, a_block, b_block })
}
