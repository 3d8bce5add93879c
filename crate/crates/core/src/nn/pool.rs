use crate::autodiff::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct ReluRule;

impl Backward for ReluRule {
    fn backward(&self, tape: &Tape, inputs: &[Var], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let x = tape.value(inputs[0]).data();
        vec![Some(
            grad.iter()
                .zip(x)
                .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                .collect(),
        )]
    }
}

pub fn relu(tape: &mut Tape, x: Var) -> Result<Var> {
    tape.check(x)?;
    let out = tape.value(x).map(|v| v.max(0.0));
    tape.push("relu", out, vec![x], ReluRule)
}

struct MaxPoolRule {
    /// Flat input index receiving each output's gradient.
    argmax: Vec<usize>,
    in_len: usize,
}

impl Backward for MaxPoolRule {
    fn backward(&self, _: &Tape, _: &[Var], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let mut dx = vec![0.0; self.in_len];
        for (&src, g) in self.argmax.iter().zip(grad) {
            dx[src] += g;
        }
        vec![Some(dx)]
    }
}

/// 2×2 max pooling with stride 2.
///
/// Ties go to the first maximum in row-major window order.
pub fn maxpool2(tape: &mut Tape, x: Var) -> Result<Var> {
    tape.check(x)?;
    let (n, c, h, w) = tape.value(x).dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Config(format!("maxpool2 needs even extents, got {h}×{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let xd = tape.value(x).data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if xd[cand] > xd[best] {
                        best = cand;
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    let out = Tensor::from_parts(vec![n, c, oh, ow], out);
    let rule = MaxPoolRule {
        argmax,
        in_len: n * c * h * w,
    };
    tape.push("maxpool2", out, vec![x], rule)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_picks_window_maximum() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = maxpool2(&mut tape, x).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);
    }

    #[test]
    fn maxpool_tie_routes_gradient_to_first() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(vec![1, 1, 2, 2], vec![5.0, 5.0, 5.0, 5.0]).unwrap());
        let y = maxpool2(&mut tape, x).unwrap();
        let loss = crate::autodiff::sum(&mut tape, y).unwrap();
        let g = tape.backward(loss).unwrap().get(x).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_odd_extent_is_config_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 3, 4]));
        assert!(matches!(maxpool2(&mut tape, x), Err(Error::Config(_))));
    }

    #[test]
    fn relu_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2], vec![-5.0, 5.0]).unwrap());
        let y = relu(&mut tape, x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 5.0]);
    }
}
