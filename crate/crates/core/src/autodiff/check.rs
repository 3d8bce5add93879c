//! Central finite-difference gradient checking.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{mul, sum, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Denominator floor of the relative error, so that exact zeros on both sides compare as equal.
pub const REL_FLOOR: f64 = 1e-6;

/// Worst disagreement between backpropagated and numerical gradients.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheck {
    /// `max |a − n| / max(|a|, |n|, REL_FLOOR)` over all checked entries.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub entries: usize,
}

impl GradCheck {
    pub fn merge(self, other: GradCheck) -> GradCheck {
        GradCheck {
            max_rel_error: self.max_rel_error.max(other.max_rel_error),
            max_abs_error: self.max_abs_error.max(other.max_abs_error),
            entries: self.entries + other.entries,
        }
    }
}

fn eval<F>(inputs: &[Tensor], f: &F) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).is_scalar() {
        return Err(Error::Contract(format!(
            "gradient check needs a scalar function, got shape {:?}",
            tape.shape(out)
        )));
    }
    Ok((tape, vars, out))
}

/// Compares the gradient of the scalar `f(inputs)` with respect to every entry of
/// every input against `(f(x + h) − f(x − h)) / 2h`.
pub fn gradient_check<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Contract(format!("finite-difference step must be positive, got {step}")));
    }
    let (tape, vars, out) = eval(inputs, &f)?;
    let grads = tape.backward(out)?;
    let mut report = GradCheck::default();
    let mut probe = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.get(v)?;
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            probe[i].data_mut()[j] = x0 + step;
            let (t, _, o) = eval(&probe, &f)?;
            let plus = t.value(o).item()?;
            probe[i].data_mut()[j] = x0 - step;
            let (t, _, o) = eval(&probe, &f)?;
            let minus = t.value(o).item()?;
            probe[i].data_mut()[j] = x0;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[j];
            let abs = (a - numeric).abs();
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(abs / a.abs().max(numeric.abs()).max(REL_FLOOR));
            report.entries += 1;
        }
    }
    Ok(report)
}

/// `Σ v ⊙ r` for a fixed pseudo-random `r`, turning any output into a scalar whose
/// gradient exercises every output entry with a distinct weight.
pub fn random_projection(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = Tensor::uniform(tape.shape(v), -1.0, 1.0, &mut rng);
    let r = tape.constant(r);
    let p = mul(tape, v, r)?;
    sum(tape, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::matmul;

    #[test]
    fn matmul_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::uniform(&[2, 3], -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let r = gradient_check(&[a, b], 1e-5, |t, v| {
            let y = matmul(t, v[0], v[1])?;
            random_projection(t, y, 1)
        })
        .unwrap();
        assert_eq!(r.entries, 18);
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn detects_a_wrong_rule() {
        // d/dx (x·x) through a detached second operand halves the gradient
        let x = Tensor::new(vec![1], vec![0.7]).unwrap();
        let r = gradient_check(&[x], 1e-5, |t, v| {
            let c = t.constant(t.value(v[0]).clone());
            let y = mul(t, v[0], c)?;
            sum(t, y)
        })
        .unwrap();
        assert!(r.max_rel_error > 0.4);
    }

    #[test]
    fn rejects_non_scalar() {
        let x = Tensor::zeros(&[2]);
        assert!(matches!(gradient_check(&[x], 1e-5, |_, v| Ok(v[0])), Err(Error::Contract(_))));
    }
}
