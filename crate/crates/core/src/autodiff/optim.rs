use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Classical (heavy-ball) momentum SGD.
///
/// `v ← momentum·v − lr·g`, then `p ← p + v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {learning_rate} must be >= 0")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum {momentum} outside [0, 1)")));
        }
        Ok(Sgd {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    /// Applies one update to `params` in place.
    ///
    /// Velocities are created lazily as zeros on the first call and must keep
    /// matching the parameter shapes afterwards.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim("sgd_step", &[params.len()], &[grads.len()]));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::dim("sgd_step", &[self.velocity.len()], &[params.len()]));
        }
        for ((p, g), v) in params.iter().zip(grads).zip(&self.velocity) {
            if p.shape() != g.shape() {
                return Err(Error::dim("sgd_step", p.shape(), g.shape()));
            }
            if p.shape() != v.shape() {
                return Err(Error::dim("sgd_step", p.shape(), v.shape()));
            }
        }
        let (lr, mu) = (self.learning_rate, self.momentum);
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = mu * *vv - lr * gv;
                *pv += *vv;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_gradient_step() {
        let mut opt = Sgd::new(0.1, 0.0).unwrap();
        let mut p = vec![Tensor::scalar(1.0)];
        opt.step(&mut p, &[Tensor::scalar(2.0)]).unwrap();
        assert!((p[0].data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut opt = Sgd::new(0.1, 0.9).unwrap();
        let mut p = vec![Tensor::scalar(1.5)];
        for _ in 0..3 {
            opt.step(&mut p, &[Tensor::scalar(0.0)]).unwrap();
        }
        assert_eq!(p[0].data(), &[1.5]);
    }

    #[test]
    fn two_momentum_steps_unrolled() {
        // v1 = -0.1, p1 = -0.1; v2 = 0.9·(-0.1) - 0.1 = -0.19, p2 = -0.29
        let mut opt = Sgd::new(0.1, 0.9).unwrap();
        let mut p = vec![Tensor::scalar(0.0)];
        opt.step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
        opt.step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
        assert!((p[0].data()[0] + 0.29).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_a_dimension_error() {
        let mut opt = Sgd::new(0.1, 0.9).unwrap();
        let mut p = vec![Tensor::zeros(&[2])];
        let err = opt.step(&mut p, &[Tensor::zeros(&[3])]).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(Sgd::new(-1.0, 0.5).is_err());
        assert!(Sgd::new(0.1, 1.0).is_err());
    }
}
