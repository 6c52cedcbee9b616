//! RMSProp with a running mean of squared gradients, no momentum.

use super::{Gradients, NetConfig, Network, Scalar};

/// Updates one parameter slice in place:
/// `v = rho*v + (1-rho)*g^2`, then `p -= lr * g / sqrt(v + eps)`.
pub fn rmsprop_update<F: Scalar>(params: &mut [F], grads: &[F], v: &mut [F], lr: F, rho: F, eps: F) {
    assert!(params.len() == grads.len() && params.len() == v.len());
    let one = F::one();
    for ((p, &g), vi) in params.iter_mut().zip(grads).zip(v.iter_mut()) {
        *vi = rho * *vi + (one - rho) * g * g;
        *p = *p - lr * g / (*vi + eps).sqrt();
    }
}

#[derive(Debug, Clone)]
pub struct RmsProp<F> {
    lr: F,
    rho: F,
    eps: F,
    v: Gradients<F>,
}

impl<F: Scalar> RmsProp<F> {
    pub fn new(cfg: NetConfig, lr: f64, rho: f64, eps: f64) -> Self {
        Self {
            lr: F::from_f64(lr),
            rho: F::from_f64(rho),
            eps: F::from_f64(eps),
            v: Gradients::zeros(cfg),
        }
    }

    /// Replaces the step size; the accumulated second-moment state is kept,
    /// so this is how a caller applies a step-size schedule.
    pub fn set_lr(&mut self, lr: f64) {
        self.lr = F::from_f64(lr);
    }

    pub fn step(&mut self, net: &mut Network<F>, grads: &Gradients<F>) {
        let lr = self.lr;
        let rho = self.rho;
        let eps = self.eps;
        for (((pn, p), (gn, g)), (vn, v)) in net
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.v.tensors_mut())
        {
            debug_assert!(pn == gn && gn == vn, "tensor order mismatch");
            rmsprop_update(p, g, v, lr, rho, eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gradient_changes_nothing() {
        let cfg = NetConfig::new(3, 4, 2);
        let mut net = Network::<f64>::init(cfg, &mut ChaCha8Rng::seed_from_u64(7));
        let before = net.clone();
        let mut opt = RmsProp::new(cfg, 0.001, 0.9, 1e-6);
        opt.step(&mut net, &Gradients::zeros(cfg));
        assert_eq!(net, before);
    }

    #[test]
    fn first_step_has_known_magnitude() {
        // With v starting at zero, one update moves the parameter by
        // lr * g / sqrt(0.1*g^2 + eps), whatever the gradient's size.
        let mut p = [1.0f64];
        let mut v = [0.0f64];
        rmsprop_update(&mut p, &[2.0], &mut v, 0.001, 0.9, 1e-6);
        let expected = 1.0 - 0.001 * 2.0 / (0.1 * 4.0f64 + 1e-6).sqrt();
        assert_relative_eq!(p[0], expected, max_relative = 1e-12);
        assert_relative_eq!(v[0], 0.4, max_relative = 1e-12);
    }

    #[test]
    fn second_moment_accumulates() {
        let mut p = [0.0f64];
        let mut v = [0.0f64];
        rmsprop_update(&mut p, &[1.0], &mut v, 0.0, 0.9, 1e-6);
        rmsprop_update(&mut p, &[3.0], &mut v, 0.0, 0.9, 1e-6);
        // v = 0.9*(0.1*1) + 0.1*9 = 0.99
        assert_relative_eq!(v[0], 0.99, max_relative = 1e-12);
    }

    #[test]
    fn minimizes_a_quadratic() {
        // f(p) = 0.5*(p - 3)^2, gradient p - 3, from p = -5.
        let mut p = [-5.0f64];
        let mut v = [0.0f64];
        for _ in 0..10_000 {
            let g = [p[0] - 3.0];
            rmsprop_update(&mut p, &g, &mut v, 0.001, 0.9, 1e-6);
        }
        assert!((p[0] - 3.0).abs() < 1e-3, "ended at {}", p[0]);
    }
}
