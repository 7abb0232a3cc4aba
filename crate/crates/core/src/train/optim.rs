use crate::autodiff::ParamStore;
use crate::tensor::Tensor;

/// RMSprop with per-parameter squared-gradient caches:
/// `cache ← ρ·cache + (1−ρ)·g²`, `θ ← θ − lr·g / (√cache + ε)`.
#[derive(Clone, Debug)]
pub struct RmsProp {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    caches: Vec<Tensor>,
}

impl RmsProp {
    pub fn new(lr: f64, rho: f64, eps: f64) -> Self {
        RmsProp {
            lr,
            rho,
            eps,
            caches: Vec::new(),
        }
    }

    /// One update of a single tensor in place.
    pub fn step_tensor(&self, value: &mut Tensor, grad: &Tensor, cache: &mut Tensor) {
        let (lr, rho, eps) = (self.lr, self.rho, self.eps);
        for ((p, &g), c) in value.data_mut().iter_mut().zip(grad.data()).zip(cache.data_mut()) {
            *c = rho * *c + (1.0 - rho) * g * g;
            *p -= lr * g / (c.sqrt() + eps);
        }
    }

    /// Updates every trainable parameter from its accumulated gradient.
    pub fn step(&mut self, store: &mut ParamStore) {
        if self.caches.len() != store.len() {
            self.caches = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        }
        let mut caches = std::mem::take(&mut self.caches);
        for (p, cache) in store.iter_mut().zip(caches.iter_mut()) {
            if p.trainable {
                self.step_tensor(&mut p.value, &p.grad, cache);
            }
        }
        self.caches = caches;
    }

    pub fn caches(&self) -> &[Tensor] {
        &self.caches
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scalar_step_matches_hand_arithmetic() {
        let opt = RmsProp::new(0.001, 0.9, 1e-8);
        let mut p = Tensor::vector(vec![0.0]);
        let mut c = Tensor::vector(vec![0.0]);
        opt.step_tensor(&mut p, &Tensor::vector(vec![1.0]), &mut c);
        assert!((c.data()[0] - 0.1).abs() < 1e-15);
        let expected = -0.001 / (0.1f64.sqrt() + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-12);
        assert!((p.data()[0] + 3.1623e-3).abs() < 1e-7);
    }

    #[test]
    fn zero_grad_decays_cache_only() {
        let opt = RmsProp::new(0.01, 0.9, 1e-8);
        let mut p = Tensor::vector(vec![2.0]);
        let mut c = Tensor::vector(vec![0.5]);
        opt.step_tensor(&mut p, &Tensor::vector(vec![0.0]), &mut c);
        assert_eq!(p.data()[0], 2.0);
        assert!((c.data()[0] - 0.45).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let opt = RmsProp::new(0.001, 0.9, 1e-8);
        let g = 3.0;
        let mut p = Tensor::vector(vec![0.0]);
        let mut c = Tensor::vector(vec![0.0]);
        let mut last = 0.0;
        for _ in 0..500 {
            let before = p.data()[0];
            opt.step_tensor(&mut p, &Tensor::vector(vec![g]), &mut c);
            last = before - p.data()[0];
        }
        assert!((c.data()[0] - g * g).abs() < 1e-9);
        assert!((last - 0.001).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn finite_gradients_never_produce_nan(g in proptest::collection::vec(-1e6f64..1e6, 1..20)) {
            let opt = RmsProp::new(0.001, 0.9, 1e-8);
            let n = g.len();
            let mut p = Tensor::zeros(&[n]);
            let mut c = Tensor::zeros(&[n]);
            let grad = Tensor::vector(g);
            for _ in 0..3 {
                opt.step_tensor(&mut p, &grad, &mut c);
            }
            prop_assert!(p.is_finite());
            prop_assert!(c.data().iter().all(|&v| v >= 0.0));
        }
    }
}
