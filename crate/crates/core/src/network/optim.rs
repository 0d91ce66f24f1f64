use alloc::vec;
use alloc::vec::Vec;

/// `v ← μ·v − lr·g; p ← p + v`, elementwise.
pub fn sgd_momentum_step(params: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) {
    assert!(
        params.len() == grads.len() && params.len() == velocity.len(),
        "sgd step on mismatched lengths"
    );
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
}

/// Stochastic gradient descent with momentum; every parameter gets the same
/// learning rate.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(momentum: f64) -> Self {
        SgdMomentum { momentum, velocity: Vec::new() }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[Vec<f64>], lr: f64) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter slice");
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            sgd_momentum_step(p, g, v, lr, self.momentum);
        }
    }
}
