use crate::diffcore::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect::<Vec<_>>()
        };
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update using the gradients accumulated in `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.first.len() {
            return Err(Error::shape(
                "adam",
                format!(
                    "optimizer tracks {} parameters, store has {}",
                    self.first.len(),
                    store.len()
                ),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for ((p, m), v) in store.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            if p.value.shape() != m.shape() {
                return Err(Error::shape("adam", format!("parameter {} changed shape", p.name)));
            }
            let grads = p.grad.data();
            for (((w, &g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grads)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales accumulated gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > max_norm {
        let s = max_norm / norm;
        for p in store.iter_mut() {
            for g in p.grad.data_mut() {
                *g *= s;
            }
        }
    }
    norm
}
