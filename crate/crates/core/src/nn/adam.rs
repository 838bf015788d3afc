use super::ParamStore;

/// Adam with bias correction. Frozen parameters are skipped entirely.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn step(&self, store: &mut ParamStore) {
        for p in store.iter_mut() {
            if !p.frozen {
                p.step += 1;
                let t = p.step as i32;
                let bc1 = 1.0 - self.beta1.powi(t);
                let bc2 = 1.0 - self.beta2.powi(t);
                let w = p.value.data_mut();
                for i in 0..w.len() {
                    let g = p.grad[i];
                    p.m[i] = self.beta1 * p.m[i] + (1.0 - self.beta1) * g;
                    p.v[i] = self.beta2 * p.v[i] + (1.0 - self.beta2) * g * g;
                    let m_hat = p.m[i] / bc1;
                    let v_hat = p.v[i] / bc2;
                    w[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }
}
