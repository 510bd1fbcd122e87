use super::{ModelConfig, Weights};

/// Adam with a linear learning-rate warmup followed by a constant rate.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: usize,
    step: usize,
    m: Weights,
    v: Weights,
}

impl Adam {
    pub fn new(config: &ModelConfig, learning_rate: f64, warmup_steps: usize) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: warmup_steps.max(1),
            step: 0,
            m: Weights::zeros(config),
            v: Weights::zeros(config),
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        let progress = ((self.step + 1) as f64 / self.warmup_steps as f64).min(1.0);
        self.learning_rate * progress
    }

    pub fn step(&mut self, weights: &mut Weights, grads: &Weights) {
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in weights
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
