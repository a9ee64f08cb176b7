use crate::error::{DiffError, Result};
use crate::param::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments. Moment buffers follow the parameter
/// registration order of the store they are stepped against.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update from the gradients currently held by `store`.
    ///
    /// A non-finite gradient anywhere rejects the whole step: no parameter
    /// or moment changes and the step counter does not advance.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for p in store.iter() {
            if !p.grad().is_finite() {
                log::warn!("skipping optimizer step: non-finite gradient in `{}`", p.name());
                return Err(DiffError::NonFiniteGradient {
                    name: p.name().to_string(),
                });
            }
        }
        while self.first.len() < store.len() {
            let n = store.get(crate::ParamId(self.first.len())).value().len();
            self.first.push(vec![0.0; n]);
            self.second.push(vec![0.0; n]);
        }

        self.steps += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.steps as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);

        for id in store.ids().collect::<Vec<_>>() {
            let (_, value, grad) = store.parts_mut(id);
            let m = &mut self.first[id.index()];
            let v = &mut self.second[id.index()];
            for (((p, &g), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
