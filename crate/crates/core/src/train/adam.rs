use crate::error::{Error, Result};
use crate::model::Param;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Clone, Debug)]
pub struct Adam<F: Element = f32> {
    pub config: AdamConfig,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    step: u64,
}

impl<F: Element> Adam<F> {
    pub fn new(config: AdamConfig, params: &[Param<F>]) -> Self {
        Self {
            config,
            m: params.iter().map(|p| vec![F::zero(); p.value.len()]).collect(),
            v: params.iter().map(|p| vec![F::zero(); p.value.len()]).collect(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Checks every gradient before touching any parameter, so a
    /// non-finite gradient leaves the model and moments unchanged.
    pub fn step(&mut self, params: &mut [Param<F>], grads: &[Tensor<F>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Parameter(format!(
                "{} parameters, {} gradients, {} moment buffers",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if g.len() != p.value.len() {
                return Err(Error::Dimension(format!("gradient of `{}` has the wrong size", p.name)));
            }
            if !g.all_finite() {
                let norm = g.data().iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
                return Err(Error::NonFinite(format!("gradient of `{}` (norm {norm})", p.name)));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let (one_b1, one_b2) = (F::lit(1.0 - c.beta1), F::lit(1.0 - c.beta2));
        let (lr, eps) = (F::lit(c.lr), F::lit(c.eps));
        let (ibc1, ibc2) = (F::lit(1.0 / bc1), F::lit(1.0 / bc2));
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((w, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                let mhat = *mi * ibc1;
                let vhat = *vi * ibc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
