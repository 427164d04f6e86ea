use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::encoder::EncoderModel;

use super::TrainError;

/// Adaptive moment estimation with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Moments exist only for parameters that have been updated.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamW,
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

/// One update of a flat parameter; `t` is the 1-based step used for bias correction.
pub fn adamw_update(
    param: &mut [f64],
    grad: &[f64],
    mom: &mut Moments,
    t: u64,
    lr: f64,
    cfg: &AdamW,
) {
    let c1 = 1.0 - cfg.beta1.powf(t as f64);
    let c2 = 1.0 - cfg.beta2.powf(t as f64);
    for i in 0..param.len() {
        let g = grad[i];
        mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g;
        mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = mom.m[i] / c1;
        let v_hat = mom.v[i] / c2;
        param[i] -= lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * param[i]);
    }
}

impl OptimizerState {
    pub fn new(config: AdamW) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Applies one step to every named gradient. Nothing is modified when any
    /// gradient is non-finite or names an unknown parameter.
    pub fn apply(
        &mut self,
        model: &mut EncoderModel,
        grads: &[(String, Tensor)],
        lr: f64,
    ) -> Result<(), TrainError> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(TrainError::Plan(format!(
                "learning rate {lr} must be finite and non-negative"
            )));
        }
        for (name, g) in grads {
            if !g.all_finite() {
                return Err(TrainError::NonFinite {
                    step: self.step as usize + 1,
                    what: format!("gradient of {name}"),
                });
            }
            let p = model.parameter(name).ok_or_else(|| {
                TrainError::Plan(format!("gradient for unknown parameter {name}"))
            })?;
            if p.shape() != g.shape() {
                return Err(TrainError::Plan(format!(
                    "gradient shape mismatch for {name}"
                )));
            }
        }
        self.step += 1;
        for (name, g) in grads {
            let p = model.parameter_mut(name).expect("checked above");
            let n = p.numel();
            let mom = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            adamw_update(p.data_mut(), g.data(), mom, self.step, lr, &self.config);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_step(theta: f64, g: f64, lr: f64, cfg: &AdamW) -> f64 {
        let mut p = [theta];
        let mut mom = Moments {
            m: vec![0.0],
            v: vec![0.0],
        };
        adamw_update(&mut p, &[g], &mut mom, 1, lr, cfg);
        p[0]
    }

    #[test]
    fn hand_evaluated_first_step() {
        // m = 0.1, v = 0.001, both bias-correct to 1
        let cfg = AdamW::default();
        let expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8) + 0.01);
        assert!((scalar_step(1.0, 1.0, 0.1, &cfg) - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_and_zero_decay() {
        let cfg = AdamW::default();
        assert_eq!(scalar_step(0.7, 3.0, 0.0, &cfg), 0.7);
        let plain = AdamW {
            weight_decay: 0.0,
            ..cfg
        };
        let expected = 0.7 - 0.05 * (3.0 / (3.0 + 1e-8));
        assert!((scalar_step(0.7, 3.0, 0.05, &plain) - expected).abs() < 1e-15);
    }
}
