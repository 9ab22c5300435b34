//! AdamW with decoupled weight decay, global-norm gradient clipping and the
//! warmup/step learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::tensor::TensorError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global-norm clip threshold; `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
    /// LR multiplier for parameters whose name starts with `backbone.`.
    pub backbone_lr_multiplier: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            grad_clip_norm: Some(1.0),
            backbone_lr_multiplier: 0.1,
        }
    }
}

pub struct AdamW {
    pub cfg: AdamWConfig,
    pub step: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        AdamW { cfg, step: 0 }
    }

    /// One optimizer step over all parameters in the store. `lr_scale`
    /// carries the schedule; moments live inside each `Param`.
    pub fn step(&mut self, store: &mut ParamStore, lr_scale: f64) -> Result<(), TensorError> {
        for (name, p) in store.iter() {
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(TensorError::NonFiniteGrad(name.to_string()));
            }
        }
        // clip before moments
        if let Some(thr) = self.cfg.grad_clip_norm {
            let sq: f64 = store
                .iter()
                .map(|(_, p)| p.grad.iter().map(|g| g * g).sum::<f64>())
                .sum();
            let norm = sq.sqrt();
            if norm > thr {
                let s = thr / norm;
                for (_, p) in store.iter_mut() {
                    p.grad.iter_mut().for_each(|g| *g *= s);
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for (name, p) in store.iter_mut() {
            let lr = self.cfg.lr
                * lr_scale
                * if name.starts_with("backbone.") {
                    self.cfg.backbone_lr_multiplier
                } else {
                    1.0
                };
            for i in 0..p.data.len() {
                let g = p.grad[i];
                p.m[i] = self.cfg.beta1 * p.m[i] + (1.0 - self.cfg.beta1) * g;
                p.v[i] = self.cfg.beta2 * p.v[i] + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = p.m[i] / bc1;
                let v_hat = p.v[i] / bc2;
                // decoupled decay acts on the weight, not the gradient
                p.data[i] -= lr * (m_hat / (v_hat.sqrt() + self.cfg.eps)
                    + self.cfg.weight_decay * p.data[i]);
            }
        }
        Ok(())
    }
}

/// Constant LR with linear warmup over the first `warmup_frac` of steps and
/// a single x0.1 drop at `drop_frac`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LrSchedule {
    pub total_steps: u64,
    pub warmup_frac: f64,
    pub drop_frac: f64,
}

impl LrSchedule {
    pub fn scale(&self, step: u64) -> f64 {
        let warmup = (self.total_steps as f64 * self.warmup_frac).ceil() as u64;
        let drop_at = (self.total_steps as f64 * self.drop_frac) as u64;
        let base = if warmup > 0 && step < warmup {
            (step + 1) as f64 / warmup as f64
        } else {
            1.0
        };
        if step >= drop_at {
            base * 0.1
        } else {
            base
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, data: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        let n = data.len();
        s.insert(name, &[n], data);
        s
    }

    #[test]
    fn single_step_hand_trace() {
        // w=1, g=1, lr=0.1, wd=0: bias-corrected m_hat=v_hat=1, so the
        // update is lr * 1/(1+eps) ~ 0.1
        let mut store = store_with("w", vec![1.0]);
        store.get_mut("w").unwrap().grad = vec![1.0];
        let mut opt = AdamW::new(AdamWConfig {
            lr: 0.1,
            weight_decay: 0.0,
            grad_clip_norm: None,
            backbone_lr_multiplier: 1.0,
            ..Default::default()
        });
        opt.step(&mut store, 1.0).unwrap();
        let w = store.get("w").unwrap().data[0];
        assert!((w - 0.9).abs() < 1e-6, "w = {w}");
    }

    #[test]
    fn decay_only_is_multiplicative() {
        let mut store = store_with("w", vec![2.0]);
        let mut opt = AdamW::new(AdamWConfig {
            lr: 0.1,
            weight_decay: 0.1,
            grad_clip_norm: None,
            backbone_lr_multiplier: 1.0,
            ..Default::default()
        });
        opt.step(&mut store, 1.0).unwrap();
        let w = store.get("w").unwrap().data[0];
        assert!((w - 2.0 * (1.0 - 0.1 * 0.1)).abs() < 1e-12);
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut store = store_with("w", vec![1.5, -0.5]);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        opt.step(&mut store, 1.0).unwrap();
        assert_eq!(store.get("w").unwrap().data, vec![1.5, -0.5]);
    }

    #[test]
    fn global_norm_clip_scales_gradient() {
        // ||g|| = 10 with threshold 1 -> moments see g/10
        let mut store = store_with("w", vec![0.0, 0.0]);
        store.get_mut("w").unwrap().grad = vec![6.0, 8.0];
        let mut opt = AdamW::new(AdamWConfig {
            lr: 1.0,
            weight_decay: 0.0,
            grad_clip_norm: Some(1.0),
            backbone_lr_multiplier: 1.0,
            ..Default::default()
        });
        opt.step(&mut store, 1.0).unwrap();
        let g = &store.get("w").unwrap().grad;
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn non_finite_grad_names_parameter() {
        let mut store = store_with("model.w", vec![1.0]);
        store.get_mut("model.w").unwrap().grad = vec![f64::NAN];
        let mut opt = AdamW::new(AdamWConfig::default());
        let err = opt.step(&mut store, 1.0).unwrap_err();
        assert!(err.to_string().contains("model.w"));
    }

    #[test]
    fn schedule_warmup_and_drop() {
        let s = LrSchedule {
            total_steps: 100,
            warmup_frac: 0.1,
            drop_frac: 0.7,
        };
        assert!(s.scale(0) <= 0.11);
        assert_eq!(s.scale(10), 1.0);
        assert_eq!(s.scale(69), 1.0);
        assert!((s.scale(70) - 0.1).abs() < 1e-12);
    }
}
