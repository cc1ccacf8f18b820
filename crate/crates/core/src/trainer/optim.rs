use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::layers::ParamStore;

/// SGD hyper-parameters and the multi-step learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    /// Epochs at which the learning rate is multiplied by `decay_factor`.
    pub milestones: Vec<usize>,
    pub decay_factor: f64,
    pub max_epochs: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr0: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            nesterov: true,
            milestones: vec![150, 180, 210],
            decay_factor: 0.1,
            max_epochs: 240,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Configuration(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        nonneg("lr0", self.lr0)?;
        nonneg("momentum", self.momentum)?;
        nonneg("weight_decay", self.weight_decay)?;
        nonneg("decay_factor", self.decay_factor)?;
        if self.nesterov && self.momentum == 0.0 {
            return Err(Error::Configuration("Nesterov momentum needs momentum > 0".into()));
        }
        Ok(())
    }
}

/// `lr0 * decay_factor^(number of milestones <= epoch)`.
pub fn lr_at(cfg: &OptimConfig, epoch: usize) -> Result<f64> {
    if epoch >= cfg.max_epochs {
        return Err(Error::Parameter(format!(
            "epoch {epoch} outside [0, {})",
            cfg.max_epochs
        )));
    }
    let passed = cfg.milestones.iter().filter(|&&m| m <= epoch).count();
    Ok(cfg.lr0 * cfg.decay_factor.powi(passed as i32))
}

/// SGD with (optionally Nesterov) momentum and L2 weight decay, one momentum
/// buffer per trainable tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sgd {
    buffers: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            buffers: store
                .entries()
                .iter()
                .map(|e| if e.trainable { vec![0.0; e.value.len()] } else { Vec::new() })
                .collect(),
        }
    }

    pub fn buffers(&self) -> &[Vec<f32>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Vec<f32>] {
        &mut self.buffers
    }

    /// Applies one update with the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore, cfg: &OptimConfig, lr: f64) {
        let (lr, mom, wd) = (lr as f32, cfg.momentum as f32, cfg.weight_decay as f32);
        for (entry, buf) in store.entries_mut().iter_mut().zip(&mut self.buffers) {
            if !entry.trainable {
                continue;
            }
            for ((p, &g), b) in entry.value.iter_mut().zip(&entry.grad).zip(buf.iter_mut()) {
                let mut d = g + wd * *p;
                if mom != 0.0 {
                    *b = mom * *b + d;
                    d = if cfg.nesterov { d + mom * *b } else { *b };
                }
                *p -= lr * d;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let cfg = OptimConfig::default();
        assert_eq!(lr_at(&cfg, 0).unwrap(), 0.05);
        assert!((lr_at(&cfg, 149).unwrap() - 0.05).abs() < 1e-18);
        assert!((lr_at(&cfg, 150).unwrap() - 0.005).abs() < 1e-15);
        assert!((lr_at(&cfg, 180).unwrap() - 5e-4).abs() < 1e-15);
        assert!((lr_at(&cfg, 210).unwrap() - 5e-5).abs() < 1e-15);
        assert!((lr_at(&cfg, 239).unwrap() - 5e-5).abs() < 1e-15);
        assert!(matches!(lr_at(&cfg, 240), Err(Error::Parameter(_))));
        let flat = OptimConfig { decay_factor: 1.0, ..cfg };
        assert!((0..240).all(|e| lr_at(&flat, e).unwrap() == 0.05));
    }

    #[test]
    fn nesterov_matches_hand_computation() {
        let mut store = ParamStore::default();
        let id = store.add("w", &[1], vec![1.0], true);
        let cfg = OptimConfig { weight_decay: 0.1, ..Default::default() };
        let mut opt = Sgd::new(&store);
        store.grad_mut(id)[0] = 0.5;
        opt.step(&mut store, &cfg, 0.1);
        // d = 0.5 + 0.1 = 0.6; buf = 0.6; nesterov d = 0.6 + 0.9 * 0.6 = 1.14
        assert!((store.value(id)[0] - (1.0 - 0.114)).abs() < 1e-6);
        store.grad_mut(id)[0] = 0.0;
        let p = store.value(id)[0];
        opt.step(&mut store, &cfg, 0.1);
        let d = 0.1 * p;
        let buf = 0.9 * 0.6 + d;
        assert!((store.value(id)[0] - (p - 0.1 * (d + 0.9 * buf))).abs() < 1e-6);
    }

    #[test]
    fn zero_lr_leaves_parameters_untouched() {
        let mut store = ParamStore::default();
        let id = store.add("w", &[3], vec![1.5, -0.25, 0.0], true);
        store.grad_mut(id).copy_from_slice(&[3.0, -1.0, 7.0]);
        let before = store.clone();
        Sgd::new(&store).step(&mut store, &OptimConfig::default(), 0.0);
        assert_eq!(store.value(id), before.value(id));
    }
}
