//! SGD with classical momentum, L2 weight decay and step learning-rate decay.

use super::model::{Gradients, Model};
use crate::error::{Error, Result};

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epoch indices (0-based) at which the learning rate is multiplied by
    /// `lr_decay_factor`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Desk-scale defaults: a 60-epoch budget with decays at 30 and 45.
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 128,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_decay_epochs: vec![30, 45],
            lr_decay_factor: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Full-scale schedule: 200 epochs, batch 128, decays at 100 and 150.
    pub fn full_scale() -> Self {
        Self {
            epochs: 200,
            lr_decay_epochs: vec![100, 150],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum must lie in [0,1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::invalid(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::invalid(format!(
                "lr_decay_factor must lie in (0,1], got {}",
                self.lr_decay_factor
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr * self.lr_decay_factor.powi(passed as i32)
    }
}

/// Momentum buffers, one per parameter.
#[derive(Clone, Debug, Default)]
pub struct SgdState {
    velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One SGD update: `v <- momentum * v + (g + wd * theta)`, `theta <- theta - lr * v`.
pub fn sgd_step(
    model: &mut Model,
    grads: &Gradients,
    config: &TrainConfig,
    epoch: usize,
    state: &mut SgdState,
) -> Result<()> {
    if grads.entries.len() != model.params().len() {
        return Err(Error::invalid(format!(
            "{} gradients for {} parameters",
            grads.entries.len(),
            model.params().len()
        )));
    }
    for (p, g) in model.params().iter().zip(&grads.entries) {
        if p.name != g.name {
            return Err(Error::invalid(format!("missing gradient for parameter {}", p.name)));
        }
        if p.value.shape() != g.value.shape() {
            return Err(Error::Shape(format!("gradient shape mismatch for {}", p.name)));
        }
    }
    if state.velocity.is_empty() {
        state.velocity = model.params().iter().map(|p| vec![0.0; p.value.len()]).collect();
    }
    let lr = config.lr_at(epoch);
    let (mu, wd) = (config.momentum, config.weight_decay);
    for ((p, g), v) in model
        .params_mut()
        .iter_mut()
        .zip(&grads.entries)
        .zip(state.velocity.iter_mut())
    {
        for ((theta, &gi), vi) in p.value.data_mut().iter_mut().zip(g.value.data()).zip(v) {
            *vi = mu * *vi + (gi + wd * *theta);
            *theta -= lr * *vi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Layer, Param, Provenance, Tensor};

    fn scalar_model(w: f64) -> Model {
        Model::from_parts(
            "scalar",
            &[1],
            1,
            vec![Layer::Dense { inputs: 1, outputs: 1 }],
            vec![
                Param {
                    name: "0.weight".into(),
                    value: Tensor::from_vec(&[1, 1], vec![w]).unwrap(),
                },
                Param {
                    name: "0.bias".into(),
                    value: Tensor::from_vec(&[1], vec![0.0]).unwrap(),
                },
            ],
            Provenance::default(),
        )
        .unwrap()
    }

    fn grads_for(model: &Model, vals: &[f64]) -> Gradients {
        let mut g = Gradients::zeros_like(model);
        for (e, &v) in g.entries.iter_mut().zip(vals) {
            e.value.data_mut().fill(v);
        }
        g
    }

    fn plain(lr: f64) -> TrainConfig {
        TrainConfig {
            lr,
            momentum: 0.0,
            weight_decay: 0.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn scalar_step() {
        let mut m = scalar_model(1.0);
        let g = grads_for(&m, &[2.0, 0.0]);
        sgd_step(&mut m, &g, &plain(0.1), 0, &mut SgdState::new()).unwrap();
        assert!((m.params()[0].value.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let mut m = scalar_model(1.5);
        let before = m.clone();
        let g = grads_for(&m, &[2.0, -3.0]);
        // sgd_step does not re-validate; a zero rate must be an exact no-op.
        let cfg = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        sgd_step(&mut m, &g, &cfg, 0, &mut SgdState::new()).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn plain_step_is_exact_gradient_descent() {
        let mut m = scalar_model(0.37);
        let g = grads_for(&m, &[0.123, -0.456]);
        let lr = 0.05;
        let expect_w = 0.37 - lr * 0.123;
        let expect_b = 0.0 - lr * -0.456;
        sgd_step(&mut m, &g, &plain(lr), 3, &mut SgdState::new()).unwrap();
        assert_eq!(m.params()[0].value.data()[0].to_bits(), expect_w.to_bits());
        assert_eq!(m.params()[1].value.data()[0].to_bits(), expect_b.to_bits());
    }

    #[test]
    fn momentum_and_weight_decay() {
        let mut m = scalar_model(1.0);
        let g = grads_for(&m, &[1.0, 0.0]);
        let cfg = TrainConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.5,
            lr_decay_epochs: vec![],
            ..TrainConfig::default()
        };
        let mut st = SgdState::new();
        sgd_step(&mut m, &g, &cfg, 0, &mut st).unwrap();
        // v = 1 + 0.5 * 1 = 1.5; w = 1 - 0.15
        let w1 = m.params()[0].value.data()[0];
        assert!((w1 - 0.85).abs() < 1e-15);
        sgd_step(&mut m, &g, &cfg, 0, &mut st).unwrap();
        let v2 = 0.9 * 1.5 + (1.0 + 0.5 * 0.85);
        assert!((m.params()[0].value.data()[0] - (0.85 - 0.1 * v2)).abs() < 1e-15);
    }

    #[test]
    fn step_decay_schedule() {
        let cfg = TrainConfig {
            lr: 0.1,
            lr_decay_epochs: vec![100],
            lr_decay_factor: 0.1,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.lr_at(99), 0.1);
        assert!((cfg.lr_at(150) - 0.01).abs() < 1e-15);
        let full = TrainConfig::full_scale();
        assert!((full.lr_at(149) - 0.01).abs() < 1e-15);
        assert!((full.lr_at(150) - 0.001).abs() < 1e-15);
        assert_eq!(full.weight_decay, 1e-4);
    }

    #[test]
    fn mismatched_gradients_rejected() {
        let mut m = scalar_model(1.0);
        let mut g = grads_for(&m, &[1.0, 1.0]);
        g.entries[1].name = "other".into();
        assert!(matches!(
            sgd_step(&mut m, &g, &plain(0.1), 0, &mut SgdState::new()),
            Err(Error::InvalidParameter(_))
        ));
        g.entries.pop();
        assert!(sgd_step(&mut m, &g, &plain(0.1), 0, &mut SgdState::new()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                lr: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                momentum: 1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                weight_decay: -1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                lr_decay_factor: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
