use serde::{Deserialize, Serialize};

use super::config::{LrSchedule, OptimizerConfig};
use crate::{Error, Result};

/// AdamW with decoupled weight decay.
///
/// `ascent` flips the update direction so the same state can maximize an
/// objective (RL) or minimize a loss (warm start).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub ascent: bool,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(cfg: &OptimizerConfig, n: usize, ascent: bool) -> Self {
        Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            ascent,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update at learning rate `lr`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::contract(format!(
                "optimizer holds {} parameters, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::numeric(format!("gradient entry {i} is {}", grad[i])));
        }
        self.t += 1;
        let sign = if self.ascent { 1.0 } else { -1.0 };
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let update = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
            params[i] -= lr * self.weight_decay * params[i];
            params[i] += sign * lr * update;
        }
        Ok(())
    }
}

/// Learning rate at `step` of `total` under the configured schedule.
/// Cosine decays from `base` to zero over the run.
pub fn learning_rate(schedule: LrSchedule, base: f64, step: usize, total: usize) -> f64 {
    match schedule {
        LrSchedule::Constant => base,
        LrSchedule::Cosine if total == 0 => base,
        LrSchedule::Cosine => {
            let progress = step as f64 / total as f64;
            0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(wd: f64) -> OptimizerConfig {
        OptimizerConfig {
            kind: super::super::config::OptimizerKind::Adamw,
            lr: 0.1,
            weight_decay: wd,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule: LrSchedule::Constant,
        }
    }

    #[test]
    fn first_step_moves_by_lr_in_gradient_sign() {
        let mut opt = AdamW::new(&cfg(0.0), 2, true);
        let mut p = vec![1.0, 1.0];
        opt.step(&mut p, &[3.0, -0.5], 0.1).unwrap();
        assert!((p[0] - 1.1).abs() < 1e-6 && (p[1] - 0.9).abs() < 1e-6);

        let mut opt = AdamW::new(&cfg(0.0), 1, false);
        let mut p = vec![1.0];
        opt.step(&mut p, &[3.0], 0.1).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut opt = AdamW::new(&cfg(0.01), 1, true);
        let mut p = vec![2.0];
        opt.step(&mut p, &[0.0], 0.1).unwrap();
        assert!((p[0] - 2.0 * (1.0 - 0.001)).abs() < 1e-12);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut opt = AdamW::new(&cfg(0.0), 1, false);
        let mut p = vec![5.0];
        for _ in 0..500 {
            let g = 2.0 * (p[0] - 1.5);
            opt.step(&mut p, &[g], 0.05).unwrap();
        }
        assert!((p[0] - 1.5).abs() < 1e-2);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut opt = AdamW::new(&cfg(0.0), 2, true);
        assert!(matches!(opt.step(&mut [0.0, 0.0], &[1.0], 0.1), Err(Error::Contract(_))));
        assert!(matches!(opt.step(&mut [0.0, 0.0], &[1.0, f64::NAN], 0.1), Err(Error::Numeric(_))));
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(learning_rate(LrSchedule::Cosine, 1.0, 0, 10), 1.0);
        assert!((learning_rate(LrSchedule::Cosine, 1.0, 5, 10) - 0.5).abs() < 1e-12);
        assert!(learning_rate(LrSchedule::Cosine, 1.0, 10, 10).abs() < 1e-12);
        assert_eq!(learning_rate(LrSchedule::Constant, 0.3, 7, 10), 0.3);
    }
}
