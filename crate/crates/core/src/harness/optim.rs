//! First-order optimisers over flattened parameter sets.

use super::config::{OptimizerConfig, OptimizerKind};
use crate::net::ParameterSet;
use crate::Result;

#[derive(Debug)]
pub enum Optimizer {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        t: u64,
        m: Vec<f64>,
        v: Vec<f64>,
    },
    SgdMomentum {
        lr: f64,
        momentum: f64,
        velocity: Vec<f64>,
    },
}

impl Optimizer {
    pub fn new(cfg: &OptimizerConfig, param_count: usize) -> Optimizer {
        match cfg.kind {
            OptimizerKind::Adam => Optimizer::Adam {
                lr: cfg.learning_rate,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                t: 0,
                m: vec![0.0; param_count],
                v: vec![0.0; param_count],
            },
            OptimizerKind::SgdMomentum => Optimizer::SgdMomentum {
                lr: cfg.learning_rate,
                momentum: cfg.momentum,
                velocity: vec![0.0; param_count],
            },
        }
    }

    pub fn step(&mut self, params: &mut ParameterSet, grads: &ParameterSet) -> Result<()> {
        let mut flat = params.flatten();
        let grad_flat = grads.flatten();
        match self {
            Optimizer::Adam { lr, beta1, beta2, eps, t, m, v } => {
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t as i32);
                let bc2 = 1.0 - beta2.powi(*t as i32);
                for i in 0..flat.len() {
                    m[i] = *beta1 * m[i] + (1.0 - *beta1) * grad_flat[i];
                    v[i] = *beta2 * v[i] + (1.0 - *beta2) * grad_flat[i] * grad_flat[i];
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    flat[i] -= *lr * m_hat / (v_hat.sqrt() + *eps);
                }
            }
            Optimizer::SgdMomentum { lr, momentum, velocity } => {
                for i in 0..flat.len() {
                    velocity[i] = *momentum * velocity[i] - *lr * grad_flat[i];
                    flat[i] += velocity[i];
                }
            }
        }
        params.assign_from_flat(&flat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::MlpArchitecture;
    use crate::numerics::RngStream;

    fn quadratic_setup() -> (MlpArchitecture, ParameterSet) {
        let arch =
            MlpArchitecture::new(vec![1, 1], vec![], vec![0.0]).unwrap();
        let params =
            ParameterSet::init_gaussian(&arch, &mut RngStream::new(3)).unwrap();
        (arch, params)
    }

    // Minimise (w - 2)^2 through the optimiser interface.
    fn run(opt_cfg: &OptimizerConfig, iters: usize) -> f64 {
        let (arch, mut params) = quadratic_setup();
        let mut opt = Optimizer::new(opt_cfg, params.param_count());
        for _ in 0..iters {
            let w = params.weights()[0].at2(0, 0);
            let mut grads = ParameterSet::zeros(&arch);
            *grads.weight_mut(0).at2_mut(0, 0) = 2.0 * (w - 2.0);
            opt.step(&mut params, &grads).unwrap();
        }
        params.weights()[0].at2(0, 0)
    }

    #[test]
    fn adam_and_sgd_reach_the_minimum() {
        let adam = OptimizerConfig {
            kind: super::super::config::OptimizerKind::Adam,
            learning_rate: 0.05,
            batch_size: 1,
            epochs: 1,
            momentum: 0.9,
        };
        assert!((run(&adam, 600) - 2.0).abs() < 1e-3);
        let sgd = OptimizerConfig {
            kind: super::super::config::OptimizerKind::SgdMomentum,
            learning_rate: 0.02,
            batch_size: 1,
            epochs: 1,
            momentum: 0.9,
        };
        assert!((run(&sgd, 600) - 2.0).abs() < 1e-3);
    }
}
