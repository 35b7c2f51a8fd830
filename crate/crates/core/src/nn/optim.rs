use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamSet};
use super::tape::Mat;
use super::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay, applied as `p -= lr * wd * p`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Adam with bias correction; frozen tensors are left alone.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: i32,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Mat> = (0..params.len()).map(|i| Mat::zeros(params.value(i).dim())).collect();
        Adam { config, m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Checks every gradient before touching any parameter.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Grads) -> Result<()> {
        for (id, g) in grads.iter().enumerate() {
            if g.dim() != params.value(id).dim() {
                return Err(NnError::Shape(format!("gradient for {:?} has shape {:?}", params.name(id), g.dim())));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(NnError::NonFiniteGradient(params.name(id).to_string()));
            }
        }
        let AdamConfig { lr, beta1, beta2, eps, weight_decay } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (id, g) in grads.iter().enumerate() {
            if !params.is_trainable(id) {
                continue;
            }
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            let p = params.value_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + eps);
                *p -= lr * (update + weight_decay * *p);
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn one(x: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.insert("x", array![[x]], true);
        ps
    }

    fn grad(ps: &ParamSet, g: f64) -> Grads {
        let mut gr = Grads::zeros_like(ps);
        gr.add(0, &array![[g]]);
        gr
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut ps = one(0.7);
        let mut adam = Adam::new(AdamConfig::default(), &ps);
        for _ in 0..3 {
            let g = Grads::zeros_like(&ps);
            adam.step(&mut ps, &g).unwrap();
        }
        assert_eq!(ps.value(0)[[0, 0]], 0.7);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        for g in [3.0, -0.02, 0.5] {
            let mut ps = one(1.0);
            let mut adam = Adam::new(AdamConfig::default(), &ps);
            let gr = grad(&ps, g);
            adam.step(&mut ps, &gr).unwrap();
            let delta = ps.value(0)[[0, 0]] - 1.0;
            // m_hat = g, v_hat = g^2, so delta = -lr * g / (|g| + eps)
            let exact = -0.001 * g / (g.abs() + 1e-8);
            assert!(((delta - exact) / exact).abs() < 1e-9, "{g}: {delta}");
            let sign = -0.001 * g.signum();
            assert!(((delta - sign) / sign).abs() < 1e-6, "{g}: {delta}");
        }
    }

    #[test]
    fn ten_steps_on_a_parabola_match_reference() {
        let (lr, b1, b2, eps) = (0.001, 0.9, 0.999, 1e-8);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=10 {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        let mut ps = one(1.0);
        let mut adam = Adam::new(AdamConfig::default(), &ps);
        for _ in 0..10 {
            let g = 2.0 * ps.value(0)[[0, 0]];
            let gr = grad(&ps, g);
            adam.step(&mut ps, &gr).unwrap();
        }
        assert!((ps.value(0)[[0, 0]] - x).abs() < 1e-12);
        assert_eq!(adam.steps(), 10);
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut ps = one(1.0);
        ps.insert("y", array![[2.0, 3.0]], true);
        let mut adam = Adam::new(AdamConfig::default(), &ps);
        let mut g = Grads::zeros_like(&ps);
        g.add(0, &array![[1.0]]);
        g.add(1, &array![[0.0, f64::NAN]]);
        match adam.step(&mut ps, &g) {
            Err(NnError::NonFiniteGradient(name)) => assert_eq!(name, "y"),
            other => panic!("{other:?}"),
        }
        assert_eq!(ps.value(0)[[0, 0]], 1.0);
    }

    #[test]
    fn frozen_and_decay() {
        let mut ps = one(1.0);
        ps.insert("frozen", array![[5.0]], false);
        let mut adam = Adam::new(AdamConfig { weight_decay: 0.1, ..Default::default() }, &ps);
        let mut g = Grads::zeros_like(&ps);
        g.add(1, &array![[1.0]]);
        adam.step(&mut ps, &g).unwrap();
        assert_eq!(ps.value(1)[[0, 0]], 5.0);
        assert!((ps.value(0)[[0, 0]] - (1.0 - 0.001 * 0.1)).abs() < 1e-15);
    }
}
