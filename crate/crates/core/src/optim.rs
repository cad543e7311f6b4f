//! Adam with L2 regularization and step learning-rate decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Grads, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum L2Mode {
    /// `l2 · param` added to the gradient before the Adam moments.
    Coupled,
    /// `lr · l2 · param` subtracted from the parameter after the Adam step.
    Decoupled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub l2: f64,
    pub l2_mode: L2Mode,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 0.001,
            decay_every: 10,
            decay_factor: 0.1,
            l2: 0.0002,
            l2_mode: L2Mode::Coupled,
            epochs: 30,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimConfig {
    /// `lr · decay_factor^⌊epoch / decay_every⌋`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.decay_every == 0 {
            return self.lr;
        }
        let drops = (epoch / self.decay_every) as i32;
        self.lr * self.decay_factor.powi(drops)
    }
}

#[derive(Debug, Clone)]
pub struct AdamState<T> {
    config: OptimConfig,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>, config: OptimConfig) -> Self {
        let zeros = || {
            params
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect::<Vec<_>>()
        };
        AdamState {
            first: zeros(),
            second: zeros(),
            step: 0,
            config,
        }
    }

    pub fn config(&self) -> &OptimConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.config.lr_at(epoch)
    }

    /// One bias-corrected Adam update of every parameter at learning rate `lr`.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Grads<T>, lr: f64) -> Result<()> {
        if grads.slots().len() != params.len() || self.first.len() != params.len() {
            return Err(Error::Shape("gradient slots do not match parameters".into()));
        }
        for (p, g) in params.params().iter().zip(grads.slots()) {
            if p.value.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient for `{}` has shape {:?}, parameter {:?}",
                    p.name,
                    g.shape(),
                    p.value.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }

        self.step += 1;
        let cfg = &self.config;
        let t = self.step as i32;
        let correction1 = 1.0 - cfg.beta1.powi(t);
        let correction2 = 1.0 - cfg.beta2.powi(t);
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
        let step_size = T::lit(lr / correction1);
        let inv_sqrt_c2 = T::lit(1.0 / correction2.sqrt());
        let eps = T::lit(cfg.eps);
        let l2 = T::lit(cfg.l2);
        let decoupled = T::lit(lr * cfg.l2);

        for (((param, g), m), v) in params
            .params_mut()
            .iter_mut()
            .zip(grads.slots())
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            let coupled = param.decay && cfg.l2_mode == L2Mode::Coupled && cfg.l2 != 0.0;
            let decay_after = param.decay && cfg.l2_mode == L2Mode::Decoupled && cfg.l2 != 0.0;
            for (((w, &gi), mi), vi) in param
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let grad = if coupled { gi + l2 * *w } else { gi };
                *mi = b1 * *mi + one_b1 * grad;
                *vi = b2 * *vi + one_b2 * grad * grad;
                let denom = vi.sqrt() * inv_sqrt_c2 + eps;
                let update = step_size * *mi / denom;
                if decay_after {
                    *w -= decoupled * *w;
                }
                *w -= update;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64, decay: bool) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("p", Tensor::from_vec(&[1], vec![v]).unwrap(), decay).unwrap();
        s
    }

    fn grads_of(store: &ParamStore<f64>, g: f64) -> Grads<f64> {
        let mut grads = store.zero_grads();
        grads.slots_mut()[0].fill(g);
        grads
    }

    #[test]
    fn zero_gradient_without_l2_is_a_no_op() {
        let mut store = scalar_store(0.7, true);
        let cfg = OptimConfig {
            l2: 0.0,
            ..OptimConfig::default()
        };
        let mut adam = AdamState::new(&store, cfg);
        let g = grads_of(&store, 0.0);
        for _ in 0..5 {
            adam.step(&mut store, &g, 0.001).unwrap();
        }
        assert_eq!(store.params()[0].value.data(), &[0.7]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g = 1, v̂ = g² = 1, so Δ = lr · 1 / (1 + ε).
        let mut store = scalar_store(1.0, false);
        let mut adam = AdamState::new(&store, OptimConfig::default());
        let g = grads_of(&store, 1.0);
        adam.step(&mut store, &g, 0.001).unwrap();
        let expected = 1.0 - 0.001 / (1.0 + 1e-8);
        assert!((store.params()[0].value.data()[0] - expected).abs() < 1e-12);
        assert!((store.params()[0].value.data()[0] - 0.999).abs() < 1e-8);
    }

    #[test]
    fn update_opposes_gradient_sign() {
        let mut s = ParamStore::<f64>::new();
        s.add("p", Tensor::from_vec(&[3], vec![0.5, -0.2, 0.0]).unwrap(), true).unwrap();
        let start = s.params()[0].value.clone();
        let mut grads = s.zero_grads();
        grads.slots_mut()[0] = Tensor::from_vec(&[3], vec![2.0, -0.5, 1e-3]).unwrap();
        let cfg = OptimConfig {
            l2: 0.0,
            ..OptimConfig::default()
        };
        let mut adam = AdamState::new(&s, cfg);
        adam.step(&mut s, &grads, 0.01).unwrap();
        for ((after, before), g) in s.params()[0]
            .value
            .data()
            .iter()
            .zip(start.data())
            .zip(grads.slots()[0].data())
        {
            assert_eq!((after - before).signum(), -g.signum());
        }
    }

    #[test]
    fn coupled_l2_skips_exempt_parameters() {
        let cfg = OptimConfig {
            l2: 0.5,
            ..OptimConfig::default()
        };
        let mut exempt = scalar_store(1.0, false);
        let mut adam = AdamState::new(&exempt, cfg.clone());
        let g = grads_of(&exempt, 0.0);
        adam.step(&mut exempt, &g, 0.001).unwrap();
        assert_eq!(exempt.params()[0].value.data(), &[1.0]);

        let mut decayed = scalar_store(1.0, true);
        let mut adam = AdamState::new(&decayed, cfg);
        let g = grads_of(&decayed, 0.0);
        adam.step(&mut decayed, &g, 0.001).unwrap();
        assert!(decayed.params()[0].value.data()[0] < 1.0);
    }

    #[test]
    fn decoupled_l2_shrinks_directly() {
        let cfg = OptimConfig {
            l2: 0.5,
            l2_mode: L2Mode::Decoupled,
            ..OptimConfig::default()
        };
        let mut store = scalar_store(2.0, true);
        let mut adam = AdamState::new(&store, cfg);
        let g = grads_of(&store, 0.0);
        adam.step(&mut store, &g, 0.1).unwrap();
        assert!((store.params()[0].value.data()[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut store = scalar_store(1.0, true);
        let mut adam = AdamState::new(&store, OptimConfig::default());
        let g = grads_of(&store, f64::NAN);
        let err = adam.step(&mut store, &g, 0.001)
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "p"));
        assert_eq!(adam.steps_taken(), 0);
    }

    #[test]
    fn step_decay_schedule() {
        let long_run = OptimConfig {
            decay_every: 100,
            ..OptimConfig::default()
        };
        assert_eq!(long_run.lr_at(0), 0.001);
        assert_eq!(long_run.lr_at(99), 0.001);
        assert!((long_run.lr_at(100) - 1e-4).abs() < 1e-18);
        assert!((long_run.lr_at(250) - 1e-5).abs() < 1e-18);
        let mut prev = f64::INFINITY;
        for e in 0..400 {
            assert!(long_run.lr_at(e) <= prev);
            prev = long_run.lr_at(e);
        }
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut s = ParamStore::<f32>::new();
            s.add("p", Tensor::from_vec(&[4], vec![0.1, -0.3, 0.7, 0.0]).unwrap(), true).unwrap();
            let mut adam = AdamState::new(&s, OptimConfig::default());
            for k in 0..20 {
                let mut g = s.zero_grads();
                g.slots_mut()[0] = Tensor::from_vec(&[4], vec![0.3, -1.0, 0.01 * k as f32, 2.0]).unwrap();
                adam.step(&mut s, &g, 0.01).unwrap();
            }
            s.params()[0].value.clone()
        };
        assert_eq!(run(), run());
    }
}
