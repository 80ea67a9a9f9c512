use std::collections::BTreeMap;

use super::params::{ParamId, ParameterSet};
use super::real::Real;
use super::tape::Gradients;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
struct Moments<T> {
    first: Vec<T>,
    second: Vec<T>,
}

/// Adam state over a fixed group of parameters.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<ParamId, Moments<T>>,
}

impl<T: Real> OptimizerState<T> {
    /// Optimizer owning the parameters `ids`; gradients for other ids are ignored.
    pub fn new(config: AdamConfig, params: &ParameterSet<T>, ids: impl IntoIterator<Item = ParamId>) -> Self {
        let moments = ids
            .into_iter()
            .map(|id| {
                let n = params.tensor(id).len();
                (id, Moments { first: vec![T::zero(); n], second: vec![T::zero(); n] })
            })
            .collect();
        Self { config, step: 0, moments }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn owns(&self, id: ParamId) -> bool {
        self.moments.contains_key(&id)
    }

    pub fn owned(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.moments.keys().copied()
    }

    /// One bias-corrected Adam update. Owned parameters without a gradient are
    /// treated as having zero gradient.
    pub fn step(&mut self, params: &mut ParameterSet<T>, grads: &Gradients<T>) -> Result<()> {
        for (id, m) in &self.moments {
            if let Some(g) = grads.param(*id) {
                if g.len() != m.first.len() {
                    return Err(Error::Shape(format!(
                        "gradient for `{}` has {} elements, parameter has {}",
                        params.path(*id),
                        g.len(),
                        m.first.len()
                    )));
                }
            }
        }
        self.step += 1;
        let c = self.config;
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one = T::one();
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let step_size = T::from_f64_lossy(c.lr / bc1);
        let bc2_sqrt = T::from_f64_lossy(bc2.sqrt());
        let eps = T::from_f64_lossy(c.eps);

        for (id, m) in self.moments.iter_mut() {
            let grad = grads.param(*id).map(|g| g.data());
            let p = params.tensor_mut(*id).data_mut();
            for i in 0..p.len() {
                let g = grad.map_or(T::zero(), |g| g[i]);
                m.first[i] = b1 * m.first[i] + (one - b1) * g;
                m.second[i] = b2 * m.second[i] + (one - b2) * g * g;
                let denom = m.second[i].sqrt() / bc2_sqrt + eps;
                p[i] -= step_size * m.first[i] / denom;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Init, Tape};
    use rand::SeedableRng;

    fn scalar_param(v: f64) -> (ParameterSet<f64>, ParamId) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParameterSet::new();
        let id = ps.add("p", &[1], Init::Constant(v), &mut rng).unwrap();
        (ps, id)
    }

    fn grad_of_square(ps: &ParameterSet<f64>, id: ParamId) -> Gradients<f64> {
        let mut tape = Tape::with_params(ps);
        let p = tape.param(id);
        let sq = tape.square(p);
        let loss = tape.sum_all(sq);
        tape.backward(loss).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let (mut ps, id) = scalar_param(0.5);
        let mut opt = OptimizerState::new(AdamConfig::with_lr(0.1), &ps, [id]);
        opt.step(&mut ps, &Gradients::default()).unwrap();
        assert_eq!(ps.tensor(id).data()[0], 0.5);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps).
        let (mut ps, id) = scalar_param(1.0);
        let mut opt = OptimizerState::new(AdamConfig::with_lr(0.1), &ps, [id]);
        let mut tape = Tape::with_params(&ps);
        let p = tape.param(id);
        let loss = tape.sum_all(p);
        let g = tape.backward(loss).unwrap();
        drop(tape);
        opt.step(&mut ps, &g).unwrap();
        let expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((ps.tensor(id).data()[0] - expected).abs() < 1e-12);
        assert!((ps.tensor(id).data()[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn converges_on_quadratic() {
        // Direct iteration oracle: 100 steps of lr 0.1 from p = 1 on f(p) = p^2.
        let (mut ps, id) = scalar_param(1.0);
        let mut opt = OptimizerState::new(AdamConfig::with_lr(0.1), &ps, [id]);
        for _ in 0..100 {
            let g = grad_of_square(&ps, id);
            opt.step(&mut ps, &g).unwrap();
        }
        assert!(ps.tensor(id).data()[0].abs() < 0.1);
    }

    #[test]
    fn rejects_misaligned_gradient() {
        let (mut ps, id) = scalar_param(1.0);
        let (ps2, _) = {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
            let mut ps2 = ParameterSet::<f64>::new();
            let id2 = ps2.add("p", &[3], Init::Zeros, &mut rng).unwrap();
            (ps2, id2)
        };
        let mut tape = Tape::with_params(&ps2);
        let p = tape.param(ParamId(0));
        let loss = tape.sum_all(p);
        let g = tape.backward(loss).unwrap();
        let mut opt = OptimizerState::new(AdamConfig::default(), &ps, [id]);
        assert!(opt.step(&mut ps, &g).is_err());
    }
}
