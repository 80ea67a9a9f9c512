//! Glimpse-location policy: Gaussian locator, baseliner, reward, rollout
//! storage and the REINFORCE / PPO estimators.

mod buffer;
mod diagnostics;
mod estimators;
pub mod bandit;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::{Init, Linear, Mlp, ParameterSet, Real, Tape, Tensor, Var};

pub use buffer::{PolicyBatch, ReplayMemory, RolloutBuffer, Transition};
pub use diagnostics::{variance, LocationHistogram, PolicyDiagnostics};
pub use estimators::{
    baseline_loss, ppo_objective, ppo_surrogate, reinforce_surrogate, PolicyConfig, PolicyNets, UpdateStats,
    RATIO_LOG_LIMIT,
};

/// Hidden widths shared by the locator trunk and the baseliner.
pub const POLICY_HIDDEN: [usize; 2] = [256, 32];
/// Lower bound on the policy standard deviation.
pub const SIGMA_MIN: f64 = 1e-3;

/// `(mu, sigma)` of the location policy, each `[n, 2]`.
#[derive(Debug, Clone, Copy)]
pub struct PolicyOutput {
    pub mu: Var,
    pub sigma: Var,
}

/// Gaussian location policy: `mu = tanh(.)`, `sigma = clamp(softplus(.), 1e-3, sigma_max)`.
#[derive(Debug, Clone)]
pub struct Locator {
    pub trunk: Mlp,
    pub mean: Linear,
    pub std: Linear,
    pub sigma_max: f64,
}

impl Locator {
    /// `sigma_init` sets the std-head bias so that an all-zero trunk output gives that sigma.
    pub fn new<T: Real, R: Rng + ?Sized>(
        ps: &mut ParameterSet<T>,
        path: &str,
        input: usize,
        sigma_max: f64,
        sigma_init: Option<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        if !(sigma_max > SIGMA_MIN) {
            return Err(Error::Config(format!("sigma_max {sigma_max} must exceed {SIGMA_MIN}")));
        }
        let trunk = Mlp::new(ps, &format!("{path}.trunk"), &[input, POLICY_HIDDEN[0], POLICY_HIDDEN[1]], rng)?;
        let mean = Linear::new(ps, &format!("{path}.mean"), POLICY_HIDDEN[1], 2, rng)?;
        let bias = match sigma_init {
            Some(s) if s > SIGMA_MIN && s <= sigma_max => Init::Constant(inverse_softplus(s)),
            Some(s) => return Err(Error::Config(format!("sigma_init {s} outside ({SIGMA_MIN}, {sigma_max}]"))),
            None => Init::Zeros,
        };
        let std = Linear::with_bias_init(ps, &format!("{path}.std"), POLICY_HIDDEN[1], 2, bias, rng)?;
        Ok(Self { trunk, mean, std, sigma_max })
    }

    pub fn num_params(&self) -> usize {
        self.trunk.num_params() + self.mean.num_params() + self.std.num_params()
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, h: Var) -> Result<PolicyOutput> {
        let z = self.trunk.hidden(tape, h)?;
        let m = self.mean.forward(tape, z)?;
        let mu = tape.tanh(m);
        let s = self.std.forward(tape, z)?;
        let s = tape.softplus(s);
        let sigma = tape.clamp(s, SIGMA_MIN, self.sigma_max);
        Ok(PolicyOutput { mu, sigma })
    }
}

/// State-value head `b_t`.
#[derive(Debug, Clone)]
pub struct Baseliner {
    pub net: Mlp,
}

impl Baseliner {
    pub fn new<T: Real, R: Rng + ?Sized>(ps: &mut ParameterSet<T>, path: &str, input: usize, rng: &mut R) -> Result<Self> {
        let net = Mlp::new(ps, path, &[input, POLICY_HIDDEN[0], POLICY_HIDDEN[1], 1], rng)?;
        Ok(Self { net })
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    /// `[n, 1]` baseline values.
    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, h: Var) -> Result<Var> {
        self.net.forward(tape, h)
    }
}

fn inverse_softplus(y: f64) -> f64 {
    if y > 20.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// `R = 1 / (1 + L)`.
pub fn reward(loss: f64) -> Result<f64> {
    if !(loss >= 0.0) {
        return Err(Error::InvalidArgument(format!("reward needs a nonnegative loss, got {loss}")));
    }
    Ok(1.0 / (1.0 + loss))
}

/// Log-density of a diagonal Gaussian.
pub fn gaussian_log_prob(x: &[f64], mu: &[f64], sigma: &[f64]) -> f64 {
    let d = x.len() as f64;
    let quad: f64 = x.iter().zip(mu).zip(sigma).map(|((x, m), s)| ((x - m) / s).powi(2)).sum();
    let log_det: f64 = sigma.iter().map(|s| s.ln()).sum();
    -0.5 * quad - log_det - 0.5 * d * (2.0 * std::f64::consts::PI).ln()
}

/// Per-row Gaussian log-density `[n, 1]` of the constant `actions` under `(mu, sigma)`.
pub fn log_prob_var<T: Real>(tape: &mut Tape<'_, T>, mu: Var, sigma: Var, actions: Var) -> Result<Var> {
    let d = tape.shape(mu).get(1).copied().unwrap_or(1) as f64;
    let diff = tape.sub(actions, mu)?;
    let z = tape.div(diff, sigma)?;
    let q = tape.square(z);
    let q = tape.scale(q, -0.5);
    let ls = tape.ln(sigma);
    let terms = tape.sub(q, ls)?;
    let rows = tape.sum_rows(terms);
    Ok(tape.add_scalar(rows, -0.5 * d * (2.0 * std::f64::consts::PI).ln()))
}

/// Draws one pre-clamp action from `N(mu, diag(sigma^2))` and its log-density.
pub fn sample_gaussian<R: Rng + ?Sized>(mu: &[f64], sigma: &[f64], rng: &mut R) -> (Vec<f64>, f64) {
    let a: Vec<f64> = mu
        .iter()
        .zip(sigma)
        .map(|(&m, &s)| {
            let s = if s < SIGMA_MIN {
                log::warn!("policy sigma {s} below {SIGMA_MIN}, clamped");
                SIGMA_MIN
            } else {
                s
            };
            Normal::new(m, s).expect("positive sigma").sample(rng)
        })
        .collect();
    let lp = gaussian_log_prob(&a, mu, &sigma.iter().map(|s| s.max(SIGMA_MIN)).collect::<Vec<_>>());
    (a, lp)
}

/// Stacks row-major `f64` rows into an `[n, d]` tensor.
pub fn rows_tensor<T: Real>(rows: &[Vec<f64>]) -> Result<Tensor<T>> {
    let d = rows.first().map_or(0, Vec::len);
    let data = rows.iter().flatten().map(|&v| T::from_f64_lossy(v)).collect();
    Tensor::new(&[rows.len(), d], data)
}
