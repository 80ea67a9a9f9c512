//! Toy bandits exercising the policy-gradient estimators in isolation.
//!
//! Each episode is a single Gaussian action followed by a reward, so the
//! surrogates see exactly one transition per episode.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::buffer::PolicyBatch;
use super::{log_prob_var, ppo_surrogate, PolicyConfig, reinforce_surrogate, sample_gaussian, ReplayMemory, RolloutBuffer, Transition};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, Init, OptimizerState, ParameterSet, Tape, Tensor, Var};

/// Grid side of the discretized location bandit.
pub const GRID: usize = 5;

/// Index of the grid cell containing `v` after clamping into `[-1, 1]`.
pub fn grid_cell(v: f64) -> usize {
    let c = ((v.clamp(-1.0, 1.0) + 1.0) / 2.0 * GRID as f64).floor() as usize;
    c.min(GRID - 1)
}

/// Reward table over a 5x5 grid of `[-1, 1]^2`; `rewards[row][col]`, row from `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridBandit {
    pub rewards: [[f64; GRID]; GRID],
}

/// Monte-Carlo gradient of the expected reward with respect to
/// `(mu_x, mu_y, sigma_x, sigma_y)` and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientEstimate {
    pub mean: [f64; 4],
    pub std_error: [f64; 4],
    pub episodes: usize,
}

fn broadcast(tape: &mut Tape<'_, f64>, row: Var, n: usize) -> Result<Var> {
    let ones = tape.constant(Tensor::full(&[n, 1], 1.0));
    tape.matmul(ones, row)
}

impl GridBandit {
    /// A fixed, asymmetric reward table with its peak off-centre.
    pub fn standard() -> Self {
        let mut rewards = [[0.0; GRID]; GRID];
        for (j, row) in rewards.iter_mut().enumerate() {
            for (i, r) in row.iter_mut().enumerate() {
                let (dx, dy) = (i as f64 - 3.0, j as f64 - 1.0);
                *r = (-(dx * dx + 0.5 * dy * dy) / 2.0).exp() + 0.1 * i as f64;
            }
        }
        Self { rewards }
    }

    pub fn reward(&self, x: f64, y: f64) -> f64 {
        self.rewards[grid_cell(y)][grid_cell(x)]
    }

    /// REINFORCE estimate `mean(R grad log pi)` over `chunks` batches of
    /// `per_chunk` episodes; the standard error comes from the spread of the
    /// chunk means.
    pub fn reinforce_estimate(
        &self,
        mu: [f64; 2],
        sigma: [f64; 2],
        per_chunk: usize,
        chunks: usize,
        seed: u64,
    ) -> Result<GradientEstimate> {
        if per_chunk == 0 || chunks < 2 {
            return Err(Error::InvalidArgument("need at least two non-empty chunks".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut means = Vec::with_capacity(chunks);
        for _ in 0..chunks {
            let mut actions = Vec::with_capacity(2 * per_chunk);
            let mut rewards = Vec::with_capacity(per_chunk);
            for _ in 0..per_chunk {
                let (a, _) = sample_gaussian(&mu, &sigma, &mut rng);
                rewards.push(self.reward(a[0], a[1]));
                actions.extend(a);
            }
            let mut tape = Tape::<f64>::new();
            let m = tape.input(Tensor::from_f64(&[1, 2], &mu)?);
            let s = tape.input(Tensor::from_f64(&[1, 2], &sigma)?);
            let mb = broadcast(&mut tape, m, per_chunk)?;
            let sb = broadcast(&mut tape, s, per_chunk)?;
            let a = tape.constant(Tensor::from_f64(&[per_chunk, 2], &actions)?);
            let lp = log_prob_var(&mut tape, mb, sb, a)?;
            let loss = reinforce_surrogate(&mut tape, lp, &rewards, per_chunk)?;
            let g = tape.backward(loss)?;
            let (gm, gs) = (g.wrt(m).expect("mu grad").data(), g.wrt(s).expect("sigma grad").data());
            means.push([-gm[0], -gm[1], -gs[0], -gs[1]]);
        }
        let n = chunks as f64;
        let mut mean = [0.0; 4];
        let mut std_error = [0.0; 4];
        for k in 0..4 {
            mean[k] = means.iter().map(|c| c[k]).sum::<f64>() / n;
            let var = means.iter().map(|c| (c[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1.0);
            std_error[k] = (var / n).sqrt();
        }
        Ok(GradientEstimate { mean, std_error, episodes: per_chunk * chunks })
    }
}

/// 1-D Gaussian bandit with reward `-(l - optimum)^2` and a fixed sigma;
/// the learned parameters are the mean and a scalar baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineBandit {
    pub optimum: f64,
    pub sigma: f64,
    pub mu0: f64,
    /// Episodes collected per step.
    pub batch: usize,
    pub lr: f64,
}

impl Default for LineBandit {
    fn default() -> Self {
        Self { optimum: 2.0, sigma: 1.0, mu0: 0.0, batch: 16, lr: 0.02 }
    }
}

struct LineParams {
    ps: ParameterSet<f64>,
    mu: crate::nn::ParamId,
    baseline: crate::nn::ParamId,
    opt: OptimizerState<f64>,
}

impl LineBandit {
    pub fn reward(&self, l: f64) -> f64 {
        -(l - self.optimum).powi(2)
    }

    fn params(&self, seed: u64) -> Result<LineParams> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParameterSet::new();
        let mu = ps.add("bandit.mu", &[1, 1], Init::Constant(self.mu0), &mut rng)?;
        let baseline = ps.add("bandit.baseline", &[1, 1], Init::Zeros, &mut rng)?;
        let opt = OptimizerState::new(AdamConfig::with_lr(self.lr), &ps, [mu, baseline]);
        Ok(LineParams { ps, mu, baseline, opt })
    }

    fn collect(&self, p: &LineParams, rng: &mut ChaCha8Rng, next_id: &mut u64) -> Vec<RolloutBuffer> {
        let mu = p.ps.tensor(p.mu).data()[0];
        let b = p.ps.tensor(p.baseline).data()[0];
        (0..self.batch)
            .map(|_| {
                let (a, lp) = sample_gaussian(&[mu], &[self.sigma], rng);
                let reward = self.reward(a[0]);
                *next_id += 1;
                RolloutBuffer {
                    episode: *next_id,
                    first: [0.0, 0.0],
                    steps: vec![Transition { state: vec![1.0], action: a, log_prob: lp, baseline: b }],
                    reward,
                }
            })
            .collect()
    }

    fn update(&self, p: &mut LineParams, batch: &PolicyBatch, clip: Option<f64>) -> Result<()> {
        let grads = {
            let n = batch.rows();
            let mut tape = Tape::with_params(&p.ps);
            let m = tape.param(p.mu);
            let b = tape.param(p.baseline);
            let mb = broadcast(&mut tape, m, n)?;
            let bb = broadcast(&mut tape, b, n)?;
            let s = tape.constant(Tensor::full(&[n, 1], self.sigma));
            let a = tape.constant(batch.action_tensor()?);
            let lp = log_prob_var(&mut tape, mb, s, a)?;
            let adv = batch.advantages();
            let surr = match clip {
                None => reinforce_surrogate(&mut tape, lp, &adv, batch.episodes)?,
                Some(eps) => ppo_surrogate(&mut tape, lp, &batch.old_log_probs, &adv, eps, batch.episodes)?,
            };
            let bl = super::baseline_loss(&mut tape, bb, &batch.returns, batch.episodes)?;
            let total = tape.add(surr, bl)?;
            tape.backward(total)?
        };
        p.opt.step(&mut p.ps, &grads)
    }

    /// Mean after each of `steps` REINFORCE steps (trajectory excludes `mu0`).
    pub fn run_reinforce(&self, steps: usize, seed: u64) -> Result<Vec<f64>> {
        let mut p = self.params(seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
        let mut id = 0;
        let mut traj = Vec::with_capacity(steps);
        for _ in 0..steps {
            let eps = self.collect(&p, &mut rng, &mut id);
            let batch = PolicyBatch::from_episodes(&eps)?;
            self.update(&mut p, &batch, None)?;
            traj.push(p.ps.tensor(p.mu).data()[0]);
        }
        Ok(traj)
    }

    /// Mean after each of `steps` PPO steps; a step collects one batch into
    /// the replay memory and runs the refinement schedule on it.
    pub fn run_ppo(&self, ppo: &PolicyConfig, steps: usize, seed: u64) -> Result<Vec<f64>> {
        let mut p = self.params(seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
        let mut memory = ReplayMemory::new(ppo.replay_capacity)?;
        let mut id = 0;
        let mut traj = Vec::with_capacity(steps);
        for _ in 0..steps {
            for ep in self.collect(&p, &mut rng, &mut id) {
                memory.push(ep);
            }
            for _ in 0..ppo.refinement_steps {
                let mb = memory.sample(ppo.minibatch, &mut rng);
                let batch = PolicyBatch::from_episodes(mb.iter().copied())?;
                self.update(&mut p, &batch, Some(ppo.clip_eps))?;
            }
            traj.push(p.ps.tensor(p.mu).data()[0]);
        }
        Ok(traj)
    }
}

/// Within-run variance of the second half of a trajectory.
pub fn tail_variance(traj: &[f64]) -> f64 {
    super::diagnostics::variance(&traj[traj.len() / 2..])
}
