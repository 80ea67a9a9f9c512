use rand::Rng;

use super::buffer::{PolicyBatch, ReplayMemory, RolloutBuffer};
use super::{log_prob_var, Baseliner, Locator};
use crate::error::{Error, Result};
use crate::nn::{OptimizerState, ParameterSet, Real, Tape, Tensor, Var};

/// Episodes whose new/old log-ratio exceeds this are skipped by PPO.
pub const RATIO_LOG_LIMIT: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyConfig {
    pub clip_eps: f64,
    pub replay_capacity: usize,
    /// Policy gradient steps per supervised step.
    pub refinement_steps: usize,
    /// Episodes per refinement step.
    pub minibatch: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { clip_eps: 0.2, replay_capacity: 2048, refinement_steps: 20, minibatch: 256 }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0) || self.replay_capacity == 0 || self.refinement_steps == 0 || self.minibatch == 0 {
            return Err(Error::Config(format!("invalid policy config {self:?}")));
        }
        Ok(())
    }
}

/// `min(r A, clip(r, 1 - eps, 1 + eps) A)`.
pub fn ppo_objective(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

fn column<T: Real>(tape: &mut Tape<'_, T>, v: &[f64]) -> Result<Var> {
    Ok(tape.constant(Tensor::from_f64(&[v.len(), 1], v)?))
}

/// Loss whose negative gradient is the REINFORCE estimate
/// `(1/M) sum_i sum_t grad log pi(l_t^i | h_t^i) A_t^i`.
pub fn reinforce_surrogate<T: Real>(tape: &mut Tape<'_, T>, log_prob: Var, advantages: &[f64], episodes: usize) -> Result<Var> {
    let a = column(tape, advantages)?;
    let w = tape.mul(log_prob, a)?;
    let s = tape.sum_all(w);
    Ok(tape.scale(s, -1.0 / episodes.max(1) as f64))
}

/// Negated clipped surrogate with the same `(1/M) sum_i sum_t` reduction.
pub fn ppo_surrogate<T: Real>(
    tape: &mut Tape<'_, T>,
    log_prob: Var,
    old_log_probs: &[f64],
    advantages: &[f64],
    eps: f64,
    episodes: usize,
) -> Result<Var> {
    let old = column(tape, old_log_probs)?;
    let a = column(tape, advantages)?;
    let d = tape.sub(log_prob, old)?;
    let r = tape.exp(d);
    let un = tape.mul(r, a)?;
    let rc = tape.clamp(r, 1.0 - eps, 1.0 + eps);
    let cl = tape.mul(rc, a)?;
    let m = tape.minimum(un, cl)?;
    let s = tape.sum_all(m);
    Ok(tape.scale(s, -1.0 / episodes.max(1) as f64))
}

/// `(1/M) sum (b_t - G_t)^2`.
pub fn baseline_loss<T: Real>(tape: &mut Tape<'_, T>, baseline: Var, returns: &[f64], episodes: usize) -> Result<Var> {
    let g = column(tape, returns)?;
    let d = tape.sub(baseline, g)?;
    let sq = tape.square(d);
    let s = tape.sum_all(sq);
    Ok(tape.scale(s, 1.0 / episodes.max(1) as f64))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub steps: usize,
    pub skipped_episodes: usize,
    pub surrogate: f64,
    pub baseline_loss: f64,
    pub mean_sigma: f64,
}

enum Surrogate<'b> {
    Reinforce,
    Ppo { eps: f64, old: &'b [f64] },
}

/// Locator and baseliner trained together on stored rollouts.
#[derive(Debug, Clone)]
pub struct PolicyNets {
    pub locator: Locator,
    pub baseliner: Baseliner,
}

impl PolicyNets {
    fn losses<T: Real>(&self, tape: &mut Tape<'_, T>, batch: &PolicyBatch, kind: Surrogate<'_>) -> Result<(Var, Var, Var, f64)> {
        let states = tape.constant(batch.state_tensor()?);
        let actions = tape.constant(batch.action_tensor()?);
        let out = self.locator.forward(tape, states)?;
        let lp = log_prob_var(tape, out.mu, out.sigma, actions)?;
        let adv = batch.advantages();
        let surr = match kind {
            Surrogate::Reinforce => reinforce_surrogate(tape, lp, &adv, batch.episodes)?,
            Surrogate::Ppo { eps, old } => ppo_surrogate(tape, lp, old, &adv, eps, batch.episodes)?,
        };
        let b = self.baseliner.forward(tape, states)?;
        let bl = baseline_loss(tape, b, &batch.returns, batch.episodes)?;
        let sigma = tape.value(out.sigma);
        let mean_sigma = sigma.data().iter().map(|s| s.to_f64_lossy()).sum::<f64>() / sigma.len().max(1) as f64;
        Ok((surr, bl, lp, mean_sigma))
    }

    fn step<T: Real>(
        &self,
        ps: &mut ParameterSet<T>,
        opt: &mut OptimizerState<T>,
        batch: &PolicyBatch,
        kind: Surrogate<'_>,
        stats: &mut UpdateStats,
    ) -> Result<Option<Vec<bool>>> {
        let check = matches!(kind, Surrogate::Ppo { .. });
        let grads = {
            let mut tape = Tape::with_params(ps);
            let (surr, bl, lp, sigma) = self.losses(&mut tape, batch, kind)?;
            if check {
                let lp: Vec<f64> = tape.value(lp).data().iter().map(|v| v.to_f64_lossy()).collect();
                if let Some(bad) = overflowing(batch, &lp) {
                    return Ok(Some(bad));
                }
            }
            let total = tape.add(surr, bl)?;
            let total = tape.ensure_finite(total, "policy loss")?;
            stats.surrogate += tape.value(surr).data()[0].to_f64_lossy();
            stats.baseline_loss += tape.value(bl).data()[0].to_f64_lossy();
            stats.mean_sigma += sigma;
            tape.backward(total)?
        };
        opt.step(ps, &grads)?;
        stats.steps += 1;
        Ok(None)
    }

    /// One REINFORCE step on `episodes`; an empty batch is a no-op.
    pub fn reinforce_update<T: Real>(
        &self,
        ps: &mut ParameterSet<T>,
        opt: &mut OptimizerState<T>,
        episodes: &[RolloutBuffer],
    ) -> Result<UpdateStats> {
        let mut stats = UpdateStats::default();
        let batch = PolicyBatch::from_episodes(episodes)?;
        if batch.is_empty() {
            return Ok(stats);
        }
        self.step(ps, opt, &batch, Surrogate::Reinforce, &mut stats)?;
        Ok(finish(stats))
    }

    /// `cfg.refinement_steps` clipped-surrogate steps, each on a fresh
    /// minibatch drawn from `memory` without replacement.
    pub fn ppo_update<T: Real, R: Rng + ?Sized>(
        &self,
        ps: &mut ParameterSet<T>,
        opt: &mut OptimizerState<T>,
        memory: &ReplayMemory,
        cfg: &PolicyConfig,
        rng: &mut R,
    ) -> Result<UpdateStats> {
        let mut stats = UpdateStats::default();
        if memory.is_empty() {
            return Ok(stats);
        }
        for _ in 0..cfg.refinement_steps {
            let eps = memory.sample(cfg.minibatch, rng);
            let mut batch = PolicyBatch::from_episodes(eps.iter().copied())?;
            loop {
                if batch.is_empty() {
                    break;
                }
                let old = batch.old_log_probs.clone();
                match self.step(ps, opt, &batch, Surrogate::Ppo { eps: cfg.clip_eps, old: &old }, &mut stats)? {
                    None => break,
                    Some(bad) => batch = drop_episodes(batch, &bad, &mut stats),
                }
            }
        }
        Ok(finish(stats))
    }
}

/// Per-episode flags for rows whose new/old log-ratio is non-finite or above the limit.
fn overflowing(batch: &PolicyBatch, new_log_probs: &[f64]) -> Option<Vec<bool>> {
    let mut bad = vec![false; batch.episodes];
    let mut any = false;
    for (r, (&new, &old)) in new_log_probs.iter().zip(&batch.old_log_probs).enumerate() {
        let d = new - old;
        if !d.is_finite() || d > RATIO_LOG_LIMIT {
            bad[batch.row_episode[r]] = true;
            any = true;
        }
    }
    any.then_some(bad)
}

fn drop_episodes(batch: PolicyBatch, bad: &[bool], stats: &mut UpdateStats) -> PolicyBatch {
    let n_bad = bad.iter().filter(|&&b| b).count();
    log::warn!("ppo: ratio overflow, skipping {n_bad} of {} episodes", batch.episodes);
    stats.skipped_episodes += n_bad;
    let mut kept = batch.filter_rows(|r| !bad[batch.row_episode[r]]);
    kept.episodes -= n_bad;
    kept
}

fn finish(mut s: UpdateStats) -> UpdateStats {
    if s.steps > 0 {
        let n = s.steps as f64;
        s.surrogate /= n;
        s.baseline_loss /= n;
        s.mean_sigma /= n;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::super::Transition;
    use super::*;
    use crate::nn::AdamConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn clipped_objective_table() {
        for a in [-2.0, 0.0, 0.7, 3.0] {
            for eps in [0.1, 0.2, 0.5] {
                assert_eq!(ppo_objective(1.0, a, eps), a);
            }
        }
        assert_eq!(ppo_objective(2.0, 1.0, 0.2), 1.2);
        assert_eq!(ppo_objective(0.5, -1.0, 0.2), -0.8);
    }

    fn surrogate_values(ratio: f64, adv: f64, eps: f64) -> f64 {
        let mut tape = Tape::<f64>::new();
        let lp = tape.constant(Tensor::from_f64(&[1, 1], &[ratio.ln()]).unwrap());
        let s = ppo_surrogate(&mut tape, lp, &[0.0], &[adv], eps, 1).unwrap();
        -tape.value(s).data()[0]
    }

    #[test]
    fn tape_surrogate_matches_scalar_objective() {
        for (r, a) in [(1.0, 0.3), (2.0, 1.0), (0.5, -1.0), (1.1, -0.4), (0.7, 2.0)] {
            assert!((surrogate_values(r, a, 0.2) - ppo_objective(r, a, 0.2)).abs() < 1e-12);
        }
    }

    fn nets(ps: &mut ParameterSet<f64>, width: usize, seed: u64) -> PolicyNets {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PolicyNets {
            locator: Locator::new(ps, "locator", width, 1.0, None, &mut rng).unwrap(),
            baseliner: Baseliner::new(ps, "baseliner", width, &mut rng).unwrap(),
        }
    }

    fn episodes(n: usize, width: usize, seed: u64, nets: &PolicyNets, ps: &ParameterSet<f64>) -> Vec<RolloutBuffer> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|e| {
                let steps = (0..3)
                    .map(|_| {
                        let state: Vec<f32> = (0..width).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
                        let mut tape = Tape::with_params(ps);
                        let h = tape.constant(Tensor::new(&[1, width], state.iter().map(|&v| v as f64).collect()).unwrap());
                        let out = nets.locator.forward(&mut tape, h).unwrap();
                        let mu: Vec<f64> = tape.value(out.mu).data().to_vec();
                        let sigma: Vec<f64> = tape.value(out.sigma).data().to_vec();
                        let (action, log_prob) = super::super::sample_gaussian(&mu, &sigma, &mut rng);
                        Transition { state, action, log_prob, baseline: rng.gen_range(0.0..1.0) }
                    })
                    .collect();
                RolloutBuffer { episode: e as u64, first: [0.0, 0.0], steps, reward: rng.gen_range(0.0..1.0) }
            })
            .collect()
    }

    fn locator_grad(nets: &PolicyNets, ps: &ParameterSet<f64>, batch: &PolicyBatch, ppo_eps: Option<f64>) -> Vec<f64> {
        let mut tape = Tape::with_params(ps);
        let kind = match ppo_eps {
            None => Surrogate::Reinforce,
            Some(eps) => Surrogate::Ppo { eps, old: &batch.old_log_probs },
        };
        let (surr, _, _, _) = nets.losses(&mut tape, batch, kind).unwrap();
        let g = tape.backward(surr).unwrap();
        let mut ids: Vec<_> = ps.ids_with_prefix("locator").collect();
        ids.sort();
        ids.iter().flat_map(|&id| g.param(id).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; ps.tensor(id).len()])).collect()
    }

    #[test]
    fn zero_advantage_gives_zero_locator_gradient() {
        let mut ps = ParameterSet::<f64>::new();
        let n = nets(&mut ps, 6, 1);
        let mut eps = episodes(4, 6, 2, &n, &ps);
        for e in &mut eps {
            for t in &mut e.steps {
                t.baseline = e.reward;
            }
        }
        let batch = PolicyBatch::from_episodes(&eps).unwrap();
        assert!(locator_grad(&n, &ps, &batch, None).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ppo_with_huge_eps_on_policy_equals_reinforce() {
        let mut ps = ParameterSet::<f64>::new();
        let n = nets(&mut ps, 6, 3);
        let eps = episodes(5, 6, 4, &n, &ps);
        let batch = PolicyBatch::from_episodes(&eps).unwrap();
        let g_r = locator_grad(&n, &ps, &batch, None);
        let g_p = locator_grad(&n, &ps, &batch, Some(1e12));
        let scale = g_r.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(scale > 0.0);
        for (a, b) in g_r.iter().zip(&g_p) {
            assert!((a - b).abs() < 1e-9 * scale.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn advantage_shift_invariance() {
        let mut ps = ParameterSet::<f64>::new();
        let n = nets(&mut ps, 6, 5);
        let eps = episodes(5, 6, 6, &n, &ps);
        let base = PolicyBatch::from_episodes(&eps).unwrap();
        let mut shifted = base.clone();
        for (g, b) in shifted.returns.iter_mut().zip(shifted.baselines.iter_mut()) {
            *g += 3.5;
            *b += 3.5;
        }
        let a = locator_grad(&n, &ps, &base, None);
        let b = locator_grad(&n, &ps, &shifted, None);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn updates_touch_only_policy_parameters() {
        let mut ps = ParameterSet::<f64>::new();
        let other = ps.add("core.w", &[2, 2], crate::nn::Init::Constant(0.5), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let n = nets(&mut ps, 6, 7);
        let eps = episodes(8, 6, 8, &n, &ps);
        let ids: Vec<_> = ps.ids().collect();
        let mut opt = OptimizerState::new(AdamConfig::with_lr(1e-3), &ps, ids);
        let before = ps.clone();
        n.reinforce_update(&mut ps, &mut opt, &eps).unwrap();
        let mut mem = ReplayMemory::new(16).unwrap();
        eps.into_iter().for_each(|e| mem.push(e));
        let cfg = PolicyConfig { refinement_steps: 3, minibatch: 4, ..Default::default() };
        let st = n.ppo_update(&mut ps, &mut opt, &mem, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(st.steps, 3);
        assert_eq!(ps.tensor(other), before.tensor(other));
        let moved = ps.ids_with_prefix("locator").any(|id| ps.tensor(id) != before.tensor(id));
        assert!(moved);
    }

    #[test]
    fn empty_batch_is_noop() {
        let mut ps = ParameterSet::<f64>::new();
        let n = nets(&mut ps, 4, 1);
        let ids: Vec<_> = ps.ids().collect();
        let mut opt = OptimizerState::new(AdamConfig::default(), &ps, ids);
        let before = ps.clone();
        let st = n.reinforce_update(&mut ps, &mut opt, &[]).unwrap();
        assert_eq!(st.steps, 0);
        for id in ps.ids() {
            assert_eq!(ps.tensor(id), before.tensor(id));
        }
    }

    #[test]
    fn overflowing_ratio_skips_episode() {
        let mut ps = ParameterSet::<f64>::new();
        let n = nets(&mut ps, 4, 11);
        let mut eps = episodes(3, 4, 12, &n, &ps);
        eps[1].steps[0].log_prob = -1e3;
        let mut mem = ReplayMemory::new(8).unwrap();
        eps.into_iter().for_each(|e| mem.push(e));
        let ids: Vec<_> = ps.ids().collect();
        let mut opt = OptimizerState::new(AdamConfig::default(), &ps, ids);
        let cfg = PolicyConfig { refinement_steps: 2, minibatch: 8, ..Default::default() };
        let st = n.ppo_update(&mut ps, &mut opt, &mem, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(st.skipped_episodes, 2);
        assert_eq!(st.steps, 2);
    }

    fn train_baseline(returns: &[f64], states: &[f64], width: usize, steps: usize) -> Vec<f64> {
        let mut ps = ParameterSet::<f64>::new();
        let b = Baseliner::new(&mut ps, "baseliner", width, &mut ChaCha8Rng::seed_from_u64(13)).unwrap();
        let ids: Vec<_> = ps.ids().collect();
        let mut opt = OptimizerState::new(AdamConfig::with_lr(1e-3), &ps, ids);
        let n = returns.len();
        let x = Tensor::from_f64(&[n, width], states).unwrap();
        for _ in 0..steps {
            let g = {
                let mut tape = Tape::with_params(&ps);
                let h = tape.constant(x.clone());
                let v = b.forward(&mut tape, h).unwrap();
                let l = baseline_loss(&mut tape, v, returns, n).unwrap();
                tape.backward(l).unwrap()
            };
            opt.step(&mut ps, &g).unwrap();
        }
        let mut tape = Tape::with_params(&ps);
        let h = tape.constant(x);
        let v = b.forward(&mut tape, h).unwrap();
        tape.value(v).data().to_vec()
    }

    #[test]
    fn baseline_learns_constant_return() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let states: Vec<f64> = (0..16 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = train_baseline(&[0.7; 16], &states, 8, 500);
        assert!(b.iter().all(|v| (v - 0.7).abs() < 0.05), "{b:?}");
    }

    #[test]
    fn trained_baseline_reduces_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let states: Vec<f64> = (0..64 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..64).map(|i| 0.5 + 0.3 * states[i * 4] + rng.gen_range(-0.05..0.05)).collect();
        let b = train_baseline(&g, &states, 4, 500);
        let adv: Vec<f64> = g.iter().zip(&b).map(|(g, b)| g - b).collect();
        assert!(super::super::variance(&adv) <= super::super::variance(&g));
    }
}
