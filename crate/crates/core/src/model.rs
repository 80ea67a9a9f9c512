//! The assembled network: glimpse encoder, recurrent core, pose regressor
//! and the location policy, plus the batched glimpse rollout.

use rand::Rng;

use crate::core_net::CoreNet;
use crate::dataio::Frame;
use crate::error::{Error, Result};
use crate::glimpse::{extract_pyramid, GlimpseConfig, GlimpseNet, GlimpseRecord, Location};
use crate::nn::{ParamId, ParameterSet, Real, Tape, Tensor, Var};
use crate::policy::{sample_gaussian, Baseliner, Locator, PolicyNets, Transition};
use crate::regressor::Regressor;

/// Parameter path prefixes of the supervised networks.
pub const SUPERVISED_PREFIXES: [&str; 3] = ["glimpse.", "core.", "regressor."];
/// Parameter path prefixes of the policy networks.
pub const POLICY_PREFIXES: [&str; 2] = ["locator.", "baseliner."];

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub glimpse: GlimpseConfig,
    pub core_width: usize,
    /// Glimpses per pair (`T`).
    pub glimpses: usize,
    pub sigma_max: f64,
    pub sigma_init: Option<f64>,
}

impl ModelConfig {
    pub fn desk(glimpses: usize, core_width: usize) -> Self {
        Self { glimpse: GlimpseConfig::desk(), core_width, glimpses, sigma_max: 1.0, sigma_init: None }
    }

    pub fn full(glimpses: usize, core_width: usize) -> Self {
        Self { glimpse: GlimpseConfig::full(), core_width, glimpses, sigma_max: 1.0, sigma_init: None }
    }

    pub fn validate(&self) -> Result<()> {
        self.glimpse.validate()?;
        if self.glimpses == 0 || self.core_width == 0 {
            return Err(Error::Config(format!("glimpses {} and core width {} must be positive", self.glimpses, self.core_width)));
        }
        Ok(())
    }
}

/// How glimpse locations are chosen during a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocationMode {
    /// First location uniform, then sampled from the policy.
    Sample,
    /// Centre first, then the policy mean.
    Greedy,
    /// Every location uniform.
    Random,
    /// Every location at the image centre.
    Center,
}

/// Trainable parameter counts per module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCounts {
    pub glimpse: usize,
    pub core: usize,
    pub regressor: usize,
    pub locator: usize,
    pub baseliner: usize,
}

impl ParamCounts {
    pub fn total(&self) -> usize {
        self.glimpse + self.core + self.regressor + self.locator + self.baseliner
    }

    pub fn to_text(&self) -> String {
        format!(
            "glimpse    {:>10}\ncore       {:>10}\nregressor  {:>10}\nlocator    {:>10}\nbaseliner  {:>10}\ntotal      {:>10} ({:.2}M)\n",
            self.glimpse,
            self.core,
            self.regressor,
            self.locator,
            self.baseliner,
            self.total(),
            self.total() as f64 / 1e6
        )
    }
}

/// Result of running `T` glimpses over a batch of pairs.
#[derive(Debug, Clone)]
pub struct Rollout {
    /// `[n, 6]` normalized pose predictions.
    pub prediction: Var,
    /// `locations[t][i]`: location of glimpse `t` for sample `i`.
    pub locations: Vec<Vec<Location>>,
    /// Policy decisions per sample (empty unless the policy chose the locations by sampling).
    pub transitions: Vec<Vec<Transition>>,
    /// Patches seen, when recording was requested.
    pub records: Vec<GlimpseRecord>,
}

#[derive(Debug, Clone)]
pub struct RamVo {
    pub config: ModelConfig,
    pub glimpse: GlimpseNet,
    pub core: CoreNet,
    pub regressor: Regressor,
    pub policy: PolicyNets,
}

impl RamVo {
    pub fn new<T: Real, R: Rng + ?Sized>(ps: &mut ParameterSet<T>, config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let g = config.glimpse.width;
        let w = config.core_width;
        let glimpse = GlimpseNet::new(ps, "glimpse", config.glimpse.clone(), rng)?;
        let core = CoreNet::new(ps, "core", g, w, rng)?;
        let regressor = Regressor::new(ps, "regressor", w, rng)?;
        let locator = Locator::new(ps, "locator", w, config.sigma_max, config.sigma_init, rng)?;
        let baseliner = Baseliner::new(ps, "baseliner", w, rng)?;
        Ok(Self { config, glimpse, core, regressor, policy: PolicyNets { locator, baseliner } })
    }

    pub fn param_counts(&self) -> ParamCounts {
        ParamCounts {
            glimpse: self.glimpse.num_params(),
            core: self.core.num_params(),
            regressor: self.regressor.num_params(),
            locator: self.policy.locator.num_params(),
            baseliner: self.policy.baseliner.num_params(),
        }
    }

    pub fn supervised_ids<T: Real>(ps: &ParameterSet<T>) -> Vec<ParamId> {
        ps.ids().filter(|&id| SUPERVISED_PREFIXES.iter().any(|p| ps.path(id).starts_with(p))).collect()
    }

    pub fn policy_ids<T: Real>(ps: &ParameterSet<T>) -> Vec<ParamId> {
        ps.ids().filter(|&id| POLICY_PREFIXES.iter().any(|p| ps.path(id).starts_with(p))).collect()
    }

    /// Runs `T` glimpses over `pairs` and regresses the pose from the final state.
    pub fn rollout<T: Real, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_, T>,
        pairs: &[(&Frame, &Frame)],
        mode: LocationMode,
        rng: &mut R,
        record: bool,
    ) -> Result<Rollout> {
        let n = pairs.len();
        if n == 0 {
            return Err(Error::InvalidArgument("rollout over an empty batch".into()));
        }
        let steps = self.config.glimpses;
        let mut locs: Vec<Location> = match mode {
            LocationMode::Sample | LocationMode::Random => (0..n).map(|_| Location::uniform(rng)).collect(),
            LocationMode::Greedy | LocationMode::Center => vec![Location::CENTER; n],
        };
        let mut locations = Vec::with_capacity(steps);
        let mut transitions = vec![Vec::with_capacity(steps.saturating_sub(1)); if mode == LocationMode::Sample { n } else { 0 }];
        let mut records = Vec::new();
        let mut state = self.core.init_state(tape, n);
        for t in 0..steps {
            let pyramids = pairs
                .iter()
                .zip(&locs)
                .map(|((a, b), &l)| extract_pyramid(a, b, l))
                .collect::<Result<Vec<_>>>()?;
            if record {
                records.extend(pyramids.iter().zip(&locs).enumerate().map(|(i, (p, &l))| GlimpseRecord {
                    sample: i,
                    step: t,
                    location: l,
                    pyramid: p.clone(),
                }));
            }
            let g = self.glimpse.forward(tape, &pyramids, &locs)?;
            state = self.core.step(tape, &state, g, t)?;
            locations.push(locs.clone());
            if t + 1 == steps {
                break;
            }
            locs = match mode {
                LocationMode::Random => (0..n).map(|_| Location::uniform(rng)).collect(),
                LocationMode::Center => vec![Location::CENTER; n],
                LocationMode::Greedy | LocationMode::Sample => {
                    let h = tape.detach(state.h());
                    let p = self.policy.locator.forward(tape, h)?;
                    let mu = to_rows(tape.value(p.mu));
                    if mode == LocationMode::Greedy {
                        mu.iter().map(|m| Location::new(m[0], m[1])).collect()
                    } else {
                        let sigma = to_rows(tape.value(p.sigma));
                        let b = self.policy.baseliner.forward(tape, h)?;
                        let b = tape.value(b).data().iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>();
                        let hv = tape.value(h);
                        let mut next = Vec::with_capacity(n);
                        for i in 0..n {
                            let (a, lp) = sample_gaussian(&mu[i], &sigma[i], rng);
                            next.push(Location::new(a[0], a[1]));
                            transitions[i].push(Transition {
                                state: hv.row(i).iter().map(|v| v.to_f64_lossy() as f32).collect(),
                                action: a,
                                log_prob: lp,
                                baseline: b[i],
                            });
                        }
                        next
                    }
                }
            };
        }
        let prediction = self.regressor.predict(tape, state.h())?;
        Ok(Rollout { prediction, locations, transitions, records })
    }

    /// Normalized predictions for `pairs` in batches, without gradients.
    pub fn predict<R: Rng + ?Sized>(
        &self,
        ps: &ParameterSet<f32>,
        pairs: &[(&Frame, &Frame)],
        mode: LocationMode,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<[f64; 6]>> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(batch.max(1)) {
            let mut tape = Tape::with_params(ps);
            let r = self.rollout(&mut tape, chunk, mode, rng, false)?;
            let v = tape.value(r.prediction);
            out.extend(to_rows(v).into_iter().map(|row| std::array::from_fn(|k| row[k])));
        }
        Ok(out)
    }
}

fn to_rows<T: Real>(t: &Tensor<T>) -> Vec<Vec<f64>> {
    let (n, m) = t.rows_cols();
    (0..n).map(|i| t.data()[i * m..(i + 1) * m].iter().map(|v| v.to_f64_lossy()).collect()).collect()
}

/// Per-sample rows of a `[n, m]` value as `f64`.
pub fn value_rows<T: Real>(tape: &Tape<'_, T>, v: Var) -> Vec<Vec<f64>> {
    to_rows(tape.value(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_params, offset_biases};
    use crate::regressor::{supervised_loss, target_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frame(seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::new(96, 64, (0..96 * 64).map(|_| rng.gen_range(0.0..1.0)).collect(), 0).unwrap()
    }

    fn tiny(glimpses: usize) -> ModelConfig {
        ModelConfig { glimpse: GlimpseConfig::tiny(16), core_width: 32, glimpses, sigma_max: 1.0, sigma_init: None }
    }

    #[test]
    fn lstm_counts_follow_formula() {
        let count = |w: usize| {
            let mut ps = ParameterSet::<f32>::new();
            let m = RamVo::new(&mut ps, ModelConfig::desk(4, w), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert_eq!(m.param_counts().total(), ps.num_elements());
            m.param_counts()
        };
        let (a, b) = (count(256), count(1024));
        let dg = GlimpseConfig::desk().width;
        let lstm = |w: usize| 4 * (w * dg + w * w + w) + 4 * (w * w + w * w + w);
        assert_eq!(a.core, lstm(256));
        assert_eq!(b.core, lstm(1024));
        assert!(b.total() as f64 / a.total() as f64 > 4.0);
    }

    #[test]
    fn doubling_glimpse_width_leaves_recurrent_weights() {
        let build = |dg: usize| {
            let mut ps = ParameterSet::<f32>::new();
            let mut cfg = ModelConfig::desk(4, 256);
            cfg.glimpse.width = dg;
            let m = RamVo::new(&mut ps, cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            (m.param_counts(), ps.tensor(m.core.lower.recurrent_weight).len(), ps.tensor(m.core.upper.recurrent_weight).len())
        };
        let (a, ra, ua) = build(128);
        let (b, rb, ub) = build(256);
        assert_eq!((ra, ua), (rb, ub));
        assert_eq!(a.regressor, b.regressor);
        assert_eq!(a.locator, b.locator);
        assert_eq!(b.core - a.core, 4 * 256 * 128);
        assert_eq!(b.glimpse - a.glimpse, 128 * GlimpseConfig::desk().feature_size() + 128 + 3 * 128);
    }

    #[test]
    fn id_groups_partition_parameters() {
        let mut ps = ParameterSet::<f32>::new();
        RamVo::new(&mut ps, tiny(2), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (s, p) = (RamVo::supervised_ids(&ps), RamVo::policy_ids(&ps));
        assert_eq!(s.len() + p.len(), ps.len());
        assert!(s.iter().all(|id| !p.contains(id)));
    }

    #[test]
    fn modes_place_glimpses_as_documented() {
        let mut ps = ParameterSet::<f32>::new();
        let m = RamVo::new(&mut ps, tiny(3), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (a, b) = (frame(1), frame(2));
        let pairs = vec![(&a, &b); 4];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::with_params(&ps);
        let c = m.rollout(&mut tape, &pairs, LocationMode::Center, &mut rng, false).unwrap();
        assert!(c.locations.iter().flatten().all(|&l| l == Location::CENTER));
        assert!(c.transitions.is_empty());
        let s = m.rollout(&mut tape, &pairs, LocationMode::Sample, &mut rng, true).unwrap();
        assert_eq!(s.locations.len(), 3);
        assert_eq!(s.transitions.len(), 4);
        assert!(s.transitions.iter().all(|t| t.len() == 2 && t[0].state.len() == 32));
        assert_eq!(s.records.len(), 12);
        for (i, tr) in s.transitions.iter().enumerate() {
            for (t, step) in tr.iter().enumerate() {
                let l = s.locations[t + 1][i];
                assert_eq!(l, Location::new(step.action[0], step.action[1]));
            }
        }
        let g1 = m.rollout(&mut tape, &pairs, LocationMode::Greedy, &mut rng, false).unwrap();
        let g2 = m.rollout(&mut tape, &pairs, LocationMode::Greedy, &mut ChaCha8Rng::seed_from_u64(99), false).unwrap();
        assert_eq!(g1.locations, g2.locations);
        assert_eq!(tape.value(g1.prediction), tape.value(g2.prediction));
        assert_eq!(tape.shape(g1.prediction), &[4, 6]);
    }

    #[test]
    fn supervised_gradient_skips_policy() {
        let mut ps = ParameterSet::<f32>::new();
        let m = RamVo::new(&mut ps, tiny(3), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (a, b) = (frame(1), frame(2));
        let pairs = vec![(&a, &b); 2];
        let mut tape = Tape::with_params(&ps);
        let r = m.rollout(&mut tape, &pairs, LocationMode::Sample, &mut ChaCha8Rng::seed_from_u64(1), false).unwrap();
        let t = tape.constant(target_tensor(&[[0.1; 6]; 2]).unwrap());
        let l = supervised_loss(&mut tape, r.prediction, t, 1.0).unwrap();
        let g = tape.backward(l).unwrap();
        let policy = RamVo::policy_ids(&ps);
        assert!(g.param_ids().all(|id| !policy.contains(&id)));
        assert!(RamVo::supervised_ids(&ps).iter().all(|&id| g.param(id).is_some()));
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut ps = ParameterSet::<f64>::new();
        let m = RamVo::new(&mut ps, tiny(2), &mut rng).unwrap();
        offset_biases(&mut ps, 0.3, 0.6, &mut ChaCha8Rng::seed_from_u64(58));
        let mk = |seed: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            Frame::new(64, 48, (0..64 * 48).map(|_| r.gen_range(0.0..1.0)).collect(), 0).unwrap()
        };
        let (a, b, c) = (mk(1), mk(2), mk(3));
        let pairs = vec![(&a, &b), (&b, &c)];
        let targets = [[0.2, -0.1, 0.0, 0.5, 0.3, -0.4], [0.0, 0.1, 0.2, -0.3, 0.1, 0.6]];
        let run = |ps: &ParameterSet<f64>| -> Result<(f64, crate::nn::Gradients<f64>)> {
            let mut tape = Tape::with_params(ps);
            let r = m.rollout(&mut tape, &pairs, LocationMode::Center, &mut ChaCha8Rng::seed_from_u64(0), false)?;
            let t = tape.constant(target_tensor(&targets)?);
            let l = supervised_loss(&mut tape, r.prediction, t, 1.0)?;
            Ok((tape.value(l).data()[0], tape.backward(l)?))
        };
        let (_, g) = run(&ps).unwrap();
        let ids = RamVo::supervised_ids(&ps);
        let rep = check_params(&ps, &ids, &g, 1e-6, 6, |p| run(p).map(|r| r.0)).unwrap();
        assert!(rep.passes(1e-3), "worst {} kinks {}", rep.worst(), rep.total_kinks());
    }
}
