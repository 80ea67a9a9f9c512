//! Hybrid supervised + policy-gradient training, evaluation and prediction.

mod config;
mod data;
mod plot;
mod record;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{DatasetKind, GlimpseScale, PolicyKind, RunConfig, CORE_WIDTHS, DATA_ROOT_ENV, GLIMPSE_COUNTS};
pub use data::{kitti_splits, load_splits, synthetic_config, synthetic_splits, write_synthetic, DataSplits, SplitName};
pub use plot::{draw_line, palette, plot_paths, Axes, ESTIMATE, GROUND_TRUTH};
pub use record::{EpochRecord, TrainingRecord};

use crate::dataio::{Dataset, Frame, Pose6DoF, PoseSE3, SamplePair, Sequence, TargetNormalizer};
use crate::error::{Error, Result};
use crate::metrics::{accumulate, ate, drift_over_lengths, path_distances, rpe, DriftReport};
use crate::model::{value_rows, LocationMode, ParamCounts, RamVo};
use crate::nn::{AdamConfig, Checkpoint, OptimizerState, ParameterSet, Real, Tape};
use crate::policy::{reward, variance, PolicyDiagnostics, ReplayMemory, RolloutBuffer};
use crate::regressor::{sample_loss, supervised_loss, target_tensor};

/// Hash of the library sources this binary was built from.
pub const CODE_FINGERPRINT: &str = env!("RAMVO_CODE_FINGERPRINT");

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const RECORD_FILE: &str = "record.csv";
pub const CONFIG_FILE: &str = "config.txt";
const CODE_FILE: &str = "code.txt";
const STATE_MARKER: &str = "[state]\n";
const HISTOGRAM_BINS: usize = 8;

/// Batch size for gradient-free passes.
pub const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions {
    /// Return a finished run in the output directory instead of retraining,
    /// when its config and code fingerprint match.
    pub reuse_completed: bool,
}

/// A model with its weights and target statistics.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub config: RunConfig,
    pub model: RamVo,
    pub params: ParameterSet<f32>,
    pub normalizer: TargetNormalizer,
    pub epoch: usize,
}

impl LoadedModel {
    /// Untrained model for `config`.
    pub fn init(config: &RunConfig) -> Result<Self> {
        let mut params = ParameterSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = RamVo::new(&mut params, config.model_config(), &mut rng)?;
        Ok(Self { config: config.clone(), model, params, normalizer: TargetNormalizer::default(), epoch: 0 })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let meta = format!("{}{STATE_MARKER}{}epoch={}\n", self.config.to_text(), self.normalizer.to_meta(), self.epoch);
        Checkpoint::from_params(&self.params, meta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let (cfg_text, state) = ck
            .meta
            .split_once(STATE_MARKER)
            .ok_or_else(|| Error::Format(format!("{}: checkpoint metadata lacks run state", path.display())))?;
        let config = RunConfig::parse(cfg_text)?;
        let normalizer = TargetNormalizer::from_meta(state)?;
        let epoch = state
            .lines()
            .find_map(|l| l.strip_prefix("epoch="))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::Format(format!("{}: checkpoint metadata lacks epoch", path.display())))?;
        let mut m = Self::init(&config)?;
        ck.apply_to(&mut m.params)?;
        m.normalizer = normalizer;
        m.epoch = epoch;
        Ok(m)
    }

    /// Denormalized relative motions for every pair of `seq`.
    pub fn predict_relatives(&self, seq: &Sequence, mode: LocationMode, seed: u64) -> Result<Vec<Pose6DoF>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(seq.num_pairs());
        let idx: Vec<usize> = (0..seq.num_pairs()).collect();
        for chunk in idx.chunks(EVAL_BATCH) {
            let pairs: Vec<SamplePair> = chunk.iter().map(|&i| seq.pair(i)).collect::<Result<_>>()?;
            let frames: Vec<(&Frame, &Frame)> = pairs.iter().map(|p| (&*p.first, &*p.second)).collect();
            let pred = self.model.predict(&self.params, &frames, mode, frames.len(), &mut rng)?;
            for p in &pred {
                if p.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("prediction for sequence {}", seq.id)));
                }
                out.push(self.normalizer.denormalize(p));
            }
        }
        Ok(out)
    }

    /// Accumulated trajectory anchored at the first ground-truth pose.
    pub fn predict_trajectory(&self, seq: &Sequence, mode: LocationMode, seed: u64) -> Result<Vec<PoseSE3>> {
        let rel = self.predict_relatives(seq, mode, seed)?;
        Ok(anchor(&seq.poses[0], &accumulate(&rel)))
    }

    /// One report per sequence of `data`, using the configured evaluation placement.
    pub fn evaluate(&self, data: &Dataset, seed: u64) -> Result<Vec<DriftReport>> {
        let mode = self.config.policy.eval_mode();
        let mut out = Vec::new();
        for seq in &data.sequences {
            if seq.len() < 2 {
                log::warn!("sequence {:02} has fewer than two poses; skipped", seq.id);
                continue;
            }
            let est = self.predict_trajectory(seq, mode, seed)?;
            out.push(sequence_report(&format!("{:02}", seq.id), &seq.poses, &est)?);
        }
        Ok(out)
    }
}

/// `first * p` for every pose.
pub fn anchor(first: &PoseSE3, poses: &[PoseSE3]) -> Vec<PoseSE3> {
    poses.iter().map(|p| *first * *p).collect()
}

/// Like [`crate::metrics::evaluate_trajectory`], but a path shorter than
/// the first drift length gets NaN drift instead of an error.
pub fn sequence_report(name: &str, gt: &[PoseSE3], est: &[PoseSE3]) -> Result<DriftReport> {
    let a = ate(gt, est)?;
    let r = rpe(gt, est, 1)?;
    let path_length = path_distances(gt).last().copied().unwrap_or(0.0);
    let (t_rpe, r_rpe) = match drift_over_lengths(gt, est) {
        Ok(d) => (d.t_rpe, d.r_rpe),
        Err(e) => {
            log::warn!("sequence {name}: {e}; drift reported as NaN");
            (f64::NAN, f64::NAN)
        }
    };
    let n = r.len() as f64;
    Ok(DriftReport {
        sequence: name.to_string(),
        frames: gt.len(),
        path_length,
        t_rpe,
        r_rpe,
        ate: a.rmse,
        rpe_trans: r.iter().map(|e| e.trans).sum::<f64>() / n,
        rpe_rot: r.iter().map(|e| e.rot).sum::<f64>() / n,
    })
}

/// Loss of always predicting the training mean, in normalized space.
pub fn mean_predictor_loss(targets: &[Pose6DoF], normalizer: &TargetNormalizer, k: f64) -> f64 {
    let mean = [0.0; 6];
    let n = targets.len().max(1) as f64;
    targets.iter().map(|t| sample_loss(&mean, &normalizer.normalize(t), k)).sum::<f64>() / n
}

pub fn report_params(config: &RunConfig) -> Result<ParamCounts> {
    Ok(LoadedModel::init(config)?.model.param_counts())
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LoadedModel,
    pub record: TrainingRecord,
    pub data: DataSplits,
    pub checkpoint: PathBuf,
    pub reused: bool,
}

/// Training state between epochs.
pub struct Trainer {
    pub run: LoadedModel,
    pub data: DataSplits,
    pub record: TrainingRecord,
    supervised_opt: OptimizerState<f32>,
    policy_opt: OptimizerState<f32>,
    memory: ReplayMemory,
    rng: ChaCha8Rng,
    episodes: u64,
}

#[derive(Default)]
struct EpochStats {
    batches: usize,
    loss: f64,
    rewards: Vec<f64>,
    advantages: Vec<f64>,
    sigma: f64,
    sigma_updates: usize,
    skipped: usize,
}

impl Trainer {
    pub fn new(config: &RunConfig, data: DataSplits) -> Result<Self> {
        config.validate()?;
        if data.train.num_pairs() == 0 {
            return Err(Error::Config("training split has no pairs".into()));
        }
        let mut run = LoadedModel::init(config)?;
        run.normalizer = TargetNormalizer::fit(&data.train.targets());
        let supervised_opt = OptimizerState::new(AdamConfig::with_lr(config.lr_supervised), &run.params, RamVo::supervised_ids(&run.params));
        let policy_opt = OptimizerState::new(AdamConfig::with_lr(config.lr_policy), &run.params, RamVo::policy_ids(&run.params));
        Ok(Self {
            memory: ReplayMemory::new(config.replay_capacity)?,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5a5a_0f0f_1234_8765),
            run,
            data,
            record: TrainingRecord::new(),
            supervised_opt,
            policy_opt,
            episodes: 0,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.run.config
    }

    /// One pass over the training pairs followed by validation.
    pub fn run_epoch(&mut self) -> Result<(EpochRecord, PolicyDiagnostics)> {
        let start = Instant::now();
        let epoch = self.run.epoch + 1;
        self.supervised_opt.config.lr = self.config().supervised_lr(epoch);
        let mut refs = self.data.train.pair_refs();
        refs.shuffle(&mut self.rng);
        let mut stats = EpochStats::default();
        let mut diag = PolicyDiagnostics::new(epoch, HISTOGRAM_BINS);
        let batch = self.config().batch_size;
        for chunk in refs.chunks(batch) {
            let pairs: Vec<SamplePair> = chunk.iter().map(|&r| self.data.train.pair(r)).collect::<Result<_>>()?;
            self.train_batch(&pairs, &mut stats, &mut diag)?;
        }
        self.run.epoch = epoch;
        let val = self.run.evaluate(&self.data.validation, self.config().seed.wrapping_add(epoch as u64))?;
        let mean = DriftReport::average(&val);
        let nan = f64::NAN;
        let avg = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let sigma = if stats.sigma_updates > 0 { stats.sigma / stats.sigma_updates as f64 } else { 0.0 };
        diag.mean_sigma = sigma;
        diag.mean_reward = avg(&stats.rewards);
        diag.advantage_variance = variance(&stats.advantages);
        let row = EpochRecord {
            epoch,
            supervised_loss: stats.loss / stats.batches.max(1) as f64,
            mean_reward: avg(&stats.rewards),
            val_t_rpe: mean.as_ref().map_or(nan, |m| m.t_rpe),
            val_r_rpe: mean.as_ref().map_or(nan, |m| m.r_rpe),
            val_ate: mean.as_ref().map_or(nan, |m| m.ate),
            policy_sigma: sigma,
            skipped_episodes: stats.skipped,
            wall_clock_s: start.elapsed().as_secs_f64(),
        };
        self.record.push(row)?;
        Ok((row, diag))
    }

    fn train_batch(&mut self, pairs: &[SamplePair], stats: &mut EpochStats, diag: &mut PolicyDiagnostics) -> Result<()> {
        let cfg = self.run.config.clone();
        let k = cfg.loss_k;
        let targets: Vec<[f64; 6]> = pairs.iter().map(|p| self.run.normalizer.normalize(&p.target)).collect();
        let frames: Vec<(&Frame, &Frame)> = pairs.iter().map(|p| (&*p.first, &*p.second)).collect();
        let (grads, loss, preds, rollout) = {
            let mut tape = Tape::with_params(&self.run.params);
            let r = self.run.model.rollout(&mut tape, &frames, cfg.policy.training_mode(), &mut self.rng, false)?;
            let t = tape.constant(target_tensor(&targets)?);
            let l = supervised_loss(&mut tape, r.prediction, t, k)?;
            let loss = tape.value(l).data()[0].to_f64_lossy();
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "supervised loss at epoch {}; last good checkpoint is epoch {}",
                    self.run.epoch + 1,
                    self.run.epoch
                )));
            }
            let preds = value_rows(&tape, r.prediction);
            (tape.backward(l)?, loss, preds, r)
        };
        if !grads.all_finite() {
            return Err(Error::NonFinite(format!("supervised gradient; last good checkpoint is epoch {}", self.run.epoch)));
        }
        self.supervised_opt.step(&mut self.run.params, &grads)?;
        stats.batches += 1;
        stats.loss += loss;

        let rewards: Vec<f64> = preds
            .iter()
            .zip(&targets)
            .map(|(p, t)| reward(sample_loss(&std::array::from_fn(|j| p[j]), t, k)))
            .collect::<Result<_>>()?;
        stats.rewards.extend(&rewards);
        for step in &rollout.locations {
            for l in step {
                diag.histogram.add(l.x, l.y);
            }
        }
        if !cfg.policy.is_learned() || cfg.glimpses < 2 {
            return Ok(());
        }
        let buffers: Vec<RolloutBuffer> = rollout
            .transitions
            .into_iter()
            .zip(&rewards)
            .enumerate()
            .map(|(i, (steps, &reward))| {
                let first = rollout.locations[0][i];
                self.episodes += 1;
                RolloutBuffer { episode: self.episodes, first: [first.x, first.y], steps, reward }
            })
            .collect();
        for b in &buffers {
            stats.advantages.extend(b.advantages());
        }
        let policy = &self.run.model.policy;
        let update = match cfg.policy {
            PolicyKind::Reinforce => policy.reinforce_update(&mut self.run.params, &mut self.policy_opt, &buffers)?,
            PolicyKind::Ppo => {
                for b in buffers {
                    self.memory.push(b);
                }
                policy.ppo_update(&mut self.run.params, &mut self.policy_opt, &self.memory, &cfg.policy_config(), &mut self.rng)?
            }
            PolicyKind::FixedCenter | PolicyKind::Random => unreachable!("checked above"),
        };
        if update.steps > 0 {
            stats.sigma += update.mean_sigma;
            stats.sigma_updates += 1;
        }
        stats.skipped += update.skipped_episodes;
        Ok(())
    }
}

fn completed_run(cfg: &RunConfig) -> Option<(LoadedModel, TrainingRecord)> {
    let dir = &cfg.output;
    let same_cfg = std::fs::read_to_string(dir.join(CONFIG_FILE)).ok()? == cfg.to_text();
    let same_code = std::fs::read_to_string(dir.join(CODE_FILE)).ok()?.trim() == CODE_FINGERPRINT;
    if !(same_cfg && same_code) {
        return None;
    }
    let record = TrainingRecord::read(&dir.join(RECORD_FILE)).ok()?;
    let model = LoadedModel::load(&dir.join(CHECKPOINT_FILE)).ok()?;
    (record.len() == cfg.epochs && model.epoch == cfg.epochs).then_some((model, record))
}

/// Trains for `config.epochs`, writing the config, a checkpoint, the
/// record and policy diagnostics into `config.output` after every epoch.
pub fn train(config: &RunConfig, options: TrainOptions) -> Result<TrainOutcome> {
    config.validate()?;
    let data = load_splits(config)?;
    let dir = config.output.clone();
    let checkpoint = dir.join(CHECKPOINT_FILE);
    if options.reuse_completed {
        if let Some((model, record)) = completed_run(config) {
            log::info!("reusing finished run in {}", dir.display());
            return Ok(TrainOutcome { model, record, data, checkpoint, reused: true });
        }
    }
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join(CONFIG_FILE), config.to_text())?;
    std::fs::write(dir.join(CODE_FILE), format!("{CODE_FINGERPRINT}\n"))?;
    let _ = std::fs::remove_file(dir.join(RECORD_FILE));
    let mut trainer = Trainer::new(config, data)?;
    for _ in 0..config.epochs {
        let (row, diag) = trainer.run_epoch()?;
        trainer.run.save(&checkpoint)?;
        trainer.record.write(&dir.join(RECORD_FILE))?;
        if config.policy.is_learned() {
            diag.write(&dir.join("policy"))?;
        }
        log::info!(
            "epoch {:>3} loss {:.5} reward {:.4} val t_rpe {:.3}% ate {:.3} sigma {:.4} ({:.1}s)",
            row.epoch,
            row.supervised_loss,
            row.mean_reward,
            row.val_t_rpe,
            row.val_ate,
            row.policy_sigma,
            row.wall_clock_s
        );
    }
    Ok(TrainOutcome { model: trainer.run, record: trainer.record, data: trainer.data, checkpoint, reused: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Pose6DoF;

    fn tiny_config(dir: &Path, policy: PolicyKind) -> RunConfig {
        let mut c = RunConfig::desk();
        c.policy = policy;
        c.synth_sequences = 2;
        c.synth_frames = 9;
        c.batch_size = 8;
        c.epochs = 2;
        c.ppo_minibatch = 8;
        c.refinement_steps = 2;
        c.output = dir.to_path_buf();
        c
    }

    #[test]
    fn mean_predictor_loss_counts_varying_components() {
        let t: Vec<Pose6DoF> = (0..10).map(|i| Pose6DoF::from_array([0.0, 0.0, 0.0, i as f64, -(i as f64), 1.0])).collect();
        let n = TargetNormalizer::fit(&t);
        assert!((mean_predictor_loss(&t, &n, 1.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn short_paths_get_nan_drift() {
        let gt: Vec<PoseSE3> = (0..5).map(|i| PoseSE3::from_translation(i as f64, 0.0, 0.0)).collect();
        let r = sequence_report("x", &gt, &gt).unwrap();
        assert!(r.t_rpe.is_nan() && r.ate < 1e-12);
    }

    #[test]
    fn small_runs_write_artifacts_and_reload() {
        for policy in [PolicyKind::Ppo, PolicyKind::Reinforce, PolicyKind::Random, PolicyKind::FixedCenter] {
            let dir = tempfile::tempdir().unwrap();
            let mut cfg = tiny_config(dir.path(), policy);
            if policy == PolicyKind::FixedCenter {
                cfg.glimpses = 1;
            }
            let out = train(&cfg, TrainOptions::default()).unwrap();
            assert_eq!(out.record.len(), 2);
            assert!(out.record.rows().iter().all(|r| r.supervised_loss.is_finite()));
            assert_eq!(out.record.rows()[0].policy_sigma > 0.0, policy.is_learned());
            assert_eq!(dir.path().join("policy/policy_epoch_002.png").exists(), policy.is_learned());
            let back = LoadedModel::load(&out.checkpoint).unwrap();
            assert_eq!(back.config, cfg);
            assert_eq!(back.epoch, 2);
            let a = out.model.evaluate(&out.data.test, 3).unwrap();
            let b = back.evaluate(&out.data.test, 3).unwrap();
            assert_eq!(format!("{a:?}"), format!("{b:?}"));
            assert_eq!(TrainingRecord::read(&dir.path().join(RECORD_FILE)).unwrap().to_csv(), out.record.to_csv());
        }
    }

    #[test]
    fn supervised_and_policy_updates_stay_in_their_groups() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path(), PolicyKind::Ppo);
        cfg.lr_supervised = 1e-12;
        let data = load_splits(&cfg).unwrap();
        let mut t = Trainer::new(&cfg, data.clone()).unwrap();
        let before = t.run.params.clone();
        t.run_epoch().unwrap();
        let moved = |ids: Vec<crate::nn::ParamId>, p: &ParameterSet<f32>| {
            ids.iter().map(|&id| p.tensor(id).data().iter().zip(before.tensor(id).data()).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max)).fold(0f32, f32::max)
        };
        assert!(moved(RamVo::supervised_ids(&t.run.params), &t.run.params) < 1e-9);
        assert!(moved(RamVo::policy_ids(&t.run.params), &t.run.params) > 1e-6);

        cfg.lr_supervised = 1e-3;
        cfg.lr_policy = 1e-12;
        let mut t = Trainer::new(&cfg, data).unwrap();
        t.run_epoch().unwrap();
        assert!(moved(RamVo::policy_ids(&t.run.params), &t.run.params) < 1e-9);
        assert!(moved(RamVo::supervised_ids(&t.run.params), &t.run.params) > 1e-6);
    }

    #[test]
    fn completed_runs_are_reused_only_when_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path(), PolicyKind::Random);
        cfg.epochs = 1;
        let opts = TrainOptions { reuse_completed: true };
        let a = train(&cfg, opts).unwrap();
        assert!(!a.reused);
        let b = train(&cfg, opts).unwrap();
        assert!(b.reused);
        assert_eq!(a.record.fingerprint(), b.record.fingerprint());
        cfg.seed = 2;
        assert!(!train(&cfg, opts).unwrap().reused);
    }
}
