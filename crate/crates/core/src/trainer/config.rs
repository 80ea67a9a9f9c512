//! Flat `key = value` run configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::glimpse::GlimpseConfig;
use crate::model::{LocationMode, ModelConfig};
use crate::policy::PolicyConfig;

/// Environment variable consulted for `data_root` when the key is unset.
pub const DATA_ROOT_ENV: &str = "RAMVO_DATA_ROOT";

pub const GLIMPSE_COUNTS: [usize; 4] = [1, 4, 8, 12];
pub const CORE_WIDTHS: [usize; 3] = [256, 512, 1024];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Reinforce,
    Ppo,
    FixedCenter,
    Random,
}

impl PolicyKind {
    pub fn is_learned(self) -> bool {
        matches!(self, PolicyKind::Reinforce | PolicyKind::Ppo)
    }

    /// Placement used while training.
    pub fn training_mode(self) -> LocationMode {
        match self {
            PolicyKind::Reinforce | PolicyKind::Ppo => LocationMode::Sample,
            PolicyKind::FixedCenter => LocationMode::Center,
            PolicyKind::Random => LocationMode::Random,
        }
    }

    /// Placement used for validation, evaluation and prediction.
    pub fn eval_mode(self) -> LocationMode {
        match self {
            PolicyKind::Reinforce | PolicyKind::Ppo => LocationMode::Greedy,
            PolicyKind::FixedCenter => LocationMode::Center,
            PolicyKind::Random => LocationMode::Random,
        }
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reinforce" => Ok(Self::Reinforce),
            "ppo" => Ok(Self::Ppo),
            "fixed-center" => Ok(Self::FixedCenter),
            "random" => Ok(Self::Random),
            _ => Err(Error::Config(format!("unknown policy `{s}` (reinforce, ppo, fixed-center, random)"))),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Reinforce => "reinforce",
            Self::Ppo => "ppo",
            Self::FixedCenter => "fixed-center",
            Self::Random => "random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// Generated in memory from `data_seed`.
    Synthetic,
    /// KITTI odometry layout under `data_root` with the full preprocessing.
    Kitti,
    /// KITTI layout written by `synth-gen`: z-score only.
    SyntheticDir,
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(Self::Synthetic),
            "kitti" => Ok(Self::Kitti),
            "synthetic-dir" => Ok(Self::SyntheticDir),
            _ => Err(Error::Config(format!("unknown dataset `{s}` (synthetic, kitti, synthetic-dir)"))),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Synthetic => "synthetic",
            Self::Kitti => "kitti",
            Self::SyntheticDir => "synthetic-dir",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlimpseScale {
    Desk,
    Full,
}

impl FromStr for GlimpseScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "full" => Ok(Self::Full),
            _ => Err(Error::Config(format!("unknown glimpse_net `{s}` (desk, full)"))),
        }
    }
}

impl fmt::Display for GlimpseScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Desk => "desk",
            Self::Full => "full",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub glimpses: usize,
    pub core_width: usize,
    pub glimpse_net: GlimpseScale,
    pub policy: PolicyKind,
    pub batch_size: usize,
    pub lr_supervised: f64,
    pub lr_policy: f64,
    /// First epoch (1-based) trained at `lr_supervised * lr_decay_factor`.
    pub lr_decay_epoch: Option<usize>,
    pub lr_decay_factor: f64,
    pub epochs: usize,
    pub seed: u64,
    pub loss_k: f64,
    pub sigma_max: f64,
    pub sigma_init: Option<f64>,
    pub ppo_clip: f64,
    pub replay_capacity: usize,
    pub refinement_steps: usize,
    pub ppo_minibatch: usize,
    pub dataset: DatasetKind,
    pub data_seed: u64,
    pub synth_sequences: usize,
    pub synth_frames: usize,
    pub data_root: Option<PathBuf>,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// Laptop-sized run on the synthetic dataset.
    pub fn desk() -> Self {
        Self {
            glimpses: 4,
            core_width: 256,
            glimpse_net: GlimpseScale::Desk,
            policy: PolicyKind::Ppo,
            batch_size: 32,
            lr_supervised: 1e-3,
            lr_policy: 1e-4,
            lr_decay_epoch: Some(41),
            lr_decay_factor: 0.1,
            epochs: 50,
            seed: 1,
            loss_k: 1.0,
            sigma_max: 1.0,
            sigma_init: None,
            ppo_clip: 0.2,
            replay_capacity: 2048,
            refinement_steps: 20,
            ppo_minibatch: 256,
            dataset: DatasetKind::Synthetic,
            data_seed: 7,
            synth_sequences: 10,
            synth_frames: 201,
            data_root: None,
            output: PathBuf::from("runs/desk"),
        }
    }

    /// KITTI-scale run with the published hyperparameters.
    pub fn paper() -> Self {
        Self {
            glimpses: 8,
            core_width: 1024,
            glimpse_net: GlimpseScale::Full,
            batch_size: 128,
            lr_supervised: 1e-4,
            lr_policy: 1e-6,
            lr_decay_epoch: None,
            epochs: 400,
            dataset: DatasetKind::Kitti,
            output: PathBuf::from("runs/paper"),
            ..Self::desk()
        }
    }

    /// Parses `key = value` lines; `#` starts a comment. A `preset` key,
    /// if present, selects the starting values before the others apply.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let mut cfg = match pairs.iter().find(|(k, _)| k == "preset") {
            Some((_, v)) if v == "paper" => Self::paper(),
            Some((_, v)) if v == "desk" => Self::desk(),
            Some((_, v)) => return Err(Error::Config(format!("unknown preset `{v}` (desk, paper)"))),
            None => Self::desk(),
        };
        for (k, v) in pairs.iter().filter(|(k, _)| k != "preset") {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    /// Applies one override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            v.parse().map_err(|e| Error::Config(format!("{key} = {v}: {e}")))
        }
        match key {
            "glimpses" => self.glimpses = num(key, value)?,
            "core_width" => self.core_width = num(key, value)?,
            "glimpse_net" => self.glimpse_net = value.parse()?,
            "policy" => self.policy = value.parse()?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr_supervised" => self.lr_supervised = num(key, value)?,
            "lr_policy" => self.lr_policy = num(key, value)?,
            "lr_decay_epoch" => self.lr_decay_epoch = if value == "none" { None } else { Some(num(key, value)?) },
            "lr_decay_factor" => self.lr_decay_factor = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "loss_k" => self.loss_k = num(key, value)?,
            "sigma_max" => self.sigma_max = num(key, value)?,
            "sigma_init" => self.sigma_init = if value == "none" { None } else { Some(num(key, value)?) },
            "ppo_clip" => self.ppo_clip = num(key, value)?,
            "replay_capacity" => self.replay_capacity = num(key, value)?,
            "refinement_steps" => self.refinement_steps = num(key, value)?,
            "ppo_minibatch" => self.ppo_minibatch = num(key, value)?,
            "dataset" => self.dataset = value.parse()?,
            "data_seed" => self.data_seed = num(key, value)?,
            "synth_sequences" => self.synth_sequences = num(key, value)?,
            "synth_frames" => self.synth_frames = num(key, value)?,
            "data_root" => self.data_root = if value == "none" { None } else { Some(PathBuf::from(value)) },
            "output" => self.output = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Fills `data_root` from the environment when unset.
    pub fn resolve_data_root(&mut self) {
        if self.data_root.is_none() {
            if let Some(v) = std::env::var_os(DATA_ROOT_ENV) {
                self.data_root = Some(PathBuf::from(v));
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !GLIMPSE_COUNTS.contains(&self.glimpses) {
            return bad(format!("glimpses = {} not in {GLIMPSE_COUNTS:?}", self.glimpses));
        }
        if !CORE_WIDTHS.contains(&self.core_width) {
            return bad(format!("core_width = {} not in {CORE_WIDTHS:?}", self.core_width));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        for (name, v) in [("lr_supervised", self.lr_supervised), ("lr_policy", self.lr_policy), ("lr_decay_factor", self.lr_decay_factor), ("loss_k", self.loss_k), ("sigma_max", self.sigma_max)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        if self.lr_decay_epoch == Some(0) {
            return bad("lr_decay_epoch counts from 1".into());
        }
        if let Some(s) = self.sigma_init {
            if !(s > 0.0 && s <= self.sigma_max) {
                return bad(format!("sigma_init = {s} must lie in (0, sigma_max]"));
            }
        }
        self.policy_config().validate()?;
        match self.dataset {
            DatasetKind::Synthetic => {
                if self.synth_sequences == 0 || self.synth_frames < 2 {
                    return bad("synthetic data needs at least one sequence of two frames".into());
                }
            }
            DatasetKind::Kitti | DatasetKind::SyntheticDir => match &self.data_root {
                None => return bad(format!("dataset {} needs data_root or {DATA_ROOT_ENV}", self.dataset)),
                Some(p) if !p.is_dir() => return bad(format!("data_root {} is not a directory", p.display())),
                Some(_) => {}
            },
        }
        Ok(())
    }

    /// Supervised learning rate used during `epoch` (1-based).
    pub fn supervised_lr(&self, epoch: usize) -> f64 {
        match self.lr_decay_epoch {
            Some(e) if epoch >= e => self.lr_supervised * self.lr_decay_factor,
            _ => self.lr_supervised,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let glimpse = match self.glimpse_net {
            GlimpseScale::Desk => GlimpseConfig::desk(),
            GlimpseScale::Full => GlimpseConfig::full(),
        };
        ModelConfig { glimpse, core_width: self.core_width, glimpses: self.glimpses, sigma_max: self.sigma_max, sigma_init: self.sigma_init }
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            clip_eps: self.ppo_clip,
            replay_capacity: self.replay_capacity,
            refinement_steps: self.refinement_steps,
            minibatch: self.ppo_minibatch,
        }
    }

    /// Every key, one per line; `parse(to_text())` restores the config.
    pub fn to_text(&self) -> String {
        let opt = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        format!(
            "glimpses = {}\ncore_width = {}\nglimpse_net = {}\npolicy = {}\nbatch_size = {}\nlr_supervised = {:e}\nlr_policy = {:e}\n\
             lr_decay_epoch = {}\nlr_decay_factor = {:e}\nepochs = {}\nseed = {}\nloss_k = {:e}\nsigma_max = {:e}\nsigma_init = {}\nppo_clip = {:e}\nreplay_capacity = {}\n\
             refinement_steps = {}\nppo_minibatch = {}\ndataset = {}\ndata_seed = {}\nsynth_sequences = {}\nsynth_frames = {}\n\
             data_root = {}\noutput = {}\n",
            self.glimpses,
            self.core_width,
            self.glimpse_net,
            self.policy,
            self.batch_size,
            self.lr_supervised,
            self.lr_policy,
            self.lr_decay_epoch.map_or("none".to_string(), |e| e.to_string()),
            self.lr_decay_factor,
            self.epochs,
            self.seed,
            self.loss_k,
            self.sigma_max,
            self.sigma_init.map_or("none".to_string(), |s| format!("{s:e}")),
            self.ppo_clip,
            self.replay_capacity,
            self.refinement_steps,
            self.ppo_minibatch,
            self.dataset,
            self.data_seed,
            self.synth_sequences,
            self.synth_frames,
            opt(&self.data_root),
            self.output.display()
        )
    }
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got `{raw}`", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::paper();
        c.sigma_init = Some(0.25);
        c.data_root = Some("/data/kitti".into());
        c.lr_policy = 3.3e-7;
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        let d = RunConfig::desk();
        assert_eq!(RunConfig::parse(&d.to_text()).unwrap(), d);
    }

    #[test]
    fn presets_and_overrides() {
        let c = RunConfig::parse("preset = paper\nbatch_size = 64 # smaller\n").unwrap();
        assert_eq!((c.batch_size, c.core_width, c.lr_supervised, c.lr_policy, c.epochs), (64, 1024, 1e-4, 1e-6, 400));
        let mut d = RunConfig::desk();
        d.apply_overrides(&["policy=random", "glimpses = 8"]).unwrap();
        assert_eq!((d.policy, d.glimpses), (PolicyKind::Random, 8));
        assert!(d.apply_overrides(&["nonsense"]).is_err());
        assert!(d.apply_overrides(&["colour=red"]).is_err());
    }

    #[test]
    fn validation_rejects_out_of_range() {
        assert!(RunConfig::desk().validate().is_ok());
        for (k, v) in [("glimpses", "3"), ("core_width", "128"), ("batch_size", "0"), ("lr_policy", "0"), ("sigma_init", "2")] {
            let mut c = RunConfig::desk();
            c.set(k, v).unwrap();
            assert!(c.validate().is_err(), "{k} = {v}");
        }
        let mut c = RunConfig::desk();
        c.dataset = DatasetKind::Kitti;
        c.data_root = Some("/nonexistent/ramvo".into());
        assert!(c.validate().is_err());
        assert!("ppo ".trim().parse::<PolicyKind>().is_ok());
        assert!("a2c".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn supervised_lr_steps_down_once() {
        let desk = RunConfig::desk();
        assert_eq!(desk.supervised_lr(40), 1e-3);
        assert!((desk.supervised_lr(41) - 1e-4).abs() < 1e-18);
        assert!((desk.supervised_lr(50) - 1e-4).abs() < 1e-18);
        let paper = RunConfig::paper();
        assert_eq!(paper.supervised_lr(400), paper.lr_supervised);
        let mut c = RunConfig::desk();
        c.set("lr_decay_epoch", "0").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn modes_follow_policy() {
        assert_eq!(PolicyKind::Ppo.training_mode(), LocationMode::Sample);
        assert_eq!(PolicyKind::Reinforce.eval_mode(), LocationMode::Greedy);
        assert_eq!(PolicyKind::FixedCenter.training_mode(), LocationMode::Center);
        assert_eq!(PolicyKind::Random.eval_mode(), LocationMode::Random);
        assert!(!PolicyKind::Random.is_learned());
    }

    proptest::proptest! {
        #[test]
        fn any_config_survives_text(
            t in proptest::sample::select(GLIMPSE_COUNTS.to_vec()),
            w in proptest::sample::select(CORE_WIDTHS.to_vec()),
            policy in 0usize..4,
            batch in 1usize..512,
            lr in 1e-9f64..1.0,
            seed in proptest::prelude::any::<u64>(),
            sigma in proptest::option::of(0.01f64..1.0),
            decay in proptest::option::of(1usize..400),
            root in proptest::option::of("[a-z/]{1,12}"),
        ) {
            let mut c = RunConfig::desk();
            c.glimpses = t;
            c.core_width = w;
            c.policy = [PolicyKind::Reinforce, PolicyKind::Ppo, PolicyKind::FixedCenter, PolicyKind::Random][policy];
            c.batch_size = batch;
            c.lr_supervised = lr;
            c.lr_decay_epoch = decay;
            c.seed = seed;
            c.sigma_init = sigma;
            c.data_root = root.map(PathBuf::from);
            proptest::prop_assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        }
    }
}
