use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ramvo::dataio::{read_pose_file, write_pose_file};
use ramvo::metrics::{format_table, write_csv};
use ramvo::trainer::{
    load_splits, palette, plot_paths, report_params, train, write_synthetic, Axes, LoadedModel, RunConfig, SplitName,
    TrainOptions, ESTIMATE, GROUND_TRUTH,
};

#[derive(Parser)]
#[command(name = "ramvo", version, about = "Hard-attention recurrent visual odometry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override, e.g. `--set glimpses=8`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::desk(),
        };
        cfg.apply_overrides(&self.overrides)?;
        cfg.resolve_data_root();
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoint, record and policy diagnostics to `output`
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Return an identical finished run instead of retraining
        #[arg(long)]
        reuse: bool,
    },
    /// Drift, ATE and RPE per sequence of a split
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitName,
        /// Dataset root, overriding the one stored in the checkpoint
        #[arg(long)]
        data_root: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the reports as CSV
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Predicted trajectory of one sequence as a KITTI pose file plus a plot
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sequence: usize,
        #[arg(long)]
        data_root: Option<PathBuf>,
        #[arg(long, default_value = "predictions")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "auto")]
        axes: Axes,
    },
    /// Write the synthetic dataset in KITTI layout
    SynthGen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 11)]
        sequences: usize,
        #[arg(long, default_value_t = 201)]
        frames: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Trainable parameter count per module
    ReportParams {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Draw KITTI pose files as a top-down plot; the first is drawn as ground truth
    Plot {
        #[arg(required = true)]
        poses: Vec<PathBuf>,
        #[arg(long, default_value = "trajectory.png")]
        out: PathBuf,
        #[arg(long, default_value = "auto")]
        axes: Axes,
        #[arg(long, default_value_t = 800)]
        size: u32,
    },
}

fn load_model(checkpoint: &PathBuf, data_root: &Option<PathBuf>) -> Result<LoadedModel> {
    let mut m = LoadedModel::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    if data_root.is_some() {
        m.config.data_root = data_root.clone();
    }
    m.config.resolve_data_root();
    Ok(m)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train { config, reuse } => {
            let cfg = config.resolve()?;
            let out = train(&cfg, TrainOptions { reuse_completed: reuse })?;
            let last = out.record.last().context("no epochs ran")?;
            println!(
                "{} epochs; final loss {:.5}, validation t_rpe {:.3}%; checkpoint {}",
                out.record.len(),
                last.supervised_loss,
                last.val_t_rpe,
                out.checkpoint.display()
            );
        }
        Command::Evaluate { checkpoint, split, data_root, seed, csv } => {
            let m = load_model(&checkpoint, &data_root)?;
            let data = load_splits(&m.config)?;
            let set = data.get(split);
            if set.sequences.is_empty() {
                bail!("split {split:?} is empty");
            }
            let reports = m.evaluate(set, seed)?;
            print!("{}", format_table(&format!("{} ({split:?})", checkpoint.display()), &reports));
            if let Some(p) = csv {
                write_csv(&p, &reports)?;
            }
        }
        Command::Predict { checkpoint, sequence, data_root, out, seed, axes } => {
            let m = load_model(&checkpoint, &data_root)?;
            let data = load_splits(&m.config)?;
            let seq = data.sequence(sequence).with_context(|| format!("sequence {sequence} not in the dataset"))?;
            let est = m.predict_trajectory(seq, m.config.policy.eval_mode(), seed)?;
            std::fs::create_dir_all(&out)?;
            let poses = out.join(format!("{sequence:02}.txt"));
            write_pose_file(&poses, &est)?;
            let img = plot_paths(&[(&seq.poses, GROUND_TRUTH), (&est, ESTIMATE)], axes, 800)?;
            let png = out.join(format!("{sequence:02}.png"));
            img.save(&png)?;
            println!("wrote {} and {}", poses.display(), png.display());
        }
        Command::SynthGen { out, sequences, frames, seed } => {
            let ids = write_synthetic(&out, seed, sequences, frames)?;
            println!("wrote {} sequences of {frames} frames under {}", ids.len(), out.display());
        }
        Command::ReportParams { config } => {
            let cfg = config.resolve()?;
            let counts = report_params(&cfg)?;
            println!("glimpses {}, core width {}, glimpse net {}", cfg.glimpses, cfg.core_width, cfg.glimpse_net);
            print!("{}", counts.to_text());
        }
        Command::Plot { poses, out, axes, size } => {
            let paths = poses.iter().map(|p| read_pose_file(p)).collect::<Result<Vec<_>, _>>()?;
            let styled: Vec<_> = paths
                .iter()
                .enumerate()
                .map(|(i, p)| (p.as_slice(), if i == 0 { GROUND_TRUTH } else if i == 1 { ESTIMATE } else { palette(i - 2) }))
                .collect();
            plot_paths(&styled, axes, size)?.save(&out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}
