//! A short desk-scale training run through the library, followed by test
//! evaluation and a trajectory plot.
//!
//! cargo run --release --example train_desk -- [epochs] [policy]

use ramvo::metrics::format_table;
use ramvo::trainer::{plot_paths, train, Axes, PolicyKind, RunConfig, TrainOptions, ESTIMATE, GROUND_TRUTH};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig::desk();
    cfg.epochs = args.next().map_or(Ok(3), |s| s.parse())?;
    cfg.policy = args.next().map_or(Ok(PolicyKind::Ppo), |s| s.parse())?;
    cfg.output = "runs/example".into();
    let run = train(&cfg, TrainOptions::default())?;

    let reports = run.model.evaluate(&run.data.test, 0)?;
    print!("{}", format_table("test split", &reports));
    let seq = &run.data.test.sequences[0];
    let est = run.model.predict_trajectory(seq, cfg.policy.eval_mode(), 0)?;
    plot_paths(&[(&seq.poses, GROUND_TRUTH), (&est, ESTIMATE)], Axes::Auto, 600)?.save("runs/example/test_trajectory.png")?;
    println!("checkpoint {}, plot runs/example/test_trajectory.png", run.checkpoint.display());
    Ok(())
}
