//! Policy-gradient estimators on toy problems: the REINFORCE estimate on a
//! 5x5 grid bandit, and REINFORCE versus PPO on a 1-D Gaussian bandit.

use ramvo::policy::bandit::{tail_variance, GridBandit, LineBandit};
use ramvo::policy::{ppo_objective, PolicyConfig};

fn main() -> ramvo::Result<()> {
    let grid = GridBandit::standard();
    let est = grid.reinforce_estimate([0.1, -0.2], [0.5, 0.4], 1000, 100, 1)?;
    println!("grid bandit, {} episodes", est.episodes);
    for (name, (m, s)) in ["d mu_x", "d mu_y", "d sigma_x", "d sigma_y"].iter().zip(est.mean.iter().zip(est.std_error)) {
        println!("  {name:<10} {m:+.4} +- {s:.4}");
    }

    let line = LineBandit::default();
    let ppo = PolicyConfig::default();
    for seed in 1..=3 {
        let r = line.run_reinforce(2000, seed)?;
        let p = line.run_ppo(&ppo, 1000, seed)?;
        println!(
            "line bandit seed {seed}: REINFORCE mu {:.3} (tail var {:.5}), PPO mu {:.3} (tail var {:.5})",
            r.last().unwrap(),
            tail_variance(&r),
            p.last().unwrap(),
            tail_variance(&p)
        );
    }
    println!("clipped objective: r=2, A=1 -> {}; r=0.5, A=-1 -> {}", ppo_objective(2.0, 1.0, 0.2), ppo_objective(0.5, -1.0, 0.2));
    Ok(())
}
