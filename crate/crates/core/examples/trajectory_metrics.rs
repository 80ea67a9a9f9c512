//! ATE, RPE and drift for a noisy estimate of a synthetic trajectory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ramvo::dataio::Pose6DoF;
use ramvo::metrics::{accumulate, format_table, info_fraction};
use ramvo::trainer::sequence_report;

fn main() -> ramvo::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let truth: Vec<Pose6DoF> = (0..400)
        .map(|i| Pose6DoF { yaw: 0.01 * (i as f64 * 0.05).sin(), z: 1.0, ..Pose6DoF::ZERO })
        .collect();
    let gt = accumulate(&truth);
    let mut reports = Vec::new();
    for (name, noise) in [("clean", 0.0), ("1cm", 0.01), ("5cm", 0.05)] {
        let est_rel: Vec<Pose6DoF> = truth
            .iter()
            .map(|r| Pose6DoF { x: r.x + noise * rng.gen_range(-1.0..1.0), z: r.z * (1.0 + noise), yaw: r.yaw + 0.01 * noise, ..*r })
            .collect();
        reports.push(sequence_report(name, &gt, &accumulate(&est_rel))?);
    }
    print!("{}", format_table("noise levels", &reports));
    println!("information fraction of 8 glimpses on 1200x360: {:.2}%", 100.0 * info_fraction(8, 1200, 360)?);
    Ok(())
}
