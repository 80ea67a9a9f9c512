//! Trainable parameters per module for the configurations of interest.

use ramvo::trainer::{report_params, GlimpseScale, RunConfig};

fn main() -> ramvo::Result<()> {
    for (scale, width) in [(GlimpseScale::Desk, 256), (GlimpseScale::Full, 256), (GlimpseScale::Full, 512), (GlimpseScale::Full, 1024)] {
        let mut cfg = RunConfig::desk();
        cfg.glimpse_net = scale;
        cfg.core_width = width;
        let c = report_params(&cfg)?;
        println!("{scale} glimpse net, core {width}: total {:.2}M", c.total() as f64 / 1e6);
        print!("{}", c.to_text());
    }
    Ok(())
}
