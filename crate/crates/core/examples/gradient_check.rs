//! Finite-difference check of the full model's supervised gradient in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ramvo::dataio::Frame;
use ramvo::glimpse::GlimpseConfig;
use ramvo::model::{LocationMode, ModelConfig, RamVo};
use ramvo::nn::gradcheck::{check_params, offset_biases};
use ramvo::nn::{ParameterSet, Tape};
use ramvo::regressor::{supervised_loss, target_tensor};

fn main() -> ramvo::Result<()> {
    let mut ps = ParameterSet::<f64>::new();
    let cfg = ModelConfig { glimpse: GlimpseConfig::tiny(16), core_width: 32, glimpses: 2, sigma_max: 1.0, sigma_init: None };
    let model = RamVo::new(&mut ps, cfg, &mut ChaCha8Rng::seed_from_u64(1))?;
    offset_biases(&mut ps, 0.3, 0.6, &mut ChaCha8Rng::seed_from_u64(2));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let frames: Vec<Frame> = (0..3).map(|_| Frame::new(64, 48, (0..64 * 48).map(|_| rng.gen_range(-1.0..1.0)).collect(), 0).unwrap()).collect();
    let pairs = [(&frames[0], &frames[1]), (&frames[1], &frames[2])];
    let targets = target_tensor(&[[0.1, 0.0, -0.2, 0.5, 0.3, 0.0], [0.0, 0.2, 0.1, -0.4, 0.2, 0.1]])?;
    let loss = |p: &ParameterSet<f64>| -> ramvo::Result<(f64, ramvo::nn::Gradients<f64>)> {
        let mut tape = Tape::with_params(p);
        let r = model.rollout(&mut tape, &pairs, LocationMode::Center, &mut ChaCha8Rng::seed_from_u64(0), false)?;
        let t = tape.constant(targets.clone());
        let l = supervised_loss(&mut tape, r.prediction, t, 1.0)?;
        Ok((tape.value(l).data()[0], tape.backward(l)?))
    };
    let (value, grads) = loss(&ps)?;
    let report = check_params(&ps, &RamVo::supervised_ids(&ps), &grads, 1e-6, 8, |p| loss(p).map(|r| r.0))?;
    println!("loss {value:.5}");
    for p in &report.params {
        println!("{:<40} rel err {:.2e} ({} probes, {} kinks)", p.path, p.relative_error, p.probed, p.kinks);
    }
    println!("worst {:.2e}; passes at 1e-3: {}", report.worst(), report.passes(1e-3));
    Ok(())
}
