//! Extracts the three-scale patch pyramid at a few locations of a synthetic
//! frame pair and writes each level as an image, plus a JSON inspection dump.

use image::GrayImage;
use ramvo::dataio::{Sequence, SynthConfig, SyntheticSequence};
use ramvo::glimpse::{extract_pyramid, write_debug_dump, GlimpseRecord, Location, PATCH};

fn to_image(plane: &[f32]) -> GrayImage {
    let (lo, hi) = plane.iter().fold((f32::MAX, f32::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    GrayImage::from_fn(PATCH as u32, PATCH as u32, |x, y| image::Luma([((plane[y as usize * PATCH + x as usize] - lo) * scale) as u8]))
}

fn main() -> anyhow::Result<()> {
    let seq = Sequence::from_synthetic(0, &SyntheticSequence::generate(&SynthConfig { frames: 2, ..SynthConfig::default() })?)?;
    let pair = seq.pair(0)?;
    let mut records = Vec::new();
    for (name, loc) in [("centre", Location::CENTER), ("window", Location::new(0.45, -0.25)), ("corner", Location::new(-1.0, -1.0))] {
        let p = extract_pyramid(&pair.first, &pair.second, loc)?;
        for k in 0..3 {
            to_image(&p.level(k)[..PATCH * PATCH]).save(format!("glimpse_{name}_level{k}.png"))?;
        }
        let energy: f32 = p.level(0).iter().map(|v| v * v).sum::<f32>() / p.level(0).len() as f32;
        println!("{name:>6} at ({:+.2}, {:+.2}): mean square of finest level {energy:.3}", loc.x, loc.y);
        records.push(GlimpseRecord { sample: 0, step: records.len(), location: loc, pyramid: p });
    }
    write_debug_dump(std::path::Path::new("glimpses.json"), &records)?;
    println!("wrote glimpse_*.png and glimpses.json");
    Ok(())
}
