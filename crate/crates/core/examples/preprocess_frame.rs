//! KITTI-style preprocessing of a grayscale image: resize to 1200x360,
//! CLAHE on 8x8 tiles, then z-score.
//!
//! cargo run --release --example preprocess_frame -- [image.png]

use image::GrayImage;
use ramvo::dataio::{clahe, preprocess, ClaheConfig, PreprocessConfig};

fn main() -> anyhow::Result<()> {
    let raw: GrayImage = match std::env::args().nth(1) {
        Some(p) => image::open(p)?.to_luma8(),
        None => GrayImage::from_fn(1226, 370, |x, y| image::Luma([((x / 3 + y / 2) % 160 + 40) as u8])),
    };
    let cfg = PreprocessConfig::kitti();
    let frame = preprocess(&raw, &cfg, 0)?;
    let (mean, std) = frame.mean_std();
    println!("input {}x{} -> frame {}x{}, mean {mean:.2e}, std {std:.6}", raw.width(), raw.height(), frame.width, frame.height);

    let eq = clahe(&raw, ClaheConfig::default())?;
    let spread = |img: &GrayImage| {
        let (lo, hi) = img.pixels().fold((255u8, 0u8), |(lo, hi), p| (lo.min(p[0]), hi.max(p[0])));
        hi - lo
    };
    println!("intensity range before CLAHE {}, after {}", spread(&raw), spread(&eq));
    eq.save("clahe_example.png")?;
    println!("wrote clahe_example.png");
    Ok(())
}
