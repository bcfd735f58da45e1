//! Gist descriptor: a 32-filter Gabor bank (4 scales × 8 orientations)
//! applied in the frequency domain, pooled on a 4×4 grid (512 values).
//! A grating tuned to one filter's peak frequency lights that filter up.
//!
//! ```text
//! cargo run --release --example gist -- [image.png]
//! ```

use fusionbench::dataset::{decode_image, ImagePlane, DEFAULT_SIDE};
use fusionbench::descriptors::{gist, GaborBank, GaborBankConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = GaborBankConfig::default();
    let n = 128;
    let bank = GaborBank::new(&cfg, n)?;
    let cells = cfg.grid * cfg.grid;
    let target = cfg.orientations_per_scale[0] + 3; // scale 1, orientation 3
    let (fx, fy) = bank.peak_frequency(target);
    let luma = (0..n * n)
        .map(|i| {
            let (y, x) = ((i / n) as f64, (i % n) as f64);
            0.5 + 0.5 * (2.0 * std::f64::consts::PI * (fx.round() * x + fy.round() * y) / n as f64).cos()
        })
        .collect();
    let fv = bank.apply(&ImagePlane::from_luma(n, luma)?)?;
    println!("grating at ({:.0}, {:.0}) cycles; mean response per filter of scale 1:", fx.round(), fy.round());
    for f in cfg.orientations_per_scale[0]..cfg.orientations_per_scale[0] + cfg.orientations_per_scale[1] {
        let mean = fv.values[f * cells..(f + 1) * cells].iter().sum::<f64>() / cells as f64;
        println!("  filter {f:>2} {}{mean:.4}", if f == target { "* " } else { "  " });
    }

    if let Some(path) = std::env::args().nth(1) {
        let image = decode_image(path.as_ref(), DEFAULT_SIDE)?;
        let g = gist(&image, &cfg)?;
        let energy: Vec<f64> = (0..cfg.filters())
            .map(|f| g.values[f * cells..(f + 1) * cells].iter().sum::<f64>())
            .collect();
        println!("{path}: {} values; total energy per filter {:?}", g.dim(), energy.iter().map(|e| (e * 100.0).round() / 100.0).collect::<Vec<_>>());
    }
    Ok(())
}
