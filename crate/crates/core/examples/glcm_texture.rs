//! Co-occurrence texture: 16 gray levels, 64×64 blocks, four offsets pooled
//! into one matrix, and energy / entropy / homogeneity / inertia per block.
//!
//! ```text
//! cargo run --example glcm_texture -- [image.png]
//! ```

use fusionbench::dataset::{decode_image, ImagePlane, DEFAULT_SIDE};
use fusionbench::descriptors::{co_occurrence, glcm_texture, haralick, GlcmConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // a 4×4 grid small enough to count by hand
    let grid = [0, 0, 1, 1, 0, 0, 1, 1, 0, 2, 2, 2, 2, 2, 3, 3];
    let p = co_occurrence(&grid, 4, 4, 4, &[(0, 1)], false);
    println!("horizontal co-occurrence of the 4-level grid (×12):");
    for row in p.chunks(4) {
        println!("  {:?}", row.iter().map(|v| (v * 12.0).round() as u32).collect::<Vec<_>>());
    }
    let s = haralick(&p, 4);
    println!(
        "  energy {:.4} entropy {:.4} homogeneity {:.4} inertia {:.4}",
        s.energy, s.entropy, s.homogeneity, s.inertia
    );

    let image = match std::env::args().nth(1) {
        Some(path) => decode_image(path.as_ref(), DEFAULT_SIDE)?,
        None => {
            // checkerboard top half, smooth ramp bottom half
            let side = DEFAULT_SIDE;
            let luma = (0..side * side)
                .map(|i| {
                    let (y, x) = (i / side, i % side);
                    if y < side / 2 { ((x / 4 + y / 4) % 2) as f64 } else { x as f64 / side as f64 }
                })
                .collect();
            ImagePlane::from_luma(side, luma)?
        }
    };
    let config = GlcmConfig::default();
    let fv = glcm_texture(&image, &config)?;
    println!("texture descriptor: {} values ({} blocks × 4 statistics, {} offsets pooled)", fv.dim(), fv.dim() / 4, config.offsets.len());
    println!("            energy  entropy  homog.  inertia");
    for (b, s) in fv.values.chunks(4).enumerate() {
        println!("  block {b:>2} {:>7.4} {:>8.4} {:>7.4} {:>8.4}", s[0], s[1], s[2], s[3]);
    }
    Ok(())
}
