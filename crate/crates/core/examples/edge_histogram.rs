//! Edge histogram descriptor: 16 sub-images × 5 edge types
//! (vertical, horizontal, 45°, 135°, non-directional).
//!
//! ```text
//! cargo run --example edge_histogram -- [image.png]
//! ```

use fusionbench::dataset::{decode_image, ImagePlane, DEFAULT_SIDE};
use fusionbench::descriptors::edge_histogram;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let image = match std::env::args().nth(1) {
        Some(path) => decode_image(path.as_ref(), DEFAULT_SIDE)?,
        None => {
            // quadrants: vertical stripes, horizontal stripes, a lower triangle, flat
            let side = 128;
            let half = side / 2;
            let luma = (0..side * side)
                .map(|i| {
                    let (y, x) = (i / side, i % side);
                    match (y < half, x < half) {
                        (true, true) => (x % 2) as f64,
                        (true, false) => (y % 2) as f64,
                        (false, true) => f64::from(x <= y - half),
                        (false, false) => 0.5,
                    }
                })
                .collect();
            ImagePlane::from_luma(side, luma)?
        }
    };
    let ehd = edge_histogram(&image, 0.05)?;
    println!("EHD ({} bins); rows are sub-images in raster order", ehd.dim());
    println!("      {:>6} {:>6} {:>6} {:>6} {:>6}", "vert", "horiz", "45°", "135°", "nondir");
    for (b, block) in ehd.values.chunks(5).enumerate() {
        println!("  {b:>2}  {}", block.iter().map(|v| format!("{v:>6.3}")).collect::<Vec<_>>().join(" "));
    }
    Ok(())
}
