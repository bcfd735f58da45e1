//! Color layout descriptor of an image: 8×8 block-average icon, per-channel
//! DCT, first zig-zag coefficients (6 luma + 3 + 3 chroma).
//!
//! ```text
//! cargo run --example color_layout -- [image.png]
//! ```

use fusionbench::dataset::{decode_image, ImagePlane, DEFAULT_SIDE};
use fusionbench::descriptors::{color_layout, dct2_8x8, idct2_8x8, zigzag_order};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let image = match std::env::args().nth(1) {
        Some(path) => decode_image(path.as_ref(), DEFAULT_SIDE)?,
        None => {
            // horizontal gradient: red on the left, blue on the right
            let side = 64;
            let rgb: Vec<u8> = (0..side * side)
                .flat_map(|i| {
                    let t = (i % side) as f64 / (side - 1) as f64;
                    [(255.0 * (1.0 - t)) as u8, 60, (255.0 * t) as u8]
                })
                .collect();
            ImagePlane::from_rgb8(side, side, &rgb, side)?
        }
    };
    let cld = color_layout(&image)?;
    println!("CLD ({} values)", cld.dim());
    println!("  Y  {:?}", round(&cld.values[..6]));
    println!("  Cb {:?}", round(&cld.values[6..9]));
    println!("  Cr {:?}", round(&cld.values[9..]));

    // the transform underneath is orthonormal
    let block: [f64; 64] = std::array::from_fn(|i| (i as f64 * 0.37).sin());
    let back = idct2_8x8(&dct2_8x8(&block));
    let err = block.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("DCT round-trip max error {err:.1e}; zig-zag starts {:?}", &zigzag_order()[..6]);
    Ok(())
}

fn round(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e3).round() / 1e3).collect()
}
