//! Color layout descriptor.

use super::{require_square, DescriptorError, DescriptorId, FeatureVector, Result};
use crate::dataset::ImagePlane;

pub const CLD_DIM: usize = 12;

const GRID: usize = 8;
const LUMA_COEFFS: usize = 6;
const CHROMA_COEFFS: usize = 3;

/// Orthonormal DCT-II basis: `basis[u][x] = a(u) cos((2x+1)uπ/16)`.
fn basis() -> [[f64; GRID]; GRID] {
    let mut m = [[0.0; GRID]; GRID];
    for (u, row) in m.iter_mut().enumerate() {
        let a = if u == 0 {
            (1.0 / GRID as f64).sqrt()
        } else {
            (2.0 / GRID as f64).sqrt()
        };
        for (x, v) in row.iter_mut().enumerate() {
            *v = a * (((2 * x + 1) * u) as f64 * std::f64::consts::PI / (2 * GRID) as f64).cos();
        }
    }
    m
}

/// Separable orthonormal 2-D DCT-II of a row-major 8×8 block.
pub fn dct2_8x8(block: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut tmp = [0.0; 64];
    // rows: tmp[y][u] = Σ_x b[u][x] f[y][x]
    for y in 0..GRID {
        for u in 0..GRID {
            tmp[y * GRID + u] = (0..GRID).map(|x| b[u][x] * block[y * GRID + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..GRID {
        for u in 0..GRID {
            out[v * GRID + u] = (0..GRID).map(|y| b[v][y] * tmp[y * GRID + u]).sum();
        }
    }
    out
}

/// Inverse of [`dct2_8x8`].
pub fn idct2_8x8(coeffs: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut tmp = [0.0; 64];
    for v in 0..GRID {
        for x in 0..GRID {
            tmp[v * GRID + x] = (0..GRID).map(|u| b[u][x] * coeffs[v * GRID + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..GRID {
        for x in 0..GRID {
            out[y * GRID + x] = (0..GRID).map(|v| b[v][y] * tmp[v * GRID + x]).sum();
        }
    }
    out
}

/// JPEG zig-zag order over an 8×8 grid as row-major indices.
pub fn zigzag_order() -> [usize; 64] {
    let mut order = [0; 64];
    let mut k = 0;
    for diag in 0..(2 * GRID - 1) {
        let cells: Vec<(usize, usize)> = (0..GRID)
            .filter_map(|row| diag.checked_sub(row).filter(|&c| c < GRID).map(|col| (row, col)))
            .collect();
        // even diagonals run bottom-left to top-right
        let iter: Box<dyn Iterator<Item = &(usize, usize)>> = if diag % 2 == 0 {
            Box::new(cells.iter().rev())
        } else {
            Box::new(cells.iter())
        };
        for &(row, col) in iter {
            order[k] = row * GRID + col;
            k += 1;
        }
    }
    order
}

fn block_means(plane: &[f64], side: usize) -> [f64; 64] {
    let mut out = [0.0; 64];
    for by in 0..GRID {
        let (y0, y1) = (by * side / GRID, (by + 1) * side / GRID);
        for bx in 0..GRID {
            let (x0, x1) = (bx * side / GRID, (bx + 1) * side / GRID);
            let mut sum = 0.0;
            for y in y0..y1 {
                sum += plane[y * side + x0..y * side + x1].iter().sum::<f64>();
            }
            out[by * GRID + bx] = sum / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    out
}

/// 12 real DCT coefficients: 6 luma then 3 Cb then 3 Cr, in zig-zag order.
pub fn color_layout(image: &ImagePlane) -> Result<FeatureVector> {
    let side = require_square(image)?;
    if side < GRID {
        return Err(DescriptorError::TooSmall {
            side,
            reason: "color layout needs at least 8x8 pixels".into(),
        });
    }
    let zz = zigzag_order();
    let mut values = Vec::with_capacity(CLD_DIM);
    for (plane, keep) in [
        (image.luma(), LUMA_COEFFS),
        (image.chroma_b(), CHROMA_COEFFS),
        (image.chroma_r(), CHROMA_COEFFS),
    ] {
        let coeffs = dct2_8x8(&block_means(plane, side));
        values.extend(zz[..keep].iter().map(|&i| coeffs[i]));
    }
    Ok(FeatureVector::new(DescriptorId::Cld, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct quadruple-sum DCT-II, independent of the separable basis code.
    fn naive_dct(f: &[f64; 64]) -> [f64; 64] {
        let n = 8.0;
        let pi = std::f64::consts::PI;
        let mut out = [0.0; 64];
        for v in 0..8 {
            for u in 0..8 {
                let cu = if u == 0 { 1.0 / 2f64.sqrt() } else { 1.0 };
                let cv = if v == 0 { 1.0 / 2f64.sqrt() } else { 1.0 };
                let mut s = 0.0;
                for y in 0..8 {
                    for x in 0..8 {
                        s += f[y * 8 + x]
                            * ((2.0 * x as f64 + 1.0) * u as f64 * pi / (2.0 * n)).cos()
                            * ((2.0 * y as f64 + 1.0) * v as f64 * pi / (2.0 * n)).cos();
                    }
                }
                out[v * 8 + u] = 2.0 / n * cu * cv * s;
            }
        }
        out
    }

    fn random_block(rng: &mut ChaCha8Rng) -> [f64; 64] {
        let mut b = [0.0; 64];
        b.iter_mut().for_each(|v| *v = rng.random());
        b
    }

    #[test]
    fn dct_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let b = random_block(&mut rng);
            let fast = dct2_8x8(&b);
            let slow = naive_dct(&b);
            for (a, e) in fast.iter().zip(slow.iter()) {
                assert!((a - e).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dct_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = random_block(&mut rng);
        let back = idct2_8x8(&dct2_8x8(&b));
        for (a, e) in back.iter().zip(b.iter()) {
            assert!((a - e).abs() < 1e-9);
        }
    }

    #[test]
    fn zigzag_prefix_is_standard() {
        let zz = zigzag_order();
        assert_eq!(&zz[..10], &[0, 1, 8, 16, 9, 2, 3, 10, 17, 24]);
        assert_eq!(zz[63], 63);
        let mut sorted = zz;
        sorted.sort();
        assert!(sorted.iter().enumerate().all(|(i, &v)| i == v));
    }

    #[test]
    fn uniform_gray_has_only_dc() {
        let img = ImagePlane::from_luma(64, vec![0.5; 64 * 64]).unwrap();
        let fv = color_layout(&img).unwrap();
        assert_eq!(fv.dim(), CLD_DIM);
        // DC of an orthonormal 8x8 DCT is 8 × mean.
        assert!((fv.values[0] - 4.0).abs() < 1e-12);
        assert!((fv.values[6] - 4.0).abs() < 1e-12);
        assert!((fv.values[9] - 4.0).abs() < 1e-12);
        for (i, v) in fv.values.iter().enumerate() {
            if ![0, 6, 9].contains(&i) {
                assert!(v.abs() < 1e-12, "coefficient {i} = {v}");
            }
        }
    }

    #[test]
    fn side_not_multiple_of_eight_still_works() {
        let img = ImagePlane::from_luma(12, vec![0.3; 144]).unwrap();
        assert_eq!(color_layout(&img).unwrap().dim(), 12);
    }

    #[test]
    fn tiny_image_is_rejected() {
        let img = ImagePlane::from_luma(4, vec![0.3; 16]).unwrap();
        assert!(matches!(color_layout(&img), Err(DescriptorError::TooSmall { .. })));
    }
}
