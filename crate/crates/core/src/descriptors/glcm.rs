//! Block-wise gray level co-occurrence statistics.

use serde::{Deserialize, Serialize};

use super::{require_square, DescriptorError, DescriptorId, FeatureVector, Result};
use crate::dataset::ImagePlane;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlcmConfig {
    /// Number of gray levels after quantization.
    pub levels: usize,
    /// Side of the non-overlapping square blocks.
    pub block_size: usize,
    /// Pixel displacements as `(d_row, d_col)`.
    pub offsets: Vec<(i32, i32)>,
    /// Count each pair in both directions.
    pub symmetric: bool,
}

impl Default for GlcmConfig {
    fn default() -> Self {
        Self {
            levels: 16,
            block_size: 64,
            // 0°, 45°, 90°, 135°
            offsets: vec![(0, 1), (-1, 1), (-1, 0), (-1, -1)],
            symmetric: true,
        }
    }
}

impl GlcmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 || self.block_size < 2 || self.offsets.is_empty() {
            return Err(DescriptorError::InvalidConfig(format!(
                "glcm needs levels >= 1, block_size >= 2 and at least one offset, got {self:?}"
            )));
        }
        if self.offsets.iter().any(|&(dy, dx)| {
            (dy == 0 && dx == 0) || dy.unsigned_abs() as usize >= self.block_size || dx.unsigned_abs() as usize >= self.block_size
        }) {
            return Err(DescriptorError::InvalidConfig(
                "glcm offsets must be non-zero and shorter than a block".into(),
            ));
        }
        Ok(())
    }
}

/// The four block statistics, in output order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaralickStats {
    pub energy: f64,
    pub entropy: f64,
    pub homogeneity: f64,
    pub inertia: f64,
}

/// Maps \[0,1\] intensities onto `levels` integer gray levels.
pub fn quantize(v: f64, levels: usize) -> usize {
    ((v * levels as f64).floor() as usize).min(levels - 1)
}

/// Normalized `levels × levels` co-occurrence matrix (row-major) of a
/// quantized `width × height` grid. Pairs leaving the grid are ignored.
pub fn co_occurrence(
    grid: &[usize],
    width: usize,
    height: usize,
    levels: usize,
    offsets: &[(i32, i32)],
    symmetric: bool,
) -> Vec<f64> {
    let mut counts = vec![0u64; levels * levels];
    for y in 0..height as i64 {
        for x in 0..width as i64 {
            let a = grid[y as usize * width + x as usize];
            for &(dy, dx) in offsets {
                let (ny, nx) = (y + dy as i64, x + dx as i64);
                if ny < 0 || nx < 0 || ny >= height as i64 || nx >= width as i64 {
                    continue;
                }
                let b = grid[ny as usize * width + nx as usize];
                counts[a * levels + b] += 1;
                if symmetric {
                    counts[b * levels + a] += 1;
                }
            }
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return vec![0.0; levels * levels];
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// Energy Σp², entropy −Σp·log₂p, homogeneity Σp/(1+|i−j|), inertia Σp(i−j)².
pub fn haralick(p: &[f64], levels: usize) -> HaralickStats {
    let mut s = HaralickStats {
        energy: 0.0,
        entropy: 0.0,
        homogeneity: 0.0,
        inertia: 0.0,
    };
    for i in 0..levels {
        for j in 0..levels {
            let v = p[i * levels + j];
            if v <= 0.0 {
                continue;
            }
            let d = i.abs_diff(j) as f64;
            s.energy += v * v;
            s.entropy -= v * v.log2();
            s.homogeneity += v / (1.0 + d);
            s.inertia += v * d * d;
        }
    }
    s
}

/// Four statistics per non-overlapping block, blocks in row-major order.
pub fn glcm_texture(image: &ImagePlane, config: &GlcmConfig) -> Result<FeatureVector> {
    config.validate()?;
    let side = require_square(image)?;
    let block = config.block_size;
    if side % block != 0 {
        return Err(DescriptorError::NotDivisible { side, block });
    }
    let q: Vec<usize> = image.luma().iter().map(|&v| quantize(v, config.levels)).collect();
    let per_side = side / block;
    let mut values = Vec::with_capacity(per_side * per_side * 4);
    let mut tile = vec![0usize; block * block];
    for by in 0..per_side {
        for bx in 0..per_side {
            for y in 0..block {
                let row = (by * block + y) * side + bx * block;
                tile[y * block..(y + 1) * block].copy_from_slice(&q[row..row + block]);
            }
            let p = co_occurrence(&tile, block, block, config.levels, &config.offsets, config.symmetric);
            let s = haralick(&p, config.levels);
            values.extend([s.energy, s.entropy, s.homogeneity, s.inertia]);
        }
    }
    Ok(FeatureVector::new(DescriptorId::Texture, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_block_statistics() {
        let img = ImagePlane::from_luma(128, vec![0.42; 128 * 128]).unwrap();
        let fv = glcm_texture(&img, &GlcmConfig::default()).unwrap();
        assert_eq!(fv.dim(), 16);
        for s in fv.values.chunks(4) {
            assert_eq!(s, &[1.0, 0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn hand_counted_horizontal_pairs() {
        // 4x4 grid, 4 levels:
        //   0 0 1 1
        //   0 0 1 1
        //   0 2 2 2
        //   2 2 3 3
        // Horizontal (0,1) pairs, 12 in total:
        //   row0: (0,0) (0,1) (1,1); row1: same; row2: (0,2) (2,2) (2,2);
        //   row3: (2,2) (2,3) (3,3)
        // counts: (0,0)=2 (0,1)=2 (1,1)=2 (0,2)=1 (2,2)=3 (2,3)=1 (3,3)=1
        let grid = [0, 0, 1, 1, 0, 0, 1, 1, 0, 2, 2, 2, 2, 2, 3, 3];
        let p = co_occurrence(&grid, 4, 4, 4, &[(0, 1)], false);
        let mut expected = [0.0; 16];
        for (i, j, c) in [(0, 0, 2.), (0, 1, 2.), (1, 1, 2.), (0, 2, 1.), (2, 2, 3.), (2, 3, 1.), (3, 3, 1.)] {
            expected[i * 4 + j] = c / 12.0;
        }
        assert_eq!(p, expected.to_vec());
        let s = haralick(&p, 4);
        let energy = (4. + 4. + 4. + 1. + 9. + 1. + 1.) / 144.0;
        let entropy = -[2., 2., 2., 1., 3., 1., 1.]
            .iter()
            .map(|c: &f64| c / 12.0 * (c / 12.0).log2())
            .sum::<f64>();
        let homogeneity = (2. + 2. / 2. + 2. + 1. / 3. + 3. + 1. / 2. + 1.) / 12.0;
        let inertia = (2. * 1. + 1. * 4. + 1. * 1.) / 12.0;
        assert!((s.energy - energy).abs() < 1e-15);
        assert!((s.entropy - entropy).abs() < 1e-14);
        assert!((s.homogeneity - homogeneity).abs() < 1e-15);
        assert!((s.inertia - inertia).abs() < 1e-15);
    }

    #[test]
    fn symmetric_matrix_is_symmetric_and_normalized() {
        let grid: Vec<usize> = (0..64).map(|i| (i * 37 % 11) % 5).collect();
        let p = co_occurrence(&grid, 8, 8, 5, &GlcmConfig::default().offsets, true);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(p[i * 5 + j], p[j * 5 + i]);
            }
        }
    }

    #[test]
    fn quantization_edges() {
        assert_eq!(quantize(0.0, 16), 0);
        assert_eq!(quantize(1.0, 16), 15);
        assert_eq!(quantize(0.0625, 16), 1);
    }

    #[test]
    fn default_dim_at_256() {
        let luma = (0..256 * 256).map(|i| (i % 256) as f64 / 255.0).collect();
        let img = ImagePlane::from_luma(256, luma).unwrap();
        assert_eq!(glcm_texture(&img, &GlcmConfig::default()).unwrap().dim(), 64);
    }

    #[test]
    fn indivisible_side_is_error() {
        let img = ImagePlane::from_luma(100, vec![0.0; 100 * 100]).unwrap();
        assert!(matches!(
            glcm_texture(&img, &GlcmConfig::default()),
            Err(DescriptorError::NotDivisible { side: 100, block: 64 })
        ));
    }
}
