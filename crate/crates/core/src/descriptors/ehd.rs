//! Edge histogram descriptor: five edge-type populations over a 4×4 block grid.

use super::{require_square, DescriptorError, DescriptorId, FeatureVector, Result};
use crate::dataset::ImagePlane;

pub const EHD_DIM: usize = 80;

const BLOCKS: usize = 4;
const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeType {
    Vertical,
    Horizontal,
    Diagonal45,
    Diagonal135,
    NonDirectional,
}

impl EdgeType {
    pub const ALL: [EdgeType; 5] = [
        Self::Vertical,
        Self::Horizontal,
        Self::Diagonal45,
        Self::Diagonal135,
        Self::NonDirectional,
    ];

    /// 2×2 mask as `[top-left, top-right, bottom-left, bottom-right]`.
    pub fn mask(self) -> [f64; 4] {
        match self {
            Self::Vertical => [1.0, -1.0, 1.0, -1.0],
            Self::Horizontal => [1.0, 1.0, -1.0, -1.0],
            Self::Diagonal45 => [SQRT2, 0.0, 0.0, -SQRT2],
            Self::Diagonal135 => [0.0, SQRT2, -SQRT2, 0.0],
            Self::NonDirectional => [2.0, -2.0, -2.0, 2.0],
        }
    }
}

/// Edge type claimed by one 2×2 cell, or `None` when no response reaches the
/// threshold. Ties go to the earlier type in [`EdgeType::ALL`].
pub(crate) fn classify_cell(cell: [f64; 4], threshold: f64) -> Option<EdgeType> {
    let mut best: Option<(EdgeType, f64)> = None;
    for t in EdgeType::ALL {
        let m = t.mask();
        let r = (0..4).map(|i| m[i] * cell[i]).sum::<f64>().abs();
        if best.is_none_or(|(_, b)| r > b) {
            best = Some((t, r));
        }
    }
    best.filter(|&(_, r)| r > threshold).map(|(t, _)| t)
}

/// 80 values: for each of 16 blocks (row-major), the fraction of 2×2 cells
/// assigned to each of the five edge types.
pub fn edge_histogram(image: &ImagePlane, threshold: f64) -> Result<FeatureVector> {
    let side = require_square(image)?;
    if side < 2 * BLOCKS {
        return Err(DescriptorError::TooSmall {
            side,
            reason: "edge histogram needs one 2x2 cell per block".into(),
        });
    }
    let luma = image.luma();
    let mut values = Vec::with_capacity(EHD_DIM);
    for by in 0..BLOCKS {
        let (y0, y1) = (by * side / BLOCKS, (by + 1) * side / BLOCKS);
        for bx in 0..BLOCKS {
            let (x0, x1) = (bx * side / BLOCKS, (bx + 1) * side / BLOCKS);
            let mut counts = [0usize; 5];
            let mut cells = 0usize;
            for cy in (y0..y1 - 1).step_by(2) {
                for cx in (x0..x1 - 1).step_by(2) {
                    cells += 1;
                    let cell = [
                        luma[cy * side + cx],
                        luma[cy * side + cx + 1],
                        luma[(cy + 1) * side + cx],
                        luma[(cy + 1) * side + cx + 1],
                    ];
                    if let Some(t) = classify_cell(cell, threshold) {
                        counts[t as usize] += 1;
                    }
                }
            }
            values.extend(counts.iter().map(|&c| c as f64 / cells as f64));
        }
    }
    Ok(FeatureVector::new(DescriptorId::Ehd, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stripes(side: usize) -> ImagePlane {
        let luma = (0..side * side)
            .map(|i| if (i % side) % 2 == 0 { 0.0 } else { 1.0 })
            .collect();
        ImagePlane::from_luma(side, luma).unwrap()
    }

    #[test]
    fn constant_image_has_no_edges() {
        let img = ImagePlane::from_luma(32, vec![0.6; 32 * 32]).unwrap();
        let fv = edge_histogram(&img, 0.05).unwrap();
        assert_eq!(fv.dim(), EHD_DIM);
        assert!(fv.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_stripes_fill_vertical_bins() {
        // Hand evaluation on the cell [0 1; 0 1]: vertical |−2| = 2, horizontal 0,
        // 45° |−√2|, 135° |√2|, non-directional 0.
        assert_eq!(classify_cell([0.0, 1.0, 0.0, 1.0], 0.05), Some(EdgeType::Vertical));
        let fv = edge_histogram(&stripes(64), 0.05).unwrap();
        for block in fv.values.chunks(5) {
            assert_eq!(block, &[1.0, 0.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn mask_orientations() {
        assert_eq!(classify_cell([1.0, 1.0, 0.0, 0.0], 0.05), Some(EdgeType::Horizontal));
        assert_eq!(classify_cell([1.0, 0.0, 0.0, 0.0], 0.05), Some(EdgeType::NonDirectional));
        assert_eq!(classify_cell([1.0, 0.5, 0.5, 0.0], 0.05), Some(EdgeType::Diagonal45));
        assert_eq!(classify_cell([0.0, 0.5, 0.5, 1.0], 0.05), Some(EdgeType::Diagonal45));
        assert_eq!(classify_cell([0.5, 1.0, 0.0, 0.5], 0.05), Some(EdgeType::Diagonal135));
        assert_eq!(classify_cell([0.5, 0.51, 0.5, 0.51], 0.05), None);
    }

    #[test]
    fn bins_are_fractions() {
        let luma = (0..40 * 40).map(|i| ((i * 7919) % 101) as f64 / 100.0).collect();
        let img = ImagePlane::from_luma(40, luma).unwrap();
        let fv = edge_histogram(&img, 0.05).unwrap();
        for block in fv.values.chunks(5) {
            assert!(block.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(block.iter().sum::<f64>() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn too_small_is_error() {
        let img = ImagePlane::from_luma(6, vec![0.0; 36]).unwrap();
        assert!(edge_histogram(&img, 0.05).is_err());
    }
}
