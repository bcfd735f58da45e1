//! Feature-level fusion: concatenation of descriptor vectors with z-score
//! normalization before or after concatenation, or PCA reduction of the
//! concatenated vector.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptors::{DescriptorId, FeatureVector};
use crate::persist;

pub const DEFAULT_EPSILON: f64 = 1e-12;
pub const DEFAULT_RETAINED_FRACTION: f64 = 0.95;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("descriptor order mismatch: expected {expected:?}, got {got:?}")]
    OrderMismatch {
        expected: Vec<DescriptorId>,
        got: Vec<DescriptorId>,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least {required} training vectors, got {got}")]
    TooFewSamples { required: usize, got: usize },
    #[error("retained fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("no descriptors to fuse")]
    Empty,
    #[error(transparent)]
    Persist(#[from] persist::PersistError),
}

pub type Result<T> = std::result::Result<T, FusionError>;

/// Concatenates vectors in `order`; the descriptors must appear exactly in that order.
pub fn concat(vectors: &[FeatureVector], order: &[DescriptorId]) -> Result<Vec<f64>> {
    let got: Vec<DescriptorId> = vectors.iter().map(|v| v.descriptor).collect();
    if got != order {
        return Err(FusionError::OrderMismatch {
            expected: order.to_vec(),
            got,
        });
    }
    Ok(vectors.iter().flat_map(|v| v.values.iter().copied()).collect())
}

fn check_rows(rows: &[Vec<f64>], required: usize) -> Result<usize> {
    if rows.len() < required {
        return Err(FusionError::TooFewSamples {
            required,
            got: rows.len(),
        });
    }
    let dim = rows[0].len();
    for r in rows {
        if r.len() != dim {
            return Err(FusionError::DimensionMismatch {
                expected: dim,
                got: r.len(),
            });
        }
    }
    Ok(dim)
}

/// Per-dimension training mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreStats {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
    pub epsilon: f64,
}

impl ZScoreStats {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        Self::fit_with_epsilon(rows, DEFAULT_EPSILON)
    }

    pub fn fit_with_epsilon(rows: &[Vec<f64>], epsilon: f64) -> Result<Self> {
        let dim = check_rows(rows, 2)?;
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let stddev = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Ok(Self {
            mean,
            stddev,
            epsilon,
        })
    }

    /// Stats that leave vectors unchanged.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            stddev: vec![1.0; dim],
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn scale(&self, d: usize) -> f64 {
        self.stddev[d].max(self.epsilon)
    }

    /// `(v − mean) / max(stddev, ε)`. Zero-variance dimensions map to 0.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(FusionError::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(v.iter()
            .enumerate()
            .map(|(d, x)| if self.stddev[d] <= self.epsilon { 0.0 } else { (x - self.mean[d]) / self.scale(d) })
            .collect())
    }

    pub fn apply_all(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.apply(r)).collect()
    }

    /// Inverse transform; exact on dimensions with stddev > ε.
    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(d, x)| x * self.scale(d) + self.mean[d])
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("stats serialize")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

/// Principal axes of the training covariance, largest variance first.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k × D`, orthonormal rows.
    pub components: Vec<Vec<f64>>,
    /// Variance along each retained component, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Full non-increasing eigenvalue spectrum of the training covariance
    /// (up to `min(n−1, D)` non-trivial values).
    pub spectrum: Vec<f64>,
    pub retained_fraction: f64,
}

#[derive(Serialize, Deserialize)]
struct PcaHeader {
    mean: Vec<f64>,
    explained_variance: Vec<f64>,
    spectrum: Vec<f64>,
    retained_fraction: f64,
    k: usize,
}

const PCA_MAGIC: [u8; 4] = *b"FBPC";

/// Fits PCA on `rows` (covariance with n−1 normalization) keeping the
/// smallest number of components whose cumulative variance reaches
/// `retained_fraction` of the total.
pub fn fit_pca(rows: &[Vec<f64>], retained_fraction: f64) -> Result<PcaModel> {
    if !(retained_fraction > 0.0 && retained_fraction <= 1.0) {
        return Err(FusionError::InvalidFraction(retained_fraction));
    }
    let dim = check_rows(rows, 2)?;
    let n = rows.len();
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, dim, |i, j| rows[i][j] - mean[j]);
    let denom = (n - 1) as f64;

    // Eigenpairs of the covariance, via whichever of the D×D covariance or
    // the n×n Gram matrix is smaller.
    let mut pairs: Vec<(f64, Vec<f64>)> = if dim <= n {
        let cov = centered.transpose() * &centered / denom;
        let eig = SymmetricEigen::new(cov);
        (0..dim)
            .map(|c| (eig.eigenvalues[c], eig.eigenvectors.column(c).iter().copied().collect()))
            .collect()
    } else {
        let gram = &centered * centered.transpose() / denom;
        let eig = SymmetricEigen::new(gram);
        (0..n)
            .filter_map(|c| {
                let lambda = eig.eigenvalues[c];
                if lambda <= 1e-12 * eig.eigenvalues.amax().max(f64::MIN_POSITIVE) {
                    return None;
                }
                let u = eig.eigenvectors.column(c);
                let v = centered.transpose() * u;
                let norm = v.norm();
                Some((lambda, v.iter().map(|x| x / norm).collect()))
            })
            .collect()
    };
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (lambda, v) in &mut pairs {
        *lambda = lambda.max(0.0);
        canonical_sign(v);
    }
    if pairs.is_empty() {
        // all training vectors identical: keep a single arbitrary axis
        let mut axis = vec![0.0; dim];
        axis[0] = 1.0;
        pairs.push((0.0, axis));
    }
    let spectrum: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let total: f64 = spectrum.iter().sum();
    let mut k = spectrum.len();
    if total > 0.0 {
        let mut acc = 0.0;
        for (i, s) in spectrum.iter().enumerate() {
            acc += s;
            if acc >= retained_fraction * total - 1e-10 * total {
                k = i + 1;
                break;
            }
        }
    } else {
        k = 1;
    }
    pairs.truncate(k);
    let (explained_variance, components) = pairs.into_iter().unzip();
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        spectrum,
        retained_fraction,
    })
}

/// Flips `v` so its largest-magnitude entry is positive.
fn canonical_sign(v: &mut [f64]) {
    let pivot = v
        .iter()
        .copied()
        .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
    if pivot < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    /// Projects the centered vector onto the retained components.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.input_dim() {
            return Err(FusionError::DimensionMismatch {
                expected: self.input_dim(),
                got: v.len(),
            });
        }
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(v).zip(&self.mean).map(|((a, x), m)| a * (x - m)).sum())
            .collect())
    }

    /// Maps projected coordinates back into the input space.
    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, w) in self.components.iter().zip(z) {
            for (o, a) in out.iter_mut().zip(c) {
                *o += w * a;
            }
        }
        out
    }

    /// Negates component `index`.
    pub fn flip_sign(&mut self, index: usize) {
        self.components[index].iter_mut().for_each(|x| *x = -*x);
    }

    pub fn total_variance(&self) -> f64 {
        self.spectrum.iter().sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = PcaHeader {
            mean: self.mean.clone(),
            explained_variance: self.explained_variance.clone(),
            spectrum: self.spectrum.clone(),
            retained_fraction: self.retained_fraction,
            k: self.k(),
        };
        Ok(persist::save(path, PCA_MAGIC, &header, &self.components)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, components): (PcaHeader, _) = persist::load(path, PCA_MAGIC)?;
        Ok(Self {
            mean: h.mean,
            components,
            explained_variance: h.explained_variance,
            spectrum: h.spectrum,
            retained_fraction: h.retained_fraction,
        })
    }
}

/// How a z-score normalizer computes its centering and scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZScoreMode {
    /// Per-dimension mean and stddev over the training set.
    #[default]
    PerDimension,
    /// Each vector standardized by the mean and stddev of its own entries.
    PerVector,
}

/// z-scores a vector by the moments of its own entries.
pub fn zscore_vector(v: &[f64], epsilon: f64) -> Vec<f64> {
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std <= epsilon {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - mean) / std).collect()
}

/// A fitted z-score transform in either mode.
#[derive(Debug, Clone, PartialEq)]
pub enum Normalizer {
    Stats(ZScoreStats),
    PerVector { dim: usize, epsilon: f64 },
}

impl Normalizer {
    pub fn fit(mode: ZScoreMode, rows: &[Vec<f64>]) -> Result<Self> {
        match mode {
            ZScoreMode::PerDimension => Ok(Self::Stats(ZScoreStats::fit(rows)?)),
            ZScoreMode::PerVector => Ok(Self::PerVector {
                dim: check_rows(rows, 1)?,
                epsilon: DEFAULT_EPSILON,
            }),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Stats(s) => s.dim(),
            Self::PerVector { dim, .. } => *dim,
        }
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Stats(s) => s.apply(v),
            Self::PerVector { dim, epsilon } => {
                if v.len() != *dim {
                    return Err(FusionError::DimensionMismatch {
                        expected: *dim,
                        got: v.len(),
                    });
                }
                Ok(zscore_vector(v, *epsilon))
            }
        }
    }
}

/// A feature-level fusion scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    /// z-score each descriptor, then concatenate.
    PreNormalized { mode: ZScoreMode },
    /// Concatenate, then z-score the long vector.
    PostNormalized { mode: ZScoreMode },
    /// Concatenate (optionally z-score per dimension), then project onto principal components.
    Pca { retained_fraction: f64, pre_zscore: bool },
}

/// A fusion scheme fitted on training data, applicable to new samples.
#[derive(Debug, Clone)]
pub enum FittedFusion {
    Pre { order: Vec<DescriptorId>, normalizers: Vec<Normalizer> },
    Post { order: Vec<DescriptorId>, normalizer: Normalizer },
    Pca { order: Vec<DescriptorId>, zscore: Option<ZScoreStats>, model: PcaModel },
}

fn concat_rows(views: &[&[Vec<f64>]]) -> Result<Vec<Vec<f64>>> {
    let n = views.first().ok_or(FusionError::Empty)?.len();
    for v in views {
        if v.len() != n {
            return Err(FusionError::DimensionMismatch {
                expected: n,
                got: v.len(),
            });
        }
    }
    Ok((0..n)
        .map(|i| views.iter().flat_map(|v| v[i].iter().copied()).collect())
        .collect())
}

impl FittedFusion {
    /// Fits `strategy` on per-descriptor training matrices: `views[d][i]` is
    /// descriptor `order[d]` of training sample `i`.
    pub fn fit(strategy: FusionStrategy, order: &[DescriptorId], views: &[&[Vec<f64>]]) -> Result<Self> {
        if views.is_empty() || views.len() != order.len() {
            return Err(FusionError::Empty);
        }
        let order = order.to_vec();
        Ok(match strategy {
            FusionStrategy::PreNormalized { mode } => Self::Pre {
                normalizers: views.iter().map(|v| Normalizer::fit(mode, v)).collect::<Result<_>>()?,
                order,
            },
            FusionStrategy::PostNormalized { mode } => Self::Post {
                normalizer: Normalizer::fit(mode, &concat_rows(views)?)?,
                order,
            },
            FusionStrategy::Pca {
                retained_fraction,
                pre_zscore,
            } => {
                let mut rows = concat_rows(views)?;
                let zscore = if pre_zscore {
                    let s = ZScoreStats::fit(&rows)?;
                    rows = s.apply_all(&rows)?;
                    Some(s)
                } else {
                    None
                };
                Self::Pca {
                    model: fit_pca(&rows, retained_fraction)?,
                    zscore,
                    order,
                }
            }
        })
    }

    pub fn order(&self) -> &[DescriptorId] {
        match self {
            Self::Pre { order, .. } | Self::Post { order, .. } | Self::Pca { order, .. } => order,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Self::Pre { normalizers, .. } => normalizers.iter().map(Normalizer::dim).sum(),
            Self::Post { normalizer, .. } => normalizer.dim(),
            Self::Pca { model, .. } => model.k(),
        }
    }

    /// Fuses one sample given as per-descriptor slices in fit order.
    pub fn transform(&self, sample: &[&[f64]]) -> Result<Vec<f64>> {
        if sample.len() != self.order().len() {
            return Err(FusionError::DimensionMismatch {
                expected: self.order().len(),
                got: sample.len(),
            });
        }
        match self {
            Self::Pre { normalizers, .. } => {
                let mut out = Vec::new();
                for (nz, v) in normalizers.iter().zip(sample) {
                    out.extend(nz.apply(v)?);
                }
                Ok(out)
            }
            Self::Post { normalizer, .. } => normalizer.apply(&sample.concat()),
            Self::Pca { zscore, model, .. } => {
                let raw = sample.concat();
                match zscore {
                    Some(s) => model.apply(&s.apply(&raw)?),
                    None => model.apply(&raw),
                }
            }
        }
    }

    /// Fuses one sample given as tagged vectors; the tags must match the fit order.
    pub fn transform_vectors(&self, sample: &[FeatureVector]) -> Result<Vec<f64>> {
        let got: Vec<DescriptorId> = sample.iter().map(|v| v.descriptor).collect();
        if got != self.order() {
            return Err(FusionError::OrderMismatch {
                expected: self.order().to_vec(),
                got,
            });
        }
        let slices: Vec<&[f64]> = sample.iter().map(|v| v.values.as_slice()).collect();
        self.transform(&slices)
    }

    /// Fuses every sample of per-descriptor matrices.
    pub fn transform_all(&self, views: &[&[Vec<f64>]]) -> Result<Vec<Vec<f64>>> {
        let n = views.first().map_or(0, |v| v.len());
        (0..n)
            .map(|i| {
                let slices: Vec<&[f64]> = views.iter().map(|v| v[i].as_slice()).collect();
                self.transform(&slices)
            })
            .collect()
    }
}

fn fit_and_transform(strategy: FusionStrategy, order: &[DescriptorId], views: &[&[Vec<f64>]]) -> Result<(FittedFusion, Vec<Vec<f64>>)> {
    let fitted = FittedFusion::fit(strategy, order, views)?;
    let fused = fitted.transform_all(views)?;
    Ok((fitted, fused))
}

/// z-score per descriptor, then concatenate. Returns the fitted transform and fused training rows.
pub fn fuse_pre_normalized(
    order: &[DescriptorId],
    views: &[&[Vec<f64>]],
    mode: ZScoreMode,
) -> Result<(FittedFusion, Vec<Vec<f64>>)> {
    fit_and_transform(FusionStrategy::PreNormalized { mode }, order, views)
}

/// Concatenate, then z-score the concatenated training matrix.
pub fn fuse_post_normalized(
    order: &[DescriptorId],
    views: &[&[Vec<f64>]],
    mode: ZScoreMode,
) -> Result<(FittedFusion, Vec<Vec<f64>>)> {
    fit_and_transform(FusionStrategy::PostNormalized { mode }, order, views)
}

/// Concatenate, optionally z-score, then reduce with PCA.
pub fn fuse_pca(
    order: &[DescriptorId],
    views: &[&[Vec<f64>]],
    retained_fraction: f64,
    pre_zscore: bool,
) -> Result<(FittedFusion, Vec<Vec<f64>>)> {
    fit_and_transform(
        FusionStrategy::Pca {
            retained_fraction,
            pre_zscore,
        },
        order,
        views,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| scale * (rng.random::<f64>() - 0.3)).collect())
            .collect()
    }

    fn moments(rows: &[Vec<f64>], d: usize) -> (f64, f64) {
        let n = rows.len() as f64;
        let mean = rows.iter().map(|r| r[d]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    #[test]
    fn concat_enforces_order() {
        let a = FeatureVector::new(DescriptorId::Cld, vec![1.0; 12]);
        let b = FeatureVector::new(DescriptorId::Ehd, vec![2.0; 80]);
        let order = [DescriptorId::Cld, DescriptorId::Ehd];
        assert_eq!(concat(&[a.clone(), b.clone()], &order).unwrap().len(), 92);
        assert_eq!(concat(&[a.clone()], &[DescriptorId::Cld]).unwrap(), a.values);
        assert!(matches!(concat(&[b, a], &order), Err(FusionError::OrderMismatch { .. })));
    }

    #[test]
    fn canonical_dims_add_up() {
        let vs: Vec<FeatureVector> = DescriptorId::CANONICAL
            .iter()
            .zip([12, 80, 64, 512])
            .map(|(&d, n)| FeatureVector::new(d, vec![0.0; n]))
            .collect();
        assert_eq!(concat(&vs, &DescriptorId::CANONICAL).unwrap().len(), 668);
    }

    #[test]
    fn zscore_moments_after_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut rows = random_rows(&mut rng, 50, 6, 10.0);
        for r in &mut rows {
            r[2] = 3.5; // constant dimension
        }
        let stats = ZScoreStats::fit(&rows).unwrap();
        let z = stats.apply_all(&rows).unwrap();
        for d in 0..6 {
            let (m, s) = moments(&z, d);
            assert!(m.abs() < 1e-9);
            if d == 2 {
                assert_eq!(s, 0.0);
                assert!(z.iter().all(|r| r[2] == 0.0));
            } else {
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
        assert!(stats.apply(&stats.mean).unwrap().iter().all(|&v| v == 0.0));
        assert!(stats.apply(&[0.0; 3]).is_err());
        assert!(ZScoreStats::fit(&rows[..1]).is_err());
    }

    #[test]
    fn per_dimension_pre_and_post_coincide() {
        // Per-dimension z-scoring commutes with concatenation.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_rows(&mut rng, 30, 3, 1.0);
        let b = random_rows(&mut rng, 30, 2, 100.0);
        let order = [DescriptorId::Synthetic(0), DescriptorId::Synthetic(1)];
        let (_, pre) = fuse_pre_normalized(&order, &[&a, &b], ZScoreMode::PerDimension).unwrap();
        let (_, post) = fuse_post_normalized(&order, &[&a, &b], ZScoreMode::PerDimension).unwrap();
        for (p, q) in pre.iter().zip(&post) {
            for (x, y) in p.iter().zip(q) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        let first_block: Vec<Vec<f64>> = pre.iter().map(|r| r[..3].to_vec()).collect();
        for d in 0..3 {
            assert!(moments(&first_block, d).0.abs() < 1e-9);
        }
    }

    #[test]
    fn per_vector_pre_and_post_differ_when_scales_differ() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let normal = |rng: &mut ChaCha8Rng, n: usize, d: usize, s: f64| -> Vec<Vec<f64>> {
            use rand_distr::{Distribution, StandardNormal};
            (0..n).map(|_| (0..d).map(|_| { let z: f64 = StandardNormal.sample(rng); s * z }).collect()).collect()
        };
        let a = normal(&mut rng, 20, 4, 1.0);
        let b = normal(&mut rng, 20, 4, 100.0);
        let order = [DescriptorId::Synthetic(0), DescriptorId::Synthetic(1)];
        let (_, pre) = fuse_pre_normalized(&order, &[&a, &b], ZScoreMode::PerVector).unwrap();
        let (_, post) = fuse_post_normalized(&order, &[&a, &b], ZScoreMode::PerVector).unwrap();
        let max_diff = pre
            .iter()
            .zip(&post)
            .flat_map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        assert!(max_diff > 0.1, "max diff {max_diff}");
    }

    #[test]
    fn per_vector_pipelines_agree_on_standardized_descriptors() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a: Vec<Vec<f64>> = random_rows(&mut rng, 10, 5, 3.0).iter().map(|r| zscore_vector(r, 1e-12)).collect();
        let b: Vec<Vec<f64>> = random_rows(&mut rng, 10, 7, 50.0).iter().map(|r| zscore_vector(r, 1e-12)).collect();
        let order = [DescriptorId::Cld, DescriptorId::Ehd];
        let (_, pre) = fuse_pre_normalized(&order, &[&a, &b], ZScoreMode::PerVector).unwrap();
        let (_, post) = fuse_post_normalized(&order, &[&a, &b], ZScoreMode::PerVector).unwrap();
        for (p, q) in pre.iter().zip(&post) {
            for (x, y) in p.iter().zip(q) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn transform_vectors_checks_tags() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_rows(&mut rng, 8, 2, 1.0);
        let b = random_rows(&mut rng, 8, 3, 1.0);
        let order = [DescriptorId::Cld, DescriptorId::Ehd];
        let (fitted, rows) = fuse_pre_normalized(&order, &[&a, &b], ZScoreMode::PerDimension).unwrap();
        let sample = vec![FeatureVector::new(DescriptorId::Cld, a[0].clone()), FeatureVector::new(DescriptorId::Ehd, b[0].clone())];
        assert_eq!(fitted.transform_vectors(&sample).unwrap(), rows[0]);
        let swapped = vec![sample[1].clone(), sample[0].clone()];
        assert!(fitted.transform_vectors(&swapped).is_err());
    }

    #[test]
    fn rank_one_data_keeps_one_component() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        for frac in [0.5, 0.95, 1.0] {
            let m = fit_pca(&rows, frac).unwrap();
            assert_eq!(m.k(), 1);
            assert!((m.explained_variance[0] / m.total_variance() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn full_rank_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows = random_rows(&mut rng, 5, 4, 1.0);
        let m = fit_pca(&rows, 1.0).unwrap();
        for r in &rows {
            let back = m.reconstruct(&m.apply(r).unwrap());
            for (a, b) in back.iter().zip(r) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn invalid_fraction() {
        let rows = vec![vec![0.0], vec![1.0]];
        assert!(matches!(fit_pca(&rows, 0.0), Err(FusionError::InvalidFraction(_))));
        assert!(matches!(fit_pca(&rows, 1.5), Err(FusionError::InvalidFraction(_))));
    }

    #[test]
    fn pca_persists() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows = random_rows(&mut rng, 12, 5, 1.0);
        let m = fit_pca(&rows, 0.9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pca.bin");
        m.save(&p).unwrap();
        assert_eq!(PcaModel::load(&p).unwrap(), m);
    }

    fn pca_invariants(rows: &[Vec<f64>]) {
        let m = fit_pca(rows, 1.0).unwrap();
        for (i, a) in m.components.iter().enumerate() {
            for (j, b) in m.components.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-8);
            }
        }
        assert!(m.explained_variance.windows(2).all(|w| w[0] >= w[1]));
        let proj: Vec<Vec<f64>> = rows.iter().map(|r| m.apply(r).unwrap()).collect();
        let n = rows.len() as f64;
        for c in 0..m.k() {
            let var = proj.iter().map(|p| p[c] * p[c]).sum::<f64>() / (n - 1.0);
            assert!((var - m.explained_variance[c]).abs() < 1e-8 * (1.0 + var));
        }
        let d = rows[0].len();
        let total: f64 = (0..d)
            .map(|j| {
                let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
                rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0)
            })
            .sum();
        assert!((m.explained_variance.iter().sum::<f64>() - total).abs() < 1e-6 * (1.0 + total));
    }

    proptest! {
        #[test]
        fn pca_properties_tall(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            pca_invariants(&random_rows(&mut rng, 30, 5, 3.0));
        }

        #[test]
        fn pca_properties_wide(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            pca_invariants(&random_rows(&mut rng, 6, 20, 3.0));
        }

        #[test]
        fn zscore_is_invertible(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = random_rows(&mut rng, 10, 4, 7.0);
            let stats = ZScoreStats::fit(&rows).unwrap();
            for r in &rows {
                let back = stats.invert(&stats.apply(r).unwrap());
                for (a, b) in back.iter().zip(r) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }
}
