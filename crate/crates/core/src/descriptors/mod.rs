//! The four image representations: color layout (CLD), edge histogram (EHD),
//! GLCM texture statistics and the gist spectral descriptor.
//!
//! Every descriptor is a pure function of an [`ImagePlane`] and its
//! configuration, and produces a [`FeatureVector`] whose length depends only on
//! that configuration.

mod cache;
mod cld;
mod ehd;
mod gist;
mod glcm;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::ImagePlane;

pub use cache::{read_file, write_file, CacheHeader, DescriptorCache, CACHE_MAGIC, CACHE_VERSION};
pub use cld::{color_layout, dct2_8x8, idct2_8x8, zigzag_order, CLD_DIM};
pub use ehd::{edge_histogram, EdgeType, EHD_DIM};
pub use gist::{gist, GaborBank, GaborBankConfig};
pub use glcm::{
    co_occurrence, glcm_texture, haralick, quantize, GlcmConfig, HaralickStats,
};

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("image must be square, got {width}x{height}")]
    NotSquare { width: usize, height: usize },
    #[error("image side {side} too small: {reason}")]
    TooSmall { side: usize, reason: String },
    #[error("image side {side} not divisible by block size {block}")]
    NotDivisible { side: usize, block: usize },
    #[error("gist requires a power-of-two side, got {0}")]
    NotPowerOfTwo(usize),
    #[error("invalid descriptor configuration: {0}")]
    InvalidConfig(String),
    #[error("descriptor {descriptor} failed on {sample}: {source}")]
    Sample {
        sample: String,
        descriptor: DescriptorId,
        #[source]
        source: Box<DescriptorError>,
    },
    #[error("failed to load {sample}: {reason}")]
    Load { sample: String, reason: String },
    #[error("descriptor cache {path}: {reason}")]
    Cache { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, DescriptorError>;

/// Identifies which representation produced a vector. `Synthetic(k)` tags the
/// k-th pseudo-descriptor of a generated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DescriptorId {
    Cld,
    Ehd,
    Texture,
    Gist,
    Synthetic(u8),
}

impl DescriptorId {
    /// Fixed concatenation order of the image descriptors.
    pub const CANONICAL: [DescriptorId; 4] = [Self::Cld, Self::Ehd, Self::Texture, Self::Gist];

    pub fn code(self) -> u8 {
        match self {
            Self::Cld => 0,
            Self::Ehd => 1,
            Self::Texture => 2,
            Self::Gist => 3,
            Self::Synthetic(k) => 16u8.saturating_add(k),
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Self::Cld,
            1 => Self::Ehd,
            2 => Self::Texture,
            3 => Self::Gist,
            c if c >= 16 => Self::Synthetic(c - 16),
            _ => return None,
        })
    }
}

impl fmt::Display for DescriptorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Cld => f.write_str("CLD"),
            Self::Ehd => f.write_str("EHD"),
            Self::Texture => f.write_str("TEXTURE"),
            Self::Gist => f.write_str("GIST"),
            Self::Synthetic(k) => write!(f, "SYN{k}"),
        }
    }
}

impl FromStr for DescriptorId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "CLD" => Ok(Self::Cld),
            "EHD" => Ok(Self::Ehd),
            "TEXTURE" | "GLCM" => Ok(Self::Texture),
            "GIST" => Ok(Self::Gist),
            other => other
                .strip_prefix("SYN")
                .and_then(|k| k.parse().ok())
                .map(Self::Synthetic)
                .ok_or_else(|| format!("unknown descriptor `{s}`")),
        }
    }
}

impl Serialize for DescriptorId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DescriptorId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A fixed-length real vector produced by one descriptor for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub descriptor: DescriptorId,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(descriptor: DescriptorId, values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()), "{descriptor} produced non-finite values");
        Self { descriptor, values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Configuration for all four descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescriptorConfig {
    /// Minimum absolute 2x2 filter response for a cell to count as an edge.
    pub ehd_threshold: f64,
    pub glcm: GlcmConfig,
    pub gist: GaborBankConfig,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            ehd_threshold: 0.05,
            glcm: GlcmConfig::default(),
            gist: GaborBankConfig::default(),
        }
    }
}

impl DescriptorConfig {
    /// Output dimension of `id` at the given side length.
    pub fn dim(&self, id: DescriptorId, side: usize) -> Option<usize> {
        match id {
            DescriptorId::Cld => Some(CLD_DIM),
            DescriptorId::Ehd => Some(EHD_DIM),
            DescriptorId::Texture => {
                let blocks = side / self.glcm.block_size.max(1);
                Some(blocks * blocks * 4)
            }
            DescriptorId::Gist => Some(self.gist.dim()),
            DescriptorId::Synthetic(_) => None,
        }
    }

    /// Stable 64-bit hash of the configuration that affects `id`, used to
    /// invalidate caches. Includes the plane side length.
    pub fn hash_for(&self, id: DescriptorId, side: usize) -> u64 {
        let relevant = match id {
            DescriptorId::Cld => serde_json::json!({ "side": side }),
            DescriptorId::Ehd => serde_json::json!({ "side": side, "threshold": self.ehd_threshold }),
            DescriptorId::Texture => serde_json::json!({ "side": side, "glcm": self.glcm }),
            DescriptorId::Gist => serde_json::json!({ "side": side, "gist": self.gist }),
            DescriptorId::Synthetic(k) => serde_json::json!({ "synthetic": k }),
        };
        let digest = Sha256::digest(format!("{id}:{relevant}").as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// Descriptor evaluator with precomputed state (the Gabor bank) for a fixed side.
#[derive(Debug, Clone)]
pub struct Extractor {
    config: DescriptorConfig,
    side: usize,
    bank: Option<GaborBank>,
}

impl Extractor {
    pub fn new(config: DescriptorConfig, side: usize) -> Result<Self> {
        config.glcm.validate()?;
        let bank = if side.is_power_of_two() {
            Some(GaborBank::new(&config.gist, side)?)
        } else {
            None
        };
        Ok(Self { config, side, bank })
    }

    pub fn config(&self) -> &DescriptorConfig {
        &self.config
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn compute(&self, id: DescriptorId, image: &ImagePlane) -> Result<FeatureVector> {
        match id {
            DescriptorId::Cld => color_layout(image),
            DescriptorId::Ehd => edge_histogram(image, self.config.ehd_threshold),
            DescriptorId::Texture => glcm_texture(image, &self.config.glcm),
            DescriptorId::Gist => match &self.bank {
                Some(bank) if bank.side() == image.side() => bank.apply(image),
                _ => gist(image, &self.config.gist),
            },
            DescriptorId::Synthetic(_) => Err(DescriptorError::InvalidConfig(
                "synthetic descriptors are generated, not extracted".into(),
            )),
        }
    }
}

/// Per-sample descriptor vectors, row-aligned with `ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorTable {
    pub ids: Vec<String>,
    pub descriptors: Vec<DescriptorId>,
    /// `columns[d][i]` is descriptor `descriptors[d]` for sample `ids[i]`.
    pub columns: Vec<Vec<Vec<f64>>>,
}

impl DescriptorTable {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// The descriptors of sample `i` as feature vectors, in table order.
    pub fn row(&self, i: usize) -> Vec<FeatureVector> {
        self.descriptors
            .iter()
            .zip(&self.columns)
            .map(|(&d, col)| FeatureVector::new(d, col[i].clone()))
            .collect()
    }

    pub fn column(&self, id: DescriptorId) -> Option<&[Vec<f64>]> {
        self.descriptors
            .iter()
            .position(|&d| d == id)
            .map(|k| self.columns[k].as_slice())
    }
}

/// A descriptor table with a class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTable {
    pub class_names: Vec<String>,
    /// Class index of each row, into `class_names`.
    pub labels: Vec<usize>,
    pub table: DescriptorTable,
}

impl LabeledTable {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rebuilds a table from cache files in `dir`. Rows are the ids present in
    /// every requested descriptor file, in sorted order; the class of an id is
    /// its prefix before the first `/`, and classes are sorted by name.
    pub fn from_cache_dir(dir: &std::path::Path, descriptors: &[DescriptorId]) -> Result<Self> {
        let mut per_descriptor = Vec::with_capacity(descriptors.len());
        for &d in descriptors {
            let path = DescriptorCache::file_path(dir, d);
            let (header, records) = read_file(&path)?;
            if header.descriptor != d {
                return Err(DescriptorError::Cache {
                    path: path.display().to_string(),
                    reason: format!("holds {} vectors, expected {d}", header.descriptor),
                });
            }
            per_descriptor.push(records.into_iter().collect::<std::collections::BTreeMap<_, _>>());
        }
        let first = per_descriptor
            .first()
            .ok_or_else(|| DescriptorError::InvalidConfig("no descriptors requested".into()))?;
        let ids: Vec<String> = first
            .keys()
            .filter(|id| per_descriptor.iter().all(|m| m.contains_key(*id)))
            .cloned()
            .collect();
        if ids.is_empty() {
            return Err(DescriptorError::Cache {
                path: dir.display().to_string(),
                reason: "no records common to all descriptors".into(),
            });
        }
        let class_of = |id: &str| id.split('/').next().unwrap_or("").to_string();
        let mut class_names: Vec<String> = ids.iter().map(|id| class_of(id)).collect();
        class_names.sort();
        class_names.dedup();
        let labels = ids
            .iter()
            .map(|id| class_names.binary_search(&class_of(id)).expect("class listed"))
            .collect();
        let columns = per_descriptor
            .iter_mut()
            .map(|m| ids.iter().map(|id| m.remove(id).expect("id present")).collect())
            .collect();
        Ok(Self {
            class_names,
            labels,
            table: DescriptorTable {
                ids,
                descriptors: descriptors.to_vec(),
                columns,
            },
        })
    }
}

/// Counts of freshly computed versus cache-served vectors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExtractionStats {
    pub computed: usize,
    pub cached: usize,
}

/// Computes `descriptors` for each sample id, loading images lazily through
/// `load`. Vectors already present in `cache` under the current configuration
/// hash are reused; new ones are inserted into it.
pub fn extract_with<L>(
    ids: &[String],
    load: L,
    extractor: &Extractor,
    descriptors: &[DescriptorId],
    mut cache: Option<&mut DescriptorCache>,
) -> Result<(DescriptorTable, ExtractionStats)>
where
    L: Fn(&str) -> std::result::Result<ImagePlane, String> + Sync,
{
    let side = extractor.side();
    if let Some(cache) = cache.as_deref_mut() {
        for &d in descriptors {
            let dim = extractor.config().dim(d, side).unwrap_or(0);
            cache.prepare(d, dim, extractor.config().hash_for(d, side));
        }
    }
    let mut columns: Vec<Vec<Option<Vec<f64>>>> = vec![vec![None; ids.len()]; descriptors.len()];
    let mut stats = ExtractionStats::default();
    if let Some(cache) = cache.as_deref() {
        for (k, &d) in descriptors.iter().enumerate() {
            for (i, id) in ids.iter().enumerate() {
                if let Some(v) = cache.get(d, id) {
                    columns[k][i] = Some(v.to_vec());
                    stats.cached += 1;
                }
            }
        }
    }
    let pending: Vec<usize> = (0..ids.len())
        .filter(|&i| columns.iter().any(|col| col[i].is_none()))
        .collect();
    let computed: Vec<(usize, Vec<(usize, Vec<f64>)>)> = pending
        .par_iter()
        .map(|&i| {
            let image = load(&ids[i]).map_err(|reason| DescriptorError::Load {
                sample: ids[i].clone(),
                reason,
            })?;
            let mut out = Vec::new();
            for (k, &d) in descriptors.iter().enumerate() {
                if columns[k][i].is_none() {
                    let fv = extractor.compute(d, &image).map_err(|e| DescriptorError::Sample {
                        sample: ids[i].clone(),
                        descriptor: d,
                        source: Box::new(e),
                    })?;
                    out.push((k, fv.values));
                }
            }
            Ok((i, out))
        })
        .collect::<Result<_>>()?;
    for (i, vectors) in computed {
        for (k, values) in vectors {
            if let Some(cache) = cache.as_deref_mut() {
                cache.insert(descriptors[k], &ids[i], values.clone());
            }
            columns[k][i] = Some(values);
            stats.computed += 1;
        }
    }
    let columns = columns
        .into_iter()
        .map(|col| col.into_iter().map(|v| v.expect("every vector filled")).collect())
        .collect();
    Ok((
        DescriptorTable {
            ids: ids.to_vec(),
            descriptors: descriptors.to_vec(),
            columns,
        },
        stats,
    ))
}

/// Computes all four image descriptors for already decoded samples.
pub fn extract_all(
    samples: &[crate::dataset::LabeledSample],
    extractor: &Extractor,
    cache: Option<&mut DescriptorCache>,
) -> Result<(DescriptorTable, ExtractionStats)> {
    let ids: Vec<String> = samples.iter().map(|s| s.source_path.clone()).collect();
    let by_id: std::collections::HashMap<&str, &ImagePlane> = samples
        .iter()
        .map(|s| (s.source_path.as_str(), &s.image))
        .collect();
    extract_with(
        &ids,
        |id| Ok(by_id[id].clone()),
        extractor,
        &DescriptorId::CANONICAL,
        cache,
    )
}

pub(crate) fn require_square(image: &ImagePlane) -> Result<usize> {
    if image.width() != image.height() {
        return Err(DescriptorError::NotSquare {
            width: image.width(),
            height: image.height(),
        });
    }
    Ok(image.side())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_ids_round_trip_through_strings_and_codes() {
        for id in [
            DescriptorId::Cld,
            DescriptorId::Ehd,
            DescriptorId::Texture,
            DescriptorId::Gist,
            DescriptorId::Synthetic(3),
        ] {
            assert_eq!(id.to_string().parse::<DescriptorId>().unwrap(), id);
            assert_eq!(DescriptorId::from_code(id.code()), Some(id));
        }
        assert!("HOG".parse::<DescriptorId>().is_err());
    }

    #[test]
    fn config_hash_tracks_relevant_fields_only() {
        let a = DescriptorConfig::default();
        let mut b = a.clone();
        b.ehd_threshold = 0.1;
        assert_ne!(a.hash_for(DescriptorId::Ehd, 256), b.hash_for(DescriptorId::Ehd, 256));
        assert_eq!(a.hash_for(DescriptorId::Gist, 256), b.hash_for(DescriptorId::Gist, 256));
        assert_ne!(a.hash_for(DescriptorId::Cld, 256), a.hash_for(DescriptorId::Cld, 128));
    }

    #[test]
    fn default_dimensions() {
        let c = DescriptorConfig::default();
        assert_eq!(c.dim(DescriptorId::Cld, 256), Some(12));
        assert_eq!(c.dim(DescriptorId::Ehd, 256), Some(80));
        assert_eq!(c.dim(DescriptorId::Texture, 256), Some(64));
        assert_eq!(c.dim(DescriptorId::Gist, 256), Some(512));
    }
}
