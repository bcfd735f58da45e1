//! Corpus ingestion and deterministic train/validation/test splitting.
//!
//! A corpus is a directory with one subdirectory per class. Images are decoded
//! to RGB, converted to full-range BT.601 luma/color-difference planes,
//! center-cropped to a square and bilinearly rescaled to a fixed side length.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default side length of decoded planes.
pub const DEFAULT_SIDE: usize = 256;

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("corpus directory not found: {0}")]
    MissingDirectory(PathBuf),
    #[error("corpus {0} contains no class subdirectories")]
    NoClasses(PathBuf),
    #[error("class `{0}` contains no images")]
    EmptyClass(String),
    #[error("failed to decode {path}: {reason}")]
    Undecodable { path: PathBuf, reason: String },
    #[error("class `{class}` has {available} samples, needs at least {required}")]
    InsufficientSamples {
        class: String,
        available: usize,
        required: usize,
    },
    #[error("invalid image plane: {0}")]
    InvalidPlane(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// Decoded square image: luma plus the two color-difference planes, all in \[0,1\].
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    side: usize,
    luma: Vec<f64>,
    chroma_b: Vec<f64>,
    chroma_r: Vec<f64>,
}

impl ImagePlane {
    /// Builds a plane from three row-major grids. Values are validated to lie in \[0,1\].
    pub fn new(side: usize, luma: Vec<f64>, chroma_b: Vec<f64>, chroma_r: Vec<f64>) -> Result<Self> {
        let n = side * side;
        if side == 0 || luma.len() != n || chroma_b.len() != n || chroma_r.len() != n {
            return Err(DatasetError::InvalidPlane(format!(
                "expected three {side}x{side} grids, got lengths {}/{}/{}",
                luma.len(),
                chroma_b.len(),
                chroma_r.len()
            )));
        }
        let in_range = |v: &[f64]| v.iter().all(|x| (0.0..=1.0).contains(x));
        if !(in_range(&luma) && in_range(&chroma_b) && in_range(&chroma_r)) {
            return Err(DatasetError::InvalidPlane("sample outside [0,1]".into()));
        }
        Ok(Self {
            side,
            luma,
            chroma_b,
            chroma_r,
        })
    }

    /// Grayscale plane with neutral chroma.
    pub fn from_luma(side: usize, luma: Vec<f64>) -> Result<Self> {
        let n = side * side;
        Self::new(side, luma, vec![0.5; n], vec![0.5; n])
    }

    /// Converts interleaved 8-bit RGB, center-cropping to a square and
    /// bilinearly resampling to `side`×`side`.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8], side: usize) -> Result<Self> {
        if width == 0 || height == 0 || rgb.len() != width * height * 3 {
            return Err(DatasetError::InvalidPlane(format!(
                "rgb buffer of {} bytes does not match {width}x{height}",
                rgb.len()
            )));
        }
        if side == 0 {
            return Err(DatasetError::InvalidPlane("side must be positive".into()));
        }
        let n = width * height;
        let mut y = Vec::with_capacity(n);
        let mut cb = Vec::with_capacity(n);
        let mut cr = Vec::with_capacity(n);
        for px in rgb.chunks_exact(3) {
            let (l, b, r) = rgb_to_ycbcr(px[0], px[1], px[2]);
            y.push(l);
            cb.push(b);
            cr.push(r);
        }
        let crop = width.min(height);
        let x0 = (width - crop) / 2;
        let y0 = (height - crop) / 2;
        let resample = |plane: &[f64]| {
            let cropped = crop_square(plane, width, x0, y0, crop);
            if crop == side {
                cropped
            } else {
                resize_bilinear(&cropped, crop, side)
            }
        };
        Ok(Self {
            side,
            luma: resample(&y),
            chroma_b: resample(&cb),
            chroma_r: resample(&cr),
        })
    }

    pub fn width(&self) -> usize {
        self.side
    }

    pub fn height(&self) -> usize {
        self.side
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn luma(&self) -> &[f64] {
        &self.luma
    }

    pub fn chroma_b(&self) -> &[f64] {
        &self.chroma_b
    }

    pub fn chroma_r(&self) -> &[f64] {
        &self.chroma_r
    }
}

/// Full-range BT.601: Y = 0.299R + 0.587G + 0.114B, with Cb/Cr offset by 0.5.
pub fn rgb_to_ycbcr(r: u8, g: u8, b: u8) -> (f64, f64, f64) {
    let (r, g, b) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let cb = 0.5 - 0.168_736 * r - 0.331_264 * g + 0.5 * b;
    let cr = 0.5 + 0.5 * r - 0.418_688 * g - 0.081_312 * b;
    (y.clamp(0.0, 1.0), cb.clamp(0.0, 1.0), cr.clamp(0.0, 1.0))
}

fn crop_square(plane: &[f64], width: usize, x0: usize, y0: usize, crop: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(crop * crop);
    for row in y0..y0 + crop {
        out.extend_from_slice(&plane[row * width + x0..row * width + x0 + crop]);
    }
    out
}

/// Bilinear resampling of a square grid using pixel-center alignment.
pub fn resize_bilinear(src: &[f64], src_side: usize, dst_side: usize) -> Vec<f64> {
    let scale = src_side as f64 / dst_side as f64;
    let max = (src_side - 1) as f64;
    let coord = |d: usize| ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
    let mut out = Vec::with_capacity(dst_side * dst_side);
    for dy in 0..dst_side {
        let sy = coord(dy);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(src_side - 1);
        let fy = sy - y0 as f64;
        for dx in 0..dst_side {
            let sx = coord(dx);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(src_side - 1);
            let fx = sx - x0 as f64;
            let top = src[y0 * src_side + x0] * (1.0 - fx) + src[y0 * src_side + x1] * fx;
            let bottom = src[y1 * src_side + x0] * (1.0 - fx) + src[y1 * src_side + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Decodes a single PNG or JPEG file into an [`ImagePlane`].
pub fn decode_image(path: &Path, side: usize) -> Result<ImagePlane> {
    let img = image::open(path).map_err(|e| DatasetError::Undecodable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    ImagePlane::from_rgb8(w as usize, h as usize, rgb.as_raw(), side)
}

/// A labeled image. `source_path` is relative to the corpus root (`class/file`).
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub image: ImagePlane,
    pub class_id: usize,
    pub source_path: String,
}

/// One listed file in a corpus: relative id (`class/file`), class id, absolute path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub id: String,
    pub class_id: usize,
    pub path: PathBuf,
}

/// Directory listing of a corpus without decoding any pixels.
#[derive(Debug, Clone)]
pub struct CorpusListing {
    pub root: PathBuf,
    pub class_names: Vec<String>,
    pub entries: Vec<CorpusEntry>,
}

impl CorpusListing {
    /// Lists `root/<class>/*.{png,jpg,jpeg}`; classes and files in lexicographic order.
    pub fn scan(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(DatasetError::MissingDirectory(root.to_path_buf()));
        }
        let io = |source| DatasetError::Io {
            path: root.to_path_buf(),
            source,
        };
        let mut class_dirs: Vec<(String, PathBuf)> = fs::read_dir(root)
            .map_err(io)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| (e.file_name().to_string_lossy().into_owned(), e.path()))
            .collect();
        class_dirs.sort();
        if class_dirs.is_empty() {
            return Err(DatasetError::NoClasses(root.to_path_buf()));
        }
        let mut class_names = Vec::with_capacity(class_dirs.len());
        let mut entries = Vec::new();
        for (class_id, (name, dir)) in class_dirs.into_iter().enumerate() {
            let mut files: Vec<(String, PathBuf)> = fs::read_dir(&dir)
                .map_err(|source| DatasetError::Io {
                    path: dir.clone(),
                    source,
                })?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_file() && has_image_extension(p))
                .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), p))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(DatasetError::EmptyClass(name));
            }
            for (file, path) in files {
                entries.push(CorpusEntry {
                    id: format!("{name}/{file}"),
                    class_id,
                    path,
                });
            }
            class_names.push(name);
        }
        Ok(Self {
            root: root.to_path_buf(),
            class_names,
            entries,
        })
    }

    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    /// Per-class sample counts in class order.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for e in &self.entries {
            counts[e.class_id] += 1;
        }
        counts
    }

    /// Fails with the first class holding fewer than `required` files.
    pub fn require_per_class(&self, required: usize) -> Result<()> {
        for (name, &n) in self.class_names.iter().zip(&self.class_counts()) {
            if n < required {
                return Err(DatasetError::InsufficientSamples {
                    class: name.clone(),
                    available: n,
                    required,
                });
            }
        }
        Ok(())
    }
}

fn has_image_extension(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Log and skip files that fail to decode instead of aborting.
    pub skip_undecodable: bool,
    /// Minimum number of samples each class must hold after decoding.
    pub min_per_class: usize,
}

/// Loads and decodes every image of a corpus, in class then filename order.
pub fn load_corpus(root: &Path, side: usize, opts: LoadOptions) -> Result<(Vec<String>, Vec<LabeledSample>)> {
    let listing = CorpusListing::scan(root)?;
    let decoded: Vec<Option<LabeledSample>> = listing
        .entries
        .par_iter()
        .map(|e| match decode_image(&e.path, side) {
            Ok(image) => Ok(Some(LabeledSample {
                image,
                class_id: e.class_id,
                source_path: e.id.clone(),
            })),
            Err(err) if opts.skip_undecodable => {
                log::warn!("skipping {}: {err}", e.path.display());
                Ok(None)
            }
            Err(err) => Err(err),
        })
        .collect::<Result<_>>()?;
    let samples: Vec<LabeledSample> = decoded.into_iter().flatten().collect();
    let mut counts = vec![0usize; listing.class_names.len()];
    for s in &samples {
        counts[s.class_id] += 1;
    }
    for (name, &n) in listing.class_names.iter().zip(&counts) {
        if n == 0 {
            return Err(DatasetError::EmptyClass(name.clone()));
        }
        if n < opts.min_per_class {
            return Err(DatasetError::InsufficientSamples {
                class: name.clone(),
                available: n,
                required: opts.min_per_class,
            });
        }
    }
    Ok((listing.class_names, samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitParams {
    pub seed: u64,
    pub test_per_class: usize,
    pub validation_per_class: usize,
}

impl Default for SplitParams {
    fn default() -> Self {
        Self {
            seed: 0,
            test_per_class: 100,
            validation_per_class: 50,
        }
    }
}

/// Assignment of every sample id to exactly one subset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub test_per_class: usize,
    pub validation_per_class: usize,
    pub assignment: BTreeMap<String, Subset>,
}

impl SplitPlan {
    pub fn subset_of(&self, id: &str) -> Option<Subset> {
        self.assignment.get(id).copied()
    }

    pub fn ids_in(&self, subset: Subset) -> impl Iterator<Item = &str> {
        self.assignment
            .iter()
            .filter(move |(_, s)| **s == subset)
            .map(|(id, _)| id.as_str())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("split plan serializes")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

/// Seeded per-class shuffle; the first `test_per_class` ids of each class go
/// to test, the next `validation_per_class` to validation, the rest to train.
///
/// `items` are `(sample id, class id)` pairs; ids must be unique.
pub fn make_split(items: &[(String, usize)], params: SplitParams) -> Result<SplitPlan> {
    let n_classes = items.iter().map(|(_, c)| c + 1).max().unwrap_or(0);
    let mut by_class: Vec<Vec<&str>> = vec![Vec::new(); n_classes];
    for (id, c) in items {
        by_class[*c].push(id.as_str());
    }
    let required = params.test_per_class + params.validation_per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut assignment = BTreeMap::new();
    for (class_id, ids) in by_class.iter_mut().enumerate() {
        if ids.len() < required {
            return Err(DatasetError::InsufficientSamples {
                class: format!("#{class_id}"),
                available: ids.len(),
                required,
            });
        }
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        for (rank, id) in ids.iter().enumerate() {
            let subset = if rank < params.test_per_class {
                Subset::Test
            } else if rank < required {
                Subset::Validation
            } else {
                Subset::Train
            };
            assignment.insert((*id).to_string(), subset);
        }
    }
    Ok(SplitPlan {
        seed: params.seed,
        test_per_class: params.test_per_class,
        validation_per_class: params.validation_per_class,
        assignment,
    })
}

/// Convenience wrapper over [`make_split`] for decoded samples.
pub fn make_split_samples(samples: &[LabeledSample], params: SplitParams) -> Result<SplitPlan> {
    let items: Vec<(String, usize)> = samples
        .iter()
        .map(|s| (s.source_path.clone(), s.class_id))
        .collect();
    make_split(&items, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn items(per_class: &[usize]) -> Vec<(String, usize)> {
        per_class
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| (0..n).map(move |i| (format!("c{c}/img{i:04}.png"), c)))
            .collect()
    }

    #[test]
    fn gray_pixel_converts_to_neutral_chroma() {
        let (y, cb, cr) = rgb_to_ycbcr(128, 128, 128);
        assert!((y - 128.0 / 255.0).abs() < 1e-12);
        assert!((y - 0.502).abs() < 1e-3);
        assert!((cb - 0.5).abs() < 1e-9);
        assert!((cr - 0.5).abs() < 1e-9);
    }

    #[test]
    fn primaries_match_bt601_matrix() {
        let (y, cb, cr) = rgb_to_ycbcr(255, 0, 0);
        assert!((y - 0.299).abs() < 1e-12);
        assert!((cb - (0.5 - 0.168736)).abs() < 1e-12);
        assert!((cr - 1.0).abs() < 1e-12);
        let (_, cb, _) = rgb_to_ycbcr(0, 0, 255);
        assert!((cb - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_square_input_is_center_cropped() {
        // 4x2 image: left and right columns black, middle two white.
        let mut rgb = vec![0u8; 4 * 2 * 3];
        for row in 0..2 {
            for col in 1..3 {
                let i = (row * 4 + col) * 3;
                rgb[i..i + 3].copy_from_slice(&[255, 255, 255]);
            }
        }
        let plane = ImagePlane::from_rgb8(4, 2, &rgb, 2).unwrap();
        assert!(plane.luma().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn resize_of_constant_is_constant() {
        let src = vec![0.25; 16];
        let out = resize_bilinear(&src, 4, 7);
        assert_eq!(out.len(), 49);
        assert!(out.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn split_counts_follow_partition_arithmetic() {
        let all = items(&[300, 300]);
        let plan = make_split(
            &all,
            SplitParams {
                seed: 7,
                test_per_class: 100,
                validation_per_class: 50,
            },
        )
        .unwrap();
        let count = |s| plan.ids_in(s).count();
        assert_eq!(count(Subset::Test), 200);
        assert_eq!(count(Subset::Validation), 100);
        assert_eq!(count(Subset::Train), 300);
        for c in 0..2 {
            let train = plan
                .ids_in(Subset::Train)
                .filter(|id| id.starts_with(&format!("c{c}/")))
                .count();
            assert_eq!(train, 150);
        }
    }

    #[test]
    fn split_is_seed_deterministic() {
        let all = items(&[40, 55]);
        let p = SplitParams {
            seed: 3,
            test_per_class: 10,
            validation_per_class: 5,
        };
        let a = make_split(&all, p).unwrap();
        let b = make_split(&all, p).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let c = make_split(&all, SplitParams { seed: 4, ..p }).unwrap();
        assert_ne!(a.assignment, c.assignment);
    }

    #[test]
    fn zero_validation_gives_two_way_split() {
        let all = items(&[20, 20]);
        let plan = make_split(
            &all,
            SplitParams {
                seed: 0,
                test_per_class: 5,
                validation_per_class: 0,
            },
        )
        .unwrap();
        assert_eq!(plan.ids_in(Subset::Validation).count(), 0);
        assert_eq!(plan.ids_in(Subset::Train).count(), 30);
    }

    #[test]
    fn insufficient_class_is_rejected() {
        let all = items(&[20, 9]);
        let err = make_split(
            &all,
            SplitParams {
                seed: 0,
                test_per_class: 5,
                validation_per_class: 5,
            },
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::InsufficientSamples { available: 9, .. }));
    }

    #[test]
    fn split_plan_json_round_trips() {
        let plan = make_split(&items(&[6, 6]), SplitParams { seed: 1, test_per_class: 2, validation_per_class: 1 }).unwrap();
        let json = plan.to_json();
        assert!(json.contains("\"seed\":1"));
        assert!(json.contains("\"assignment\""));
        assert_eq!(SplitPlan::from_json(&json).unwrap(), plan);
    }

    proptest! {
        #[test]
        fn split_partitions_are_disjoint_and_exhaustive(
            counts in proptest::collection::vec(4usize..30, 1..5),
            seed in any::<u64>(),
            test in 0usize..3,
            val in 0usize..3,
        ) {
            let all = items(&counts);
            let plan = make_split(&all, SplitParams { seed, test_per_class: test, validation_per_class: val }).unwrap();
            prop_assert_eq!(plan.assignment.len(), all.len());
            for (id, c) in &all {
                prop_assert!(plan.assignment.contains_key(id));
                let _ = c;
            }
            for c in 0..counts.len() {
                let prefix = format!("c{c}/");
                let n_test = plan.ids_in(Subset::Test).filter(|id| id.starts_with(&prefix)).count();
                let n_val = plan.ids_in(Subset::Validation).filter(|id| id.starts_with(&prefix)).count();
                prop_assert_eq!(n_test, test);
                prop_assert_eq!(n_val, val);
            }
        }

        #[test]
        fn decoded_planes_stay_in_unit_range(
            w in 1usize..12,
            h in 1usize..12,
            side in 1usize..9,
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rgb: Vec<u8> = (0..w * h * 3).map(|_| rng.random()).collect();
            let plane = ImagePlane::from_rgb8(w, h, &rgb, side).unwrap();
            for grid in [plane.luma(), plane.chroma_b(), plane.chroma_r()] {
                prop_assert_eq!(grid.len(), side * side);
                prop_assert!(grid.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
