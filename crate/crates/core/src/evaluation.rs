//! The benchmark protocol: for each class pair and seed, split the samples,
//! train feature-level fusion classifiers and per-descriptor classifiers,
//! fuse the latter, and score everything on the held-out test split.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, decode_image, make_split, CorpusListing, SplitParams, Subset};
use crate::decision_fusion::{
    self, bayes_average, build_belief, estimate_confusion, majority_vote, ConfusionMatrix, Decision, PriorMode,
};
use crate::descriptors::{
    self, extract_with, DescriptorCache, DescriptorConfig, DescriptorId, DescriptorTable, ExtractionStats, Extractor,
    LabeledTable,
};
use crate::feature_fusion::{self, FittedFusion, FusionStrategy, ZScoreMode};
use crate::svm::{self, stratified_folds, CalibratedClassifier, TrainParams};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("class `{0}` is not present in the data")]
    UnknownClass(String),
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Descriptor(#[from] descriptors::DescriptorError),
    #[error(transparent)]
    Svm(#[from] svm::SvmError),
    #[error(transparent)]
    Fusion(#[from] feature_fusion::FusionError),
    #[error(transparent)]
    DecisionFusion(#[from] decision_fusion::DecisionFusionError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("prediction and truth lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("accuracy of an empty prediction set")]
    Empty,
}

pub type Result<T> = std::result::Result<T, EvaluationError>;

/// A scored method. The first three are feature-level, the next three
/// classifier-level; `Single` is the best individual descriptor (chosen on
/// confusion-estimation data).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pre,
    Post,
    Pca,
    Mv,
    Ba,
    Bbi,
    Single,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Self::Pre,
        Self::Post,
        Self::Pca,
        Self::Mv,
        Self::Ba,
        Self::Bbi,
        Self::Single,
    ];
    pub const FEATURE_LEVEL: [Method; 3] = [Self::Pre, Self::Post, Self::Pca];
    pub const CLASSIFIER_LEVEL: [Method; 3] = [Self::Mv, Self::Ba, Self::Bbi];

    pub fn key(self) -> &'static str {
        match self {
            Self::Pre => "pre",
            Self::Post => "post",
            Self::Pca => "pca",
            Self::Mv => "mv",
            Self::Ba => "ba",
            Self::Bbi => "bbi",
            Self::Single => "single",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Self::Pre => "Pre-normalization",
            Self::Post => "Post-normalization",
            Self::Pca => "PCA",
            Self::Mv => "Majority voting",
            Self::Ba => "Bayes average",
            Self::Bbi => "Bayes belief integration",
            Self::Single => "Best single descriptor",
        }
    }

    pub fn is_feature_level(self) -> bool {
        Self::FEATURE_LEVEL.contains(&self)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.key().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown method `{s}` (expected one of pre, post, pca, mv, ba, bbi, single)"))
    }
}

/// Parses a comma-separated method list such as `bbi,pca`.
pub fn parse_methods(list: &str) -> std::result::Result<Vec<Method>, String> {
    let mut out: Vec<Method> = list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect::<std::result::Result<_, _>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

fn default_pairs() -> Vec<(String, String)> {
    [
        ("street", "insidecity"),
        ("tallbuilding", "street"),
        ("mountain", "tallbuilding"),
        ("mountain", "insidecity"),
    ]
    .iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `(a, b)` class pairs; `a` is the positive class.
    pub class_pairs: Vec<(String, String)>,
    pub descriptors: Vec<DescriptorId>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub test_per_class: usize,
    /// Reserve for confusion-matrix estimation; 0 switches to out-of-fold estimates on train.
    pub validation_per_class: usize,
    /// Per-class subsample taken (per seed) before splitting.
    pub max_per_class: Option<usize>,
    pub svm: TrainParams,
    pub zscore_mode: ZScoreMode,
    pub retained_fraction: f64,
    pub pca_pre_zscore: bool,
    /// Voting threshold fraction.
    pub alpha: f64,
    /// Confusion smoothing.
    pub lambda: f64,
    pub priors: PriorMode,
    pub belief_threshold: f64,
    pub reject_band: f64,
    /// Folds for out-of-fold confusion estimation when `validation_per_class` is 0.
    pub confusion_folds: usize,
    pub image_side: usize,
    pub descriptor_config: DescriptorConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            class_pairs: default_pairs(),
            descriptors: DescriptorId::CANONICAL.to_vec(),
            methods: Method::ALL.to_vec(),
            seeds: vec![1, 2, 3],
            test_per_class: 100,
            validation_per_class: 50,
            max_per_class: None,
            svm: TrainParams::default(),
            zscore_mode: ZScoreMode::PerDimension,
            retained_fraction: 0.95,
            pca_pre_zscore: false,
            alpha: 0.5,
            lambda: 1.0,
            priors: PriorMode::Pooled,
            belief_threshold: 0.0,
            reject_band: 0.0,
            confusion_folds: 3,
            image_side: 256,
            descriptor_config: DescriptorConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| EvaluationError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Shape checks that do not need the data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EvaluationError::Config(m));
        if self.class_pairs.is_empty() {
            return bad("no class pairs".into());
        }
        if let Some((a, _)) = self.class_pairs.iter().find(|(a, b)| a == b) {
            return bad(format!("pair ({a}, {a}) repeats a class"));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.descriptors.is_empty() {
            return bad("no descriptors".into());
        }
        if self.methods.is_empty() {
            return bad("no methods".into());
        }
        if self.test_per_class == 0 {
            return bad("test_per_class must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda {} is negative", self.lambda));
        }
        if !(self.retained_fraction > 0.0 && self.retained_fraction <= 1.0) {
            return bad(format!("retained_fraction {} outside (0, 1]", self.retained_fraction));
        }
        if self.reject_band < 0.0 || self.belief_threshold < 0.0 {
            return bad("reject_band and belief_threshold must be non-negative".into());
        }
        if self.validation_per_class == 0 && self.confusion_folds < 2 {
            return bad("confusion_folds must be at least 2 without a validation split".into());
        }
        if let Some(m) = self.max_per_class {
            if m < self.test_per_class + self.validation_per_class + 2 {
                return bad(format!("max_per_class {m} leaves fewer than 2 training samples"));
            }
        }
        Ok(())
    }

    pub fn pair_name(a: &str, b: &str) -> String {
        format!("{a}-{b}")
    }
}

/// Fraction of predictions equal to the truth; rejections never match.
pub fn accuracy(predictions: &[Decision], truths: &[usize]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(EvaluationError::LengthMismatch(predictions.len(), truths.len()));
    }
    if predictions.is_empty() {
        return Err(EvaluationError::Empty);
    }
    let correct = predictions
        .iter()
        .zip(truths)
        .filter(|(p, &t)| **p == Decision::Class(t))
        .count();
    Ok(correct as f64 / truths.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedConfusion {
    pub descriptor: DescriptorId,
    pub matrix: ConfusionMatrix,
}

/// Sample counts per subset for one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// Results for one (pair, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub pair: String,
    pub seed: u64,
    pub accuracy: BTreeMap<Method, f64>,
    /// Test accuracy of each descriptor's own classifier.
    pub individual: BTreeMap<DescriptorId, f64>,
    /// Per-descriptor confusion matrices on the estimation data.
    pub confusions: Vec<NamedConfusion>,
    pub pca_components: Option<usize>,
    /// Descriptor selected for `single`.
    pub single_descriptor: Option<DescriptorId>,
    pub sizes: SplitSizes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub pair: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub pair: String,
    pub method: Method,
    pub mean: f64,
    /// Sample standard deviation over seeds (0 for a single seed).
    pub stddev: f64,
    pub seeds: usize,
    /// Published single-split accuracy for this pair and method, when known.
    pub reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub class_names: Vec<String>,
    pub cells: Vec<CellResult>,
    pub summary: Vec<SummaryRow>,
    pub failures: Vec<CellFailure>,
    pub complete: bool,
}

/// Published single-split accuracies for the four default pairs.
pub fn reference_accuracy(a: &str, b: &str, method: Method) -> Option<f64> {
    let row = match (a, b) {
        ("street", "insidecity") => [0.55, 0.53, 0.58, 0.62, 0.66, 0.66],
        ("tallbuilding", "street") => [0.69, 0.66, 0.71, 0.75, 0.78, 0.80],
        ("mountain", "tallbuilding") => [0.66, 0.69, 0.70, 0.77, 0.81, 0.83],
        ("mountain", "insidecity") => [0.74, 0.75, 0.77, 0.83, 0.88, 0.88],
        _ => return None,
    };
    Method::ALL[..6].iter().position(|&m| m == method).map(|i| row[i])
}

/// Deterministic per-class subsample of at most `max` ids.
fn subsample(mut rows: Vec<usize>, ids: &[String], max: Option<usize>, seed: u64, class: usize) -> Vec<usize> {
    let Some(max) = max else { return rows };
    if rows.len() <= max {
        return rows;
    }
    rows.sort_by(|&x, &y| ids[x].cmp(&ids[y]));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1 << 32) | class as u64);
    rows.shuffle(&mut rng);
    rows.truncate(max);
    rows.sort_unstable();
    rows
}

fn rows_of(data: &LabeledTable, class: usize) -> Vec<usize> {
    (0..data.len()).filter(|&i| data.labels[i] == class).collect()
}

fn gather(column: &[Vec<f64>], rows: &[usize]) -> Vec<Vec<f64>> {
    rows.iter().map(|&i| column[i].clone()).collect()
}

fn signs(local: &[usize]) -> Vec<f64> {
    local.iter().map(|&c| if c == 0 { 1.0 } else { -1.0 }).collect()
}

fn predict_all(clf: &CalibratedClassifier, rows: &[Vec<f64>], band: f64) -> Result<(Vec<Decision>, Vec<[f64; 2]>)> {
    let mut decisions = Vec::with_capacity(rows.len());
    let mut posteriors = Vec::with_capacity(rows.len());
    for x in rows {
        let p = clf.posterior(x)?;
        decisions.push(svm::decide(p, band).to_decision());
        posteriors.push(p);
    }
    Ok((decisions, posteriors))
}

struct CellData<'a> {
    train: Vec<usize>,
    validation: Vec<usize>,
    test: Vec<usize>,
    /// local class (0 = a, 1 = b) by global row
    local: HashMap<usize, usize>,
    data: &'a LabeledTable,
}

impl CellData<'_> {
    fn truths(&self, rows: &[usize]) -> Vec<usize> {
        rows.iter().map(|r| self.local[r]).collect()
    }

    fn view(&self, d: usize, rows: &[usize]) -> Vec<Vec<f64>> {
        gather(&self.data.table.columns[d], rows)
    }
}

fn split_cell<'a>(config: &ExperimentConfig, data: &'a LabeledTable, a: usize, b: usize, seed: u64) -> Result<CellData<'a>> {
    let ids = &data.table.ids;
    let mut local = HashMap::new();
    let mut items = Vec::new();
    for (l, class) in [a, b].into_iter().enumerate() {
        for r in subsample(rows_of(data, class), ids, config.max_per_class, seed, class) {
            local.insert(r, l);
            items.push((ids[r].clone(), l));
        }
    }
    let plan = make_split(
        &items,
        SplitParams {
            seed,
            test_per_class: config.test_per_class,
            validation_per_class: config.validation_per_class,
        },
    )?;
    let mut rows: Vec<usize> = local.keys().copied().collect();
    rows.sort_unstable();
    let pick = |s: Subset| -> Vec<usize> {
        rows.iter().copied().filter(|&r| plan.subset_of(&ids[r]) == Some(s)).collect()
    };
    let cell = CellData {
        train: pick(Subset::Train),
        validation: pick(Subset::Validation),
        test: pick(Subset::Test),
        local,
        data,
    };
    for l in 0..2 {
        if !cell.train.iter().any(|r| cell.local[r] == l) {
            let name = &data.class_names[[a, b][l]];
            return Err(EvaluationError::Dataset(dataset::DatasetError::InsufficientSamples {
                class: name.clone(),
                available: rows_of(data, [a, b][l]).len(),
                required: config.test_per_class + config.validation_per_class + 1,
            }));
        }
    }
    Ok(cell)
}

fn as_refs(v: &[Vec<Vec<f64>>]) -> Vec<&[Vec<f64>]> {
    v.iter().map(Vec::as_slice).collect()
}

fn feature_arm(config: &ExperimentConfig, cell: &CellData, method: Method, params: &TrainParams) -> Result<(f64, Option<usize>)> {
    let strategy = match method {
        Method::Pre => FusionStrategy::PreNormalized { mode: config.zscore_mode },
        Method::Post => FusionStrategy::PostNormalized { mode: config.zscore_mode },
        Method::Pca => FusionStrategy::Pca {
            retained_fraction: config.retained_fraction,
            pre_zscore: config.pca_pre_zscore,
        },
        _ => unreachable!("not a feature-level method"),
    };
    let dims: Vec<usize> = (0..config.descriptors.len()).collect();
    let train_views: Vec<Vec<Vec<f64>>> = dims.iter().map(|&d| cell.view(d, &cell.train)).collect();
    let test_views: Vec<Vec<Vec<f64>>> = dims.iter().map(|&d| cell.view(d, &cell.test)).collect();
    let fused = FittedFusion::fit(strategy, &config.descriptors, &as_refs(&train_views))?;
    let x_train = fused.transform_all(&as_refs(&train_views))?;
    let x_test = fused.transform_all(&as_refs(&test_views))?;
    let clf = svm::train(&x_train, &signs(&cell.truths(&cell.train)), params)?;
    let (pred, _) = predict_all(&clf, &x_test, config.reject_band)?;
    let k = matches!(fused, FittedFusion::Pca { .. }).then(|| fused.output_dim());
    Ok((accuracy(&pred, &cell.truths(&cell.test))?, k))
}

struct DescriptorOutcome {
    confusion: ConfusionMatrix,
    test_decisions: Vec<Decision>,
    test_posteriors: Vec<[f64; 2]>,
}

fn descriptor_arm(config: &ExperimentConfig, cell: &CellData, d: usize, params: &TrainParams) -> Result<DescriptorOutcome> {
    let x_train = cell.view(d, &cell.train);
    let y_train = signs(&cell.truths(&cell.train));
    let clf = svm::train(&x_train, &y_train, params)?;
    let (test_decisions, test_posteriors) = predict_all(&clf, &cell.view(d, &cell.test), config.reject_band)?;
    let confusion = if cell.validation.is_empty() {
        // out-of-fold decisions on the training split
        let folds = stratified_folds(&y_train, config.confusion_folds, params.seed ^ 0xC0F);
        let mut decisions = vec![Decision::Reject; x_train.len()];
        for fold in 0..config.confusion_folds {
            let (inner, held): (Vec<usize>, Vec<usize>) = (0..x_train.len()).partition(|&i| folds[i] != fold);
            let sub = svm::train(&gather(&x_train, &inner), &inner.iter().map(|&i| y_train[i]).collect::<Vec<_>>(), params)?;
            let (pred, _) = predict_all(&sub, &gather(&x_train, &held), config.reject_band)?;
            for (i, p) in held.into_iter().zip(pred) {
                decisions[i] = p;
            }
        }
        estimate_confusion(&decisions, &cell.truths(&cell.train), 2)?
    } else {
        let (pred, _) = predict_all(&clf, &cell.view(d, &cell.validation), config.reject_band)?;
        estimate_confusion(&pred, &cell.truths(&cell.validation), 2)?
    };
    Ok(DescriptorOutcome {
        confusion,
        test_decisions,
        test_posteriors,
    })
}

fn run_cell(config: &ExperimentConfig, data: &LabeledTable, a: usize, b: usize, seed: u64) -> Result<CellResult> {
    let cell = split_cell(config, data, a, b, seed)?;
    let params = TrainParams { seed, ..config.svm };
    let truths = cell.truths(&cell.test);
    let mut result = CellResult {
        pair: ExperimentConfig::pair_name(&data.class_names[a], &data.class_names[b]),
        seed,
        accuracy: BTreeMap::new(),
        individual: BTreeMap::new(),
        confusions: Vec::new(),
        pca_components: None,
        single_descriptor: None,
        sizes: SplitSizes {
            train: cell.train.len(),
            validation: cell.validation.len(),
            test: cell.test.len(),
        },
    };

    let feature_methods: Vec<Method> = config.methods.iter().copied().filter(|m| m.is_feature_level()).collect();
    let feature: Vec<(Method, (f64, Option<usize>))> = feature_methods
        .par_iter()
        .map(|&m| feature_arm(config, &cell, m, &params).map(|r| (m, r)))
        .collect::<Result<_>>()?;
    for (m, (acc, k)) in feature {
        result.accuracy.insert(m, acc);
        if k.is_some() {
            result.pca_components = k;
        }
    }

    if config.methods.iter().any(|m| !m.is_feature_level()) {
        let outcomes: Vec<DescriptorOutcome> = (0..config.descriptors.len())
            .into_par_iter()
            .map(|d| descriptor_arm(config, &cell, d, &params))
            .collect::<Result<_>>()?;
        let confusions: Vec<ConfusionMatrix> = outcomes.iter().map(|o| o.confusion.clone()).collect();
        let belief = build_belief(&confusions, config.lambda, config.priors)?;
        let (mut mv, mut ba, mut bbi) = (Vec::new(), Vec::new(), Vec::new());
        for t in 0..truths.len() {
            let d: Vec<Decision> = outcomes.iter().map(|o| o.test_decisions[t]).collect();
            let p: Vec<Vec<f64>> = outcomes.iter().map(|o| o.test_posteriors[t].to_vec()).collect();
            mv.push(majority_vote(&d, 2, config.alpha)?);
            ba.push(Decision::Class(bayes_average(&p)?.1));
            bbi.push(belief.integrate(&d, config.belief_threshold)?.decision);
        }
        for (m, pred) in [(Method::Mv, &mv), (Method::Ba, &ba), (Method::Bbi, &bbi)] {
            if config.methods.contains(&m) {
                result.accuracy.insert(m, accuracy(pred, &truths)?);
            }
        }
        let mut best: Option<(usize, f64)> = None;
        for (d, o) in outcomes.iter().enumerate() {
            let id = config.descriptors[d];
            result.individual.insert(id, accuracy(&o.test_decisions, &truths)?);
            let est = o.confusion.accuracy();
            if best.is_none_or(|(_, b)| est > b) {
                best = Some((d, est));
            }
            result.confusions.push(NamedConfusion {
                descriptor: id,
                matrix: o.confusion.clone(),
            });
        }
        if config.methods.contains(&Method::Single) {
            let (d, _) = best.expect("at least one descriptor");
            result.single_descriptor = Some(config.descriptors[d]);
            result.accuracy.insert(Method::Single, result.individual[&config.descriptors[d]]);
        }
    }
    Ok(result)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Runs every (pair, seed) cell on an extracted table. Columns of `data.table`
/// must follow `config.descriptors`. Failing cells are recorded and mark the
/// report incomplete.
pub fn run_on_table(config: &ExperimentConfig, data: &LabeledTable) -> Result<ExperimentReport> {
    config.validate()?;
    if data.table.descriptors != config.descriptors {
        return Err(EvaluationError::Config(format!(
            "table holds {:?}, config asks for {:?}",
            data.table.descriptors, config.descriptors
        )));
    }
    let class_index = |name: &str| {
        data.class_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| EvaluationError::UnknownClass(name.to_string()))
    };
    let mut jobs = Vec::new();
    for (a, b) in &config.class_pairs {
        let (ia, ib) = (class_index(a)?, class_index(b)?);
        for &seed in &config.seeds {
            jobs.push((ia, ib, seed));
        }
    }
    let outcomes: Vec<std::result::Result<CellResult, CellFailure>> = jobs
        .par_iter()
        .map(|&(a, b, seed)| {
            run_cell(config, data, a, b, seed).map_err(|e| CellFailure {
                pair: ExperimentConfig::pair_name(&data.class_names[a], &data.class_names[b]),
                seed,
                error: e.to_string(),
            })
        })
        .collect();
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(c) => cells.push(c),
            Err(f) => {
                log::error!("cell {} seed {} failed: {}", f.pair, f.seed, f.error);
                failures.push(f);
            }
        }
    }
    let mut summary = Vec::new();
    for (a, b) in &config.class_pairs {
        let pair = ExperimentConfig::pair_name(a, b);
        for &m in Method::ALL.iter().filter(|m| config.methods.contains(m)) {
            let values: Vec<f64> = cells
                .iter()
                .filter(|c| c.pair == pair)
                .filter_map(|c| c.accuracy.get(&m).copied())
                .collect();
            if values.is_empty() {
                continue;
            }
            let (mean, stddev) = mean_std(&values);
            summary.push(SummaryRow {
                pair: pair.clone(),
                method: m,
                mean,
                stddev,
                seeds: values.len(),
                reference: reference_accuracy(a, b, m),
            });
        }
    }
    Ok(ExperimentReport {
        config: config.clone(),
        class_names: data.class_names.clone(),
        complete: failures.is_empty(),
        cells,
        summary,
        failures,
    })
}

/// Lists the corpus, extracts the configured descriptors for every sample a
/// cell can use (through the cache when given), and runs the protocol.
pub fn run_on_corpus(
    config: &ExperimentConfig,
    corpus: &Path,
    cache: Option<&mut DescriptorCache>,
) -> Result<(ExperimentReport, ExtractionStats)> {
    config.validate()?;
    let (table, stats) = extract_corpus(config, corpus, cache)?;
    Ok((run_on_table(config, &table)?, stats))
}

/// Extraction step of [`run_on_corpus`]: only classes named in the pairs, and
/// with `max_per_class` only the union of the per-seed subsamples.
pub fn extract_corpus(
    config: &ExperimentConfig,
    corpus: &Path,
    mut cache: Option<&mut DescriptorCache>,
) -> Result<(LabeledTable, ExtractionStats)> {
    let listing = CorpusListing::scan(corpus)?;
    let mut needed: Vec<usize> = Vec::new();
    for (a, b) in &config.class_pairs {
        for name in [a, b] {
            let id = listing.class_id(name).ok_or_else(|| EvaluationError::UnknownClass(name.clone()))?;
            if !needed.contains(&id) {
                needed.push(id);
            }
        }
    }
    needed.sort_unstable();
    let ids: Vec<String> = listing.entries.iter().map(|e| e.id.clone()).collect();
    let mut keep = vec![config.max_per_class.is_none(); ids.len()];
    for &class in &needed {
        let rows: Vec<usize> = (0..ids.len()).filter(|&i| listing.entries[i].class_id == class).collect();
        for &seed in &config.seeds {
            for r in subsample(rows.clone(), &ids, config.max_per_class, seed, class) {
                keep[r] = true;
            }
        }
    }
    let entries: Vec<_> = listing
        .entries
        .iter()
        .enumerate()
        .filter(|(i, e)| keep[*i] && needed.contains(&e.class_id))
        .map(|(_, e)| e)
        .collect();
    let extractor = Extractor::new(config.descriptor_config.clone(), config.image_side)?;
    let paths: HashMap<&str, &Path> = entries.iter().map(|e| (e.id.as_str(), e.path.as_path())).collect();
    let sample_ids: Vec<String> = entries.iter().map(|e| e.id.clone()).collect();
    let (table, stats) = extract_with(
        &sample_ids,
        |id| decode_image(paths[id], config.image_side).map_err(|e| e.to_string()),
        &extractor,
        &config.descriptors,
        cache.as_deref_mut(),
    )?;
    if let Some(c) = cache {
        c.flush()?;
    }
    Ok((
        LabeledTable {
            class_names: listing.class_names.clone(),
            labels: entries.iter().map(|e| e.class_id).collect(),
            table,
        },
        stats,
    ))
}

/// Report file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
    Csv,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [Self::Json, Self::Markdown, Self::Csv];

    pub fn extension(self) -> &'static str {
        match self {
            Self::Json => "json",
            Self::Markdown => "md",
            Self::Csv => "csv",
        }
    }
}

/// One raw value as stored in the CSV report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRecord {
    pub pair: String,
    pub method: Method,
    pub seed: u64,
    pub accuracy: f64,
}

impl ExperimentReport {
    pub fn records(&self) -> Vec<CsvRecord> {
        self.cells
            .iter()
            .flat_map(|c| {
                c.accuracy.iter().map(|(&method, &accuracy)| CsvRecord {
                    pair: c.pair.clone(),
                    method,
                    seed: c.seed,
                    accuracy,
                })
            })
            .collect()
    }

    pub fn mean(&self, pair: &str, method: Method) -> Option<f64> {
        self.summary.iter().find(|r| r.pair == pair && r.method == method).map(|r| r.mean)
    }

    /// Mean over all pairs of the per-pair means.
    pub fn overall_mean(&self, method: Method) -> Option<f64> {
        let v: Vec<f64> = self.summary.iter().filter(|r| r.method == method).map(|r| r.mean).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn methods(&self) -> Vec<Method> {
        Method::ALL.into_iter().filter(|m| self.config.methods.contains(m)).collect()
    }

    pub fn pairs(&self) -> Vec<String> {
        self.config.class_pairs.iter().map(|(a, b)| ExperimentConfig::pair_name(a, b)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in self.records() {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| EvaluationError::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn to_markdown(&self) -> String {
        let methods = self.methods();
        let mut out = String::from("# Fusion benchmark\n\n");
        if !self.complete {
            out.push_str("**Incomplete run:** some cells failed (listed at the end).\n\n");
        }
        out.push_str(&format!(
            "Accuracy on the test split, mean ± stddev over {} seed(s). Values in brackets are published single-split references.\n\n",
            self.config.seeds.len()
        ));
        out.push_str("| Pair |");
        for m in &methods {
            out.push_str(&format!(" {} |", m.title()));
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(methods.len()));
        out.push('\n');
        for pair in self.pairs() {
            out.push_str(&format!("| {pair} |"));
            for &m in &methods {
                match self.summary.iter().find(|r| r.pair == pair && r.method == m) {
                    Some(r) => {
                        out.push_str(&format!(" {:.3} ± {:.3}", r.mean, r.stddev));
                        if let Some(p) = r.reference {
                            out.push_str(&format!(" [{p:.2}]"));
                        }
                        out.push_str(" |");
                    }
                    None => out.push_str(" – |"),
                }
            }
            out.push('\n');
        }
        if self.cells.iter().any(|c| !c.individual.is_empty()) {
            out.push_str("\n## Individual descriptors (extension)\n\n| Pair |");
            for d in &self.config.descriptors {
                out.push_str(&format!(" {d} |"));
            }
            out.push_str("\n|---|");
            out.push_str(&"---|".repeat(self.config.descriptors.len()));
            out.push('\n');
            for pair in self.pairs() {
                out.push_str(&format!("| {pair} |"));
                for d in &self.config.descriptors {
                    let v: Vec<f64> = self
                        .cells
                        .iter()
                        .filter(|c| c.pair == pair)
                        .filter_map(|c| c.individual.get(d).copied())
                        .collect();
                    if v.is_empty() {
                        out.push_str(" – |");
                    } else {
                        let (m, s) = mean_std(&v);
                        out.push_str(&format!(" {m:.3} ± {s:.3} |"));
                    }
                }
                out.push('\n');
            }
        }
        out.push_str("\n## Per-seed values\n\n| Pair | Seed |");
        for m in &methods {
            out.push_str(&format!(" {m} |"));
        }
        out.push_str("\n|---|---|");
        out.push_str(&"---|".repeat(methods.len()));
        out.push('\n');
        for c in &self.cells {
            out.push_str(&format!("| {} | {} |", c.pair, c.seed));
            for m in &methods {
                match c.accuracy.get(m) {
                    Some(v) => out.push_str(&format!(" {v} |")),
                    None => out.push_str(" – |"),
                }
            }
            out.push('\n');
        }
        if !self.failures.is_empty() {
            out.push_str("\n## Failed cells\n\n");
            for f in &self.failures {
                out.push_str(&format!("- {} seed {}: {}\n", f.pair, f.seed, f.error));
            }
        }
        out.push_str("\n## Configuration\n\n```json\n");
        out.push_str(&self.config.to_json());
        out.push_str("\n```\n");
        out
    }

    /// Writes `report.<ext>` into `dir`.
    pub fn emit(&self, dir: &Path, format: ReportFormat) -> Result<std::path::PathBuf> {
        let io = |path: &Path, source| EvaluationError::Io {
            path: path.display().to_string(),
            source,
        };
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let path = dir.join(format!("report.{}", format.extension()));
        let body = match format {
            ReportFormat::Json => self.to_json(),
            ReportFormat::Markdown => self.to_markdown(),
            ReportFormat::Csv => self.to_csv()?,
        };
        fs::write(&path, body).map_err(|e| io(&path, e))?;
        Ok(path)
    }

    pub fn emit_all(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        ReportFormat::ALL.iter().map(|&f| self.emit(dir, f)).collect()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| EvaluationError::Config(e.to_string()))
    }
}

/// Reads records back from a CSV report.
pub fn read_csv(path: &Path) -> Result<Vec<CsvRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|rec| rec.map_err(EvaluationError::from)).collect()
}

/// Restricts a table to `descriptors`, in that order.
pub fn select_descriptors(table: &DescriptorTable, descriptors: &[DescriptorId]) -> Result<DescriptorTable> {
    let columns = descriptors
        .iter()
        .map(|&d| {
            table
                .column(d)
                .map(<[Vec<f64>]>::to_vec)
                .ok_or_else(|| EvaluationError::Config(format!("descriptor {d} missing from table")))
        })
        .collect::<Result<_>>()?;
    Ok(DescriptorTable {
        ids: table.ids.clone(),
        descriptors: descriptors.to_vec(),
        columns,
    })
}
