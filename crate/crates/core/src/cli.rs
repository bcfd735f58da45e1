//! `fusionbench` command line: `extract`, `run`, `selftest`, `synth`.
//!
//! Exit codes: 0 success, 1 selftest failure, 2 configuration error,
//! 3 corpus error, 4 run finished with failed cells, 5 other runtime error.
//! With `--quiet`, stdout carries only tab-separated machine-readable lines.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::Value;
use thiserror::Error;

use crate::dataset::{decode_image, CorpusListing};
use crate::descriptors::{extract_with, DescriptorCache, DescriptorError, DescriptorId, Extractor, LabeledTable};
use crate::evaluation::{extract_corpus, parse_methods, run_on_table, EvaluationError, ExperimentConfig, ExperimentReport};
use crate::selftest;
use crate::synth::SynthSpec;

pub const CACHE_ENV: &str = "FUSIONBENCH_CACHE";
pub const DEFAULT_CACHE_DIR: &str = "fusionbench-cache";
pub const DEFAULT_OUT_DIR: &str = "fusionbench-out";
/// Class names of the built-in synthetic preset, matching the default pairs.
pub const PRESET_CLASSES: [&str; 4] = ["insidecity", "mountain", "street", "tallbuilding"];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("selftest failed: {}", .0.join(", "))]
    SelftestFailed(Vec<String>),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("corpus error: {0}")]
    Corpus(String),
    #[error("run incomplete: {failed} cell(s) failed, first {pair} seed {seed}: {error}")]
    Incomplete {
        failed: usize,
        pair: String,
        seed: u64,
        error: String,
    },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::SelftestFailed(_) => 1,
            Self::Config(_) => 2,
            Self::Corpus(_) => 3,
            Self::Incomplete { .. } => 4,
            Self::Runtime(_) => 5,
        }
    }
}

impl From<EvaluationError> for CliError {
    fn from(e: EvaluationError) -> Self {
        match e {
            EvaluationError::Config(_) | EvaluationError::UnknownClass(_) => Self::Config(e.to_string()),
            EvaluationError::Dataset(_) => Self::Corpus(e.to_string()),
            EvaluationError::Descriptor(d) => d.into(),
            other => Self::Runtime(other.to_string()),
        }
    }
}

impl From<DescriptorError> for CliError {
    fn from(e: DescriptorError) -> Self {
        match e {
            DescriptorError::Load { .. } | DescriptorError::Sample { .. } => Self::Corpus(e.to_string()),
            DescriptorError::Cache { .. } => Self::Runtime(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Experiment settings plus paths and verbosity. On disk it is one flat JSON
/// object: the [`ExperimentConfig`] keys alongside `corpus`, `cache_dir`,
/// `out_dir` and `log_level`. Unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CliConfig {
    pub experiment: ExperimentConfig,
    pub corpus: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub log_level: Option<String>,
    /// Whether `descriptors` was given; if not, a cache-only run uses every
    /// descriptor present in the cache.
    pub descriptors_explicit: bool,
}

impl CliConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(s).map_err(|e| CliError::Config(e.to_string()))?;
        let Value::Object(mut map) = value else {
            return Err(CliError::Config("config must be a JSON object".into()));
        };
        let mut take_string = |key: &str| -> Result<Option<String>> {
            match map.remove(key) {
                None | Some(Value::Null) => Ok(None),
                Some(Value::String(s)) => Ok(Some(s)),
                Some(other) => Err(CliError::Config(format!("`{key}` must be a string, got {other}"))),
            }
        };
        let corpus = take_string("corpus")?.map(PathBuf::from);
        let cache_dir = take_string("cache_dir")?.map(PathBuf::from);
        let out_dir = take_string("out_dir")?.map(PathBuf::from);
        let log_level = take_string("log_level")?;
        let descriptors_explicit = map.contains_key("descriptors");
        let experiment = serde_json::from_value(Value::Object(map)).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Self {
            experiment,
            corpus,
            cache_dir,
            out_dir,
            log_level,
            descriptors_explicit,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// `FUSIONBENCH_CACHE`, else `cache_dir`, else `./fusionbench-cache`.
    pub fn resolved_cache_dir(&self) -> PathBuf {
        std::env::var_os(CACHE_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .or_else(|| self.cache_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR))
    }
}

#[derive(Debug, Parser)]
#[command(name = "fusionbench", version, about = "Feature-level vs classifier-level fusion benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON config (for `synth`: a synthetic dataset spec).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Corpus root with one subdirectory of images per class.
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Output directory (reports for `run`, cache files for `synth`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Comma-separated seeds overriding the config.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Comma-separated methods (pre,post,pca,mv,ba,bbi,single).
    #[arg(long, global = true)]
    pub methods: Option<String>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Machine-readable stdout only.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Compute descriptors for every corpus image into the cache.
    Extract,
    /// Run the experiment protocol and write report.{json,md,csv}.
    Run,
    /// Check the implementation against independent oracles.
    Selftest,
    /// Write a synthetic dataset in descriptor-cache format.
    Synth,
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("fusionbench: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let config = match (&cli.config, cli.command) {
        (Some(path), c) if c != Command::Synth => CliConfig::load(path)?,
        _ => CliConfig::default(),
    };
    init_logging(cli.quiet, config.log_level.as_deref());
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Config("--jobs must be positive".into()));
        }
        // a second call in the same process keeps the first pool
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::debug!("thread pool already initialised: {e}");
        }
    }
    let config = apply_overrides(config, cli)?;
    match cli.command {
        Command::Extract => cmd_extract(&config, cli.quiet),
        Command::Run => cmd_run(&config, cli.quiet).map(|_| ()),
        Command::Selftest => cmd_selftest(cli.quiet),
        Command::Synth => cmd_synth(cli.config.as_deref(), cli.out.as_deref(), &config, cli.quiet),
    }
}

fn init_logging(quiet: bool, level: Option<&str>) {
    let default = level.unwrap_or(if quiet { "error" } else { "warn" });
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default))
        .format_timestamp(None)
        .try_init();
}

fn apply_overrides(mut config: CliConfig, cli: &Cli) -> Result<CliConfig> {
    if let Some(c) = &cli.corpus {
        config.corpus = Some(c.clone());
    }
    if let Some(o) = &cli.out {
        config.out_dir = Some(o.clone());
    }
    if let Some(s) = &cli.seeds {
        config.experiment.seeds = s.clone();
    }
    if let Some(m) = &cli.methods {
        config.experiment.methods = parse_methods(m).map_err(CliError::Config)?;
    }
    config.experiment.validate()?;
    Ok(config)
}

fn require_corpus(config: &CliConfig) -> Result<&Path> {
    let corpus = config
        .corpus
        .as_deref()
        .ok_or_else(|| CliError::Config("no corpus given (use --corpus or `corpus` in the config)".into()))?;
    if !corpus.is_dir() {
        return Err(CliError::Corpus(format!("corpus directory not found: {}", corpus.display())));
    }
    Ok(corpus)
}

/// Extracts every image of the corpus (all classes) for the configured descriptors.
pub fn cmd_extract(config: &CliConfig, quiet: bool) -> Result<()> {
    let corpus = require_corpus(config)?;
    let exp = &config.experiment;
    let listing = CorpusListing::scan(corpus).map_err(|e| CliError::Corpus(e.to_string()))?;
    let extractor = Extractor::new(exp.descriptor_config.clone(), exp.image_side)?;
    let cache_dir = config.resolved_cache_dir();
    let mut cache = DescriptorCache::open(&cache_dir)?;
    let ids: Vec<String> = listing.entries.iter().map(|e| e.id.clone()).collect();
    let paths: std::collections::HashMap<&str, &Path> =
        listing.entries.iter().map(|e| (e.id.as_str(), e.path.as_path())).collect();
    let (table, stats) = extract_with(
        &ids,
        |id| decode_image(paths[id], exp.image_side).map_err(|e| e.to_string()),
        &extractor,
        &exp.descriptors,
        Some(&mut cache),
    )?;
    cache.flush()?;
    for (k, d) in table.descriptors.iter().enumerate() {
        let dim = table.columns[k].first().map_or(0, Vec::len);
        if quiet {
            println!("{d}\t{dim}\t{}", table.len());
        } else {
            println!("{:<8} dim {:>4}  {} vectors", d.to_string(), dim, table.len());
        }
    }
    if quiet {
        println!("computed\t{}\ncached\t{}", stats.computed, stats.cached);
    } else {
        println!(
            "{} classes, {} images; {} computed, {} cached -> {}",
            listing.class_names.len(),
            ids.len(),
            stats.computed,
            stats.cached,
            cache_dir.display()
        );
    }
    Ok(())
}

/// Descriptors with a cache file in `dir`, canonical ones first.
pub fn cached_descriptors(dir: &Path) -> Vec<DescriptorId> {
    DescriptorId::CANONICAL
        .into_iter()
        .chain((0..=u8::MAX - 16).map(DescriptorId::Synthetic))
        .filter(|&d| DescriptorCache::file_path(dir, d).is_file())
        .collect()
}

/// Loads the data a run needs: through extraction when a corpus is given,
/// otherwise straight from the cache directory.
pub fn load_table(config: &CliConfig) -> Result<(ExperimentConfig, LabeledTable)> {
    let mut exp = config.experiment.clone();
    let cache_dir = config.resolved_cache_dir();
    if config.corpus.is_some() {
        let corpus = require_corpus(config)?;
        let mut cache = DescriptorCache::open(&cache_dir)?;
        let (table, stats) = extract_corpus(&exp, corpus, Some(&mut cache))?;
        log::info!("{} computed, {} cached", stats.computed, stats.cached);
        return Ok((exp, table));
    }
    if !cache_dir.is_dir() {
        return Err(CliError::Config(format!(
            "no corpus given and cache directory {} does not exist (set {CACHE_ENV}, `cache_dir`, or --corpus)",
            cache_dir.display()
        )));
    }
    if !config.descriptors_explicit {
        let found = cached_descriptors(&cache_dir);
        if found.is_empty() {
            return Err(CliError::Config(format!("no descriptor caches in {}", cache_dir.display())));
        }
        exp.descriptors = found;
    }
    exp.validate()?;
    let table = LabeledTable::from_cache_dir(&cache_dir, &exp.descriptors).map_err(|e| CliError::Config(e.to_string()))?;
    Ok((exp, table))
}

/// Runs the protocol and writes all three report formats to the output directory.
pub fn cmd_run(config: &CliConfig, quiet: bool) -> Result<ExperimentReport> {
    let (exp, table) = load_table(config)?;
    let report = run_on_table(&exp, &table)?;
    let out = config.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let written = report.emit_all(&out)?;
    if quiet {
        for r in &report.summary {
            println!("{}\t{}\t{:.6}\t{:.6}\t{}", r.pair, r.method, r.mean, r.stddev, r.seeds);
        }
    } else {
        print_summary(&report);
        for p in &written {
            println!("wrote {}", p.display());
        }
    }
    if let Some(first) = report.failures.first() {
        return Err(CliError::Incomplete {
            failed: report.failures.len(),
            pair: first.pair.clone(),
            seed: first.seed,
            error: first.error.clone(),
        });
    }
    Ok(report)
}

fn print_summary(report: &ExperimentReport) {
    let methods = report.methods();
    print!("{:<24}", "pair");
    for m in &methods {
        print!(" {:>15}", m.key());
    }
    println!();
    for pair in report.pairs() {
        print!("{pair:<24}");
        for &m in &methods {
            match report.summary.iter().find(|r| r.pair == pair && r.method == m) {
                Some(r) => print!(" {:>15}", format!("{:.3}±{:.3}", r.mean, r.stddev)),
                None => print!(" {:>15}", "-"),
            }
        }
        println!();
    }
}

pub fn cmd_selftest(quiet: bool) -> Result<()> {
    let results = selftest::run_all();
    for r in &results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        if quiet {
            println!("{}\t{status}", r.name);
        } else {
            println!("{status} {:<22} {}", r.name, r.detail);
        }
    }
    let failed: Vec<String> = results.iter().filter(|r| !r.passed).map(|r| r.name.to_string()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::SelftestFailed(failed))
    }
}

/// The built-in synthetic dataset: four classes named after the default
/// pairs, four weak views, 200 samples per class.
pub fn preset_spec() -> SynthSpec {
    SynthSpec::weak_views(&PRESET_CLASSES, 200, 42)
}

pub fn cmd_synth(spec_path: Option<&Path>, out: Option<&Path>, config: &CliConfig, quiet: bool) -> Result<()> {
    let spec = match spec_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<SynthSpec>(&text).map_err(|e| CliError::Config(e.to_string()))?
        }
        None => preset_spec(),
    };
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| config.resolved_cache_dir());
    let data = spec.write_cache(&dir).map_err(|e| CliError::Config(e.to_string()))?;
    let spec_file = dir.join("synth_spec.json");
    std::fs::write(&spec_file, serde_json::to_string_pretty(&spec).expect("spec serializes"))
        .map_err(|e| CliError::Runtime(format!("{}: {e}", spec_file.display())))?;
    if quiet {
        println!("{}", dir.display());
        return Ok(());
    }
    let dims: Vec<usize> = spec.views.iter().map(|v| v.dim).collect();
    println!(
        "{} samples, classes {:?}, view dims {:?} -> {}",
        data.len(),
        spec.class_names,
        dims,
        dir.display()
    );
    if spec.classes() >= 2 {
        let err = spec.bayes_error(0, 1).map_err(|e| CliError::Config(e.to_string()))?;
        println!("joint Bayes accuracy for {} vs {}: {:.4}", spec.class_names[0], spec.class_names[1], 1.0 - err);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_config_splits_paths_from_experiment() {
        let c = CliConfig::from_json(r#"{"corpus": "/data", "seeds": [4, 5], "log_level": "info"}"#).unwrap();
        assert_eq!(c.corpus.as_deref(), Some(Path::new("/data")));
        assert_eq!(c.experiment.seeds, vec![4, 5]);
        assert_eq!(c.log_level.as_deref(), Some("info"));
        assert!(!c.descriptors_explicit);
    }

    #[test]
    fn unknown_key_is_a_config_error() {
        let e = CliConfig::from_json(r#"{"sedes": [1]}"#).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = CliConfig::from_json(r#"{"corpus": 3}"#).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from(["fusionbench", "run", "--seeds", "7,8", "--methods", "bbi,pca"]).unwrap();
        let c = apply_overrides(CliConfig::default(), &cli).unwrap();
        assert_eq!(c.experiment.seeds, vec![7, 8]);
        assert_eq!(c.experiment.methods.len(), 2);
    }

    #[test]
    fn missing_corpus_is_exit_3() {
        let cli = Cli::try_parse_from(["fusionbench", "extract", "--corpus", "/definitely/not/here"]).unwrap();
        let c = apply_overrides(CliConfig::default(), &cli).unwrap();
        assert_eq!(cmd_extract(&c, true).unwrap_err().exit_code(), 3);
    }
}
