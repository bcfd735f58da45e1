//! Full protocol on an image corpus (one directory per class): descriptor
//! extraction through an on-disk cache, split, both fusion arms, report files.
//!
//! ```text
//! cargo run --release --example corpus_experiment -- <corpus> [out_dir] [cache_dir]
//! ```
//!
//! The class pairs default to street/insidecity, tallbuilding/street,
//! mountain/tallbuilding and mountain/insidecity; a corpus lacking those
//! classes falls back to every pair of its first four classes.

use std::path::PathBuf;

use fusionbench::dataset::CorpusListing;
use fusionbench::descriptors::DescriptorCache;
use fusionbench::evaluation::{run_on_corpus, ExperimentConfig, Method};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let corpus = PathBuf::from(args.next().ok_or("usage: corpus_experiment <corpus> [out_dir] [cache_dir]")?);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "fusionbench-out".into()));
    let cache_dir = PathBuf::from(args.next().unwrap_or_else(|| "fusionbench-cache".into()));

    let listing = CorpusListing::scan(&corpus)?;
    // up to 100 images per class: a quarter each for test and validation
    let per_class = (*listing.class_counts().iter().min().unwrap_or(&0)).min(100);
    let mut config = ExperimentConfig {
        seeds: vec![1, 2, 3],
        test_per_class: per_class / 4,
        validation_per_class: per_class / 4,
        max_per_class: Some(per_class),
        ..ExperimentConfig::default()
    };
    let available = |c: &str| listing.class_id(c).is_some();
    if !config.class_pairs.iter().all(|(a, b)| available(a) && available(b)) {
        let names: Vec<&String> = listing.class_names.iter().take(4).collect();
        config.class_pairs = names
            .iter()
            .enumerate()
            .flat_map(|(i, a)| names[i + 1..].iter().map(move |b| (a.to_string(), b.to_string())))
            .collect();
    }

    let mut cache = DescriptorCache::open(&cache_dir)?;
    let (report, stats) = run_on_corpus(&config, &corpus, Some(&mut cache))?;
    println!("{} vectors computed, {} from cache", stats.computed, stats.cached);
    for pair in report.pairs() {
        print!("{pair:<28}");
        for m in Method::ALL {
            print!(" {}={:.3}", m.key(), report.mean(&pair, m).unwrap_or(f64::NAN));
        }
        println!();
    }
    for p in report.emit_all(&out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
