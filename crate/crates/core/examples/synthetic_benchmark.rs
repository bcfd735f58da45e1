//! Runs all seven methods on conditionally independent Gaussian views with
//! known Bayes error and prints the mean accuracy table.
//!
//! ```text
//! cargo run --release --example synthetic_benchmark -- [dims] [view_accuracies] [n_per_class] [seeds]
//! cargo run --release --example synthetic_benchmark -- 12,80,64,128 0.72 200 10
//! ```
//!
//! Defaults are the weak-view preset used by the acceptance suite.

use fusionbench::evaluation::{run_on_table, ExperimentConfig, Method};
use fusionbench::synth::{separation_for_accuracy, SynthSpec, WEAK_VIEW_ACCURACY, WEAK_VIEW_DIMS};

fn csv(v: &[impl ToString]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let default_dims = csv(&WEAK_VIEW_DIMS);
    let default_accuracy = csv(&WEAK_VIEW_ACCURACY);
    let dims: Vec<usize> = args
        .first()
        .unwrap_or(&default_dims)
        .split(',')
        .map(str::parse)
        .collect::<Result<_, _>>()?;
    let mut view_accuracy: Vec<f64> = args
        .get(1)
        .unwrap_or(&default_accuracy)
        .split(',')
        .map(str::parse)
        .collect::<Result<_, _>>()?;
    view_accuracy.resize(dims.len(), *view_accuracy.last().unwrap());
    let n_per_class: usize = args.get(2).map_or(Ok(200), |s| s.parse())?;
    let seeds: u64 = args.get(3).map_or(Ok(10), |s| s.parse())?;

    let deltas: Vec<f64> = view_accuracy.iter().map(|&a| separation_for_accuracy(a)).collect();
    let spec = SynthSpec::spherical(&["a", "b"], &dims, &deltas, n_per_class, 42);
    let data = spec.generate()?;
    println!(
        "{} views, dims {:?}, per-view Bayes accuracy {:?}, joint Bayes accuracy {:.3}",
        dims.len(),
        dims,
        view_accuracy,
        1.0 - spec.bayes_error(0, 1)?
    );

    let config = ExperimentConfig {
        class_pairs: vec![("a".into(), "b".into())],
        descriptors: spec.descriptor_ids(),
        seeds: (1..=seeds).collect(),
        test_per_class: 100,
        validation_per_class: 50,
        ..ExperimentConfig::default()
    };
    let report = run_on_table(&config, &data)?;
    for m in Method::ALL {
        let row = report.summary.iter().find(|r| r.method == m).unwrap();
        println!("{:<26} {:.4} ± {:.4}", m.title(), row.mean, row.stddev);
    }
    if std::env::var_os("SYNTH_VERBOSE").is_some() {
        for c in &report.cells {
            println!("seed {} pca k={:?} {:?}", c.seed, c.pca_components, c.accuracy);
        }
    }
    for d in &config.descriptors {
        let v: Vec<f64> = report.cells.iter().map(|c| c.individual[d]).collect();
        println!("{:<26} {:.4}", d.to_string(), v.iter().sum::<f64>() / v.len() as f64);
    }
    Ok(())
}
