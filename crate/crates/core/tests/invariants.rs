//! Cross-module properties.

use fusionbench::decision_fusion::{build_belief, majority_vote, ConfusionMatrix, Decision, PriorMode};
use fusionbench::descriptors::{read_file, write_file, CacheHeader, DescriptorId};
use fusionbench::evaluation::{read_csv, run_on_table, ExperimentConfig, ReportFormat};
use fusionbench::selftest::oracle;
use fusionbench::svm::{solve_dual, KernelSpec};
use fusionbench::synth::SynthSpec;
use proptest::prelude::*;

fn count_tables() -> impl Strategy<Value = (Vec<Vec<Vec<u64>>>, Vec<usize>)> {
    (1usize..4, 2usize..4).prop_flat_map(|(k, m)| {
        (
            prop::collection::vec(prop::collection::vec(prop::collection::vec(1u64..15, m + 1), m), k),
            prop::collection::vec(0..=m, k),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn belief_is_a_distribution_matching_direct_products((counts, assigned) in count_tables()) {
        let m = counts[0].len();
        let cms: Vec<ConfusionMatrix> = counts.iter().map(|c| ConfusionMatrix::from_counts(c.clone()).unwrap()).collect();
        let model = build_belief(&cms, 0.0, PriorMode::Pooled).unwrap();
        let d: Vec<Decision> = assigned.iter().map(|&j| Decision::from_column(j, m)).collect();
        let out = model.integrate(&d, 0.0).unwrap();
        prop_assert!((out.belief.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let reference = oracle::belief(&counts, &assigned).unwrap();
        for (a, b) in out.belief.iter().zip(&reference) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn unanimous_votes_always_win(class in 0usize..3, k in 1usize..8, alpha in 0.0f64..=1.0) {
        let d = vec![Decision::Class(class); k];
        prop_assert_eq!(majority_vote(&d, 3, alpha).unwrap(), Decision::Class(class));
    }

    #[test]
    fn smo_reaches_the_enumerated_optimum(
        points in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..7),
        signs in prop::collection::vec(any::<bool>(), 7),
        c in 0.05f64..20.0,
    ) {
        let n = points.len();
        let mut y: Vec<f64> = signs[..n].iter().map(|&s| if s { 1.0 } else { -1.0 }).collect();
        y[0] = 1.0;
        y[1] = -1.0;
        let kernel = KernelSpec::Rbf { gamma: 1.0 };
        let xs: Vec<[f64; 2]> = points.iter().map(|&(a, b)| [a, b]).collect();
        let gram: Vec<f64> = (0..n * n).map(|k| kernel.eval(&xs[k / n], &xs[k % n])).collect();
        let sol = solve_dual(&gram, &y, c, 1e-9, 1_000_000, false).unwrap();
        let (best, _) = oracle::qp(&gram, &y, c);
        prop_assert!((sol.objective - best).abs() < 1e-6, "smo {} oracle {}", sol.objective, best);
    }

    #[test]
    fn descriptor_cache_files_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 5), 1..20)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.fbdc");
        let header = CacheHeader { descriptor: DescriptorId::Synthetic(2), dim: 5, config_hash: 99 };
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("c/{i}")).collect();
        write_file(&path, header, ids.iter().map(String::as_str).zip(rows.iter().map(Vec::as_slice))).unwrap();
        let (h, records) = read_file(&path).unwrap();
        prop_assert_eq!(h, header);
        prop_assert_eq!(records.len(), rows.len());
        for ((id, v), (eid, ev)) in records.iter().zip(ids.iter().zip(&rows)) {
            prop_assert_eq!(id, eid);
            prop_assert_eq!(v, ev);
        }
    }
}

#[test]
fn synthetic_report_round_trips_through_every_format() {
    let spec = SynthSpec::spherical(&["p", "q", "r"], &[3, 4], &[1.5, 1.0], 40, 8);
    let data = spec.generate().unwrap();
    let config = ExperimentConfig {
        class_pairs: vec![("p".into(), "q".into()), ("r".into(), "p".into())],
        descriptors: spec.descriptor_ids(),
        seeds: vec![3, 4],
        test_per_class: 10,
        validation_per_class: 10,
        ..ExperimentConfig::default()
    };
    let report = run_on_table(&config, &data).unwrap();
    assert!(report.complete);
    let dir = tempfile::tempdir().unwrap();
    report.emit_all(dir.path()).unwrap();

    let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert_eq!(fusionbench::evaluation::ExperimentReport::from_json(&json).unwrap(), report);
    let csv = read_csv(&dir.path().join(format!("report.{}", ReportFormat::Csv.extension()))).unwrap();
    assert_eq!(csv, report.records());
    let md = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(md.contains("p-q") && md.contains("r-p"));
}
