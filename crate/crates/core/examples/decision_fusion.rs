//! Classifier-level fusion: majority vote with reject, Bayes average of
//! posteriors, and Bayes belief integration from confusion matrices.
//!
//! ```text
//! cargo run --example decision_fusion
//! ```

use fusionbench::decision_fusion::{bayes_average, build_belief, majority_vote, ConfusionMatrix, Decision, PriorMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let votes = [Decision::Class(0), Decision::Class(1), Decision::Class(0)];
    println!("votes {votes:?}");
    for alpha in [0.5, 0.9] {
        println!("  majority vote at alpha {alpha}: {:?}", majority_vote(&votes, 2, alpha)?);
    }
    let tie = [Decision::Class(0), Decision::Class(1), Decision::Reject];
    println!("  tie {tie:?} -> {:?}", majority_vote(&tie, 2, 0.0)?);

    let posteriors = vec![vec![0.9, 0.1], vec![0.3, 0.7], vec![0.55, 0.45]];
    let (avg, class) = bayes_average(&posteriors)?;
    println!("Bayes average of {posteriors:?} = {avg:?} -> class {class}");

    // two classifiers, rows are true classes, last column counts rejections
    let pt1 = ConfusionMatrix::from_counts(vec![vec![40, 10, 0], vec![20, 30, 0]])?;
    let pt2 = ConfusionMatrix::from_counts(vec![vec![45, 5, 0], vec![15, 35, 0]])?;
    println!("classifier accuracies {:.2} and {:.2}", pt1.accuracy(), pt2.accuracy());
    for lambda in [0.0, 1.0] {
        let model = build_belief(&[pt1.clone(), pt2.clone()], lambda, PriorMode::Pooled)?;
        for assigned in [[0, 0], [0, 1], [1, 1]] {
            let d = assigned.map(Decision::Class);
            let out = model.integrate(&d, 0.0)?;
            println!("  lambda {lambda}: both say {assigned:?} -> belief {:?} -> {:?}", round(&out.belief), out.decision);
        }
    }
    let model = build_belief(&[pt1, pt2], 0.0, PriorMode::Pooled)?;
    let out = model.integrate(&[Decision::Class(0), Decision::Class(1)], 0.8)?;
    println!("with belief threshold 0.8, disagreement -> {:?}", out.decision);
    Ok(())
}

fn round(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}
