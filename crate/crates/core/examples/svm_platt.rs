//! Margin classifier with probability outputs: SMO on the dual, Platt
//! sigmoid fitted on out-of-fold scores, and a reject band around 0.5.
//!
//! ```text
//! cargo run --release --example svm_platt -- [reject_band]
//! ```

use fusionbench::svm::{train, BinaryDecision, KernelChoice, TrainParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let band: f64 = std::env::args().nth(1).map_or(Ok(0.1), |s| s.parse())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, 1.0)?;
    // two overlapping 2-D Gaussians at (±1, 0)
    let sample = |rng: &mut ChaCha8Rng, sign: f64| vec![sign + noise.sample(rng), noise.sample(rng)];
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for i in 0..200 {
        let y = if i % 2 == 0 { 1.0 } else { -1.0 };
        features.push(sample(&mut rng, y));
        labels.push(y);
    }
    for kernel in [KernelChoice::Linear, KernelChoice::Rbf { gamma: None }] {
        let params = TrainParams { kernel, ..TrainParams::default() };
        let model = train(&features, &labels, &params)?;
        println!(
            "{:?}: {} support vectors, {} SMO iterations, sigmoid a={:.3} b={:.3} (out-of-fold: {})",
            model.kernel,
            model.support_vectors.len(),
            model.solver.iterations,
            model.platt.a,
            model.platt.b,
            model.solver.out_of_fold_calibration
        );
        for x in [-2.0, -0.5, -0.1, 0.0, 0.1, 0.5, 2.0] {
            let p = model.posterior(&[x, 0.0])?;
            let d = match model.predict_label(&[x, 0.0], band)? {
                BinaryDecision::Positive => "+",
                BinaryDecision::Negative => "-",
                BinaryDecision::Reject => "reject",
            };
            println!("  x={x:>5.1}  f={:>7.3}  P(+)={:.3}  {d}", model.decision_value(&[x, 0.0])?, p[0]);
        }
    }
    Ok(())
}
