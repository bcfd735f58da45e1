//! The three feature-level fusion schemes on two descriptors of very
//! different scale: z-score then concatenate, concatenate then z-score, and
//! concatenate then PCA.
//!
//! ```text
//! cargo run --example feature_fusion
//! ```

use fusionbench::descriptors::DescriptorId;
use fusionbench::feature_fusion::{fuse_pca, fuse_post_normalized, fuse_pre_normalized, FittedFusion, ZScoreMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 100;
    // view A: 3 dims in [0, 1]; view B: 5 dims around 1000 with one shared latent
    let a: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
    let b: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let t: f64 = rng.random_range(-50.0..50.0);
            (0..5).map(|k| 1000.0 + t * (k as f64 + 1.0) + rng.random_range(-1.0..1.0)).collect()
        })
        .collect();
    let order = [DescriptorId::Cld, DescriptorId::Ehd];
    let views: [&[Vec<f64>]; 2] = [&a, &b];

    let (_, pre) = fuse_pre_normalized(&order, &views, ZScoreMode::PerDimension)?;
    let (_, post) = fuse_post_normalized(&order, &views, ZScoreMode::PerDimension)?;
    let (_, post_vec) = fuse_post_normalized(&order, &views, ZScoreMode::PerVector)?;
    let (pca, reduced) = fuse_pca(&order, &views, 0.95, false)?;
    println!("concatenated dim 8");
    println!("pre-normalized  row 0 {:?}", round(&pre[0]));
    // per-dimension statistics do not care where the view boundaries are
    println!("post-normalized row 0 {:?} (same as pre: {})", round(&post[0]), pre == post);
    println!("post, per-vector z-score row 0 {:?}", round(&post_vec[0]));
    if let FittedFusion::Pca { model, .. } = &pca {
        println!(
            "PCA keeps k={} of {} components (95% variance; spectrum head {:?})",
            model.k(),
            model.input_dim(),
            round(&model.spectrum[..3])
        );
    }
    println!("PCA row 0 {:?}", round(&reduced[0]));

    // fitted transforms apply to unseen samples
    let unseen_a = vec![0.5, 0.5, 0.5];
    let unseen_b = vec![1000.0; 5];
    let z = pca.transform(&[&unseen_a, &unseen_b])?;
    println!("unseen sample through PCA {:?}", round(&z));
    Ok(())
}

fn round(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e3).round() / 1e3).collect()
}
