//! Fits a diagonal GMM by EM and encodes descriptor sets as Fisher vectors.

use leafroi::baselines::{fisher_encode, gmm_fit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> leafroi::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let centers = [[-2.0, 0.0, 1.0], [2.0, 1.0, -1.0], [0.0, -2.0, 0.0]];
    let mut draw = |c: usize, n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| centers[c].iter().map(|m| m + rng.random_range(-0.5..0.5)).collect())
            .collect()
    };
    let pool: Vec<Vec<f64>> = (0..3).flat_map(|c| draw(c, 200)).collect();
    let fit = gmm_fit(&pool, 3, 20, 7)?;
    println!("log-likelihood per EM iteration:");
    for (i, ll) in fit.log_likelihood.iter().enumerate() {
        println!("  {i:>2}: {ll:.4}");
    }
    for (k, (w, m)) in fit.model.weights.iter().zip(&fit.model.means).enumerate() {
        println!("component {k}: weight {w:.3}, mean {m:.2?}");
    }
    // sets dominated by different centers give distinct encodings
    let a = fisher_encode(&draw(0, 50), &fit.model)?;
    let b = fisher_encode(&draw(1, 50), &fit.model)?;
    let a2 = fisher_encode(&draw(0, 50), &fit.model)?;
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    println!("dimension {}; cosine(a, a') {:.3}, cosine(a, b) {:.3}", a.len(), dot(&a, &a2), dot(&a, &b));
    Ok(())
}
