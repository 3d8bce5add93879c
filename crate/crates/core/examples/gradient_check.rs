//! Checks backpropagated gradients of a small conv → relu → pool → dense stack
//! against central finite differences.

use leafroi::autodiff::check::{gradient_check, random_projection};
use leafroi::autodiff::flatten;
use leafroi::nn;
use leafroi::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> leafroi::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::uniform(&[2, 3, 6, 6], -1.0, 1.0, &mut rng);
    let k = Tensor::uniform(&[4, 3, 3, 3], -0.5, 0.5, &mut rng);
    let b = Tensor::uniform(&[4], -0.1, 0.1, &mut rng);
    let w = Tensor::uniform(&[36, 3], -0.3, 0.3, &mut rng);
    let c = Tensor::zeros(&[3]);

    let report = gradient_check(&[x, k, b, w, c], 1e-5, |t, v| {
        let y = nn::conv2d(t, v[0], v[1], Some(v[2]), 1, 1)?;
        let y = nn::relu(t, y)?;
        let y = nn::maxpool2(t, y)?;
        let y = flatten(t, y)?;
        let y = nn::fully_connected(t, y, v[3], v[4])?;
        let p = nn::softmax(t, y)?;
        random_projection(t, p, 9)
    })?;
    println!(
        "{} gradient entries, max relative error {:.2e}, max absolute error {:.2e}",
        report.entries, report.max_rel_error, report.max_abs_error
    );
    Ok(())
}
