mod common;

use common::{adjoint_suite, gradient_suite, LAYERS};

#[test]
fn every_layer_matches_finite_differences() {
    for (i, layer) in LAYERS.iter().enumerate() {
        let r = gradient_suite(layer, 20, 100 + i as u64);
        assert!(r.max_rel_error <= 1e-6, "{layer}: {r:?}");
        assert!(r.entries >= 20, "{layer}: {r:?}");
    }
}

#[test]
fn transposed_convolution_is_the_adjoint() {
    assert!(adjoint_suite(50, 7) <= 1e-9);
}
