#![cfg(not(feature = "f32"))]

#[path = "support/gradcheck.rs"]
mod gradcheck;

#[test]
fn every_op_matches_finite_differences() {
    for seed in 0..2 {
        for (op, err) in gradcheck::check_all_ops(seed) {
            assert!(err < 1e-4, "{op}: max relative error {err:e} (seed {seed})");
        }
    }
}

/// The checker must notice a disagreement: at a relu kink the tape takes
/// the zero branch while the central difference sees the average slope.
#[test]
fn checker_detects_a_kink() {
    use gscls_core::autodiff::{Mode, Tensor};
    let x = Tensor::new(vec![1, 1], vec![0.0]).unwrap();
    let err = gradcheck::max_relative_error(&[x], Mode::Train, |g, v| {
        let y = g.relu(v[0]).unwrap();
        g.sum(y).unwrap()
    });
    assert!(err > 0.4, "{err}");
}
