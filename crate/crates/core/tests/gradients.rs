//! Surrogate gradients checked against central differences.

mod common;

use common::grad::soft_gradient_error;

#[test]
fn soft_mode_gradients_match_finite_differences() {
    for encoders in [1, 2] {
        for seed in 0..20 {
            let err = soft_gradient_error(encoders, seed);
            assert!(err <= 1e-4, "encoders={encoders} seed={seed}: rel err {err:e}");
        }
    }
}
