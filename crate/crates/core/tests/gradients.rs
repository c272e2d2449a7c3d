mod common;

use common::{end_to_end_errors, primitive_errors};

#[test]
fn primitives_match_finite_differences() {
    let mut worst = ("", 0.0f64, 0u64);
    for seed in 0..100 {
        for (name, err) in primitive_errors(seed) {
            assert!(err < 1e-4, "{name} seed {seed}: relative error {err:e}");
            if err > worst.1 {
                worst = (name, err, seed);
            }
        }
    }
    eprintln!("worst primitive: {} {:e} (seed {})", worst.0, worst.1, worst.2);
}

#[test]
fn loss_gradients_match_finite_differences() {
    for seed in 0..100 {
        let (theta, p) = end_to_end_errors(seed);
        assert!(theta < 1e-4, "seed {seed}: network gradient error {theta:e}");
        assert!(p < 1e-4, "seed {seed}: weight gradient error {p:e}");
    }
}
