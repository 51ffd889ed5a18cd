//! Analytic gradients of the summed batch loss against central differences,
//! for the classifier and all four encoder tensors, on randomized models.

#[path = "support/gradcheck.rs"]
mod gradcheck;

use decomp_core::datastream::Instance;
use decomp_core::numerics::Matrix;
use gradcheck::{check_case, random_case, Case, TENSORS, TOL};

#[test]
fn analytic_gradients_match_central_differences() {
    let start = std::time::Instant::now();
    for seed in 0..40 {
        let errs = check_case(seed);
        for (name, err) in TENSORS.iter().zip(errs) {
            assert!(err < TOL, "seed {seed}: {name} relative error {err:e}");
        }
    }
    assert!(start.elapsed().as_secs_f64() < 10.0, "took {:?}", start.elapsed());
}

#[test]
fn head_gradient_is_per_instance_additive() {
    let Case { model, batch } = random_case(99);
    let refs: Vec<&Instance> = batch.iter().collect();
    let whole = model.batch_grads(&refs).unwrap();
    let mut sum = Matrix::zeros(whole.head.rows(), whole.head.cols());
    let mut loss = 0.0;
    for inst in &batch {
        let g = model.batch_grads(&[inst]).unwrap();
        loss += g.loss;
        for (s, x) in sum.as_mut_slice().iter_mut().zip(g.head.as_slice()) {
            *s += x;
        }
    }
    assert!((loss - whole.loss).abs() < 1e-12);
    for (a, b) in sum.as_slice().iter().zip(whole.head.as_slice()) {
        assert!((a - b).abs() < 1e-12);
    }
}
