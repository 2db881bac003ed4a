//! Shared test helpers: central finite differences and tolerance checks.

#![allow(dead_code)]

use ben_core::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Central finite-difference gradient of a scalar function at `x0`.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor) -> f64, x0: &Tensor, h: f64) -> Tensor {
    let mut grad = Tensor::zeros(x0.shape());
    for i in 0..x0.len() {
        let mut plus = x0.clone();
        plus.data_mut()[i] += h;
        let mut minus = x0.clone();
        minus.data_mut()[i] -= h;
        grad.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    grad
}

/// Relative error with an absolute floor so near-zero gradients compare
/// sensibly.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn max_rel_err(analytic: &Tensor, numeric: &Tensor) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| rel_err(*a, *n))
        .fold(0.0, f64::max)
}

pub fn assert_grads_close(what: &str, analytic: &Tensor, numeric: &Tensor, tol: f64) {
    let err = max_rel_err(analytic, numeric);
    assert!(
        err < tol,
        "{what}: gradient mismatch, max rel err {err:.3e} (tol {tol:.1e})\n  analytic: {:?}\n  numeric:  {:?}",
        analytic.data(),
        numeric.data()
    );
}

/// Mean and standard error of a sample.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
