//! Shared helpers for integration tests: central finite-difference
//! gradient checking against the tape.

use mmgraph::Tensor;

/// Relative error between an analytic gradient entry and its central
/// finite-difference estimate, guarded for near-zero pairs.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom < 1e-9 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Check an analytic gradient against central differences of `f`, which
/// maps a perturbed copy of the input tensor to a scalar loss.
/// Returns the worst relative error over all entries.
pub fn gradcheck(
    input: &Tensor,
    analytic: &Tensor,
    step: f64,
    mut f: impl FnMut(&Tensor) -> f64,
) -> f64 {
    assert!(input.same_shape(analytic), "gradient shape mismatch");
    let mut worst: f64 = 0.0;
    for i in 0..input.rows() {
        for j in 0..input.cols() {
            let mut plus = input.clone();
            plus.set(i, j, input.at(i, j) + step);
            let mut minus = input.clone();
            minus.set(i, j, input.at(i, j) - step);
            let numeric = (f(&plus) - f(&minus)) / (2.0 * step);
            worst = worst.max(rel_err(analytic.at(i, j), numeric));
        }
    }
    worst
}
