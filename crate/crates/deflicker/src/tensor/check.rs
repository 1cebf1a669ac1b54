//! Central finite-difference helpers for validating analytic gradients.
//!
//! These run the full forward pass twice per element, so they are only
//! suitable for the small tensors used in tests.

use ndarray::ArrayD;

/// Numeric gradient of `f` at `x` via central differences with step `eps`.
pub fn fd_gradient(mut f: impl FnMut(&ArrayD<f64>) -> f64, x: &ArrayD<f64>, eps: f64) -> ArrayD<f64> {
    let mut grad = ArrayD::zeros(x.raw_dim());
    let mut probe = x.clone();
    let flat_len = x.len();
    for i in 0..flat_len {
        let orig = probe.as_slice_mut().unwrap()[i];
        probe.as_slice_mut().unwrap()[i] = orig + eps;
        let up = f(&probe);
        probe.as_slice_mut().unwrap()[i] = orig - eps;
        let down = f(&probe);
        probe.as_slice_mut().unwrap()[i] = orig;
        grad.as_slice_mut().unwrap()[i] = (up - down) / (2.0 * eps);
    }
    grad
}

/// Largest elementwise relative error between two gradients.
///
/// The error at one element is `|a - n| / max(|a| + |n|, 1e-6)`; the floor
/// keeps finite-difference noise on exactly-zero gradients from exploding
/// the ratio.
pub fn max_rel_err(analytic: &ArrayD<f64>, numeric: &ArrayD<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shape mismatch");
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, IxDyn};

    #[test]
    fn fd_gradient_of_quadratic_is_linear() {
        // f(x) = sum(x^2) has exact gradient 2x even under finite differences
        // because the quadratic's third derivative vanishes.
        let x = arr1(&[1.0, -2.0, 0.5]).into_dyn();
        let g = fd_gradient(|v| v.mapv(|e| e * e).sum(), &x, 1e-4);
        let expect = x.mapv(|e| 2.0 * e);
        assert!(max_rel_err(&g, &expect) < 1e-9);
    }

    #[test]
    fn rel_err_floor_absorbs_noise_on_zero_gradients() {
        let a = ArrayD::zeros(IxDyn(&[3]));
        let mut n = ArrayD::zeros(IxDyn(&[3]));
        n[[0]] = 1e-12;
        assert!(max_rel_err(&a, &n) < 1e-5);
    }
}
