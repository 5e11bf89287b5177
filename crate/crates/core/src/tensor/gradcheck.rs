//! Central finite-difference verification of the tape.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Compare analytic gradients of a taped scalar function against central
/// finite differences at `point`. Returns the maximum relative error
/// `|analytic − numeric| / (|analytic| + |numeric| + 1e-12)` over all
/// coordinates.
pub fn check_gradients<F, G>(mut f: G, point: &Tensor<F>, fd_step: F) -> Result<F>
where
    F: Scalar,
    G: FnMut(&Tensor<F>) -> Result<Tensor<F>>,
{
    let shape = point.shape();
    let base = point.to_vec();

    let x = Tensor::leaf(&shape, base.clone())?;
    let loss = f(&x)?;
    loss.backward()?;
    let analytic = x.grad().expect("leaf gradient after backward");

    let eps = F::from_f64(1e-12);
    let mut worst = F::zero();
    for i in 0..base.len() {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[i] += fd_step;
        minus[i] -= fd_step;
        let lp = f(&Tensor::new(&shape, plus)?)?.item();
        let lm = f(&Tensor::new(&shape, minus)?)?.item();
        let numeric = (lp - lm) / (fd_step + fd_step);
        let rel = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs() + eps);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;

    #[test]
    fn quadratic_form_is_exact_to_1e8() {
        // f(x) = xᵀ A x with fixed symmetric A; analytic gradient known.
        let point = Tensor::new(&[3], vec![0.4, -1.1, 0.7]).unwrap();
        let a = Tensor::new(
            &[3, 3],
            vec![2.0, 0.5, -0.3, 0.5, 1.0, 0.2, -0.3, 0.2, 3.0],
        )
        .unwrap();
        let err = check_gradients(
            |x| {
                let row = reshape_row(x);
                let ax = ops::matmul(&row, &a)?;
                ops::sum(&ops::mul(&ax, &row)?)
            },
            &point,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-8, "err = {err}");
    }

    // taped reshape [n] -> [1,n]
    fn reshape_row(x: &Tensor<f64>) -> Tensor<f64> {
        let n = x.numel();
        Tensor::from_op(
            vec![1, n],
            x.to_vec(),
            "reshape_row",
            vec![x.clone()],
            Box::new(|g| vec![g.to_vec()]),
        )
        .unwrap()
    }

    #[test]
    fn linear_function_is_exact_to_1e10() {
        let point = Tensor::new(&[4], vec![1.0, 2.0, -3.0, 0.5]).unwrap();
        let w = Tensor::new(&[4], vec![0.3, -0.8, 1.5, 2.0]).unwrap();
        // no truncation error for a linear function, so a larger step
        // only reduces cancellation noise
        let err = check_gradients(|x| ops::sum(&ops::mul(x, &w)?), &point, 1e-3).unwrap();
        assert!(err <= 1e-10, "err = {err}");
    }
}
