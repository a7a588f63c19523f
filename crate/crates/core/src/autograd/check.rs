use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central-difference gradient of the scalar function `f` at `x0`.
pub fn finite_diff_gradient<F>(f: F, x0: &Tensor<f64>, h: f64) -> Result<Tensor<f64>>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let eval = |point: Tensor<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.leaf(point, false);
        let out = f(&mut t, v)?;
        Ok(t.value(out).data()[0])
    };
    let mut grad = Tensor::zeros(x0.shape().to_vec());
    for i in 0..x0.len() {
        let mut plus = x0.clone();
        plus.data_mut()[i] += h;
        let mut minus = x0.clone();
        minus.data_mut()[i] -= h;
        grad.data_mut()[i] = (eval(plus)? - eval(minus)?) / (2.0 * h);
    }
    Ok(grad)
}

/// Maximum over coordinates of `|numeric - analytic| / (|analytic| + 1e-8)`.
pub fn max_relative_error(numeric: &Tensor<f64>, analytic: &Tensor<f64>) -> Result<f64> {
    if numeric.shape() != analytic.shape() {
        return Err(Error::dim("gradient check", format!("{:?} vs {:?}", numeric.shape(), analytic.shape())));
    }
    let mut worst = 0.0f64;
    for (i, (&fd, &g)) in numeric.data().iter().zip(analytic.data()).enumerate() {
        let err = (fd - g).abs() / (g.abs() + 1e-8);
        if !err.is_finite() {
            return Err(Error::Numerical(format!("non-finite difference at coordinate {i}")));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Compares the tape gradient of a scalar function against central differences.
///
/// `f` records its computation on the tape it is handed, starting from the
/// leaf it is given, and returns the scalar output. The result is the maximum
/// over coordinates of `|fd - g| / (|g| + 1e-8)`.
pub fn finite_diff_check<F>(f: F, x0: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(x0.clone(), true);
    let y = f(&mut tape, x)?;
    let grads = tape.backward(y)?;
    let analytic = grads.get(x).cloned().unwrap_or_else(|| Tensor::zeros(x0.shape().to_vec()));
    max_relative_error(&finite_diff_gradient(&f, x0, h)?, &analytic)
}
