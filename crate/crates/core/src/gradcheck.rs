//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Relative discrepancy `|a − n| / max(1, |a|, |n|)`.
#[inline]
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn scalar(out: Tensor) -> Result<f64> {
    if out.len() != 1 {
        return Err(Error::contract(format!(
            "grad_check: function must return a single value, got dims {:?}",
            out.dims()
        )));
    }
    Ok(out.data()[0])
}

/// Compares `gradient(inputs)` against central differences of `value` at every input element
/// and returns the largest [`relative_error`].
///
/// `value` must return a one-element tensor; `gradient` returns one tensor per input.
pub fn grad_check<V, G>(value: V, gradient: G, inputs: &[Tensor], h: f64) -> Result<f64>
where
    V: Fn(&[Tensor]) -> Result<Tensor>,
    G: Fn(&[Tensor]) -> Result<Vec<Tensor>>,
{
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(t, x)| (0..x.len()).map(move |i| (t, i)))
        .collect();
    grad_check_at(value, gradient, inputs, h, &coords)
}

/// Like [`grad_check`] but only at the listed `(input, element)` coordinates.
pub fn grad_check_at<V, G>(
    value: V,
    gradient: G,
    inputs: &[Tensor],
    h: f64,
    coords: &[(usize, usize)],
) -> Result<f64>
where
    V: Fn(&[Tensor]) -> Result<Tensor>,
    G: Fn(&[Tensor]) -> Result<Vec<Tensor>>,
{
    if !(1e-6..=1e-4).contains(&h) {
        return Err(Error::contract(format!(
            "grad_check: step {h} outside [1e-6, 1e-4]"
        )));
    }
    scalar(value(inputs)?)?;
    let grads = gradient(inputs)?;
    if grads.len() != inputs.len() {
        return Err(Error::contract(format!(
            "grad_check: {} gradients for {} inputs",
            grads.len(),
            inputs.len()
        )));
    }
    for (g, x) in grads.iter().zip(inputs) {
        g.expect_dims(x.dims(), "grad_check gradient")?;
    }

    let mut work = inputs.to_vec();
    let mut worst = 0.0f64;
    for &(t, i) in coords {
        let orig = work[t].data()[i];
        work[t].data_mut()[i] = orig + h;
        let plus = scalar(value(&work)?)?;
        work[t].data_mut()[i] = orig - h;
        let minus = scalar(value(&work)?)?;
        work[t].data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(relative_error(grads[t].data()[i], numeric));
    }
    Ok(worst)
}

/// Wraps a scalar into the one-element tensor [`grad_check`] expects.
pub fn scalar_tensor(v: f64) -> Tensor {
    Tensor::full([1, 1, 1, 1], v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{activation, activation_grad, Activation};
    use crate::tensor::Rng;

    #[test]
    fn sum_has_unit_gradient() {
        let mut rng = Rng::new(1);
        let x = Tensor::uniform([1, 2, 3, 3], -1.0, 1.0, &mut rng);
        let err = grad_check(
            |xs| Ok(scalar_tensor(xs[0].sum())),
            |xs| Ok(vec![Tensor::full(xs[0].dims(), 1.0)]),
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9);
    }

    #[test]
    fn sigmoid_sum_gradient_at_half() {
        let x = Tensor::full([1, 1, 2, 2], 0.5);
        let s = 1.0 / (1.0 + (-0.5f64).exp());
        let expected = s * (1.0 - s);
        assert!((expected - 0.2350037122).abs() < 1e-10);
        let grad = |xs: &[Tensor]| {
            let y = activation(&xs[0], Activation::Sigmoid);
            Ok(vec![activation_grad(&xs[0], &y, Activation::Sigmoid, &Tensor::full(xs[0].dims(), 1.0))?])
        };
        let g = grad(std::slice::from_ref(&x)).unwrap();
        assert!(g[0].data().iter().all(|&v| (v - expected).abs() < 1e-15));
        let err = grad_check(
            |xs| Ok(scalar_tensor(activation(&xs[0], Activation::Sigmoid).sum())),
            grad,
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9);
    }

    #[test]
    fn non_scalar_output_is_contract_error() {
        let x = Tensor::zeros([1, 1, 2, 2]);
        let r = grad_check(|xs| Ok(xs[0].clone()), |xs| Ok(vec![xs[0].clone()]), &[x], 1e-5);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn step_outside_range_rejected() {
        let x = Tensor::zeros([1, 1, 1, 1]);
        let r = grad_check(
            |xs| Ok(scalar_tensor(xs[0].sum())),
            |xs| Ok(vec![Tensor::full(xs[0].dims(), 1.0)]),
            &[x],
            1e-2,
        );
        assert!(r.is_err());
    }
}
