//! Central-difference gradient estimates for verifying [`super::Graph::backward`].

use super::GraphError;
use crate::tensor::Tensor;

pub const MIN_EPS: f64 = 1e-7;
pub const MAX_EPS: f64 = 1e-3;

/// Estimates `df/dp` coordinate by coordinate as
/// `(f(p + eps) - f(p - eps)) / (2 eps)`.
///
/// `f` must be deterministic; any dropout masks have to be frozen by the
/// caller. A function that returns different values for the same input is
/// reported as a contract violation rather than silently differenced.
pub fn finite_difference_gradient<F>(
    mut f: F,
    params: &[Tensor],
    eps: f64,
) -> Result<Vec<Tensor>, GraphError>
where
    F: FnMut(&[Tensor]) -> f64,
{
    if !(MIN_EPS..=MAX_EPS).contains(&eps) {
        return Err(GraphError::Contract(format!(
            "eps {eps} outside [{MIN_EPS}, {MAX_EPS}]"
        )));
    }
    let base = f(params);
    if base.to_bits() != f(params).to_bits() {
        return Err(GraphError::Contract(
            "function is not deterministic; freeze its masks first".into(),
        ));
    }

    let mut work = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for t in 0..params.len() {
        let mut g = vec![0.0; params[t].numel()];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = params[t].data()[i];
            work[t].data_mut()[i] = orig + eps;
            let up = f(&work);
            work[t].data_mut()[i] = orig - eps;
            let down = f(&work);
            work[t].data_mut()[i] = orig;
            *gi = (up - down) / (2.0 * eps);
        }
        grads.push(Tensor::new(params[t].shape().to_vec(), g)?);
    }
    Ok(grads)
}

/// `|a - b| / max(|a|, |b|, floor)`; zero when both are zero.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(floor);
    if denom == 0.0 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

/// Largest [`relative_error`] over matching entries of two tensor lists.
pub fn max_relative_error(a: &[Tensor], b: &[Tensor], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len(), "tensor lists differ in length");
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.shape(), y.shape());
            x.data().iter().zip(y.data()).map(|(&p, &q)| relative_error(p, q, floor))
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn square_at_three() {
        let g = finite_difference_gradient(|p| p[0].item().powi(2), &[Tensor::scalar(3.0)], 1e-5)
            .unwrap();
        assert!((g[0].item() - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function_has_exact_zero_gradient() {
        let g = finite_difference_gradient(|_| 4.25, &[Tensor::vector(vec![1.0, 2.0])], 1e-4)
            .unwrap();
        assert_eq!(g[0].data(), &[0.0, 0.0]);
    }

    #[test]
    fn eps_outside_range_is_rejected() {
        let p = [Tensor::scalar(1.0)];
        assert!(finite_difference_gradient(|p| p[0].item(), &p, 1e-2).is_err());
        assert!(finite_difference_gradient(|p| p[0].item(), &p, 1e-9).is_err());
    }

    #[test]
    fn nondeterminism_is_flagged() {
        let calls = Cell::new(0u32);
        let res = finite_difference_gradient(
            |p| {
                calls.set(calls.get() + 1);
                p[0].item() + calls.get() as f64
            },
            &[Tensor::scalar(1.0)],
            1e-5,
        );
        assert!(matches!(res, Err(GraphError::Contract(_))));
    }

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(0.0, 0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1, 0.0) - 0.1 / 1.1).abs() < 1e-15);
        assert_eq!(relative_error(1e-12, 0.0, 1e-6), 1e-6);
    }
}
