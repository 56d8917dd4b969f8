use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. Returns `max_i |analytic_i − numeric_i| / max(1, |analytic_i|)`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    finite_diff_check_many(|g, vs| f(g, vs[0]), std::slice::from_ref(x), eps)
}

/// Multi-input variant: every tensor in `xs` is perturbed coordinate by coordinate.
pub fn finite_diff_check_many<F>(f: F, xs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("eps must be positive, got {eps}")));
    }
    let analytic = {
        let mut g = Graph::new();
        let vars = xs
            .iter()
            .map(|x| g.leaf(&x.clone().with_grad()))
            .collect::<Result<Vec<_>>>()?;
        let loss = f(&mut g, &vars)?;
        let v = g.value(loss).item()?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("f(x) = {v}")));
        }
        g.backward(loss)?;
        vars.iter()
            .zip(xs)
            .map(|(&v, x)| g.grad(v).map_or_else(|| vec![0.0; x.len()], <[f64]>::to_vec))
            .collect::<Vec<_>>()
    };

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = inputs
            .iter()
            .map(|x| g.constant(x.clone()))
            .collect::<Result<Vec<_>>>()?;
        let loss = f(&mut g, &vars)?;
        let v = g.value(loss).item()?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("f(x) = {v}")))
        }
    };

    let mut work: Vec<Tensor> = xs.to_vec();
    let mut worst = 0.0f64;
    for (ti, grad) in analytic.iter().enumerate() {
        for ci in 0..grad.len() {
            let orig = work[ti].data()[ci];
            work[ti].data_mut()[ci] = orig + eps;
            let plus = eval(&work)?;
            work[ti].data_mut()[ci] = orig - eps;
            let minus = eval(&work)?;
            work[ti].data_mut()[ci] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (grad[ci] - numeric).abs() / grad[ci].abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_to_roundoff() {
        let x = Tensor::row(vec![0.3, -1.2, 2.5]);
        let err = finite_diff_check(
            |g, x| {
                let sq = g.square(x);
                let s = g.scale(sq, 1.5);
                Ok(g.sum(s))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-7, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::row(vec![1.0, 2.0]);
        let err = finite_diff_check(|g, _x| g.constant(Tensor::scalar(4.0)), &x, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn rejects_non_finite() {
        let x = Tensor::row(vec![-1.0]);
        let r = finite_diff_check(
            |g, x| {
                let l = g.log(x);
                Ok(g.sum(l))
            },
            &x,
            1e-5,
        );
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn rejects_bad_eps() {
        let x = Tensor::row(vec![1.0]);
        assert!(finite_diff_check(|g, x| Ok(g.sum(x)), &x, 0.0).is_err());
    }
}
