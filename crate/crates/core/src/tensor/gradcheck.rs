use super::{Result, Tape, Tensor, Var};

/// Largest relative error between central differences and reverse-mode
/// gradients over every coordinate of `params`.
///
/// `f` builds a scalar loss from leaves holding the supplied values; it is
/// called once for the analytic gradient and twice per coordinate for the
/// numeric one. The denominator is `max(|analytic|, 1e-8)`.
pub fn finite_difference_check<F>(params: &[Tensor], h: f64, mut f: F) -> Result<f64>
where
    F: for<'t> FnMut(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let analytic = {
        let tape = Tape::new();
        let leaves: Vec<Var<'_>> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = f(&tape, &leaves)?;
        let grads = tape.backward(loss)?;
        leaves
            .iter()
            .map(|v| grads.wrt(v).cloned().expect("leaf gradient"))
            .collect::<Vec<_>>()
    };

    let mut eval = |values: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let leaves: Vec<Var<'_>> = values.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = f(&tape, &leaves)?;
        Ok(loss.item().expect("scalar loss"))
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst: f64 = 0.0;
    for p in 0..params.len() {
        for k in 0..params[p].len() {
            let orig = params[p].data()[k];
            work[p].data_mut()[k] = orig + h;
            let plus = eval(&work)?;
            work[p].data_mut()[k] = orig - h;
            let minus = eval(&work)?;
            work[p].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let exact = analytic[p].data()[k];
            let err = (numeric - exact).abs() / exact.abs().max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_tight() {
        let err = finite_difference_check(&[Tensor::scalar(1.0)], 1e-5, |_, v| v[0].mul(&v[0]))
            .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let err = finite_difference_check(&[Tensor::vector(vec![0.5, -1.0])], 1e-5, |t, _| {
            Ok(t.constant(Tensor::scalar(4.0)))
        })
        .unwrap();
        assert_eq!(err, 0.0);
    }
}
