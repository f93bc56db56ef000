use super::NcError;

/// Compares every analytic partial derivative against central finite
/// differences of `f` and returns the maximum relative error
/// max |a - n| / max(|a|, |n|, 1e-6).
///
/// `f` is a scalar loss over the flattened parameter vector; `analytic`
/// must be its gradient at `params`.
///
/// The 1e-6 denominator floor absorbs central-difference roundoff
/// (about 1e-11 at eps = 1e-5 in f64) on parameters whose true gradient
/// is zero — e.g. a bias feeding a train-mode batch norm — without
/// masking genuine mismatches on gradients large enough to matter.
pub fn grad_check<F>(
    mut f: F,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
) -> Result<f64, NcError>
where
    F: FnMut(&[f64]) -> f64,
{
    if eps <= 0.0 {
        return Err(NcError::GradCheck("eps must be positive".into()));
    }
    if params.len() != analytic.len() {
        return Err(NcError::Dim(format!(
            "grad_check: {} params vs {} analytic partials",
            params.len(),
            analytic.len()
        )));
    }
    if !f(params).is_finite() {
        return Err(NcError::NonFinite("grad_check loss"));
    }
    let mut theta = params.to_vec();
    let mut max_rel = 0.0f64;
    for k in 0..theta.len() {
        let orig = theta[k];
        theta[k] = orig + eps;
        let fp = f(&theta);
        theta[k] = orig - eps;
        let fm = f(&theta);
        theta[k] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(NcError::NonFinite("grad_check perturbed loss"));
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_quadratics() {
        let f = |t: &[f64]| t[0] * t[0];
        let err = grad_check(f, &[3.0], &[6.0], 1e-5).unwrap();
        assert!(err < 1e-9, "rel err {err}");
    }

    #[test]
    fn detects_corrupted_gradient() {
        let f = |t: &[f64]| t[0] * t[0];
        let err = grad_check(f, &[3.0], &[6.0 * 1.01], 1e-5).unwrap();
        assert!(err > 1e-3, "rel err {err}");
    }

    #[test]
    fn rejects_non_finite_loss() {
        let f = |_: &[f64]| f64::NAN;
        assert!(matches!(grad_check(f, &[1.0], &[0.0], 1e-5), Err(NcError::NonFinite(_))));
    }

    #[test]
    fn rejects_bad_eps() {
        let f = |t: &[f64]| t[0];
        assert!(grad_check(f, &[1.0], &[1.0], 0.0).is_err());
    }
}
