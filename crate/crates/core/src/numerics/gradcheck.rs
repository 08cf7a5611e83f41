use crate::error::{Error, Result};
use crate::numerics::Scalar;

/// Outcome of comparing an analytic gradient to central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Default step: `1e-3` in single precision, `1e-5` in the f64 shadow mode.
pub fn default_step<T: Scalar>() -> T {
    if std::mem::size_of::<T>() <= 4 {
        T::from_f64_lossy(1e-3)
    } else {
        T::from_f64_lossy(1e-5)
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `f` around `point`.
pub fn finite_diff_check<T, F>(mut f: F, point: &[T], analytic: &[T], eps: T) -> Result<GradCheck>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    if point.len() != analytic.len() {
        return Err(Error::invalid(format!(
            "{} parameters but {} analytic gradient entries",
            point.len(),
            analytic.len()
        )));
    }
    if !(eps > T::zero()) {
        return Err(Error::invalid("finite difference step must be positive"));
    }
    let mut x = point.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: point.len(),
    };
    let two_eps = (eps + eps).as_f64();
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = f(&x).as_f64();
        x[i] = orig - eps;
        let minus = f(&x).as_f64();
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                context: format!("finite difference evaluation gave {plus} / {minus}"),
                index: i,
            });
        }
        let numeric = (plus - minus) / two_eps;
        let a = analytic[i].as_f64();
        let err = relative_error(a, numeric);
        if err > report.max_rel_error || !err.is_finite() {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = [0.5f32, -2.0, 3.0];
        let f = |w: &[f32]| w.iter().zip(&x).map(|(a, b)| a * b).sum::<f32>();
        let r = finite_diff_check(f, &[0.1, 0.2, 0.3], &x, default_step()).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_detected() {
        let f = |w: &[f64]| w[0] * w[0] + 3.0 * w[1];
        let point = [1.5, 0.0];
        let good = [3.0, 3.0];
        let bad = [6.0, 6.0];
        assert!(
            finite_diff_check(f, &point, &good, 1e-5)
                .unwrap()
                .max_rel_error
                < 1e-8
        );
        let r = finite_diff_check(f, &point, &bad, 1e-5).unwrap();
        assert!((r.max_rel_error - 0.5).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn non_finite_names_index() {
        let f = |w: &[f64]| if w[1] > 0.0 { f64::NAN } else { w[0] };
        let err = finite_diff_check(f, &[0.0, 0.0], &[1.0, 0.0], 1e-5).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1, .. }), "{err}");
    }
}
