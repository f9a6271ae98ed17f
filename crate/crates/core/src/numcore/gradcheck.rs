//! Central finite-difference verification of analytic gradients.
//!
//! The checker treats the function under test as a black box `f(params) ->
//! scalar`: it never inspects how the analytic gradient was produced, so a
//! bookkeeping bug in a backward pass cannot also hide in the check.

use super::tensor::{NumError, Tensor};

/// Default perturbation step for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Default relative-error tolerance.
pub const DEFAULT_TOL: f64 = 1e-4;

/// Floor used in the relative-error denominator so near-zero gradients are
/// compared absolutely rather than blowing up the ratio.
const REL_FLOOR: f64 = 1e-6;

/// Identifies the single worst-agreeing element across all checked tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstElement {
    pub param_index: usize,
    pub element_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome of one finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error per parameter tensor, in parameter order.
    pub per_param_max: Vec<f64>,
    /// Largest relative error overall.
    pub max_rel_err: f64,
    /// Where that largest error occurred.
    pub worst: Option<WorstElement>,
    /// Total number of scalar elements compared.
    pub elements_checked: usize,
    /// Tolerance the sweep was run against.
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` against central differences of `f` at `params`.
///
/// For every scalar element the check evaluates `f` at `p + step` and
/// `p - step` (all other elements held fixed) and forms
/// `(f_plus - f_minus) / (2 * step)`. Relative error is
/// `|a - n| / max(|a|, |n|, 1e-6)`.
///
/// Errors if `analytic` shapes do not match `params`, or if `f` returns a
/// non-finite value (the report names the offending parameter tensor).
pub fn grad_check<F>(
    f: F,
    params: &[Tensor],
    analytic: &[Tensor],
    step: f64,
    tol: f64,
) -> Result<GradCheckReport, NumError>
where
    F: Fn(&[Tensor]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(NumError::ShapeMismatch {
            context: "grad_check: parameter count vs analytic gradient count".to_string(),
            expected: vec![params.len()],
            actual: vec![analytic.len()],
        });
    }
    for (idx, (p, a)) in params.iter().zip(analytic).enumerate() {
        a.expect_shape(&format!("grad_check analytic gradient {idx}"), p.shape())?;
    }

    let mut work: Vec<Tensor> = params.to_vec();
    let mut per_param_max = vec![0.0_f64; params.len()];
    let mut worst: Option<WorstElement> = None;
    let mut elements = 0usize;

    for pi in 0..params.len() {
        for ei in 0..params[pi].len() {
            let original = work[pi].data()[ei];

            work[pi].data_mut()[ei] = original + step;
            let f_plus = f(&work);
            work[pi].data_mut()[ei] = original - step;
            let f_minus = f(&work);
            work[pi].data_mut()[ei] = original;

            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(NumError::NonFinite {
                    context: format!(
                        "grad_check: function value at perturbed element {ei}"
                    ),
                    param_index: pi,
                });
            }

            let numeric = (f_plus - f_minus) / (2.0 * step);
            let a = analytic[pi].data()[ei];
            if !a.is_finite() {
                return Err(NumError::NonFinite {
                    context: format!("grad_check: analytic gradient element {ei}"),
                    param_index: pi,
                });
            }
            let err = rel_err(a, numeric);
            elements += 1;
            if err > per_param_max[pi] {
                per_param_max[pi] = err;
            }
            if worst.as_ref().map_or(true, |w| err > w.rel_err) {
                worst = Some(WorstElement {
                    param_index: pi,
                    element_index: ei,
                    analytic: a,
                    numeric,
                    rel_err: err,
                });
            }
        }
    }

    let max_rel_err = per_param_max.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_param_max,
        max_rel_err,
        worst,
        elements_checked: elements,
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_exact_gradient_of_quadratic() {
        // f(p) = sum(p^2), df/dp = 2p
        let p = Tensor::new(vec![4], vec![0.5, -1.25, 2.0, 3.5]).unwrap();
        let analytic = p.map(|v| 2.0 * v);
        let report = grad_check(
            |ps| ps[0].iter().map(|v| v * v).sum(),
            &[p],
            &[analytic],
            DEFAULT_STEP,
            DEFAULT_TOL,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
        assert_eq!(report.elements_checked, 4);
    }

    #[test]
    fn flags_wrong_gradient_and_names_worst_element() {
        let p = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        // claim df/dp = p instead of 2p: element 1 is worst in absolute terms
        let wrong = p.clone();
        let report = grad_check(
            |ps| ps[0].iter().map(|v| v * v).sum(),
            &[p],
            &[wrong],
            DEFAULT_STEP,
            DEFAULT_TOL,
        )
        .unwrap();
        assert!(!report.passed());
        let worst = report.worst.unwrap();
        assert_eq!(worst.param_index, 0);
        assert!((worst.numeric - 2.0 * worst.analytic).abs() < 1e-3);
    }

    #[test]
    fn near_zero_gradients_compared_absolutely() {
        // f(p) = 0 everywhere; analytic zero must pass even though the
        // relative denominator would vanish without the floor.
        let p = Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap();
        let zero = Tensor::zeros(&[3]);
        let report = grad_check(|_| 0.0, &[p], &[zero], DEFAULT_STEP, DEFAULT_TOL).unwrap();
        assert!(report.passed());
        assert_eq!(report.max_rel_err, 0.0);
    }

    #[test]
    fn non_finite_function_value_is_reported_with_param_index() {
        let p = Tensor::new(vec![1], vec![1.0]).unwrap();
        let zero = Tensor::zeros(&[1]);
        let err = grad_check(|_| f64::NAN, &[p], &[zero], DEFAULT_STEP, DEFAULT_TOL);
        match err {
            Err(NumError::NonFinite { param_index, .. }) => assert_eq!(param_index, 0),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn rejects_mismatched_gradient_shape() {
        let p = Tensor::zeros(&[2, 2]);
        let bad = Tensor::zeros(&[4]);
        assert!(grad_check(|_| 0.0, &[p], &[bad], DEFAULT_STEP, DEFAULT_TOL).is_err());
    }

    #[test]
    fn multi_parameter_errors_tracked_per_param() {
        // f = sum(a) + sum(3*b); gradients are 1 and 3
        let a = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        let ga = Tensor::filled(&[2], 1.0);
        let gb = Tensor::filled(&[2], 2.0); // wrong: true gradient is 3
        let report = grad_check(
            |ps| ps[0].sum() + 3.0 * ps[1].sum(),
            &[a, b],
            &[ga, gb],
            DEFAULT_STEP,
            DEFAULT_TOL,
        )
        .unwrap();
        assert!(report.per_param_max[0] <= DEFAULT_TOL);
        assert!(report.per_param_max[1] > 0.1);
        assert_eq!(report.worst.unwrap().param_index, 1);
    }
}
