/// Outcome of a finite-difference gradient comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// coordinates whose one-sided slopes disagree (a kink between p−h and p+h)
    pub skipped_kinks: usize,
}

/// Denominator floor for the relative error of near-zero gradients.
pub const REL_FLOOR: f64 = 1e-4;

/// Compares the analytic gradient returned by `f` at `params` against central
/// finite differences with step `h`.
///
/// `f` maps a flat parameter vector to `(loss, gradient)`. Per coordinate the
/// error is `|analytic − numeric| / max(|analytic|, |numeric|, REL_FLOOR)`.
/// Coordinates where the forward and backward one-sided slopes differ by more
/// than 1% are treated as sitting on a non-differentiable point and skipped.
pub fn grad_check<F>(mut f: F, params: &[f64], h: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let (f0, analytic) = f(params);
    assert_eq!(
        analytic.len(),
        params.len(),
        "gradient length differs from parameter count"
    );
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped_kinks: 0,
    };
    let mut p = params.to_vec();
    for i in 0..params.len() {
        p[i] = params[i] + h;
        let fp = f(&p).0;
        p[i] = params[i] - h;
        let fm = f(&p).0;
        p[i] = params[i];
        let fwd = (fp - f0) / h;
        let bwd = (f0 - fm) / h;
        if (fwd - bwd).abs() > 1e-2 * fwd.abs().max(bwd.abs()) + 1e-7 {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        report.checked += 1;
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = Some(i);
        }
    }
    report
}
