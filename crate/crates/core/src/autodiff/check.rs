use super::{Array, AutodiffError, Tape, Var};

/// Symmetric relative error used by gradient checks.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Compares the tape gradient of `f` against central differences.
///
/// `f` receives a fresh tape and a 1-D leaf holding `params` and must return
/// a scalar node. Returns the maximum [`relative_error`] over all parameters.
pub fn finite_difference_check<F, E>(f: F, params: &[f64], epsilon: f64) -> Result<f64, E>
where
    F: Fn(&mut Tape, Var) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    if !(epsilon > 0.0) {
        return Err(AutodiffError::InvalidStep(epsilon).into());
    }
    let eval = |p: &[f64]| -> Result<f64, E> {
        let mut tape = Tape::new();
        let x = tape.leaf(Array::vector(p.to_vec()));
        let root = f(&mut tape, x)?;
        let value = tape.item(root);
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { value }.into());
        }
        Ok(value)
    };

    let mut tape = Tape::new();
    let x = tape.leaf(Array::vector(params.to_vec()));
    let root = f(&mut tape, x)?;
    let value = tape.item(root);
    if !value.is_finite() {
        return Err(AutodiffError::NonFinite { value }.into());
    }
    tape.backward(root)?;
    let analytic = tape.grad(x).data().to_vec();

    let mut worst: f64 = 0.0;
    let mut probe = params.to_vec();
    for i in 0..params.len() {
        probe[i] = params[i] + epsilon;
        let up = eval(&probe)?;
        probe[i] = params[i] - epsilon;
        let down = eval(&probe)?;
        probe[i] = params[i];
        let numeric = (up - down) / (2.0 * epsilon);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}
