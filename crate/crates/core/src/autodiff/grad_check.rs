use super::params::ParamSet;
use super::tape::{Tape, Var};
use crate::error::{ManError, Result};

/// Compares reverse-mode gradients of a scalar function against central
/// differences, perturbing every component of every parameter in `params`.
///
/// Returns the largest `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(params: &ParamSet, h: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let eval = |p: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new(p);
        let root = f(&mut tape)?;
        let v = tape.scalar(root);
        if !v.is_finite() {
            return Err(ManError::NonFinite(format!("function value {v}")));
        }
        Ok(v)
    };

    let analytic = {
        let mut tape = Tape::new(params);
        let root = f(&mut tape)?;
        tape.backward(root)?
    };

    let mut work = params.clone();
    let mut worst = 0.0f64;
    for id in params.ids() {
        let t = params.get(id);
        let a = analytic.dense(id, t.len(), t.cols());
        for (i, &orig) in t.values().iter().enumerate() {
            work.get_mut(id).values_mut()[i] = orig + h;
            let up = eval(&work)?;
            work.get_mut(id).values_mut()[i] = orig - h;
            let down = eval(&work)?;
            work.get_mut(id).values_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * h);
            if !a[i].is_finite() {
                return Err(ManError::NonFinite(format!(
                    "analytic gradient of {}[{i}]",
                    params.name(id)
                )));
            }
            let err = (a[i] - numeric).abs() / 1f64.max(a[i].abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
