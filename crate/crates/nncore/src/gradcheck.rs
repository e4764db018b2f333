//! Central-difference gradient checks used by the test suites.

use crate::matrix::Matrix;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::{NnError, Result};

fn relative_error(autodiff: f64, numeric: f64) -> f64 {
    (autodiff - numeric).abs() / numeric.abs().max(1.0)
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    let m = tape.value(v);
    if m.shape() != (1, 1) {
        return Err(NnError::Usage(format!(
            "gradient check needs a scalar function, got {:?}",
            m.shape()
        )));
    }
    Ok(m.item())
}

/// Max over coordinates of `|autodiff - central difference| / max(1, |central difference|)`
/// for `f` evaluated at `point` (placed on the tape as a `1 x n` row).
pub fn finite_diff_check<F>(f: F, point: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.constant(Matrix::row(point));
    let y = f(&mut tape, x)?;
    scalar_of(&tape, y)?;
    let grads = tape.backward(y)?;
    let zeros = Matrix::zeros(1, point.len());
    let ad = grads.wrt(x).unwrap_or(&zeros).clone();

    let eval = |p: &[f64]| -> Result<f64> {
        let mut t = Tape::new();
        let x = t.constant(Matrix::row(p));
        let y = f(&mut t, x)?;
        scalar_of(&t, y)
    };
    let mut worst = 0.0f64;
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let up = eval(&probe)?;
        probe[i] = point[i] - step;
        let down = eval(&probe)?;
        probe[i] = point[i];
        let numeric = (up - down) / (2.0 * step);
        worst = worst.max(relative_error(ad.as_slice()[i], numeric));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest error.
    pub worst: Option<(ParamId, usize)>,
    pub checked: usize,
}

/// Gradient check over parameter coordinates. `loss` must build the same
/// scalar on every call; parameter values are perturbed in place and restored.
///
/// Gradients in `store` are overwritten with the autodiff gradient of `loss`.
pub fn param_finite_diff_check<F>(
    store: &mut ParamStore,
    coords: &[(ParamId, usize)],
    step: f64,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let y = loss(&mut tape, store)?;
    scalar_of(&tape, y)?;
    tape.backward_into(y, store)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for &(id, k) in coords {
        let ad = store.grad(id).as_slice()[k];
        let original = store.value(id).as_slice()[k];
        let eval_at = |v: f64, store: &mut ParamStore| -> Result<f64> {
            store.get_mut(id).value_mut()[k] = v;
            let mut t = Tape::new();
            let y = loss(&mut t, store)?;
            scalar_of(&t, y)
        };
        let up = eval_at(original + step, store)?;
        let down = eval_at(original - step, store)?;
        store.get_mut(id).value_mut()[k] = original;
        let err = relative_error(ad, (up - down) / (2.0 * step));
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((id, k));
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Every `(param, index)` coordinate of the trainable parameters.
pub fn all_coords(store: &ParamStore) -> Vec<(ParamId, usize)> {
    store
        .iter()
        .filter(|(_, p)| p.trainable)
        .flat_map(|(id, p)| (0..p.value().len()).map(move |k| (id, k)))
        .collect()
}
