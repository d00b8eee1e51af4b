//! Central finite-difference gradient checks in `f64`.

use ndarray::Array2;

use crate::autodiff::param::{ParamId, ParamStore};
use crate::autodiff::tape::{Tape, Var};
use crate::autodiff::AutodiffError;

/// Entries whose analytic and numeric derivatives are both below this
/// magnitude are compared absolutely rather than relatively. Central
/// differences at step `1e-6` on an O(1) loss carry roundoff of about
/// `1e-10`, so a smaller floor would report noise on near-zero entries.
pub const GRAD_FLOOR: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, GRAD_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Compares reverse-mode gradients of the scalar `f` at `point` against
/// central differences with the given step; returns the largest relative
/// error over all input entries.
pub fn gradcheck<F>(f: F, point: &[Array2<f64>], step: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |inputs: &[Array2<f64>]| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let vars = inputs.iter().map(|x| tape.constant(x.clone())).collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let vars = point.iter().map(|x| tape.input(x.clone())).collect::<Result<Vec<_>, _>>()?;
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe = point.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let analytic = grads.wrt(v).cloned().unwrap_or_else(|| Array2::zeros(point[k].raw_dim()));
        for idx in 0..point[k].len() {
            let pos = (idx / point[k].ncols(), idx % point[k].ncols());
            let base = point[k][pos];
            probe[k][pos] = base + step;
            let up = eval(&probe)?;
            probe[k][pos] = base - step;
            let down = eval(&probe)?;
            probe[k][pos] = base;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(analytic[pos], numeric));
        }
    }
    Ok(worst)
}

/// Gradient check over the trainable entries of every parameter in `store`
/// (in-mask entries only for masked parameters). `f` builds the loss from
/// the store on a fresh tape. `corrupt` adds a perturbation to the analytic
/// gradient and exists so callers can exercise the failure path.
pub fn gradcheck_params<F>(
    store: &ParamStore<f64>,
    f: F,
    step: f64,
    corrupt: f64,
) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let grads = tape.backward(out)?;
    let mut analytic = store.clone();
    analytic.zero_grad();
    analytic.accumulate(&tape, &grads);

    let eval = |s: &ParamStore<f64>| -> Result<f64, AutodiffError> {
        let mut t = Tape::new();
        let out = f(&mut t, s)?;
        Ok(t.scalar(out))
    };

    let mut probe = store.clone();
    let mut worst = 0.0f64;
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        for pos in store.get(id).trainable_positions() {
            let base = store.get(id).value()[pos];
            probe.value_mut(id)[pos] = base + step;
            let up = eval(&probe)?;
            probe.value_mut(id)[pos] = base - step;
            let down = eval(&probe)?;
            probe.value_mut(id)[pos] = base;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.get(id).grad()[pos] + corrupt;
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}
