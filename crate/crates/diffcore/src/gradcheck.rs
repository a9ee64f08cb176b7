//! Central finite-difference oracle for tape gradients.
//!
//! The numeric side only evaluates loss values; it never reads anything the
//! reverse sweep produced, so it stays an independent check.

use crate::error::Result;
use crate::param::ParamStore;
use crate::tape::{Tape, Var};

/// Worst disagreement found for one parameter.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() <= tol
    }
}

/// Relative error with a floor on the denominator so entries whose true
/// gradient is exactly zero compare on an absolute scale of `floor`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_FLOOR: f64 = 1e-6;

/// Compares reverse-mode gradients of `build` against central differences
/// with step `h` on every parameter element in `store`.
pub fn check<F>(store: &mut ParamStore, h: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    tape.backward(loss, store)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = build(&mut t, s)?;
        Ok(t.value(l).item())
    };

    let mut params = Vec::new();
    for id in store.ids().collect::<Vec<_>>() {
        let analytic = store.grad(id).clone();
        let base = store.value(id).clone();
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for k in 0..base.len() {
            let mut plus = base.clone();
            plus.data_mut()[k] += h;
            store.set_value(id, plus)?;
            let fp = eval(store)?;
            let mut minus = base.clone();
            minus.data_mut()[k] -= h;
            store.set_value(id, minus)?;
            let fm = eval(store)?;
            store.set_value(id, base.clone())?;

            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data()[k];
            max_abs = max_abs.max((a - numeric).abs());
            max_rel = max_rel.max(relative_error(a, numeric, DEFAULT_FLOOR));
        }
        params.push(ParamCheck {
            name: store.get(id).name().to_string(),
            max_rel_err: max_rel,
            max_abs_err: max_abs,
        });
    }
    Ok(GradCheckReport { params })
}
