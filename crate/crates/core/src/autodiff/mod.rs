//! Reverse-mode differentiation over small dense matrices.
//!
//! The tape records values eagerly and replays vector-Jacobian products in
//! reverse. Training steps of the linear forecasters are recorded with their
//! closed-form parameter gradients written out as primitives, so a single
//! reverse sweep differentiates *through* gradient descent.

mod tape;

pub use tape::{irfft_adjoint, moving_average, Fault, Gradients, Tape, Var};

use ndarray::Array2;

use crate::error::Result;

/// Guard added under the square root of complex magnitudes.
pub const MAGNITUDE_GUARD: f64 = 1e-12;

/// Outcome of comparing a recorded gradient with central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub analytic: Array2<f64>,
    pub numeric: Array2<f64>,
}

/// Compare the tape gradient of `f` at `x` against central differences.
///
/// The per-coordinate error is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, x: &Array2<f64>, eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_with_fault(f, x, eps, None)
}

/// [`grad_check`] with one backward rule of the analytic pass corrupted.
pub fn grad_check_with_fault<F>(f: F, x: &Array2<f64>, eps: f64, fault: Option<Fault>) -> Result<GradCheck>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    tape.inject_fault(fault);
    let leaf = tape.leaf(x.clone());
    let loss = f(&mut tape, leaf)?;
    let analytic = tape.backward(loss)?.wrt(&tape, leaf);

    let eval = |point: &Array2<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.leaf(point.clone());
        let out = f(&mut t, v)?;
        Ok(t.scalar_value(out))
    };

    let mut numeric = Array2::zeros(x.dim());
    let mut probe = x.clone();
    let mut max_rel_err = 0.0f64;
    for idx in ndarray::indices(x.dim()) {
        let orig = probe[idx];
        probe[idx] = orig + eps;
        let up = eval(&probe)?;
        probe[idx] = orig - eps;
        let down = eval(&probe)?;
        probe[idx] = orig;
        let n = (up - down) / (2.0 * eps);
        numeric[idx] = n;
        let a = analytic[idx];
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        max_rel_err = max_rel_err.max(rel);
    }
    Ok(GradCheck { max_rel_err, analytic, numeric })
}
