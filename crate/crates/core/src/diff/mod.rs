//! Reverse-mode differentiation engine.

mod tape;
mod tensor;

pub use tape::{concat_last, Index, Tape, Var};
pub use tensor::Tensor;

/// Regularization used by [`safe_norm`] unless a caller picks another.
pub const NORM_EPS: f64 = 1e-8;

/// Euclidean norm over `axis`, computed as `sqrt(Σv² + eps²) − eps`.
///
/// Exactly zero at the origin with a finite gradient there.
pub fn safe_norm(v: Var<'_>, axis: usize, eps: f64) -> Var<'_> {
    assert!(eps > 0.0, "safe_norm needs eps > 0");
    v.square().sum_axis(axis).offset(eps * eps).sqrt().offset(-eps)
}

/// Gradients of `f` with respect to `wrt`, recording the backward pass.
///
/// Shorthand for `tape.grad(f, wrt, true)`, used where the result feeds a second
/// differentiation (force losses).
pub fn grad_taped<'t>(f: Var<'t>, wrt: &[Var<'t>]) -> crate::Result<Vec<Var<'t>>> {
    f.tape().grad(f, wrt, true)
}
