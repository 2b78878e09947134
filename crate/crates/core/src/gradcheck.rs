//! Central-difference gradient verification.

use crate::{Real, Tensor};

pub const DEFAULT_EPS: f64 = 1e-3;

/// Maximum relative error between the analytic gradient returned by `f` at
/// `x` and central differences with step `eps`.
///
/// Per coordinate the error is `|a - n| / max(1e-8, |a| + |n|)`.
pub fn grad_check<F, Func>(mut f: Func, x: &Tensor<F>, eps: F) -> F
where
    F: Real,
    Func: FnMut(&Tensor<F>) -> (F, Tensor<F>),
{
    let (_, analytic) = f(x);
    let two_eps = eps + eps;
    let floor = F::from_f64(1e-8);
    let mut probe = x.clone();
    let mut worst = F::ZERO;
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let (plus, _) = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let (minus, _) = f(&probe);
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / two_eps;
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / floor.max(a.abs() + numeric.abs());
        worst = worst.max(err);
    }
    worst
}
