//! Adam with bias correction and global-norm gradient clipping.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result, Tensor};

pub const ADAM_BETA1: f32 = 0.9;
pub const ADAM_BETA2: f32 = 0.99;
pub const ADAM_EPS: f32 = 1e-8;

/// Moment estimates for a list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
    /// Number of completed updates.
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }

    fn check(&self, params: &[Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} params, {} grads, {} moments",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            ));
        }
        for (i, ((p, g), m)) in params.iter().zip(grads).zip(&self.first).enumerate() {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("tensor {i}: param {:?} grad {:?} moment {:?}", p.shape(), g.shape(), m.shape()),
                ));
            }
        }
        Ok(())
    }
}

/// One Adam update (beta1 0.9, beta2 0.99, eps 1e-8).
///
/// Non-finite gradients abort the step before anything is modified.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, lr: f32) -> Result<()> {
    state.check(params, grads)?;
    for (i, g) in grads.iter().enumerate() {
        g.check_finite(&format!("grad tensor {i}"))?;
    }
    let step = state.step + 1;
    let bc1 = (1.0 - libm::pow(f64::from(ADAM_BETA1), step as f64)) as f32;
    let bc2 = (1.0 - libm::pow(f64::from(ADAM_BETA2), step as f64)) as f32;
    let (b1, b2) = (ADAM_BETA1, ADAM_BETA2);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let mhat = *mv / bc1;
            let vhat = *vv / bc2;
            *pv -= lr * mhat / (libm::sqrtf(vhat) + ADAM_EPS);
        }
    }
    state.step = step;
    Ok(())
}

/// Global L2 norm over all tensors, accumulated in f64.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    let mut s = 0.0f64;
    for g in grads {
        for &v in g.data() {
            s += f64::from(v) * f64::from(v);
        }
    }
    libm::sqrt(s)
}

/// Rescales `grads` so their global norm is at most `max_norm`.
///
/// Returns the norm before clipping. Norms within f32 rounding of the limit
/// are left untouched, which makes the operation idempotent.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f32) -> f64 {
    let norm = global_norm(grads);
    let limit = f64::from(max_norm);
    if norm <= limit * (1.0 + 4.0 * f64::from(f32::EPSILON)) || !norm.is_finite() {
        return norm;
    }
    let scale = (limit / norm) as f32;
    for g in grads.iter_mut() {
        g.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn t(v: &[f32]) -> Tensor {
        Tensor::new(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn zero_grads_leave_params() {
        let mut p = vec![t(&[0.5, -1.0]), t(&[3.0])];
        let g = vec![t(&[0.0, 0.0]), t(&[0.0])];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 1e-3).unwrap();
        assert_eq!(p, vec![t(&[0.5, -1.0]), t(&[3.0])]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn one_step_scalar() {
        // m = 0.1, v = 0.01, bias-corrected both to 1 -> step of lr/(1+eps).
        let mut p = vec![t(&[0.0])];
        let g = vec![t(&[1.0])];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 1e-3).unwrap();
        assert!((p[0].data()[0] + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn rejects_non_finite_without_touching_state() {
        let mut p = vec![t(&[1.0, 2.0])];
        let g = vec![t(&[f32::NAN, 0.0])];
        let mut s = AdamState::new(&p);
        assert!(matches!(adam_step(&mut p, &g, &mut s, 1e-3), Err(Error::NonFinite { .. })));
        assert_eq!(p[0].data(), &[1.0, 2.0]);
        assert_eq!(s.step, 0);
    }

    #[test]
    fn bit_deterministic() {
        let g = vec![t(&[0.3, -0.7, 1e-4])];
        let run = || {
            let mut p = vec![t(&[1.0, 2.0, 3.0])];
            let mut s = AdamState::new(&p);
            for _ in 0..5 {
                adam_step(&mut p, &g, &mut s, 6e-4).unwrap();
            }
            (p, s)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clip_cases() {
        let mut g = vec![t(&[0.3, 0.4])];
        clip_global_norm(&mut g, 1.0);
        assert_eq!(g[0].data(), &[0.3, 0.4]);
        let mut g = vec![t(&[3.0, 4.0])];
        clip_global_norm(&mut g, 1.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-7);
        assert!((g[0].data()[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn clip_multi_tensor_matches_flatten_oracle() {
        let parts = [vec![1.0f32, -2.0, 0.5], vec![3.0], vec![-0.25, 4.0]];
        let flat: Vec<f32> = parts.iter().flatten().copied().collect();
        let n: f64 = flat.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        let want: Vec<f32> = flat.iter().map(|&v| v * (1.5 / n) as f32).collect();
        let mut g: Vec<Tensor> = parts.iter().map(|p| t(p)).collect();
        clip_global_norm(&mut g, 1.5);
        let got: Vec<f32> = g.iter().flat_map(|x| x.data().to_vec()).collect();
        assert_eq!(got, want);
    }

    proptest! {
        #[test]
        fn clip_is_idempotent(v in proptest::collection::vec(-50.0f32..50.0, 1..40), max in 0.1f32..5.0) {
            let mut once = vec![t(&v)];
            clip_global_norm(&mut once, max);
            let mut twice = once.clone();
            clip_global_norm(&mut twice, max);
            prop_assert_eq!(once, twice);
        }
    }
}
