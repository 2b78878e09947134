//! Tensor-level forward and backward passes for the primitives the model is
//! built from. The model itself calls the slice kernels in [`crate::kernels`]
//! directly to work on row ranges; these wrappers carry the shape checks.

use alloc::format;
use alloc::vec;

use crate::kernels::{self, HeadLayout};
use crate::{Error, Real, Result, Tensor};

/// Layer-norm epsilon used throughout the model.
pub const LN_EPS: f64 = 1e-5;

fn expect_2d<F: Real>(op: &'static str, t: &Tensor<F>) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        ref s => Err(Error::shape(op, format!("expected a matrix, got {s:?}"))),
    }
}

pub fn matmul<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, k) = expect_2d("matmul", a)?;
    let (k2, n) = expect_2d("matmul", b)?;
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!("inner dims disagree: [{m},{k}] x [{k2},{n}]"),
        ));
    }
    let mut out = Tensor::zeros(&[m, n]);
    kernels::gemm(a.data(), b.data(), out.data_mut(), m, k, n);
    Ok(out)
}

/// Gradients of `a · b` with respect to both operands.
pub fn matmul_backward<F: Real>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    dout: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let (m, k) = expect_2d("matmul_backward", a)?;
    let (_, n) = expect_2d("matmul_backward", b)?;
    dout.expect_shape("matmul_backward", &[m, n])?;
    let mut da = Tensor::zeros(&[m, k]);
    let mut db = Tensor::zeros(&[k, n]);
    kernels::gemm_nt(dout.data(), b.data(), da.data_mut(), m, n, k);
    kernels::gemm_tn(a.data(), dout.data(), db.data_mut(), m, k, n);
    Ok((da, db))
}

fn pack_qkv<F: Real>(q: &Tensor<F>, k: &Tensor<F>, v: &Tensor<F>) -> Result<(usize, usize, alloc::vec::Vec<F>)> {
    let (t, d) = expect_2d("causal_attention", q)?;
    k.expect_shape("causal_attention", &[t, d])?;
    v.expect_shape("causal_attention", &[t, d])?;
    let mut qkv = vec![F::ZERO; t * 3 * d];
    for r in 0..t {
        qkv[r * 3 * d..r * 3 * d + d].copy_from_slice(q.row(r));
        qkv[r * 3 * d + d..r * 3 * d + 2 * d].copy_from_slice(k.row(r));
        qkv[r * 3 * d + 2 * d..r * 3 * d + 3 * d].copy_from_slice(v.row(r));
    }
    Ok((t, d, qkv))
}

fn single_head(d: usize) -> HeadLayout {
    HeadLayout {
        stride: 3 * d,
        q: 0,
        k: d,
        v: 2 * d,
        dim: d,
    }
}

/// Scaled dot-product attention with a causal mask, scale `1/sqrt(d)`.
/// Returns the attended values and the post-softmax weights.
pub fn causal_attention<F: Real>(
    q: &Tensor<F>,
    k: &Tensor<F>,
    v: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let (t, d, qkv) = pack_qkv(q, k, v)?;
    let (out, weights) = attention_slices(&qkv, t, d)?;
    Ok((Tensor::new(&[t, d], out)?, Tensor::new(&[t, t], weights)?))
}

/// Slice form of [`causal_attention`] over a packed `[t, 3d]` buffer; the
/// only route through which an empty sequence can be expressed.
pub fn attention_slices<F: Real>(
    qkv: &[F],
    t: usize,
    d: usize,
) -> Result<(alloc::vec::Vec<F>, alloc::vec::Vec<F>)> {
    if t == 0 {
        return Err(Error::EmptySequence);
    }
    if d == 0 || qkv.len() != t * 3 * d {
        return Err(Error::shape("causal_attention", "packed q|k|v length"));
    }
    let mut weights = vec![F::ZERO; t * t];
    let mut out = vec![F::ZERO; t * d];
    let scale = F::ONE / F::from_f64(d as f64).sqrt();
    kernels::attention_head_forward(qkv, single_head(d), t, 0, scale, &mut weights, &mut out, d, 0);
    Ok((out, weights))
}

/// Gradients of [`causal_attention`] with respect to q, k and v.
pub fn causal_attention_backward<F: Real>(
    q: &Tensor<F>,
    k: &Tensor<F>,
    v: &Tensor<F>,
    weights: &Tensor<F>,
    dout: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let (t, d, qkv) = pack_qkv(q, k, v)?;
    weights.expect_shape("causal_attention_backward", &[t, t])?;
    dout.expect_shape("causal_attention_backward", &[t, d])?;
    let mut dqkv = vec![F::ZERO; t * 3 * d];
    let mut scratch = vec![F::ZERO; t];
    let scale = F::ONE / F::from_f64(d as f64).sqrt();
    kernels::attention_head_backward(
        &qkv,
        single_head(d),
        t,
        0,
        scale,
        weights.data(),
        dout.data(),
        d,
        0,
        &mut dqkv,
        &mut scratch,
    );
    let mut dq = Tensor::zeros(&[t, d]);
    let mut dk = Tensor::zeros(&[t, d]);
    let mut dv = Tensor::zeros(&[t, d]);
    for r in 0..t {
        let row = &dqkv[r * 3 * d..(r + 1) * 3 * d];
        dq.row_mut(r).copy_from_slice(&row[..d]);
        dk.row_mut(r).copy_from_slice(&row[d..2 * d]);
        dv.row_mut(r).copy_from_slice(&row[2 * d..]);
    }
    Ok((dq, dk, dv))
}

pub fn layer_norm<F: Real>(
    x: &Tensor<F>,
    gain: &Tensor<F>,
    bias: &Tensor<F>,
    eps: F,
) -> Result<Tensor<F>> {
    let (t, d) = expect_2d("layer_norm", x)?;
    gain.expect_shape("layer_norm", &[d])?;
    bias.expect_shape("layer_norm", &[d])?;
    let mut out = Tensor::zeros(&[t, d]);
    let mut mean = vec![F::ZERO; t];
    let mut rstd = vec![F::ZERO; t];
    kernels::layer_norm_forward(x.data(), gain.data(), bias.data(), eps, out.data_mut(), &mut mean, &mut rstd);
    Ok(out)
}

/// Gradients of [`layer_norm`] with respect to input, gain and bias.
pub fn layer_norm_backward<F: Real>(
    x: &Tensor<F>,
    gain: &Tensor<F>,
    eps: F,
    dout: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let (t, d) = expect_2d("layer_norm_backward", x)?;
    gain.expect_shape("layer_norm_backward", &[d])?;
    dout.expect_shape("layer_norm_backward", &[t, d])?;
    let zero_bias = vec![F::ZERO; d];
    let mut scratch = vec![F::ZERO; t * d];
    let mut mean = vec![F::ZERO; t];
    let mut rstd = vec![F::ZERO; t];
    kernels::layer_norm_forward(x.data(), gain.data(), &zero_bias, eps, &mut scratch, &mut mean, &mut rstd);
    let mut dx = Tensor::zeros(&[t, d]);
    let mut dg = Tensor::zeros(&[d]);
    let mut db = Tensor::zeros(&[d]);
    kernels::layer_norm_backward(
        x.data(),
        gain.data(),
        &mean,
        &rstd,
        dout.data(),
        dx.data_mut(),
        dg.data_mut(),
        db.data_mut(),
    );
    Ok((dx, dg, db))
}

pub fn gelu<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let mut out = Tensor::zeros(x.shape());
    kernels::gelu_forward(x.data(), out.data_mut());
    out
}

pub fn gelu_backward<F: Real>(x: &Tensor<F>, dout: &Tensor<F>) -> Result<Tensor<F>> {
    dout.expect_shape("gelu_backward", x.shape())?;
    let mut dx = Tensor::zeros(x.shape());
    kernels::gelu_backward(x.data(), dout.data(), dx.data_mut());
    Ok(dx)
}

/// Cross-entropy of the final row of `logits` against `target`.
///
/// Only the last position carries loss, so every other row of the returned
/// gradient is exactly zero.
pub fn softmax_xent_last<F: Real>(logits: &Tensor<F>, target: usize) -> Result<(F, Tensor<F>)> {
    let (t, v) = expect_2d("softmax_xent_last", logits)?;
    if target >= v {
        return Err(Error::LabelRange {
            label: target,
            vocab: v,
        });
    }
    let mut grad = Tensor::zeros(&[t, v]);
    let loss = xent_row(logits.row(t - 1), target, grad.row_mut(t - 1));
    Ok((loss, grad))
}

/// Loss and gradient of one logit row; `grad` is overwritten.
pub fn xent_row<F: Real>(logits: &[F], target: usize, grad: &mut [F]) -> F {
    let mut mx = logits[0];
    for &l in logits {
        mx = mx.max(l);
    }
    let mut sum = F::ZERO;
    for (g, &l) in grad.iter_mut().zip(logits) {
        *g = (l - mx).exp();
        sum += *g;
    }
    let lse = sum.ln() + mx;
    let inv = F::ONE / sum;
    for g in grad.iter_mut() {
        *g *= inv;
    }
    grad[target] -= F::ONE;
    lse - logits[target]
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_hand_case() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_identity_and_annihilator() {
        let i3 = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let b = Tensor::from_fn(&[3, 2], |i| i as f64 * 1.5 - 2.0);
        assert_eq!(matmul(&i3, &b).unwrap(), b);
        let z = Tensor::<f64>::zeros(&[2, 3]);
        let a = Tensor::from_fn(&[4, 2], |i| i as f64 + 0.5);
        assert!(matmul(&a, &z).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &b), Err(Error::Shape { .. })));
    }

    #[test]
    fn attention_single_token() {
        let q = t(&[1, 2], &[0.3, -1.0]);
        let (out, w) = causal_attention(&q, &q, &q).unwrap();
        assert_eq!(w.data(), &[1.0]);
        assert_eq!(out.data(), q.data());
    }

    #[test]
    fn attention_uniform_logits() {
        let q = Tensor::<f64>::zeros(&[3, 2]);
        let v = t(&[3, 2], &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let (_, w) = causal_attention(&q, &q, &v).unwrap();
        let third = 1.0 / 3.0;
        let expect = [1.0, 0.0, 0.0, 0.5, 0.5, 0.0, third, third, third];
        for (a, b) in w.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_empty_sequence() {
        assert_eq!(attention_slices::<f32>(&[], 0, 2), Err(Error::EmptySequence));
    }

    #[test]
    fn attention_matches_per_row_oracle() {
        // Frozen random 3x2 inputs; oracle computes each row independently.
        let q = t(&[3, 2], &[0.5, -0.2, 1.1, 0.4, -0.7, 0.9]);
        let k = t(&[3, 2], &[0.1, 0.8, -0.3, 0.2, 0.6, -1.2]);
        let v = t(&[3, 2], &[1.0, 2.0, -1.0, 0.5, 0.25, -0.75]);
        let (out, w) = causal_attention(&q, &k, &v).unwrap();
        let scale = 1.0 / 2f64.sqrt();
        for i in 0..3 {
            let s: Vec<f64> = (0..=i)
                .map(|j| (q.row(i)[0] * k.row(j)[0] + q.row(i)[1] * k.row(j)[1]) * scale)
                .collect();
            let z: f64 = s.iter().map(|x| x.exp()).sum();
            let p: Vec<f64> = s.iter().map(|x| x.exp() / z).collect();
            for j in 0..3 {
                let want = if j <= i { p[j] } else { 0.0 };
                assert!((w.row(i)[j] - want).abs() < 1e-6);
            }
            for c in 0..2 {
                let want: f64 = (0..=i).map(|j| p[j] * v.row(j)[c]).sum();
                assert!((out.row(i)[c] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn layer_norm_cases() {
        let g = t(&[3], &[1.0, 1.0, 1.0]);
        let b = t(&[3], &[0.0, 0.0, 0.0]);
        let x = t(&[1, 3], &[1.0, 2.0, 3.0]);
        let y = layer_norm(&x, &g, &b, 0.0).unwrap();
        let want = [-1.224_744_871, 0.0, 1.224_744_871];
        for (a, w) in y.data().iter().zip(want) {
            assert!((a - w).abs() < 1e-3);
        }
        let c = t(&[1, 3], &[4.0, 4.0, 4.0]);
        let y = layer_norm(&c, &g, &b, LN_EPS).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-9));
        let r = t(&[2, 3], &[0.3, -7.0, 2.0, 10.0, 11.0, 15.0]);
        let y = layer_norm(&r, &g, &b, LN_EPS).unwrap();
        for i in 0..2 {
            let mean: f64 = y.row(i).iter().sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-5);
        }
    }

    #[test]
    fn xent_cases() {
        let logits = Tensor::<f64>::zeros(&[3, 4]);
        let (loss, grad) = softmax_xent_last(&logits, 2).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!(grad.data()[..8].iter().all(|&g| g == 0.0));

        let mut sat = Tensor::<f64>::zeros(&[2, 3]);
        sat.row_mut(1)[1] = 30.0;
        let (loss, _) = softmax_xent_last(&sat, 1).unwrap();
        assert!(loss < 1e-9);

        assert_eq!(
            softmax_xent_last(&logits, 4).unwrap_err(),
            Error::LabelRange { label: 4, vocab: 4 }
        );
    }
}
