//! Slice-level kernels shared by the tensor ops and the model.
//!
//! All matrices are row-major. Accumulating kernels add into `out` so that
//! gradient contributions from several paths can be summed in place.

use crate::Real;

const LANES: usize = 8;

#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::ZERO; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = F::ZERO;
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    let mut s = F::ZERO;
    for v in acc {
        s += v;
    }
    s + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<F: Real>(y: &mut [F], x: &[F], alpha: F) {
    debug_assert_eq!(x.len(), y.len());
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// `out[m,n] += a[m,k] · b[k,n]`
pub fn gemm<F: Real>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n, "gemm: buffer too short");
    let (k_, n_) = (k as isize, n as isize);
    // SAFETY: extents checked against the slice lengths above.
    unsafe { F::gemm_acc(m, k, n, a.as_ptr(), k_, 1, b.as_ptr(), n_, 1, out.as_mut_ptr(), n_, 1) }
}

/// `out[m,k] += a[m,n] · b[k,n]ᵀ`
pub fn gemm_nt<F: Real>(a: &[F], b: &[F], out: &mut [F], m: usize, n: usize, k: usize) {
    assert!(a.len() >= m * n && b.len() >= k * n && out.len() >= m * k, "gemm_nt: buffer too short");
    let (k_, n_) = (k as isize, n as isize);
    // SAFETY: extents checked against the slice lengths above.
    unsafe { F::gemm_acc(m, n, k, a.as_ptr(), n_, 1, b.as_ptr(), 1, n_, out.as_mut_ptr(), k_, 1) }
}

/// `out[k,n] += a[m,k]ᵀ · b[m,n]`
pub fn gemm_tn<F: Real>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    assert!(a.len() >= m * k && b.len() >= m * n && out.len() >= k * n, "gemm_tn: buffer too short");
    let (k_, n_) = (k as isize, n as isize);
    // SAFETY: extents checked against the slice lengths above.
    unsafe { F::gemm_acc(k, m, n, a.as_ptr(), 1, k_, b.as_ptr(), n_, 1, out.as_mut_ptr(), n_, 1) }
}

/// Adds `bias` to every row of `x`.
pub fn add_bias<F: Real>(x: &mut [F], bias: &[F]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Column sums of `dy` accumulated into `db`.
pub fn bias_grad<F: Real>(dy: &[F], db: &mut [F]) {
    for row in dy.chunks_exact(db.len()) {
        for (g, &v) in db.iter_mut().zip(row) {
            *g += v;
        }
    }
}

/// Row-wise layer norm with population variance. Writes per-row mean and
/// reciprocal std for the backward pass.
pub fn layer_norm_forward<F: Real>(
    x: &[F],
    gain: &[F],
    bias: &[F],
    eps: F,
    out: &mut [F],
    mean: &mut [F],
    rstd: &mut [F],
) {
    let d = gain.len();
    let inv_d = F::ONE / F::from_f64(d as f64);
    for (r, (xr, or)) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)).enumerate() {
        let mut mu = F::ZERO;
        for &v in xr {
            mu += v;
        }
        mu *= inv_d;
        let mut var = F::ZERO;
        for &v in xr {
            let c = v - mu;
            var += c * c;
        }
        var *= inv_d;
        let rs = F::ONE / (var + eps).sqrt();
        for ((o, &v), (&g, &b)) in or.iter_mut().zip(xr).zip(gain.iter().zip(bias)) {
            *o = (v - mu) * rs * g + b;
        }
        mean[r] = mu;
        rstd[r] = rs;
    }
}

/// Adjoint of [`layer_norm_forward`]; accumulates into `dx`, `dgain`, `dbias`.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<F: Real>(
    x: &[F],
    gain: &[F],
    mean: &[F],
    rstd: &[F],
    dout: &[F],
    dx: &mut [F],
    dgain: &mut [F],
    dbias: &mut [F],
) {
    let d = gain.len();
    let inv_d = F::ONE / F::from_f64(d as f64);
    for (r, ((xr, dyr), dxr)) in x
        .chunks_exact(d)
        .zip(dout.chunks_exact(d))
        .zip(dx.chunks_exact_mut(d))
        .enumerate()
    {
        let (mu, rs) = (mean[r], rstd[r]);
        let mut sum_dxhat = F::ZERO;
        let mut sum_dxhat_xhat = F::ZERO;
        for i in 0..d {
            let xhat = (xr[i] - mu) * rs;
            let dxhat = dyr[i] * gain[i];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            dgain[i] += dyr[i] * xhat;
            dbias[i] += dyr[i];
        }
        let m1 = sum_dxhat * inv_d;
        let m2 = sum_dxhat_xhat * inv_d;
        for i in 0..d {
            let xhat = (xr[i] - mu) * rs;
            let dxhat = dyr[i] * gain[i];
            dxr[i] += rs * (dxhat - m1 - xhat * m2);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu_forward<F: Real>(x: &[F], out: &mut [F]) {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    for (o, &v) in out.iter_mut().zip(x) {
        let u = c * (v + a * v * v * v);
        *o = half * v * (F::ONE + u.tanh());
    }
}

/// `dx += dout * gelu'(x)`
pub fn gelu_backward<F: Real>(x: &[F], dout: &[F], dx: &mut [F]) {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    let three_a = F::from_f64(3.0 * GELU_A);
    for ((g, &v), &dy) in dx.iter_mut().zip(x).zip(dout) {
        let u = c * (v + a * v * v * v);
        let t = u.tanh();
        let du = c * (F::ONE + three_a * v * v);
        let d = half * (F::ONE + t) + half * v * (F::ONE - t * t) * du;
        *g += dy * d;
    }
}

/// In-place numerically stable softmax of one row.
pub fn softmax_in_place<F: Real>(row: &mut [F]) {
    let mut mx = row[0];
    for &v in row.iter() {
        mx = mx.max(v);
    }
    let mut sum = F::ZERO;
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        sum += *v;
    }
    let inv = F::ONE / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Layout of one attention head inside a packed `[T, 3d]` q|k|v buffer.
#[derive(Clone, Copy, Debug)]
pub struct HeadLayout {
    pub stride: usize,
    pub q: usize,
    pub k: usize,
    pub v: usize,
    pub dim: usize,
}

/// Causal attention for query rows `r0..t_len` of one head.
///
/// `weights` holds `(t_len - r0)` rows of length `t_len` (zero above the
/// diagonal); `out` receives `(t_len - r0)` rows of `dim` values at
/// `out_off` within rows of `out_stride`.
#[allow(clippy::too_many_arguments)]
pub fn attention_head_forward<F: Real>(
    qkv: &[F],
    head: HeadLayout,
    t_len: usize,
    r0: usize,
    scale: F,
    weights: &mut [F],
    out: &mut [F],
    out_stride: usize,
    out_off: usize,
) {
    let HeadLayout { stride, q, k, v, dim } = head;
    for i in r0..t_len {
        let li = i - r0;
        let wrow = &mut weights[li * t_len..(li + 1) * t_len];
        let qi = &qkv[i * stride + q..i * stride + q + dim];
        for (j, w) in wrow.iter_mut().enumerate().take(i + 1) {
            let kj = &qkv[j * stride + k..j * stride + k + dim];
            *w = dot(qi, kj) * scale;
        }
        softmax_in_place(&mut wrow[..=i]);
        for w in wrow[i + 1..].iter_mut() {
            *w = F::ZERO;
        }
        let orow = &mut out[li * out_stride + out_off..li * out_stride + out_off + dim];
        orow.iter_mut().for_each(|o| *o = F::ZERO);
        for (j, &w) in wrow.iter().enumerate().take(i + 1) {
            axpy(orow, &qkv[j * stride + v..j * stride + v + dim], w);
        }
    }
}

/// Adjoint of [`attention_head_forward`]; accumulates into `dqkv` (same
/// layout as `qkv`). `scratch` must hold at least `t_len` values.
#[allow(clippy::too_many_arguments)]
pub fn attention_head_backward<F: Real>(
    qkv: &[F],
    head: HeadLayout,
    t_len: usize,
    r0: usize,
    scale: F,
    weights: &[F],
    dout: &[F],
    dout_stride: usize,
    dout_off: usize,
    dqkv: &mut [F],
    scratch: &mut [F],
) {
    let HeadLayout { stride, q, k, v, dim } = head;
    for i in r0..t_len {
        let li = i - r0;
        let wrow = &weights[li * t_len..li * t_len + i + 1];
        let doi = &dout[li * dout_stride + dout_off..li * dout_stride + dout_off + dim];
        let dw = &mut scratch[..=i];
        let mut s = F::ZERO;
        for (j, (g, &w)) in dw.iter_mut().zip(wrow).enumerate() {
            *g = dot(doi, &qkv[j * stride + v..j * stride + v + dim]);
            s += w * *g;
        }
        for (j, (&g, &w)) in dw.iter().zip(wrow).enumerate() {
            axpy(&mut dqkv[j * stride + v..j * stride + v + dim], doi, w);
            let ds = w * (g - s) * scale;
            if ds != F::ZERO {
                axpy(
                    &mut dqkv[i * stride + q..i * stride + q + dim],
                    &qkv[j * stride + k..j * stride + k + dim],
                    ds,
                );
                axpy(
                    &mut dqkv[j * stride + k..j * stride + k + dim],
                    &qkv[i * stride + q..i * stride + q + dim],
                    ds,
                );
            }
        }
    }
}
