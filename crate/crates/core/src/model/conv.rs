//! Residual conv embedder over single-channel rasters (HWC layout).
//!
//! Each block: `relu(conv3x3/2) → conv3x3/1`, plus a `conv1x1/2` shortcut,
//! summed and rectified. Global average pooling and an affine projection
//! follow the last block.

use alloc::vec;
use alloc::vec::Vec;

use crate::kernels::{add_bias, bias_grad, gemm, gemm_nt, gemm_tn};
use crate::{Real, Tensor};

#[derive(Clone, Copy, Debug)]
struct Dims {
    h: usize,
    w: usize,
    cin: usize,
    c: usize,
    ho: usize,
    wo: usize,
}

fn block_dims(h: usize, w: usize, widths: &[usize]) -> Vec<Dims> {
    let (mut h, mut w, mut cin) = (h, w, 1);
    widths
        .iter()
        .map(|&c| {
            let d = Dims {
                h,
                w,
                cin,
                c,
                ho: h.div_ceil(2),
                wo: w.div_ceil(2),
            };
            (h, w, cin) = (d.ho, d.wo, c);
            d
        })
        .collect()
}

/// 3x3 patches with zero padding 1; rows ordered `(ky, kx, channel)`.
#[allow(clippy::too_many_arguments)]
fn im2col3<F: Real>(x: &[F], h: usize, w: usize, c: usize, stride: usize, ho: usize, wo: usize, cols: &mut [F]) {
    let kc = 9 * c;
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &mut cols[(oy * wo + ox) * kc..(oy * wo + ox + 1) * kc];
            for ky in 0..3 {
                for kx in 0..3 {
                    let dst = &mut row[(ky * 3 + kx) * c..(ky * 3 + kx + 1) * c];
                    let iy = (oy * stride + ky) as isize - 1;
                    let ix = (ox * stride + kx) as isize - 1;
                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                        dst.iter_mut().for_each(|v| *v = F::ZERO);
                    } else {
                        let s = (iy as usize * w + ix as usize) * c;
                        dst.copy_from_slice(&x[s..s + c]);
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im3<F: Real>(dcols: &[F], h: usize, w: usize, c: usize, stride: usize, ho: usize, wo: usize, dx: &mut [F]) {
    let kc = 9 * c;
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &dcols[(oy * wo + ox) * kc..(oy * wo + ox + 1) * kc];
            for ky in 0..3 {
                for kx in 0..3 {
                    let iy = (oy * stride + ky) as isize - 1;
                    let ix = (ox * stride + kx) as isize - 1;
                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                        continue;
                    }
                    let s = (iy as usize * w + ix as usize) * c;
                    for (d, &g) in dx[s..s + c].iter_mut().zip(&row[(ky * 3 + kx) * c..(ky * 3 + kx + 1) * c]) {
                        *d += g;
                    }
                }
            }
        }
    }
}

/// Stride-2 subsampling used by the 1x1 shortcut.
fn subsample<F: Real>(x: &[F], d: Dims, out: &mut [F]) {
    for oy in 0..d.ho {
        for ox in 0..d.wo {
            let s = (2 * oy * d.w + 2 * ox) * d.cin;
            out[(oy * d.wo + ox) * d.cin..(oy * d.wo + ox + 1) * d.cin].copy_from_slice(&x[s..s + d.cin]);
        }
    }
}

#[derive(Clone, Debug, Default)]
struct BlockTape<F> {
    x: Vec<F>,
    act1: Vec<F>,
    out: Vec<F>,
}

/// Activations of one exemplar's pass, kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct ConvTape<F> {
    blocks: Vec<BlockTape<F>>,
    pooled: Vec<F>,
}

/// Embeds one raster; `params` is the embedder slice of the model's tensors.
pub(crate) fn conv_forward<F: Real>(
    params: &[Tensor<F>],
    height: usize,
    width: usize,
    widths: &[usize],
    input: &[F],
    tape: &mut ConvTape<F>,
    out: &mut [F],
) {
    let dims = block_dims(height, width, widths);
    tape.blocks.resize_with(dims.len(), BlockTape::default);
    let mut x: Vec<F> = input.to_vec();
    let mut cols = Vec::new();
    for (b, d) in dims.iter().enumerate() {
        let p = &params[6 * b..6 * b + 6];
        let n = d.ho * d.wo;
        cols.resize(n * 9 * d.cin, F::ZERO);
        im2col3(&x, d.h, d.w, d.cin, 2, d.ho, d.wo, &mut cols);
        let mut act1 = vec![F::ZERO; n * d.c];
        gemm(&cols, p[0].data(), &mut act1, n, 9 * d.cin, d.c);
        add_bias(&mut act1, p[1].data());
        act1.iter_mut().for_each(|v| *v = v.max(F::ZERO));
        cols.resize(n * 9 * d.c, F::ZERO);
        im2col3(&act1, d.ho, d.wo, d.c, 1, d.ho, d.wo, &mut cols);
        let mut y = vec![F::ZERO; n * d.c];
        gemm(&cols, p[2].data(), &mut y, n, 9 * d.c, d.c);
        add_bias(&mut y, p[3].data());
        let mut sub = vec![F::ZERO; n * d.cin];
        subsample(&x, *d, &mut sub);
        gemm(&sub, p[4].data(), &mut y, n, d.cin, d.c);
        add_bias(&mut y, p[5].data());
        y.iter_mut().for_each(|v| *v = v.max(F::ZERO));
        let bt = &mut tape.blocks[b];
        bt.x = x;
        bt.act1 = act1;
        bt.out = y.clone();
        x = y;
    }
    let last = dims[dims.len() - 1];
    let n = last.ho * last.wo;
    let mut pooled = vec![F::ZERO; last.c];
    for row in x.chunks_exact(last.c) {
        for (p, &v) in pooled.iter_mut().zip(row) {
            *p += v;
        }
    }
    let inv = F::ONE / F::from_f64(n as f64);
    pooled.iter_mut().for_each(|v| *v *= inv);
    let k = params.len();
    out.iter_mut().for_each(|v| *v = F::ZERO);
    gemm(&pooled, params[k - 2].data(), out, 1, last.c, out.len());
    add_bias(out, params[k - 1].data());
    tape.pooled = pooled;
}

/// Accumulates parameter gradients for one exemplar given `dout` (`[d]`).
pub(crate) fn conv_backward<F: Real>(
    params: &[Tensor<F>],
    height: usize,
    width: usize,
    widths: &[usize],
    tape: &ConvTape<F>,
    dout: &[F],
    grads: &mut [Tensor<F>],
) {
    let dims = block_dims(height, width, widths);
    let k = params.len();
    let last = dims[dims.len() - 1];
    gemm_tn(&tape.pooled, dout, grads[k - 2].data_mut(), 1, last.c, dout.len());
    bias_grad(dout, grads[k - 1].data_mut());
    let mut dpooled = vec![F::ZERO; last.c];
    gemm_nt(dout, params[k - 2].data(), &mut dpooled, 1, dout.len(), last.c);
    let n = last.ho * last.wo;
    let inv = F::ONE / F::from_f64(n as f64);
    let mut dx: Vec<F> = (0..n * last.c).map(|i| dpooled[i % last.c] * inv).collect();
    let mut cols = Vec::new();
    for (b, d) in dims.iter().enumerate().rev() {
        let bt = &tape.blocks[b];
        let n = d.ho * d.wo;
        let mut dy = dx;
        for (g, &o) in dy.iter_mut().zip(&bt.out) {
            if o <= F::ZERO {
                *g = F::ZERO;
            }
        }
        let rest = &mut grads[6 * b..6 * b + 6];
        let mut sub = vec![F::ZERO; n * d.cin];
        subsample(&bt.x, *d, &mut sub);
        gemm_tn(&sub, &dy, rest[4].data_mut(), n, d.cin, d.c);
        bias_grad(&dy, rest[5].data_mut());
        let mut dsub = vec![F::ZERO; n * d.cin];
        gemm_nt(&dy, params[6 * b + 4].data(), &mut dsub, n, d.c, d.cin);
        let mut dxin = vec![F::ZERO; d.h * d.w * d.cin];
        for oy in 0..d.ho {
            for ox in 0..d.wo {
                let s = (2 * oy * d.w + 2 * ox) * d.cin;
                let src = &dsub[(oy * d.wo + ox) * d.cin..(oy * d.wo + ox + 1) * d.cin];
                for (t, &g) in dxin[s..s + d.cin].iter_mut().zip(src) {
                    *t += g;
                }
            }
        }
        cols.resize(n * 9 * d.c, F::ZERO);
        im2col3(&bt.act1, d.ho, d.wo, d.c, 1, d.ho, d.wo, &mut cols);
        gemm_tn(&cols, &dy, rest[2].data_mut(), n, 9 * d.c, d.c);
        bias_grad(&dy, rest[3].data_mut());
        let mut dcols = vec![F::ZERO; n * 9 * d.c];
        gemm_nt(&dy, params[6 * b + 2].data(), &mut dcols, n, d.c, 9 * d.c);
        let mut da = vec![F::ZERO; n * d.c];
        col2im3(&dcols, d.ho, d.wo, d.c, 1, d.ho, d.wo, &mut da);
        for (g, &a) in da.iter_mut().zip(&bt.act1) {
            if a <= F::ZERO {
                *g = F::ZERO;
            }
        }
        cols.resize(n * 9 * d.cin, F::ZERO);
        im2col3(&bt.x, d.h, d.w, d.cin, 2, d.ho, d.wo, &mut cols);
        gemm_tn(&cols, &da, rest[0].data_mut(), n, 9 * d.cin, d.c);
        bias_grad(&da, rest[1].data_mut());
        if b > 0 {
            let mut dcols = vec![F::ZERO; n * 9 * d.cin];
            gemm_nt(&da, params[6 * b].data(), &mut dcols, n, d.c, 9 * d.cin);
            col2im3(&dcols, d.h, d.w, d.cin, 2, d.ho, d.wo, &mut dxin);
        }
        dx = dxin;
    }
}
