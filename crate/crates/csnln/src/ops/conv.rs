//! 2-D convolution and its transpose, with zero padding.
//!
//! Loop nests are written so the innermost loop walks output (or input)
//! columns with a hoisted scalar weight: each destination element is written
//! by its own iteration, so the compiler may vectorize freely while the
//! per-element accumulation order stays exactly the source order
//! (channel-major, then kernel row, then kernel column). Gradient kernels
//! mirror the forward nests, which keeps them deterministic too.

use crate::error::{Error, Result};
use crate::tape::GradTape;
use crate::tensor::{Element, Shape, Tensor};

/// Valid destination-column range for a kernel column: all `o` with
/// `0 <= o*stride + k - pad < limit`, clipped to `0..count`.
#[inline]
fn col_range(count: usize, stride: usize, k: usize, pad: usize, limit: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    if limit + pad <= k {
        return (0, 0);
    }
    let hi = ((limit - 1 + pad - k) / stride + 1).min(count);
    (lo.min(hi), hi)
}

fn conv_out_dim(op: &'static str, in_dim: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if in_dim + 2 * pad < k {
        return Err(Error::invalid(
            op,
            format!("kernel {k} exceeds padded extent {}", in_dim + 2 * pad),
        ));
    }
    Ok((in_dim + 2 * pad - k) / stride + 1)
}

fn check_bias<E: Element>(op: &'static str, bias: Option<&Tensor<E>>, oc: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != Shape::new(1, oc, 1, 1) {
            return Err(Error::shape(
                op,
                format!("bias must be 1x{oc}x1x1, got {}", b.shape()),
            ));
        }
    }
    Ok(())
}

/// Convolution: `input` (n, in_c, h, w) with `weight` (out_c, in_c, kh, kw),
/// optional bias (1, out_c, 1, 1). Output spatial dims are
/// `floor((d + 2*pad - k)/stride) + 1`.
pub fn conv2d<E: Element>(
    tape: Option<&GradTape<E>>,
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<E>> {
    if stride == 0 {
        return Err(Error::invalid("conv2d", "stride must be >= 1"));
    }
    let xs = input.shape();
    let ws = weight.shape();
    if ws.c != xs.c {
        return Err(Error::shape(
            "conv2d",
            format!("weight expects {} input channels, input has {}", ws.c, xs.c),
        ));
    }
    check_bias("conv2d", bias, ws.n)?;
    let oh = conv_out_dim("conv2d", xs.h, ws.h, stride, pad)?;
    let ow = conv_out_dim("conv2d", xs.w, ws.w, stride, pad)?;
    let out_shape = Shape::new(xs.n, ws.n, oh, ow);

    let data = conv2d_kernel(input, weight, bias, stride, pad, out_shape);
    let out = Tensor::op_output("conv2d", out_shape, data)?;

    if let Some(t) = tape {
        let nx = t.is_tracked(input);
        let nw = t.is_tracked(weight);
        let nb = bias.is_some_and(|b| t.is_tracked(b));
        if nx || nw || nb {
            let (xc, wc) = (input.clone(), weight.clone());
            let bid = bias.map(|b| b.id());
            t.record(&out, "conv2d", move |g, store| {
                if nx {
                    store.accumulate(
                        xc.id(),
                        Tensor::op_output(
                            "conv2d_back",
                            xc.shape(),
                            conv2d_grad_input(g, &wc, stride, pad, xc.shape()),
                        )?,
                    )?;
                }
                if nw {
                    store.accumulate(
                        wc.id(),
                        Tensor::op_output(
                            "conv2d_back",
                            wc.shape(),
                            conv2d_grad_weight(g, &xc, wc.shape(), stride, pad),
                        )?,
                    )?;
                }
                if nb {
                    store.accumulate(
                        bid.unwrap(),
                        Tensor::op_output(
                            "conv2d_back",
                            Shape::new(1, g.shape().c, 1, 1),
                            sum_per_channel(g),
                        )?,
                    )?;
                }
                Ok(())
            });
        }
    }
    Ok(out)
}

fn conv2d_kernel<E: Element>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    stride: usize,
    pad: usize,
    out_shape: Shape,
) -> Vec<E> {
    let xs = x.shape();
    let ws = w.shape();
    let (n, ic, h, wid) = (xs.n, xs.c, xs.h, xs.w);
    let (oc, kh, kw) = (ws.n, ws.h, ws.w);
    let (oh, ow) = (out_shape.h, out_shape.w);
    let xd = x.data();
    let wd = w.data();
    let mut out = vec![E::zero(); out_shape.count()];

    for nn in 0..n {
        for o in 0..oc {
            let ob = (nn * oc + o) * oh * ow;
            if let Some(b) = bias {
                let bv = b.data()[o];
                for v in &mut out[ob..ob + oh * ow] {
                    *v = bv;
                }
            }
            for c in 0..ic {
                let xb = (nn * ic + c) * h * wid;
                let wb = (o * ic + c) * kh * kw;
                for ky in 0..kh {
                    let wrow = &wd[wb + ky * kw..wb + (ky + 1) * kw];
                    for oy in 0..oh {
                        let iy = oy * stride + ky;
                        if iy < pad || iy >= h + pad {
                            continue;
                        }
                        let xrow = &xd[xb + (iy - pad) * wid..xb + (iy - pad + 1) * wid];
                        let orow = &mut out[ob + oy * ow..ob + (oy + 1) * ow];
                        for (kx, &wv) in wrow.iter().enumerate() {
                            let (lo, hi) = col_range(ow, stride, kx, pad, wid);
                            for ox in lo..hi {
                                orow[ox] += wv * xrow[ox * stride + kx - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv2d_grad_input<E: Element>(
    g: &Tensor<E>,
    w: &Tensor<E>,
    stride: usize,
    pad: usize,
    in_shape: Shape,
) -> Vec<E> {
    let ws = w.shape();
    let gs = g.shape();
    let (n, ic, h, wid) = (in_shape.n, in_shape.c, in_shape.h, in_shape.w);
    let (oc, kh, kw) = (ws.n, ws.h, ws.w);
    let (oh, ow) = (gs.h, gs.w);
    let gd = g.data();
    let wd = w.data();
    let mut gx = vec![E::zero(); in_shape.count()];

    for nn in 0..n {
        for o in 0..oc {
            let ob = (nn * oc + o) * oh * ow;
            for c in 0..ic {
                let xb = (nn * ic + c) * h * wid;
                let wb = (o * ic + c) * kh * kw;
                for ky in 0..kh {
                    let wrow = &wd[wb + ky * kw..wb + (ky + 1) * kw];
                    for oy in 0..oh {
                        let iy = oy * stride + ky;
                        if iy < pad || iy >= h + pad {
                            continue;
                        }
                        let grow = &gd[ob + oy * ow..ob + (oy + 1) * ow];
                        let xrow = &mut gx[xb + (iy - pad) * wid..xb + (iy - pad + 1) * wid];
                        for (kx, &wv) in wrow.iter().enumerate() {
                            let (lo, hi) = col_range(ow, stride, kx, pad, wid);
                            for ox in lo..hi {
                                xrow[ox * stride + kx - pad] += wv * grow[ox];
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

fn conv2d_grad_weight<E: Element>(
    g: &Tensor<E>,
    x: &Tensor<E>,
    w_shape: Shape,
    stride: usize,
    pad: usize,
) -> Vec<E> {
    let xs = x.shape();
    let gs = g.shape();
    let (n, ic, h, wid) = (xs.n, xs.c, xs.h, xs.w);
    let (oc, kh, kw) = (w_shape.n, w_shape.h, w_shape.w);
    let (oh, ow) = (gs.h, gs.w);
    let gd = g.data();
    let xd = x.data();
    let mut gw = vec![E::zero(); w_shape.count()];

    for nn in 0..n {
        for o in 0..oc {
            let ob = (nn * oc + o) * oh * ow;
            for c in 0..ic {
                let xb = (nn * ic + c) * h * wid;
                let wb = (o * ic + c) * kh * kw;
                for ky in 0..kh {
                    for oy in 0..oh {
                        let iy = oy * stride + ky;
                        if iy < pad || iy >= h + pad {
                            continue;
                        }
                        let grow = &gd[ob + oy * ow..ob + (oy + 1) * ow];
                        let xrow = &xd[xb + (iy - pad) * wid..xb + (iy - pad + 1) * wid];
                        for kx in 0..kw {
                            let (lo, hi) = col_range(ow, stride, kx, pad, wid);
                            let mut acc = E::zero();
                            for ox in lo..hi {
                                acc += grow[ox] * xrow[ox * stride + kx - pad];
                            }
                            gw[wb + ky * kw + kx] += acc;
                        }
                    }
                }
            }
        }
    }
    gw
}

fn sum_per_channel<E: Element>(g: &Tensor<E>) -> Vec<E> {
    let gs = g.shape();
    let gd = g.data();
    let mut out = vec![E::zero(); gs.c];
    for nn in 0..gs.n {
        for c in 0..gs.c {
            let base = (nn * gs.c + c) * gs.h * gs.w;
            for &v in &gd[base..base + gs.h * gs.w] {
                out[c] += v;
            }
        }
    }
    out
}

/// Transposed convolution: `input` (n, in_c, h, w) with `weight`
/// (in_c, out_c, kh, kw), optional bias (1, out_c, 1, 1). Output spatial dims
/// are `(d - 1)*stride - 2*pad + k`. With matching stride/pad and a shared
/// weight tensor this is the exact adjoint of [`conv2d`]:
/// `<conv2d(A, W), B> == <A, conv_transpose2d(B, W)>`.
pub fn conv_transpose2d<E: Element>(
    tape: Option<&GradTape<E>>,
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<E>> {
    if stride == 0 {
        return Err(Error::invalid("conv_transpose2d", "stride must be >= 1"));
    }
    let xs = input.shape();
    let ws = weight.shape();
    if ws.n != xs.c {
        return Err(Error::shape(
            "conv_transpose2d",
            format!("weight expects {} input channels, input has {}", ws.n, xs.c),
        ));
    }
    check_bias("conv_transpose2d", bias, ws.c)?;
    let oh = deconv_out_dim("conv_transpose2d", xs.h, ws.h, stride, pad)?;
    let ow = deconv_out_dim("conv_transpose2d", xs.w, ws.w, stride, pad)?;
    let out_shape = Shape::new(xs.n, ws.c, oh, ow);

    let data = deconv_kernel(input, weight, bias, stride, pad, out_shape);
    let out = Tensor::op_output("conv_transpose2d", out_shape, data)?;

    if let Some(t) = tape {
        let nx = t.is_tracked(input);
        let nw = t.is_tracked(weight);
        let nb = bias.is_some_and(|b| t.is_tracked(b));
        if nx || nw || nb {
            let (xc, wc) = (input.clone(), weight.clone());
            let bid = bias.map(|b| b.id());
            t.record(&out, "conv_transpose2d", move |g, store| {
                if nx {
                    store.accumulate(
                        xc.id(),
                        Tensor::op_output(
                            "conv_transpose2d_back",
                            xc.shape(),
                            deconv_grad_input(g, &wc, stride, pad, xc.shape()),
                        )?,
                    )?;
                }
                if nw {
                    store.accumulate(
                        wc.id(),
                        Tensor::op_output(
                            "conv_transpose2d_back",
                            wc.shape(),
                            deconv_grad_weight(g, &xc, wc.shape(), stride, pad),
                        )?,
                    )?;
                }
                if nb {
                    store.accumulate(
                        bid.unwrap(),
                        Tensor::op_output(
                            "conv_transpose2d_back",
                            Shape::new(1, g.shape().c, 1, 1),
                            sum_per_channel(g),
                        )?,
                    )?;
                }
                Ok(())
            });
        }
    }
    Ok(out)
}

fn deconv_out_dim(op: &'static str, in_dim: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let gross = if in_dim == 0 { 0 } else { (in_dim - 1) * stride + k };
    if gross <= 2 * pad {
        return Err(Error::invalid(
            op,
            format!("output extent ({in_dim} - 1)*{stride} - 2*{pad} + {k} is not positive"),
        ));
    }
    Ok(gross - 2 * pad)
}

/// Scatter formulation: `out[iy*stride + ky - pad][ix*stride + kx - pad] +=
/// in[iy][ix] * w[c][o][ky][kx]`, accumulated over input channels `c` in
/// ascending order.
fn deconv_kernel<E: Element>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    stride: usize,
    pad: usize,
    out_shape: Shape,
) -> Vec<E> {
    let xs = x.shape();
    let ws = w.shape();
    let (n, ic, h, wid) = (xs.n, xs.c, xs.h, xs.w);
    let (oc, kh, kw) = (ws.c, ws.h, ws.w);
    let (oh, ow) = (out_shape.h, out_shape.w);
    let xd = x.data();
    let wd = w.data();
    let mut out = vec![E::zero(); out_shape.count()];

    if let Some(b) = bias {
        for nn in 0..n {
            for o in 0..oc {
                let ob = (nn * oc + o) * oh * ow;
                let bv = b.data()[o];
                for v in &mut out[ob..ob + oh * ow] {
                    *v = bv;
                }
            }
        }
    }
    for nn in 0..n {
        for c in 0..ic {
            let xb = (nn * ic + c) * h * wid;
            for o in 0..oc {
                let ob = (nn * oc + o) * oh * ow;
                let wb = (c * oc + o) * kh * kw;
                for ky in 0..kh {
                    let wrow = &wd[wb + ky * kw..wb + (ky + 1) * kw];
                    for iy in 0..h {
                        let oy = iy * stride + ky;
                        if oy < pad || oy >= oh + pad {
                            continue;
                        }
                        let xrow = &xd[xb + iy * wid..xb + (iy + 1) * wid];
                        let orow = &mut out[ob + (oy - pad) * ow..ob + (oy - pad + 1) * ow];
                        for (kx, &wv) in wrow.iter().enumerate() {
                            let (lo, hi) = col_range(wid, stride, kx, pad, ow);
                            for ix in lo..hi {
                                orow[ix * stride + kx - pad] += wv * xrow[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn deconv_grad_input<E: Element>(
    g: &Tensor<E>,
    w: &Tensor<E>,
    stride: usize,
    pad: usize,
    in_shape: Shape,
) -> Vec<E> {
    let ws = w.shape();
    let gs = g.shape();
    let (n, ic, h, wid) = (in_shape.n, in_shape.c, in_shape.h, in_shape.w);
    let (oc, kh, kw) = (ws.c, ws.h, ws.w);
    let (oh, ow) = (gs.h, gs.w);
    let gd = g.data();
    let wd = w.data();
    let mut gx = vec![E::zero(); in_shape.count()];

    for nn in 0..n {
        for c in 0..ic {
            let xb = (nn * ic + c) * h * wid;
            for o in 0..oc {
                let ob = (nn * oc + o) * oh * ow;
                let wb = (c * oc + o) * kh * kw;
                for ky in 0..kh {
                    let wrow = &wd[wb + ky * kw..wb + (ky + 1) * kw];
                    for iy in 0..h {
                        let oy = iy * stride + ky;
                        if oy < pad || oy >= oh + pad {
                            continue;
                        }
                        let grow = &gd[ob + (oy - pad) * ow..ob + (oy - pad + 1) * ow];
                        let xrow = &mut gx[xb + iy * wid..xb + (iy + 1) * wid];
                        for (kx, &wv) in wrow.iter().enumerate() {
                            let (lo, hi) = col_range(wid, stride, kx, pad, ow);
                            for ix in lo..hi {
                                xrow[ix] += wv * grow[ix * stride + kx - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

fn deconv_grad_weight<E: Element>(
    g: &Tensor<E>,
    x: &Tensor<E>,
    w_shape: Shape,
    stride: usize,
    pad: usize,
) -> Vec<E> {
    let xs = x.shape();
    let gs = g.shape();
    let (n, ic, h, wid) = (xs.n, xs.c, xs.h, xs.w);
    let (oc, kh, kw) = (w_shape.c, w_shape.h, w_shape.w);
    let (oh, ow) = (gs.h, gs.w);
    let gd = g.data();
    let xd = x.data();
    let mut gw = vec![E::zero(); w_shape.count()];

    for nn in 0..n {
        for c in 0..ic {
            let xb = (nn * ic + c) * h * wid;
            for o in 0..oc {
                let ob = (nn * oc + o) * oh * ow;
                let wb = (c * oc + o) * kh * kw;
                for ky in 0..kh {
                    for iy in 0..h {
                        let oy = iy * stride + ky;
                        if oy < pad || oy >= oh + pad {
                            continue;
                        }
                        let grow = &gd[ob + (oy - pad) * ow..ob + (oy - pad + 1) * ow];
                        let xrow = &xd[xb + iy * wid..xb + (iy + 1) * wid];
                        for kx in 0..kw {
                            let (lo, hi) = col_range(wid, stride, kx, pad, ow);
                            let mut acc = E::zero();
                            for ix in lo..hi {
                                acc += xrow[ix] * grow[ix * stride + kx - pad];
                            }
                            gw[wb + ky * kw + kx] += acc;
                        }
                    }
                }
            }
        }
    }
    gw
}
