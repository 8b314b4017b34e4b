//! Bicubic resampling for LR generation and the upscale baseline.
//!
//! Catmull-Rom cubic kernel (a = -0.5), half-pixel centers, edge clamp.
//! When downscaling, the kernel support stretches by the scale factor for
//! antialiasing and the tap weights are renormalized to sum to one, which
//! makes the resize exact on constant images at every size ratio. This is
//! the conventional degradation model for super-resolution benchmarks.
//!
//! Resampling is data plumbing, not part of the differentiable graph; it
//! takes no tape. Accumulation runs at 64-bit regardless of element type.

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

const A: f64 = -0.5;

fn cubic(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Tap positions (pre-clamp) and normalized weights for one output index
/// along one axis.
fn axis_weights(in_len: usize, out_len: usize, o: usize) -> (isize, Vec<f64>) {
    let scale = in_len as f64 / out_len as f64;
    let support_scale = scale.max(1.0);
    let u = (o as f64 + 0.5) * scale - 0.5;
    let lo = (u - 2.0 * support_scale).ceil() as isize;
    let hi = (u + 2.0 * support_scale).floor() as isize;
    let mut ws: Vec<f64> = (lo..=hi)
        .map(|k| cubic((k as f64 - u) / support_scale))
        .collect();
    let sum: f64 = ws.iter().sum();
    for w in &mut ws {
        *w /= sum;
    }
    (lo, ws)
}

fn all_axis_weights(in_len: usize, out_len: usize) -> Vec<(isize, Vec<f64>)> {
    (0..out_len).map(|o| axis_weights(in_len, out_len, o)).collect()
}

/// Resize every channel of an NCHW tensor to `out_h x out_w`.
pub fn bicubic_resize<E: Element>(x: &Tensor<E>, out_h: usize, out_w: usize) -> Result<Tensor<E>> {
    let s = x.shape();
    if s.count() == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::invalid(
            "bicubic_resize",
            format!("empty input {s} or empty output {out_h}x{out_w}"),
        ));
    }
    let wy = all_axis_weights(s.h, out_h);
    let wx = all_axis_weights(s.w, out_w);

    // Height pass into a f64 scratch, then width pass.
    let mut tmp = vec![0.0f64; s.n * s.c * out_h * s.w];
    for n in 0..s.n {
        for c in 0..s.c {
            for (oy, (lo, ws)) in wy.iter().enumerate() {
                for xcol in 0..s.w {
                    let mut acc = 0.0;
                    for (i, w) in ws.iter().enumerate() {
                        let k = (lo + i as isize).clamp(0, s.h as isize - 1) as usize;
                        acc += w * x.at(n, c, k, xcol).as_f64();
                    }
                    tmp[((n * s.c + c) * out_h + oy) * s.w + xcol] = acc;
                }
            }
        }
    }
    let out_shape = Shape::new(s.n, s.c, out_h, out_w);
    let mut out = Vec::with_capacity(out_shape.count());
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..out_h {
                let row = &tmp[((n * s.c + c) * out_h + oy) * s.w..][..s.w];
                for (lo, ws) in wx.iter() {
                    let mut acc = 0.0;
                    for (i, w) in ws.iter().enumerate() {
                        let k = (lo + i as isize).clamp(0, s.w as isize - 1) as usize;
                        acc += w * row[k];
                    }
                    out.push(E::from_f64(acc));
                }
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

/// Downscale by an integer factor; the usual LR-from-HR path.
pub fn bicubic_down<E: Element>(x: &Tensor<E>, scale: usize) -> Result<Tensor<E>> {
    let s = x.shape();
    if scale == 0 || s.h % scale != 0 || s.w % scale != 0 {
        return Err(Error::invalid(
            "bicubic_down",
            format!("{s} is not divisible by scale {scale}"),
        ));
    }
    bicubic_resize(x, s.h / scale, s.w / scale)
}
