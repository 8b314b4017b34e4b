//! Bilinear resampling with half-pixel centers and edge clamping.
//!
//! Output pixel `o` samples source coordinate `(o + 0.5) * in/out - 0.5`,
//! clamped to the valid range. The four tap weights are computed in f64 and
//! cast to the working precision; taps accumulate in the fixed order
//! (y0x0, y0x1, y1x0, y1x1).

use crate::error::{Error, Result};
use crate::tape::GradTape;
use crate::tensor::{Element, Shape, Tensor};

/// One axis of sampling: for each output index, the two source indices and
/// the weight of the second one.
fn axis_taps(in_dim: usize, out_dim: usize) -> Vec<(usize, usize, f64)> {
    (0..out_dim)
        .map(|o| {
            let src = (o as f64 + 0.5) * in_dim as f64 / out_dim as f64 - 0.5;
            let src = src.clamp(0.0, (in_dim - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_dim - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn bilinear_resize<E: Element>(
    tape: Option<&GradTape<E>>,
    x: &Tensor<E>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<E>> {
    let s = x.shape();
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("bilinear_resize", "output dims must be >= 1"));
    }
    if s.h == 0 || s.w == 0 {
        return Err(Error::invalid("bilinear_resize", "input has empty spatial dims"));
    }
    let ytaps = axis_taps(s.h, out_h);
    let xtaps = axis_taps(s.w, out_w);
    let out_shape = Shape::new(s.n, s.c, out_h, out_w);
    let xd = x.data();
    let mut data = Vec::with_capacity(out_shape.count());
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.h * s.w;
            for &(y0, y1, fy) in &ytaps {
                let wy1 = E::from_f64(fy);
                let wy0 = E::from_f64(1.0 - fy);
                let row0 = &xd[base + y0 * s.w..base + (y0 + 1) * s.w];
                let row1 = &xd[base + y1 * s.w..base + (y1 + 1) * s.w];
                for &(x0, x1, fx) in &xtaps {
                    let wx1 = E::from_f64(fx);
                    let wx0 = E::from_f64(1.0 - fx);
                    let v = wy0 * wx0 * row0[x0]
                        + wy0 * wx1 * row0[x1]
                        + wy1 * wx0 * row1[x0]
                        + wy1 * wx1 * row1[x1];
                    data.push(v);
                }
            }
        }
    }
    let out = Tensor::op_output("bilinear_resize", out_shape, data)?;
    if let Some(t) = tape {
        if t.is_tracked(x) {
            let ix = x.id();
            let in_shape = s;
            t.record(&out, "bilinear_resize", move |g, store| {
                let gd = g.data();
                let mut d = vec![E::zero(); in_shape.count()];
                for n in 0..in_shape.n {
                    for c in 0..in_shape.c {
                        let base = (n * in_shape.c + c) * in_shape.h * in_shape.w;
                        let gbase = (n * in_shape.c + c) * out_h * out_w;
                        for (oy, &(y0, y1, fy)) in ytaps.iter().enumerate() {
                            let wy1 = E::from_f64(fy);
                            let wy0 = E::from_f64(1.0 - fy);
                            for (ox, &(x0, x1, fx)) in xtaps.iter().enumerate() {
                                let wx1 = E::from_f64(fx);
                                let wx0 = E::from_f64(1.0 - fx);
                                let gv = gd[gbase + oy * out_w + ox];
                                d[base + y0 * in_shape.w + x0] += wy0 * wx0 * gv;
                                d[base + y0 * in_shape.w + x1] += wy0 * wx1 * gv;
                                d[base + y1 * in_shape.w + x0] += wy1 * wx0 * gv;
                                d[base + y1 * in_shape.w + x1] += wy1 * wx1 * gv;
                            }
                        }
                    }
                }
                store.accumulate(ix, Tensor::op_output("bilinear_resize_back", in_shape, d)?)
            });
        }
    }
    Ok(out)
}
