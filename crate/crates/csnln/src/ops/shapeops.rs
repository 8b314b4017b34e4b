//! Concatenation, slicing, and padding.

use super::axis_split;
use crate::error::{Error, Result};
use crate::tape::GradTape;
use crate::tensor::{Element, Shape, Tensor};

/// Concatenate along an axis. All other extents must match.
pub fn concat<E: Element>(
    tape: Option<&GradTape<E>>,
    inputs: &[&Tensor<E>],
    axis: usize,
) -> Result<Tensor<E>> {
    if inputs.is_empty() {
        return Err(Error::invalid("concat", "no inputs"));
    }
    if axis >= 4 {
        return Err(Error::invalid("concat", format!("axis {axis} out of range")));
    }
    let first = inputs[0].shape().dims();
    let mut total = 0usize;
    for t in inputs {
        let d = t.shape().dims();
        for i in 0..4 {
            if i != axis && d[i] != first[i] {
                return Err(Error::shape(
                    "concat",
                    format!("{} vs {} along non-concat axis {i}", t.shape(), inputs[0].shape()),
                ));
            }
        }
        total += d[axis];
    }
    let mut od = first;
    od[axis] = total;
    let out_shape = Shape::new(od[0], od[1], od[2], od[3]);
    let (outer, _, inner) = axis_split(od, axis)?;
    let mut data = vec![E::zero(); out_shape.count()];
    let mut offset = 0usize;
    let mut spans = Vec::with_capacity(inputs.len());
    for t in inputs {
        let len = t.shape().dims()[axis];
        let td = t.data();
        for o in 0..outer {
            let dst = (o * total + offset) * inner;
            let src = o * len * inner;
            data[dst..dst + len * inner].copy_from_slice(&td[src..src + len * inner]);
        }
        spans.push((t.id(), t.shape(), offset, len, tape.is_some_and(|tp| tp.is_tracked(t))));
        offset += len;
    }
    let out = Tensor::op_output("concat", out_shape, data)?;
    if let Some(t) = tape {
        if spans.iter().any(|s| s.4) {
            t.record(&out, "concat", move |g, store| {
                let gd = g.data();
                for &(id, shape, off, len, tracked) in &spans {
                    if !tracked {
                        continue;
                    }
                    let mut d = vec![E::zero(); shape.count()];
                    for o in 0..outer {
                        let src = (o * total + off) * inner;
                        let dst = o * len * inner;
                        d[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
                    }
                    store.accumulate(id, Tensor::op_output("concat_back", shape, d)?)?;
                }
                Ok(())
            });
        }
    }
    Ok(out)
}

/// Contiguous slice of `len` entries starting at `start` along `axis`.
pub fn narrow<E: Element>(
    tape: Option<&GradTape<E>>,
    x: &Tensor<E>,
    axis: usize,
    start: usize,
    len: usize,
) -> Result<Tensor<E>> {
    let dims = x.shape().dims();
    if axis >= 4 {
        return Err(Error::invalid("narrow", format!("axis {axis} out of range")));
    }
    if len == 0 || start + len > dims[axis] {
        return Err(Error::invalid(
            "narrow",
            format!("range {start}..{} exceeds axis extent {}", start + len, dims[axis]),
        ));
    }
    let (outer, total, inner) = axis_split(dims, axis)?;
    let mut od = dims;
    od[axis] = len;
    let out_shape = Shape::new(od[0], od[1], od[2], od[3]);
    let xd = x.data();
    let mut data = vec![E::zero(); out_shape.count()];
    for o in 0..outer {
        let src = (o * total + start) * inner;
        let dst = o * len * inner;
        data[dst..dst + len * inner].copy_from_slice(&xd[src..src + len * inner]);
    }
    let out = Tensor::op_output("narrow", out_shape, data)?;
    if let Some(t) = tape {
        if t.is_tracked(x) {
            let ix = x.id();
            let xshape = x.shape();
            t.record(&out, "narrow", move |g, store| {
                let gd = g.data();
                let mut d = vec![E::zero(); xshape.count()];
                for o in 0..outer {
                    let dst = (o * total + start) * inner;
                    let src = o * len * inner;
                    d[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
                }
                store.accumulate(ix, Tensor::op_output("narrow_back", xshape, d)?)
            });
        }
    }
    Ok(out)
}

/// Zero-pad at the bottom and right only (used to round spatial dims up to a
/// region grid).
pub fn zero_pad_bottom_right<E: Element>(
    tape: Option<&GradTape<E>>,
    x: &Tensor<E>,
    add_h: usize,
    add_w: usize,
) -> Result<Tensor<E>> {
    let s = x.shape();
    let out_shape = Shape::new(s.n, s.c, s.h + add_h, s.w + add_w);
    let xd = x.data();
    let mut data = vec![E::zero(); out_shape.count()];
    for n in 0..s.n {
        for c in 0..s.c {
            let src = (n * s.c + c) * s.h * s.w;
            let dst = (n * s.c + c) * out_shape.h * out_shape.w;
            for y in 0..s.h {
                data[dst + y * out_shape.w..dst + y * out_shape.w + s.w]
                    .copy_from_slice(&xd[src + y * s.w..src + (y + 1) * s.w]);
            }
        }
    }
    let out = Tensor::op_output("zero_pad_bottom_right", out_shape, data)?;
    if let Some(t) = tape {
        if t.is_tracked(x) {
            let ix = x.id();
            t.record(&out, "zero_pad_bottom_right", move |g, store| {
                let gd = g.data();
                let mut d = vec![E::zero(); s.count()];
                for n in 0..s.n {
                    for c in 0..s.c {
                        let dst = (n * s.c + c) * s.h * s.w;
                        let src = (n * s.c + c) * out_shape.h * out_shape.w;
                        for y in 0..s.h {
                            d[dst + y * s.w..dst + (y + 1) * s.w].copy_from_slice(
                                &gd[src + y * out_shape.w..src + y * out_shape.w + s.w],
                            );
                        }
                    }
                }
                store.accumulate(ix, Tensor::op_output("zero_pad_back", s, d)?)
            });
        }
    }
    Ok(out)
}

/// Pad all four sides by `pad`, replicating the nearest edge value.
pub fn replicate_pad<E: Element>(
    tape: Option<&GradTape<E>>,
    x: &Tensor<E>,
    pad: usize,
) -> Result<Tensor<E>> {
    let s = x.shape();
    if s.h == 0 || s.w == 0 {
        return Err(Error::invalid("replicate_pad", "empty spatial dims"));
    }
    if pad == 0 {
        // still produce a fresh tensor so tape semantics are uniform
        let out = Tensor::op_output("replicate_pad", s, x.data().to_vec())?;
        if let Some(t) = tape {
            if t.is_tracked(x) {
                let ix = x.id();
                t.record(&out, "replicate_pad", move |g, store| {
                    store.accumulate(ix, g.clone())
                });
            }
        }
        return Ok(out);
    }
    let out_shape = Shape::new(s.n, s.c, s.h + 2 * pad, s.w + 2 * pad);
    let xd = x.data();
    let mut data = vec![E::zero(); out_shape.count()];
    for n in 0..s.n {
        for c in 0..s.c {
            let src = (n * s.c + c) * s.h * s.w;
            let dst = (n * s.c + c) * out_shape.h * out_shape.w;
            for oy in 0..out_shape.h {
                let sy = oy.saturating_sub(pad).min(s.h - 1);
                for ox in 0..out_shape.w {
                    let sx = ox.saturating_sub(pad).min(s.w - 1);
                    data[dst + oy * out_shape.w + ox] = xd[src + sy * s.w + sx];
                }
            }
        }
    }
    let out = Tensor::op_output("replicate_pad", out_shape, data)?;
    if let Some(t) = tape {
        if t.is_tracked(x) {
            let ix = x.id();
            t.record(&out, "replicate_pad", move |g, store| {
                let gd = g.data();
                let mut d = vec![E::zero(); s.count()];
                for n in 0..s.n {
                    for c in 0..s.c {
                        let dst = (n * s.c + c) * s.h * s.w;
                        let src = (n * s.c + c) * out_shape.h * out_shape.w;
                        for oy in 0..out_shape.h {
                            let sy = oy.saturating_sub(pad).min(s.h - 1);
                            for ox in 0..out_shape.w {
                                let sx = ox.saturating_sub(pad).min(s.w - 1);
                                d[dst + sy * s.w + sx] += gd[src + oy * out_shape.w + ox];
                            }
                        }
                    }
                }
                store.accumulate(ix, Tensor::op_output("replicate_pad_back", s, d)?)
            });
        }
    }
    Ok(out)
}
