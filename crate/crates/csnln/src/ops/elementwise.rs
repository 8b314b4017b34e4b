//! Pointwise ops, reductions, softmax, PReLU.

use super::{axis_split, check_broadcast};
use crate::error::{Error, Result};
use crate::tape::GradTape;
use crate::tensor::{Element, Shape, Tensor};

fn check_same_shape<E: Element>(
    op: &'static str,
    a: &Tensor<E>,
    b: &Tensor<E>,
) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{} vs {}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Map a flat index of `shape` to the flat index of a broadcast operand.
#[inline]
fn broadcast_index(dims: [usize; 4], bdims: [usize; 4], flat: usize) -> usize {
    let w = flat % dims[3];
    let rest = flat / dims[3];
    let h = rest % dims[2];
    let rest = rest / dims[2];
    let c = rest % dims[1];
    let n = rest / dims[1];
    let bn = if bdims[0] == 1 { 0 } else { n };
    let bc = if bdims[1] == 1 { 0 } else { c };
    let bh = if bdims[2] == 1 { 0 } else { h };
    let bw = if bdims[3] == 1 { 0 } else { w };
    ((bn * bdims[1] + bc) * bdims[2] + bh) * bdims[3] + bw
}

/// Sum a full-shape gradient down to a broadcast operand's shape.
fn reduce_to<E: Element>(
    g: &[E],
    dims: [usize; 4],
    bdims: [usize; 4],
) -> Vec<E> {
    let blen: usize = bdims.iter().product();
    let mut out = vec![E::zero(); blen];
    for (i, &v) in g.iter().enumerate() {
        out[broadcast_index(dims, bdims, i)] += v;
    }
    out
}

pub fn add<E: Element>(
    tape: Option<&GradTape<E>>,
    a: &Tensor<E>,
    b: &Tensor<E>,
) -> Result<Tensor<E>> {
    check_same_shape("add", a, b)?;
    let data: Vec<E> = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    let out = Tensor::op_output("add", a.shape(), data)?;
    if let Some(t) = tape {
        let (na, nb) = (t.is_tracked(a), t.is_tracked(b));
        if na || nb {
            let (ia, ib) = (a.id(), b.id());
            t.record(&out, "add", move |g, store| {
                if na {
                    store.accumulate(ia, g.clone())?;
                }
                if nb {
                    store.accumulate(ib, g.clone())?;
                }
                Ok(())
            });
        }
    }
    Ok(out)
}

pub fn sub<E: Element>(
    tape: Option<&GradTape<E>>,
    a: &Tensor<E>,
    b: &Tensor<E>,
) -> Result<Tensor<E>> {
    check_same_shape("sub", a, b)?;
    let data: Vec<E> = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
    let out = Tensor::op_output("sub", a.shape(), data)?;
    if let Some(t) = tape {
        let (na, nb) = (t.is_tracked(a), t.is_tracked(b));
        if na || nb {
            let (ia, ib) = (a.id(), b.id());
            t.record(&out, "sub", move |g, store| {
                if na {
                    store.accumulate(ia, g.clone())?;
                }
                if nb {
                    let neg: Vec<E> = g.data().iter().map(|&v| -v).collect();
                    store.accumulate(ib, Tensor::op_output("sub_back", g.shape(), neg)?)?;
                }
                Ok(())
            });
        }
    }
    Ok(out)
}

/// Elementwise product of same-shape tensors.
pub fn mul<E: Element>(
    tape: Option<&GradTape<E>>,
    a: &Tensor<E>,
    b: &Tensor<E>,
) -> Result<Tensor<E>> {
    check_same_shape("mul", a, b)?;
    let data: Vec<E> = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    let out = Tensor::op_output("mul", a.shape(), data)?;
    if let Some(t) = tape {
        let (na, nb) = (t.is_tracked(a), t.is_tracked(b));
        if na || nb {
            let (ac, bc) = (a.clone(), b.clone());
            t.record(&out, "mul", move |g, store| {
                if na {
                    let d: Vec<E> =
                        g.data().iter().zip(bc.data()).map(|(&gv, &bv)| gv * bv).collect();
                    store.accumulate(ac.id(), Tensor::op_output("mul_back", g.shape(), d)?)?;
                }
                if nb {
                    let d: Vec<E> =
                        g.data().iter().zip(ac.data()).map(|(&gv, &av)| gv * av).collect();
                    store.accumulate(bc.id(), Tensor::op_output("mul_back", g.shape(), d)?)?;
                }
                Ok(())
            });
        }
    }
    Ok(out)
}

/// `x + b` with `b` broadcast (each dim 1 or equal). Covers channel biases.
pub fn add_broadcast<E: Element>(
    tape: Option<&GradTape<E>>,
    x: &Tensor<E>,
    b: &Tensor<E>,
) -> Result<Tensor<E>> {
    check_broadcast("add_broadcast", x, b)?;
    let dims = x.shape().dims();
    let bdims = b.shape().dims();
    let bd = b.data();
    let data: Vec<E> = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v + bd[broadcast_index(dims, bdims, i)])
        .collect();
    let out = Tensor::op_output("add_broadcast", x.shape(), data)?;
    if let Some(t) = tape {
        let (nx, nb) = (t.is_tracked(x), t.is_tracked(b));
        if nx || nb {
            let (ix, ib) = (x.id(), b.id());
            let bshape = b.shape();
            t.record(&out, "add_broadcast", move |g, store| {
                if nx {
                    store.accumulate(ix, g.clone())?;
                }
                if nb {
                    let d = reduce_to(g.data(), dims, bdims);
                    store.accumulate(ib, Tensor::op_output("add_broadcast_back", bshape, d)?)?;
                }
                Ok(())
            });
        }
    }
    Ok(out)
}

/// `x * m` with `m` broadcast (each dim 1 or equal). Covers per-channel scales
/// and normalization by constant count maps.
pub fn mul_broadcast<E: Element>(
    tape: Option<&GradTape<E>>,
    x: &Tensor<E>,
    m: &Tensor<E>,
) -> Result<Tensor<E>> {
    check_broadcast("mul_broadcast", x, m)?;
    let dims = x.shape().dims();
    let mdims = m.shape().dims();
    let md = m.data();
    let data: Vec<E> = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v * md[broadcast_index(dims, mdims, i)])
        .collect();
    let out = Tensor::op_output("mul_broadcast", x.shape(), data)?;
    if let Some(t) = tape {
        let (nx, nm) = (t.is_tracked(x), t.is_tracked(m));
        if nx || nm {
            let (xc, mc) = (x.clone(), m.clone());
            t.record(&out, "mul_broadcast", move |g, store| {
                if nx {
                    let mdd = mc.data();
                    let d: Vec<E> = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &gv)| gv * mdd[broadcast_index(dims, mdims, i)])
                        .collect();
                    store.accumulate(xc.id(), Tensor::op_output("mul_broadcast_back", g.shape(), d)?)?;
                }
                if nm {
                    let prod: Vec<E> =
                        g.data().iter().zip(xc.data()).map(|(&gv, &xv)| gv * xv).collect();
                    let d = reduce_to(&prod, dims, mdims);
                    store.accumulate(
                        mc.id(),
                        Tensor::op_output("mul_broadcast_back", mc.shape(), d)?,
                    )?;
                }
                Ok(())
            });
        }
    }
    Ok(out)
}

/// Multiply by a plain constant.
pub fn scale<E: Element>(
    tape: Option<&GradTape<E>>,
    x: &Tensor<E>,
    k: f64,
) -> Result<Tensor<E>> {
    let kv = E::from_f64(k);
    let data: Vec<E> = x.data().iter().map(|&v| v * kv).collect();
    let out = Tensor::op_output("scale", x.shape(), data)?;
    if let Some(t) = tape {
        if t.is_tracked(x) {
            let ix = x.id();
            t.record(&out, "scale", move |g, store| {
                let d: Vec<E> = g.data().iter().map(|&v| v * kv).collect();
                store.accumulate(ix, Tensor::op_output("scale_back", g.shape(), d)?)
            });
        }
    }
    Ok(out)
}

/// Sum of all elements as a 1x1x1x1 scalar. Accumulated row-major.
pub fn sum_all<E: Element>(tape: Option<&GradTape<E>>, x: &Tensor<E>) -> Result<Tensor<E>> {
    let mut acc = E::zero();
    for &v in x.data() {
        acc += v;
    }
    let out = Tensor::op_output("sum_all", Shape::new(1, 1, 1, 1), vec![acc])?;
    if let Some(t) = tape {
        if t.is_tracked(x) {
            let ix = x.id();
            let xshape = x.shape();
            t.record(&out, "sum_all", move |g, store| {
                let gv = g.data()[0];
                store.accumulate(
                    ix,
                    Tensor::op_output("sum_all_back", xshape, vec![gv; xshape.count()])?,
                )
            });
        }
    }
    Ok(out)
}

/// Mean absolute difference (the L1 reconstruction loss). The subgradient at
/// exactly zero difference is taken as 0.
pub fn mean_abs_diff<E: Element>(
    tape: Option<&GradTape<E>>,
    a: &Tensor<E>,
    b: &Tensor<E>,
) -> Result<Tensor<E>> {
    check_same_shape("mean_abs_diff", a, b)?;
    let n = a.shape().count();
    if n == 0 {
        return Err(Error::invalid("mean_abs_diff", "empty tensors"));
    }
    let inv = E::from_f64(1.0 / n as f64);
    let mut acc = E::zero();
    for (&x, &y) in a.data().iter().zip(b.data()) {
        acc += (x - y).abs();
    }
    let out = Tensor::op_output("mean_abs_diff", Shape::new(1, 1, 1, 1), vec![acc * inv])?;
    if let Some(t) = tape {
        let (na, nb) = (t.is_tracked(a), t.is_tracked(b));
        if na || nb {
            let (ac, bc) = (a.clone(), b.clone());
            t.record(&out, "mean_abs_diff", move |g, store| {
                let gv = g.data()[0] * inv;
                let signs: Vec<E> = ac
                    .data()
                    .iter()
                    .zip(bc.data())
                    .map(|(&x, &y)| {
                        if x > y {
                            gv
                        } else if x < y {
                            -gv
                        } else {
                            E::zero()
                        }
                    })
                    .collect();
                if na {
                    store.accumulate(
                        ac.id(),
                        Tensor::op_output("mean_abs_diff_back", ac.shape(), signs.clone())?,
                    )?;
                }
                if nb {
                    let neg: Vec<E> = signs.iter().map(|&v| -v).collect();
                    store.accumulate(
                        bc.id(),
                        Tensor::op_output("mean_abs_diff_back", bc.shape(), neg)?,
                    )?;
                }
                Ok(())
            });
        }
    }
    Ok(out)
}

/// PReLU with per-channel slope: `out = x` if `x >= 0` else `slope_c * x`.
/// `slope` has shape 1xCx1x1 (or 1x1x1x1 to share one slope). A slope tensor
/// that is not tracked makes this a fixed-slope activation (slope 0 = ReLU).
pub fn prelu<E: Element>(
    tape: Option<&GradTape<E>>,
    x: &Tensor<E>,
    slope: &Tensor<E>,
) -> Result<Tensor<E>> {
    let s = x.shape();
    let ss = slope.shape();
    if ss.n != 1 || ss.h != 1 || ss.w != 1 || (ss.c != 1 && ss.c != s.c) {
        return Err(Error::shape(
            "prelu",
            format!("slope must be 1xCx1x1 or 1x1x1x1, got {ss} for input {s}"),
        ));
    }
    let sd = slope.data();
    let plane = s.h * s.w;
    let mut data = Vec::with_capacity(s.count());
    for n in 0..s.n {
        for c in 0..s.c {
            let sc = sd[if ss.c == 1 { 0 } else { c }];
            let base = (n * s.c + c) * plane;
            for &v in &x.data()[base..base + plane] {
                data.push(if v >= E::zero() { v } else { sc * v });
            }
        }
    }
    let out = Tensor::op_output("prelu", s, data)?;
    if let Some(t) = tape {
        let (nx, ns) = (t.is_tracked(x), t.is_tracked(slope));
        if nx || ns {
            let (xc, sc) = (x.clone(), slope.clone());
            t.record(&out, "prelu", move |g, store| {
                let sd = sc.data();
                let gd = g.data();
                let xd = xc.data();
                if nx {
                    let mut d = Vec::with_capacity(s.count());
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let sv = sd[if ss.c == 1 { 0 } else { c }];
                            let base = (n * s.c + c) * plane;
                            for i in base..base + plane {
                                d.push(if xd[i] >= E::zero() { gd[i] } else { sv * gd[i] });
                            }
                        }
                    }
                    store.accumulate(xc.id(), Tensor::op_output("prelu_back", s, d)?)?;
                }
                if ns {
                    let mut d = vec![E::zero(); ss.count()];
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let slot = if ss.c == 1 { 0 } else { c };
                            let base = (n * s.c + c) * plane;
                            for i in base..base + plane {
                                if xd[i] < E::zero() {
                                    d[slot] += gd[i] * xd[i];
                                }
                            }
                        }
                    }
                    store.accumulate(sc.id(), Tensor::op_output("prelu_back", ss, d)?)?;
                }
                Ok(())
            });
        }
    }
    Ok(out)
}

/// Softmax along one axis, computed with max-subtraction.
pub fn softmax<E: Element>(
    tape: Option<&GradTape<E>>,
    x: &Tensor<E>,
    axis: usize,
) -> Result<Tensor<E>> {
    let (outer, len, inner) = axis_split(x.shape().dims(), axis)?;
    if len == 0 {
        return Err(Error::invalid("softmax", "empty axis"));
    }
    let xd = x.data();
    let mut data = vec![E::zero(); xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let mut m = xd[idx(0)];
            for j in 1..len {
                let v = xd[idx(j)];
                if v > m {
                    m = v;
                }
            }
            let mut denom = E::zero();
            for j in 0..len {
                let e = (xd[idx(j)] - m).exp();
                data[idx(j)] = e;
                denom += e;
            }
            for j in 0..len {
                data[idx(j)] = data[idx(j)] / denom;
            }
        }
    }
    let out = Tensor::op_output("softmax", x.shape(), data)?;
    if let Some(t) = tape {
        if t.is_tracked(x) {
            let ix = x.id();
            let sm = out.clone();
            t.record(&out, "softmax", move |g, store| {
                let sd = sm.data();
                let gd = g.data();
                let mut d = vec![E::zero(); sd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let mut dot = E::zero();
                        for j in 0..len {
                            dot += gd[idx(j)] * sd[idx(j)];
                        }
                        for j in 0..len {
                            d[idx(j)] = sd[idx(j)] * (gd[idx(j)] - dot);
                        }
                    }
                }
                store.accumulate(ix, Tensor::op_output("softmax_back", sm.shape(), d)?)
            });
        }
    }
    Ok(out)
}
