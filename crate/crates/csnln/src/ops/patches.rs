//! Patch extraction and overlap-add folding (im2col / col2im style), plus the
//! rearrangement that turns extracted patches into a convolution filter bank.
//!
//! A patch matrix has shape `(n, c*p*p, 1, L)`: one column per patch position,
//! positions enumerated row-major over the `(ny, nx)` grid, column entries
//! ordered channel-major then kernel row then kernel column, i.e. row index
//! `r = (c*p + py)*p + px`. Patch `(gy, gx)` covers input rows
//! `gy*stride - pad ..+p` (same for columns); reads outside the input are
//! zero, writes outside are dropped.

use crate::error::{Error, Result};
use crate::tape::GradTape;
use crate::tensor::{Element, Shape, Tensor};

/// Number of patch positions along one dimension: `(d + 2*pad - p)/stride + 1`.
pub fn patch_grid_len(dim: usize, p: usize, stride: usize, pad: usize) -> Result<usize> {
    if p == 0 || stride == 0 {
        return Err(Error::invalid("patches", "p and stride must be >= 1"));
    }
    if dim + 2 * pad < p {
        return Err(Error::invalid(
            "patches",
            format!("patch {p} exceeds padded extent {}", dim + 2 * pad),
        ));
    }
    Ok((dim + 2 * pad - p) / stride + 1)
}

/// Extract all patches on the natural grid for the given stride/pad.
pub fn extract_patches<E: Element>(
    tape: Option<&GradTape<E>>,
    x: &Tensor<E>,
    p: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor<E>> {
    let ny = patch_grid_len(x.shape().h, p, stride, pad)?;
    let nx = patch_grid_len(x.shape().w, p, stride, pad)?;
    extract_patches_grid(tape, x, p, stride, pad, ny, nx)
}

/// Extract patches on an explicit `(ny, nx)` position grid. Positions may
/// reach outside the input; those reads are zero. Used when the grid is
/// dictated by another tensor's geometry (cross-scale evidence patches).
pub fn extract_patches_grid<E: Element>(
    tape: Option<&GradTape<E>>,
    x: &Tensor<E>,
    p: usize,
    stride: usize,
    pad: usize,
    ny: usize,
    nx: usize,
) -> Result<Tensor<E>> {
    if p == 0 || stride == 0 {
        return Err(Error::invalid("extract_patches", "p and stride must be >= 1"));
    }
    if ny == 0 || nx == 0 {
        return Err(Error::invalid("extract_patches", "empty position grid"));
    }
    let s = x.shape();
    let l = ny * nx;
    let out_shape = Shape::new(s.n, s.c * p * p, 1, l);
    let xd = x.data();
    let mut data = vec![E::zero(); out_shape.count()];
    // Row-major over (n, c, py, px, gy, gx): for each output row, walk columns.
    for n in 0..s.n {
        for c in 0..s.c {
            let xb = (n * s.c + c) * s.h * s.w;
            for py in 0..p {
                for px in 0..p {
                    let r = (c * p + py) * p + px;
                    let ob = (n * out_shape.c + r) * l;
                    for gy in 0..ny {
                        let yy = (gy * stride + py) as isize - pad as isize;
                        if yy < 0 || yy >= s.h as isize {
                            continue;
                        }
                        for gx in 0..nx {
                            let xx = (gx * stride + px) as isize - pad as isize;
                            if xx < 0 || xx >= s.w as isize {
                                continue;
                            }
                            data[ob + gy * nx + gx] =
                                xd[xb + yy as usize * s.w + xx as usize];
                        }
                    }
                }
            }
        }
    }
    let out = Tensor::op_output("extract_patches", out_shape, data)?;
    if let Some(t) = tape {
        if t.is_tracked(x) {
            let ix = x.id();
            let xshape = s;
            t.record(&out, "extract_patches", move |g, store| {
                let mut d = vec![E::zero(); xshape.count()];
                scatter_columns(g.data(), &mut d, xshape, p, stride, pad, ny, nx);
                store.accumulate(ix, Tensor::op_output("extract_patches_back", xshape, d)?)
            });
        }
    }
    Ok(out)
}

/// Overlap-add columns of a patch matrix into an image-shaped buffer.
/// Accumulation order: (n, c, py, px, gy, gx) ascending, matching extraction.
fn scatter_columns<E: Element>(
    cols: &[E],
    out: &mut [E],
    out_shape: Shape,
    p: usize,
    stride: usize,
    pad: usize,
    ny: usize,
    nx: usize,
) {
    let l = ny * nx;
    let cpp = out_shape.c * p * p;
    for n in 0..out_shape.n {
        for c in 0..out_shape.c {
            let ob = (n * out_shape.c + c) * out_shape.h * out_shape.w;
            for py in 0..p {
                for px in 0..p {
                    let r = (c * p + py) * p + px;
                    let cb = (n * cpp + r) * l;
                    for gy in 0..ny {
                        let yy = (gy * stride + py) as isize - pad as isize;
                        if yy < 0 || yy >= out_shape.h as isize {
                            continue;
                        }
                        for gx in 0..nx {
                            let xx = (gx * stride + px) as isize - pad as isize;
                            if xx < 0 || xx >= out_shape.w as isize {
                                continue;
                            }
                            out[ob + yy as usize * out_shape.w + xx as usize] +=
                                cols[cb + gy * nx + gx];
                        }
                    }
                }
            }
        }
    }
}

/// Per-pixel contribution multiplicities for a patch grid over an
/// `out_h x out_w` canvas: how many patches cover each pixel.
pub fn fold_counts<E: Element>(
    out_h: usize,
    out_w: usize,
    p: usize,
    stride: usize,
    pad: usize,
    ny: usize,
    nx: usize,
) -> Tensor<E> {
    let mut counts = vec![E::zero(); out_h * out_w];
    for gy in 0..ny {
        for py in 0..p {
            let yy = (gy * stride + py) as isize - pad as isize;
            if yy < 0 || yy >= out_h as isize {
                continue;
            }
            for gx in 0..nx {
                for px in 0..p {
                    let xx = (gx * stride + px) as isize - pad as isize;
                    if xx < 0 || xx >= out_w as isize {
                        continue;
                    }
                    counts[yy as usize * out_w + xx as usize] += E::one();
                }
            }
        }
    }
    Tensor::op_output("fold_counts", Shape::new(1, 1, out_h, out_w), counts)
        .expect("counts are finite")
}

/// Elementwise reciprocal of a counts map; errors if any pixel is uncovered.
pub fn recip_counts<E: Element>(counts: &Tensor<E>) -> Result<Tensor<E>> {
    let mut data = Vec::with_capacity(counts.shape().count());
    for &v in counts.data() {
        if v == E::zero() {
            return Err(Error::invalid(
                "recip_counts",
                "patch grid leaves pixels uncovered",
            ));
        }
        data.push(E::one() / v);
    }
    Tensor::op_output("recip_counts", counts.shape(), data)
}

/// Overlap-add a patch matrix back to `(n, c, out_h, out_w)`. Returns the
/// folded tensor and the per-pixel contribution counts (constant, not on the
/// tape); the caller normalizes if it wants a mean. `L` must match the
/// natural grid for the given geometry.
pub fn fold_patches<E: Element>(
    tape: Option<&GradTape<E>>,
    patches: &Tensor<E>,
    out_h: usize,
    out_w: usize,
    p: usize,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<E>, Tensor<E>)> {
    let ps = patches.shape();
    if ps.h != 1 {
        return Err(Error::shape(
            "fold_patches",
            format!("expected (n, c*p*p, 1, L) patch matrix, got {ps}"),
        ));
    }
    if p == 0 || ps.c % (p * p) != 0 {
        return Err(Error::shape(
            "fold_patches",
            format!("{} rows do not factor into c*{p}*{p}", ps.c),
        ));
    }
    let c = ps.c / (p * p);
    let ny = patch_grid_len(out_h, p, stride, pad)?;
    let nx = patch_grid_len(out_w, p, stride, pad)?;
    if ny * nx != ps.w {
        return Err(Error::invalid(
            "fold_patches",
            format!("L={} inconsistent with {}x{} grid ({} positions)", ps.w, ny, nx, ny * nx),
        ));
    }
    let out_shape = Shape::new(ps.n, c, out_h, out_w);
    let mut data = vec![E::zero(); out_shape.count()];
    scatter_columns(patches.data(), &mut data, out_shape, p, stride, pad, ny, nx);
    let out = Tensor::op_output("fold_patches", out_shape, data)?;
    let counts = fold_counts::<E>(out_h, out_w, p, stride, pad, ny, nx);
    if let Some(t) = tape {
        if t.is_tracked(patches) {
            let ip = patches.id();
            let pshape = ps;
            t.record(&out, "fold_patches", move |g, store| {
                // Gradient of overlap-add is extraction back out of the grad.
                let gcols = extract_patches_grid(None, g, p, stride, pad, ny, nx)?;
                if gcols.shape() != pshape {
                    return Err(Error::shape(
                        "fold_patches_back",
                        format!("{} vs {}", gcols.shape(), pshape),
                    ));
                }
                store.accumulate(ip, gcols)
            });
        }
    }
    Ok((out, counts))
}

/// Reinterpret a single-item patch matrix `(1, c*p*p, 1, L)` as a filter bank
/// `(L, c, p, p)`: column `l` becomes filter `l`. This is what lets patch
/// correlation run as a convolution and patch aggregation as a transposed
/// convolution.
pub fn patches_to_filters<E: Element>(
    tape: Option<&GradTape<E>>,
    patches: &Tensor<E>,
    c: usize,
    p: usize,
) -> Result<Tensor<E>> {
    let ps = patches.shape();
    if ps.n != 1 || ps.h != 1 || ps.c != c * p * p {
        return Err(Error::shape(
            "patches_to_filters",
            format!("expected (1, {}*{p}*{p}, 1, L), got {ps}", c),
        ));
    }
    let l = ps.w;
    let out_shape = Shape::new(l, c, p, p);
    let pd = patches.data();
    let mut data = vec![E::zero(); out_shape.count()];
    for ll in 0..l {
        for cc in 0..c {
            for py in 0..p {
                for px in 0..p {
                    let r = (cc * p + py) * p + px;
                    data[((ll * c + cc) * p + py) * p + px] = pd[r * l + ll];
                }
            }
        }
    }
    let out = Tensor::op_output("patches_to_filters", out_shape, data)?;
    if let Some(t) = tape {
        if t.is_tracked(patches) {
            let ip = patches.id();
            t.record(&out, "patches_to_filters", move |g, store| {
                let gd = g.data();
                let mut d = vec![E::zero(); ps.count()];
                for ll in 0..l {
                    for cc in 0..c {
                        for py in 0..p {
                            for px in 0..p {
                                let r = (cc * p + py) * p + px;
                                d[r * l + ll] = gd[((ll * c + cc) * p + py) * p + px];
                            }
                        }
                    }
                }
                store.accumulate(ip, Tensor::op_output("patches_to_filters_back", ps, d)?)
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::mul_broadcast;

    #[test]
    fn p1_is_reshape() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 2, 2, 3), |_, c, y, xx| {
            (c * 100 + y * 10 + xx) as f64
        })
        .unwrap();
        let cols = extract_patches(None, &x, 1, 1, 0).unwrap();
        assert_eq!(cols.shape(), Shape::new(1, 2, 1, 6));
        assert_eq!(cols.data(), x.data());
    }

    #[test]
    fn two_by_two_single_column() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0])
            .unwrap();
        let cols = extract_patches(None, &x, 2, 1, 0).unwrap();
        assert_eq!(cols.shape(), Shape::new(1, 4, 1, 1));
        assert_eq!(cols.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn zero_padding_reads_zero() {
        let x = Tensor::<f64>::full(Shape::new(1, 1, 2, 2), 5.0).unwrap();
        let cols = extract_patches(None, &x, 3, 1, 1).unwrap();
        assert_eq!(cols.shape(), Shape::new(1, 9, 1, 4));
        // top-left patch at (-1,-1): only the 2x2 bottom-right of the patch
        // overlaps the input
        let col0: Vec<f64> = (0..9).map(|r| cols.data()[r * 4]).collect();
        assert_eq!(col0, vec![0.0, 0.0, 0.0, 0.0, 5.0, 5.0, 0.0, 5.0, 5.0]);
    }

    #[test]
    fn fold_counts_enumeration() {
        // p=2, stride 1 on 3x3: corners 1, edges 2, center 4
        let counts = fold_counts::<f64>(3, 3, 2, 1, 0, 2, 2);
        assert_eq!(
            counts.data(),
            &[1.0, 2.0, 1.0, 2.0, 4.0, 2.0, 1.0, 2.0, 1.0]
        );
    }

    #[test]
    fn non_overlapping_counts_are_one() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 1, 4, 4), |_, _, y, xx| {
            (y * 4 + xx) as f64
        })
        .unwrap();
        let cols = extract_patches(None, &x, 2, 2, 0).unwrap();
        let (folded, counts) = fold_patches(None, &cols, 4, 4, 2, 2, 0).unwrap();
        assert!(counts.data().iter().all(|&v| v == 1.0));
        assert_eq!(folded.data(), x.data());
    }

    #[test]
    fn round_trip_with_normalization() {
        let x = Tensor::<f64>::from_fn(Shape::new(2, 3, 5, 6), |n, c, y, xx| {
            ((n * 31 + c * 17 + y * 7 + xx * 3) % 23) as f64 * 0.21 - 1.1
        })
        .unwrap();
        for (p, stride, pad) in [(2usize, 1usize, 0usize), (3, 1, 1), (2, 2, 1), (3, 2, 2)] {
            let cols = extract_patches(None, &x, p, stride, pad).unwrap();
            let (folded, counts) =
                fold_patches(None, &cols, 5, 6, p, stride, pad).unwrap();
            let recip = recip_counts(&counts).unwrap();
            let normalized = mul_broadcast(None, &folded, &recip).unwrap();
            assert!(
                normalized.max_abs_diff(&x) < 1e-6,
                "p={p} stride={stride} pad={pad}"
            );
        }
    }

    #[test]
    fn fold_rejects_inconsistent_l() {
        let cols = Tensor::<f64>::zeros(Shape::new(1, 4, 1, 5));
        assert!(fold_patches(None, &cols, 4, 4, 2, 2, 0).is_err());
    }

    #[test]
    fn extract_fold_adjoint_inner_product() {
        let mut k = 0.0f64;
        let mut next = move || {
            k += 1.0;
            (k * 0.7371).sin()
        };
        for (p, stride, pad) in [(2usize, 1usize, 0usize), (3, 2, 1), (3, 1, 1)] {
            let x = Tensor::<f64>::from_fn(Shape::new(1, 2, 5, 5), |_, _, _, _| next()).unwrap();
            let cols = extract_patches(None, &x, p, stride, pad).unwrap();
            let y = Tensor::<f64>::from_fn(cols.shape(), |_, _, _, _| next()).unwrap();
            let (folded, _) = fold_patches(None, &y, 5, 5, p, stride, pad).unwrap();
            let lhs: f64 = cols.data().iter().zip(y.data()).map(|(&a, &b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(folded.data()).map(|(&a, &b)| a * b).sum();
            assert!(
                (lhs - rhs).abs() <= 1e-6 * lhs.abs().max(1.0),
                "p={p} stride={stride} pad={pad}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn filter_bank_layout() {
        // two channels, p=1, three positions: filter l must pick pixel l
        let x = Tensor::<f64>::from_vec(
            Shape::new(1, 2, 1, 3),
            vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0],
        )
        .unwrap();
        let cols = extract_patches(None, &x, 1, 1, 0).unwrap();
        let bank = patches_to_filters(None, &cols, 2, 1).unwrap();
        assert_eq!(bank.shape(), Shape::new(3, 2, 1, 1));
        assert_eq!(bank.data(), &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0]);
    }
}
