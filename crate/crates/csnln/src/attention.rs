//! The attention family: in-scale non-local attention over region grids and
//! three cross-scale variants that mine a downscaled copy of the feature map
//! for matching structure.
//!
//! All variants share one skeleton: embed queries and candidates with 1x1
//! convolutions, score every query/candidate pair by a dot product, softmax
//! the scores per query, then blend candidate values with the resulting
//! weights. They differ in where candidates come from and what the blended
//! values are:
//!
//! * [`in_scale_nonlocal`]: candidates are the pixels of the same feature
//!   map, partitioned into independent region cells; values are psi(pixel).
//!   Output keeps the input size.
//! * [`naive_cross_scale`]: candidates and values both come from the
//!   bilinear-downscaled copy. Output keeps the input size, and the values
//!   inherit the downscale's loss of detail, which is what the next two
//!   variants fix.
//! * [`cross_scale_pixel`]: candidates still come from the downscaled copy,
//!   but each candidate pastes back its corresponding full-resolution
//!   s x s patch, so the output is s times larger.
//! * [`cross_scale_patch`]: the patch generalization; p x p windows are
//!   compared instead of single pixels, and overlapping s*p x s*p evidence
//!   patches are overlap-added, then normalized by coverage counts. With
//!   p = 1 it reduces exactly to the pixel form.
//!
//! The fast paths run entirely on verified primitives: scoring is a
//! convolution of the embedded query map against a filter bank built from
//! candidate patches, and aggregation is a transposed convolution with a
//! bank of evidence patches. [`cross_scale_oracle`] recomputes the patch
//! form with literal loops and none of those tricks; tests hold the two
//! within tight tolerances.
//!
//! Candidate patches are centered on their grid position and read the
//! downscaled map through replicate padding, so border candidates see edge
//! values rather than injected zeros and every query faces the same number
//! of candidates. Query patches use the zero padding of the scoring
//! convolution; a query's own border truncation shifts all its scores
//! equally, which the softmax cannot see in the p = 1 case and only mildly
//! reweights otherwise.

use crate::error::{Error, Result};
use crate::ops;
use crate::tape::GradTape;
use crate::tensor::{Element, Shape, Tensor};

/// Value transformation applied to candidates before blending.
#[derive(Clone, Debug)]
pub enum PsiMode<E: Element> {
    /// Blend raw values. The cross-scale variants default to this: their
    /// values are full-resolution evidence patches, which a learned map
    /// would smear.
    Identity,
    /// A learned 1x1 convolution, `(C, C, 1, 1)` weights.
    Learned(Tensor<E>),
}

/// Parameters shared by every attention variant.
///
/// `theta` and `delta` are the query/candidate embeddings, `(C_e, C, 1, 1)`
/// 1x1 convolution weights with `C_e <= C`. `scale` is the downscale factor
/// between the feature map and its candidate pool, `patch` the (odd)
/// correlation window in downscaled coordinates, `candidate_stride` the
/// sampling stride of candidates over the downscaled grid, and `grid` the
/// region partition used by the in-scale variant.
#[derive(Clone, Debug)]
pub struct AttentionParams<E: Element> {
    pub theta: Tensor<E>,
    pub delta: Tensor<E>,
    pub psi: PsiMode<E>,
    pub scale: usize,
    pub patch: usize,
    pub candidate_stride: usize,
    pub grid: (usize, usize),
}

impl<E: Element> AttentionParams<E> {
    pub fn new(
        theta: Tensor<E>,
        delta: Tensor<E>,
        psi: PsiMode<E>,
        scale: usize,
        patch: usize,
        candidate_stride: usize,
        grid: (usize, usize),
    ) -> Result<Self> {
        let ts = theta.shape();
        if ts.h != 1 || ts.w != 1 || ts.n == 0 || ts.c == 0 {
            return Err(Error::shape(
                "attention_params",
                format!("theta must be (C_e, C, 1, 1), got {ts}"),
            ));
        }
        if delta.shape() != ts {
            return Err(Error::shape(
                "attention_params",
                format!("delta {} must match theta {ts}", delta.shape()),
            ));
        }
        if ts.n > ts.c {
            return Err(Error::invalid(
                "attention_params",
                format!("embedded channels {} exceed input channels {}", ts.n, ts.c),
            ));
        }
        if let PsiMode::Learned(w) = &psi {
            let ws = w.shape();
            if ws != Shape::new(ts.c, ts.c, 1, 1) {
                return Err(Error::shape(
                    "attention_params",
                    format!("psi must be ({c}, {c}, 1, 1), got {ws}", c = ts.c),
                ));
            }
        }
        if scale == 0 || patch == 0 || candidate_stride == 0 {
            return Err(Error::invalid(
                "attention_params",
                "scale, patch and candidate_stride must be >= 1",
            ));
        }
        if patch % 2 == 0 {
            return Err(Error::invalid(
                "attention_params",
                format!("patch must be odd so candidates center on grid positions, got {patch}"),
            ));
        }
        if grid.0 == 0 || grid.1 == 0 {
            return Err(Error::invalid("attention_params", "grid cells must be >= 1"));
        }
        Ok(AttentionParams { theta, delta, psi, scale, patch, candidate_stride, grid })
    }

    /// Identity embeddings (`C_e = C`, unit 1x1 weights) and identity psi;
    /// the workhorse for tests and oracles, where raw pixel dot products are
    /// easiest to reason about.
    pub fn identity(
        c: usize,
        scale: usize,
        patch: usize,
        candidate_stride: usize,
        grid: (usize, usize),
    ) -> Result<Self> {
        let eye = Tensor::from_fn(Shape::new(c, c, 1, 1), |oc, ic, _, _| {
            if oc == ic {
                E::one()
            } else {
                E::zero()
            }
        })?;
        Self::new(eye.clone(), eye, PsiMode::Identity, scale, patch, candidate_stride, grid)
    }

    pub fn channels(&self) -> usize {
        self.theta.shape().c
    }

    pub fn embedded_channels(&self) -> usize {
        self.theta.shape().n
    }

    fn check_input(&self, x: &Tensor<E>, op: &'static str) -> Result<()> {
        if x.shape().c != self.channels() {
            return Err(Error::shape(
                op,
                format!(
                    "input has {} channels but embeddings expect {}",
                    x.shape().c,
                    self.channels()
                ),
            ));
        }
        Ok(())
    }
}

/// Downscaled-pool and candidate-grid geometry for the cross-scale variants.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    s: usize,
    p: usize,
    /// Patch half-width, `(p - 1) / 2`.
    q: usize,
    cs: usize,
    yh: usize,
    yw: usize,
    /// Candidate grid extents over the downscaled map.
    ny: usize,
    nx: usize,
}

impl Geometry {
    fn candidates(&self) -> usize {
        self.ny * self.nx
    }
}

fn down_dims(s: Shape, scale: usize, op: &'static str) -> Result<(usize, usize)> {
    let (yh, yw) = (s.h / scale, s.w / scale);
    if yh == 0 || yw == 0 {
        return Err(Error::invalid(
            op,
            format!("{}x{} input too small to downscale by {scale}", s.h, s.w),
        ));
    }
    Ok((yh, yw))
}

fn geometry<E: Element>(
    shape: Shape,
    params: &AttentionParams<E>,
    p: usize,
    op: &'static str,
) -> Result<Geometry> {
    let s = params.scale;
    let (yh, yw) = down_dims(shape, s, op)?;
    if p > yh.min(yw) {
        return Err(Error::invalid(
            op,
            format!("patch {p} exceeds downscaled extent {yh}x{yw}: no valid candidate"),
        ));
    }
    let cs = params.candidate_stride;
    Ok(Geometry {
        s,
        p,
        q: (p - 1) / 2,
        cs,
        yh,
        yw,
        ny: (yh - 1) / cs + 1,
        nx: (yw - 1) / cs + 1,
    })
}

/// Run `f` on each batch item separately and concatenate the results along
/// `n`. Attention candidates come from the item itself, so filter banks are
/// inherently per-item and the batch axis cannot ride through the
/// convolutions.
fn per_item<E: Element, F>(
    tape: Option<&GradTape<E>>,
    x: &Tensor<E>,
    f: F,
) -> Result<Tensor<E>>
where
    F: Fn(Option<&GradTape<E>>, &Tensor<E>) -> Result<Tensor<E>>,
{
    let n = x.shape().n;
    if n == 1 {
        return f(tape, x);
    }
    let mut items = Vec::with_capacity(n);
    for i in 0..n {
        let xi = ops::narrow(tape, x, 0, i, 1)?;
        items.push(f(tape, &xi)?);
    }
    let refs: Vec<&Tensor<E>> = items.iter().collect();
    ops::concat(tape, &refs, 0)
}

fn embed<E: Element>(
    tape: Option<&GradTape<E>>,
    x: &Tensor<E>,
    weights: &Tensor<E>,
) -> Result<Tensor<E>> {
    ops::conv2d(tape, x, weights, None, 1, 0)
}

fn apply_psi<E: Element>(
    tape: Option<&GradTape<E>>,
    x: &Tensor<E>,
    params: &AttentionParams<E>,
) -> Result<Tensor<E>> {
    match &params.psi {
        PsiMode::Identity => Ok(x.clone()),
        PsiMode::Learned(w) => ops::conv2d(tape, x, w, None, 1, 0),
    }
}

/// Split `total` into `parts` contiguous segments of real pixels; the
/// remainder goes to the last segment, so uneven partitions never invent
/// padded candidates.
fn segments(total: usize, parts: usize, op: &'static str) -> Result<Vec<(usize, usize)>> {
    let base = total / parts;
    if base == 0 {
        return Err(Error::invalid(
            op,
            format!("empty grid cell: {parts} cells over extent {total}"),
        ));
    }
    let rem = total % parts;
    Ok((0..parts)
        .map(|i| (i * base, if i + 1 == parts { base + rem } else { base }))
        .collect())
}

fn narrow2<E: Element>(
    tape: Option<&GradTape<E>>,
    x: &Tensor<E>,
    row: (usize, usize),
    col: (usize, usize),
) -> Result<Tensor<E>> {
    let r = ops::narrow(tape, x, 2, row.0, row.1)?;
    ops::narrow(tape, &r, 3, col.0, col.1)
}

/// Single-pixel attention core: every pixel of `queries` attends over every
/// pixel of `candidates`, blending the co-located pixels of `values`.
/// All three are single-item tensors; candidate and value maps share their
/// spatial extent.
fn attend_pixels<E: Element>(
    tape: Option<&GradTape<E>>,
    queries: &Tensor<E>,
    candidates: &Tensor<E>,
    values: &Tensor<E>,
) -> Result<Tensor<E>> {
    let cand = ops::extract_patches(tape, candidates, 1, 1, 0)?;
    let bank = ops::patches_to_filters(tape, &cand, candidates.shape().c, 1)?;
    let scores = ops::conv2d(tape, queries, &bank, None, 1, 0)?;
    let attn = ops::softmax(tape, &scores, 1)?;
    let vals = ops::extract_patches(tape, values, 1, 1, 0)?;
    let vbank = ops::patches_to_filters(tape, &vals, values.shape().c, 1)?;
    ops::conv_transpose2d(tape, &attn, &vbank, None, 1, 0)
}

/// In-scale non-local attention over independent region cells.
///
/// The feature map is partitioned into a `grid.0 x grid.1` grid; within each
/// cell, every pixel attends over all pixels of the same cell and blends
/// their psi-transformed values. Output shape equals the input shape.
pub fn in_scale_nonlocal<E: Element>(
    tape: Option<&GradTape<E>>,
    x: &Tensor<E>,
    params: &AttentionParams<E>,
) -> Result<Tensor<E>> {
    const OP: &str = "in_scale_nonlocal";
    params.check_input(x, OP)?;
    let rows = segments(x.shape().h, params.grid.0, OP)?;
    let cols = segments(x.shape().w, params.grid.1, OP)?;
    per_item(tape, x, |tape, xi| {
        let tx = embed(tape, xi, &params.theta)?;
        let dx = embed(tape, xi, &params.delta)?;
        let px = apply_psi(tape, xi, params)?;
        let mut bands = Vec::with_capacity(rows.len());
        for &row in &rows {
            let mut cells = Vec::with_capacity(cols.len());
            for &col in &cols {
                let tc = narrow2(tape, &tx, row, col)?;
                let dc = narrow2(tape, &dx, row, col)?;
                let pc = narrow2(tape, &px, row, col)?;
                cells.push(attend_pixels(tape, &tc, &dc, &pc)?);
            }
            let refs: Vec<&Tensor<E>> = cells.iter().collect();
            bands.push(ops::concat(tape, &refs, 3)?);
        }
        let refs: Vec<&Tensor<E>> = bands.iter().collect();
        ops::concat(tape, &refs, 2)
    })
}

/// Cross-scale attention in its defective first form: queries are
/// full-resolution pixels, but candidates and blended values both come from
/// the bilinear-downscaled copy. Output keeps the input shape.
pub fn naive_cross_scale<E: Element>(
    tape: Option<&GradTape<E>>,
    x: &Tensor<E>,
    params: &AttentionParams<E>,
) -> Result<Tensor<E>> {
    const OP: &str = "naive_cross_scale";
    params.check_input(x, OP)?;
    let (yh, yw) = down_dims(x.shape(), params.scale, OP)?;
    per_item(tape, x, |tape, xi| {
        let y = ops::bilinear_resize(tape, xi, yh, yw)?;
        let tx = embed(tape, xi, &params.theta)?;
        let dy = embed(tape, &y, &params.delta)?;
        let py = apply_psi(tape, &y, params)?;
        attend_pixels(tape, &tx, &dy, &py)
    })
}

/// Post-softmax attention map for one item: `(1, ny*nx, h, w)`, channel
/// `gy*nx + gx` holding the weight of candidate `(gy, gx)` at each query.
fn cs_attention<E: Element>(
    tape: Option<&GradTape<E>>,
    xi: &Tensor<E>,
    params: &AttentionParams<E>,
    g: &Geometry,
) -> Result<Tensor<E>> {
    let y = ops::bilinear_resize(tape, xi, g.yh, g.yw)?;
    let tx = embed(tape, xi, &params.theta)?;
    let dy = embed(tape, &y, &params.delta)?;
    let dpad = ops::replicate_pad(tape, &dy, g.q)?;
    let cand = ops::extract_patches_grid(tape, &dpad, g.p, g.cs, 0, g.ny, g.nx)?;
    let bank = ops::patches_to_filters(tape, &cand, params.embedded_channels(), g.p)?;
    let scores = ops::conv2d(tape, &tx, &bank, None, 1, g.q)?;
    ops::softmax(tape, &scores, 1)
}

fn cross_scale_impl<E: Element>(
    tape: Option<&GradTape<E>>,
    x: &Tensor<E>,
    params: &AttentionParams<E>,
    p: usize,
    op: &'static str,
) -> Result<Tensor<E>> {
    params.check_input(x, op)?;
    let g = geometry(x.shape(), params, p, op)?;
    let (h, w) = (x.shape().h, x.shape().w);
    let c = x.shape().c;
    let (sp, sq) = (g.s * g.p, g.s * g.q);
    per_item(tape, x, |tape, xi| {
        let attn = cs_attention(tape, xi, params, &g)?;
        let psix = apply_psi(tape, xi, params)?;
        let epad = ops::replicate_pad(tape, &psix, sq)?;
        let ev = ops::extract_patches_grid(tape, &epad, sp, g.s * g.cs, 0, g.ny, g.nx)?;
        let ebank = ops::patches_to_filters(tape, &ev, c, sp)?;
        let agg = ops::conv_transpose2d(tape, &attn, &ebank, None, g.s, sq)?;
        // Each query pastes one evidence patch with total softmax mass 1, so
        // per-pixel coverage counts are exactly the fold multiplicities of
        // the dense query grid.
        let counts = ops::fold_counts::<E>(g.s * h, g.s * w, sp, g.s, sq, h, w);
        ops::mul_broadcast(tape, &agg, &ops::recip_counts(&counts)?)
    })
}

/// Pixel-form cross-scale attention. Every full-resolution pixel attends
/// over downscaled pixels; the winning candidates paste back their
/// full-resolution `s x s` patches, tiling an output `s` times larger than
/// the input.
pub fn cross_scale_pixel<E: Element>(
    tape: Option<&GradTape<E>>,
    x: &Tensor<E>,
    params: &AttentionParams<E>,
) -> Result<Tensor<E>> {
    cross_scale_impl(tape, x, params, 1, "cross_scale_pixel")
}

/// Patch-form cross-scale attention: correlations between `p x p` windows,
/// aggregation of overlapping `s*p x s*p` evidence patches with coverage
/// normalization. `params.patch = 1` reproduces [`cross_scale_pixel`]
/// exactly.
pub fn cross_scale_patch<E: Element>(
    tape: Option<&GradTape<E>>,
    x: &Tensor<E>,
    params: &AttentionParams<E>,
) -> Result<Tensor<E>> {
    cross_scale_impl(tape, x, params, params.patch, "cross_scale_patch")
}

/// Post-softmax candidate weights of one query of [`cross_scale_patch`], as
/// a `(1, 1, ny, nx)` heatmap over the candidate grid. `query` is the
/// full-resolution pixel `(i, j)`. Inspection only; never taped.
pub fn correlation_map<E: Element>(
    x: &Tensor<E>,
    params: &AttentionParams<E>,
    query: (usize, usize),
) -> Result<Tensor<E>> {
    const OP: &str = "correlation_map";
    params.check_input(x, OP)?;
    if x.shape().n != 1 {
        return Err(Error::invalid(OP, "expected a single-item batch"));
    }
    let (i, j) = query;
    if i >= x.shape().h || j >= x.shape().w {
        return Err(Error::invalid(
            OP,
            format!("query ({i}, {j}) out of bounds for {}", x.shape()),
        ));
    }
    let g = geometry(x.shape(), params, params.patch, OP)?;
    let attn = cs_attention(None, x, params, &g)?;
    Tensor::from_fn(Shape::new(1, 1, g.ny, g.nx), |_, _, gy, gx| {
        attn.at(0, gy * g.nx + gx, i, j)
    })
}

fn clamp_idx(v: isize, len: usize) -> usize {
    v.clamp(0, len as isize - 1) as usize
}

/// 1x1 embedding of one batch item by literal loops, `(oc, h*w)` row-major.
fn embed_item<E: Element>(x: &Tensor<E>, item: usize, w: &Tensor<E>) -> Vec<E> {
    let s = x.shape();
    let (oc, ic) = (w.shape().n, w.shape().c);
    let hw = s.h * s.w;
    let mut out = vec![E::zero(); oc * hw];
    for o in 0..oc {
        for c in 0..ic {
            let coeff = w.at(o, c, 0, 0);
            let base = (item * s.c + c) * hw;
            for pix in 0..hw {
                out[o * hw + pix] += coeff * x.data()[base + pix];
            }
        }
    }
    out
}

/// Reference implementation of [`cross_scale_patch`] as explicit loops over
/// queries and candidates, with no convolution tricks. Forward only.
pub fn cross_scale_oracle<E: Element>(
    x: &Tensor<E>,
    params: &AttentionParams<E>,
) -> Result<Tensor<E>> {
    let g = geometry(x.shape(), params, params.patch, "cross_scale_oracle")?;
    let order: Vec<usize> = (0..g.candidates()).collect();
    cross_scale_oracle_with_order(x, params, &order)
}

/// [`cross_scale_oracle`] visiting candidates in the given enumeration
/// order, which must be a permutation of `0..ny*nx`. Outputs are
/// order-independent up to floating-point reassociation; tests use this to
/// demonstrate it.
pub fn cross_scale_oracle_with_order<E: Element>(
    x: &Tensor<E>,
    params: &AttentionParams<E>,
    order: &[usize],
) -> Result<Tensor<E>> {
    const OP: &str = "cross_scale_oracle";
    params.check_input(x, OP)?;
    let g = geometry(x.shape(), params, params.patch, OP)?;
    let l = g.candidates();
    if order.len() != l {
        return Err(Error::invalid(OP, format!("order has {} entries, want {l}", order.len())));
    }
    let mut seen = vec![false; l];
    for &k in order {
        if k >= l || seen[k] {
            return Err(Error::invalid(OP, "order is not a permutation of the candidates"));
        }
        seen[k] = true;
    }

    let s = x.shape();
    let (sh, sw) = (g.s * s.h, g.s * s.w);
    let (sp, sq) = (g.s * g.p, (g.s * (g.p - 1)) / 2);
    let ce = params.embedded_channels();
    let mut out = vec![E::zero(); s.n * s.c * sh * sw];

    for item in 0..s.n {
        let xi = ops::narrow(None, x, 0, item, 1)?;
        let y = ops::bilinear_resize(None, &xi, g.yh, g.yw)?;
        let tx = embed_item(x, item, &params.theta);
        let dy = embed_item(&y, 0, &params.delta);
        let psix = match &params.psi {
            PsiMode::Identity => {
                let hw = s.h * s.w;
                x.data()[item * s.c * hw..(item + 1) * s.c * hw].to_vec()
            }
            // psi is itself a 1x1 map, so the literal embed covers it
            PsiMode::Learned(w) => embed_item(x, item, w),
        };
        let mut norm = vec![E::zero(); sh * sw];
        let mut weights = vec![E::zero(); l];

        for i in 0..s.h {
            for j in 0..s.w {
                // Scores, then a softmax accumulated in enumeration order.
                let mut first = true;
                let mut m = E::zero();
                for &k in order {
                    let (gy, gx) = (k / g.nx, k % g.nx);
                    let (cy0, cx0) = (gy * g.cs, gx * g.cs);
                    let mut sc = E::zero();
                    for e in 0..ce {
                        for dy_off in 0..g.p {
                            let qy = i as isize + dy_off as isize - g.q as isize;
                            let yy = clamp_idx(cy0 as isize + dy_off as isize - g.q as isize, g.yh);
                            for dx_off in 0..g.p {
                                let qx = j as isize + dx_off as isize - g.q as isize;
                                if qy < 0 || qy >= s.h as isize || qx < 0 || qx >= s.w as isize {
                                    continue; // query window is zero-padded
                                }
                                let xx =
                                    clamp_idx(cx0 as isize + dx_off as isize - g.q as isize, g.yw);
                                sc += tx[(e * s.h + qy as usize) * s.w + qx as usize]
                                    * dy[(e * g.yh + yy) * g.yw + xx];
                            }
                        }
                    }
                    weights[k] = sc;
                    if first || sc > m {
                        m = sc;
                    }
                    first = false;
                }
                let mut z = E::zero();
                for &k in order {
                    let e = (weights[k] - m).exp();
                    weights[k] = e;
                    z += e;
                }

                // Paste each candidate's evidence patch, weighted.
                let (zy0, zx0) = (
                    (g.s * i) as isize - sq as isize,
                    (g.s * j) as isize - sq as isize,
                );
                for &k in order {
                    let wk = weights[k] / z;
                    let (gy, gx) = (k / g.nx, k % g.nx);
                    let by = (g.s * gy * g.cs) as isize - sq as isize;
                    let bx = (g.s * gx * g.cs) as isize - sq as isize;
                    for py in 0..sp {
                        let zy = zy0 + py as isize;
                        if zy < 0 || zy >= sh as isize {
                            continue;
                        }
                        let sy = clamp_idx(by + py as isize, s.h);
                        for px in 0..sp {
                            let zx = zx0 + px as isize;
                            if zx < 0 || zx >= sw as isize {
                                continue;
                            }
                            let sx = clamp_idx(bx + px as isize, s.w);
                            for c in 0..s.c {
                                out[((item * s.c + c) * sh + zy as usize) * sw + zx as usize] +=
                                    wk * psix[(c * s.h + sy) * s.w + sx];
                            }
                        }
                    }
                    for py in 0..sp {
                        let zy = zy0 + py as isize;
                        if zy < 0 || zy >= sh as isize {
                            continue;
                        }
                        for px in 0..sp {
                            let zx = zx0 + px as isize;
                            if zx < 0 || zx >= sw as isize {
                                continue;
                            }
                            norm[zy as usize * sw + zx as usize] += wk;
                        }
                    }
                }
            }
        }

        for c in 0..s.c {
            for pix in 0..sh * sw {
                out[(item * s.c + c) * sh * sw + pix] =
                    out[(item * s.c + c) * sh * sw + pix] / norm[pix];
            }
        }
    }
    Tensor::op_output("cross_scale_oracle", Shape::new(s.n, s.c, sh, sw), out)
}

/// Finite-difference checks through every variant end to end, including the
/// softmax and the patch plumbing. f64 only; returns one report per case.
pub fn gradient_suite() -> Result<Vec<crate::gradcheck::CheckReport>> {
    use crate::gradcheck::{finite_diff_check, CheckReport, GRADCHECK_EPS};
    use crate::rng::Stream;

    let mut st = Stream::new(20240818, 21);
    let fill = |shape: Shape, st: &mut Stream| {
        Tensor::<f64>::from_fn(shape, |_, _, _, _| st.uniform_symmetric(1.0)).expect("finite")
    };
    let mask_sum = |t: Option<&GradTape<f64>>,
                    v: &Tensor<f64>,
                    m: &Tensor<f64>|
     -> Result<Tensor<f64>> { ops::sum_all(t, &ops::mul(t, v, m)?) };

    let mut out = Vec::new();
    let eps = GRADCHECK_EPS;

    let theta = fill(Shape::new(2, 2, 1, 1), &mut st);
    let delta = fill(Shape::new(2, 2, 1, 1), &mut st);
    let psi_w = fill(Shape::new(2, 2, 1, 1), &mut st);

    // In-scale variant, wrt input and wrt theta.
    {
        let params = AttentionParams::new(
            theta.clone(),
            delta.clone(),
            PsiMode::Learned(psi_w.clone()),
            1,
            1,
            1,
            (2, 2),
        )?;
        let x = fill(Shape::new(1, 2, 4, 4), &mut st);
        let mask = fill(x.shape(), &mut st);
        let pc = params.clone();
        let e = finite_diff_check(
            |t, xx| mask_sum(t, &in_scale_nonlocal(t, xx, &pc)?, &mask),
            &x,
            eps,
        )?;
        out.push(CheckReport::new("in_scale_nonlocal/input", e));
        let (pc, xc) = (params.clone(), x.clone());
        let e = finite_diff_check(
            |t, th| {
                let mut p = pc.clone();
                p.theta = th.clone();
                mask_sum(t, &in_scale_nonlocal(t, &xc, &p)?, &mask)
            },
            &theta,
            eps,
        )?;
        out.push(CheckReport::new("in_scale_nonlocal/theta", e));
    }

    // Naive variant, wrt input (gradient flows through the downscale on both
    // the candidate and value sides).
    {
        let params = AttentionParams::new(
            theta.clone(),
            delta.clone(),
            PsiMode::Identity,
            2,
            1,
            1,
            (1, 1),
        )?;
        let x = fill(Shape::new(1, 2, 4, 4), &mut st);
        let mask = fill(x.shape(), &mut st);
        let e = finite_diff_check(
            |t, xx| mask_sum(t, &naive_cross_scale(t, xx, &params)?, &mask),
            &x,
            eps,
        )?;
        out.push(CheckReport::new("naive_cross_scale/input", e));
    }

    // Pixel form, wrt input.
    {
        let params = AttentionParams::new(
            theta.clone(),
            delta.clone(),
            PsiMode::Identity,
            2,
            1,
            1,
            (1, 1),
        )?;
        let x = fill(Shape::new(1, 2, 4, 4), &mut st);
        let mask = fill(Shape::new(1, 2, 8, 8), &mut st);
        let e = finite_diff_check(
            |t, xx| mask_sum(t, &cross_scale_pixel(t, xx, &params)?, &mask),
            &x,
            eps,
        )?;
        out.push(CheckReport::new("cross_scale_pixel/input", e));
    }

    // Patch form, wrt input, delta, and a learned psi.
    {
        let params = AttentionParams::new(
            theta.clone(),
            delta.clone(),
            PsiMode::Learned(psi_w.clone()),
            2,
            3,
            1,
            (1, 1),
        )?;
        let x = fill(Shape::new(1, 2, 6, 6), &mut st);
        let mask = fill(Shape::new(1, 2, 12, 12), &mut st);
        let pc = params.clone();
        let e = finite_diff_check(
            |t, xx| mask_sum(t, &cross_scale_patch(t, xx, &pc)?, &mask),
            &x,
            eps,
        )?;
        out.push(CheckReport::new("cross_scale_patch/input", e));
        let (pc, xc) = (params.clone(), x.clone());
        let mc = mask.clone();
        let e = finite_diff_check(
            |t, dd| {
                let mut p = pc.clone();
                p.delta = dd.clone();
                mask_sum(t, &cross_scale_patch(t, &xc, &p)?, &mc)
            },
            &delta,
            eps,
        )?;
        out.push(CheckReport::new("cross_scale_patch/delta", e));
        let (pc, xc) = (params.clone(), x.clone());
        let e = finite_diff_check(
            |t, pw| {
                let mut p = pc.clone();
                p.psi = PsiMode::Learned(pw.clone());
                mask_sum(t, &cross_scale_patch(t, &xc, &p)?, &mask)
            },
            &psi_w,
            eps,
        )?;
        out.push(CheckReport::new("cross_scale_patch/psi", e));
    }

    Ok(out)
}
