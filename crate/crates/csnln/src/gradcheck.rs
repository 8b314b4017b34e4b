//! Central finite-difference verification of the gradient engine.
//!
//! [`finite_diff_check`] is the single oracle: it takes a scalar-valued tensor
//! function, differentiates it both ways (reverse-mode on a tape, then
//! two-sided differences per coordinate), and reports the worst relative
//! error. [`op_suite`] runs it over every differentiable primitive with
//! deterministic pseudo-random inputs; higher layers add their own composite
//! checks on top.

use crate::error::{Error, Result};
use crate::ops;
use crate::rng::Stream;
use crate::tape::GradTape;
use crate::tensor::{Shape, Tensor};

/// Relative error of one coordinate: `|analytic - numeric| / max(1e-8, |numeric|)`.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1e-8)
}

fn eval_scalar<F>(f: &F, x: &Tensor<f64>) -> Result<f64>
where
    F: Fn(Option<&GradTape<f64>>, &Tensor<f64>) -> Result<Tensor<f64>>,
{
    let y = f(None, x)?;
    if y.shape() != Shape::new(1, 1, 1, 1) {
        return Err(Error::invalid(
            "finite_diff_check",
            format!("f must be scalar-valued, got {}", y.shape()),
        ));
    }
    Ok(y.data()[0])
}

/// Compare the reverse-mode gradient of `f` at `x` against central finite
/// differences over every coordinate; returns the max relative error.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(Option<&GradTape<f64>>, &Tensor<f64>) -> Result<Tensor<f64>>,
{
    let coords: Vec<usize> = (0..x.shape().count()).collect();
    finite_diff_check_at(f, x, eps, &coords)
}

/// Like [`finite_diff_check`] but only probes the listed coordinates. Full
/// sweeps are quadratic in tensor size; large parameter tensors are checked on
/// a deterministic subsample.
pub fn finite_diff_check_at<F>(
    f: F,
    x: &Tensor<f64>,
    eps: f64,
    coords: &[usize],
) -> Result<f64>
where
    F: Fn(Option<&GradTape<f64>>, &Tensor<f64>) -> Result<Tensor<f64>>,
{
    if eps <= 0.0 {
        return Err(Error::invalid("finite_diff_check", "eps must be positive"));
    }
    let xp = x.to_param();
    let tape = GradTape::new();
    let y = f(Some(&tape), &xp)?;
    if y.shape() != Shape::new(1, 1, 1, 1) {
        return Err(Error::invalid(
            "finite_diff_check",
            format!("f must be scalar-valued, got {}", y.shape()),
        ));
    }
    let grads = tape.backward(&y)?;
    let analytic = grads.expect(&xp)?.clone();

    let mut worst = 0.0f64;
    for &i in coords {
        if i >= xp.shape().count() {
            return Err(Error::invalid(
                "finite_diff_check",
                format!("coordinate {i} out of range"),
            ));
        }
        let mut plus = xp.data().to_vec();
        plus[i] += eps;
        let mut minus = xp.data().to_vec();
        minus[i] -= eps;
        let fp = eval_scalar(&f, &Tensor::from_vec(xp.shape(), plus)?)?;
        let fm = eval_scalar(&f, &Tensor::from_vec(xp.shape(), minus)?)?;
        let numeric = (fp - fm) / (2.0 * eps);
        worst = worst.max(rel_err(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Outcome of one named gradient check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub pass: bool,
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_EPS: f64 = 1e-4;

impl CheckReport {
    pub fn new(name: impl Into<String>, max_rel_err: f64) -> Self {
        CheckReport { name: name.into(), max_rel_err, pass: max_rel_err < GRADCHECK_TOLERANCE }
    }
}

fn filled(shape: Shape, stream: &mut Stream) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| stream.uniform_symmetric(1.0))
        .expect("finite fill")
}

/// Pseudo-random values bounded away from zero (for the PReLU kink).
fn filled_offset(shape: Shape, stream: &mut Stream) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| {
        let v = stream.uniform_symmetric(1.0);
        if v >= 0.0 {
            v + 0.1
        } else {
            v - 0.1
        }
    })
    .expect("finite fill")
}

/// Weighted sum against a fixed mask; gives every output coordinate a
/// distinct influence on the loss (a plain sum would cancel softmax's
/// gradient entirely).
fn masked_sum(
    tape: Option<&GradTape<f64>>,
    t: &Tensor<f64>,
    mask: &Tensor<f64>,
) -> Result<Tensor<f64>> {
    let prod = ops::mul(tape, t, mask)?;
    ops::sum_all(tape, &prod)
}

fn mask_for(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut s = Stream::new(seed, 97);
    filled(shape, &mut s)
}

/// Run the finite-difference suite over every differentiable primitive.
/// Each op is wrapped into a masked scalar and checked with respect to each
/// of its differentiable inputs.
pub fn op_suite() -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    let mut st = Stream::new(20240817, 11);
    let eps = GRADCHECK_EPS;

    // conv2d: input, weight, bias
    {
        let x = filled(Shape::new(2, 2, 6, 6), &mut st);
        let w = filled(Shape::new(3, 2, 3, 3), &mut st);
        let b = filled(Shape::new(1, 3, 1, 1), &mut st);
        let mask = mask_for(Shape::new(2, 3, 6, 6), 1);
        let (wc, bc, xc) = (w.clone(), b.clone(), x.clone());
        let e = finite_diff_check(
            |t, xx| {
                let y = ops::conv2d(t, xx, &wc, Some(&bc), 1, 1)?;
                masked_sum(t, &y, &mask)
            },
            &x,
            eps,
        )?;
        out.push(CheckReport::new("conv2d/input", e));
        let (xc2, bc2) = (xc.clone(), b.clone());
        let mask2 = mask.clone();
        let e = finite_diff_check(
            |t, ww| {
                let y = ops::conv2d(t, &xc2, ww, Some(&bc2), 1, 1)?;
                masked_sum(t, &y, &mask2)
            },
            &w,
            eps,
        )?;
        out.push(CheckReport::new("conv2d/weight", e));
        let wc2 = w.clone();
        let e = finite_diff_check(
            |t, bb| {
                let y = ops::conv2d(t, &xc, &wc2, Some(bb), 1, 1)?;
                masked_sum(t, &y, &mask)
            },
            &b,
            eps,
        )?;
        out.push(CheckReport::new("conv2d/bias", e));
    }

    // conv2d strided
    {
        let x = filled(Shape::new(1, 2, 7, 7), &mut st);
        let w = filled(Shape::new(2, 2, 3, 3), &mut st);
        let mask = mask_for(Shape::new(1, 2, 4, 4), 2);
        let wc = w.clone();
        let e = finite_diff_check(
            |t, xx| {
                let y = ops::conv2d(t, xx, &wc, None, 2, 1)?;
                masked_sum(t, &y, &mask)
            },
            &x,
            eps,
        )?;
        out.push(CheckReport::new("conv2d/input stride 2", e));
        let xc = x.clone();
        let e = finite_diff_check(
            |t, ww| {
                let y = ops::conv2d(t, &xc, ww, None, 2, 1)?;
                masked_sum(t, &y, &mask)
            },
            &w,
            eps,
        )?;
        out.push(CheckReport::new("conv2d/weight stride 2", e));
    }

    // conv_transpose2d: input, weight, bias
    {
        let x = filled(Shape::new(1, 3, 4, 4), &mut st);
        let w = filled(Shape::new(3, 2, 4, 4), &mut st);
        let b = filled(Shape::new(1, 2, 1, 1), &mut st);
        let mask = mask_for(Shape::new(1, 2, 8, 8), 3);
        let (wc, bc) = (w.clone(), b.clone());
        let e = finite_diff_check(
            |t, xx| {
                let y = ops::conv_transpose2d(t, xx, &wc, Some(&bc), 2, 1)?;
                masked_sum(t, &y, &mask)
            },
            &x,
            eps,
        )?;
        out.push(CheckReport::new("conv_transpose2d/input", e));
        let (xc, bc2) = (x.clone(), b.clone());
        let mask2 = mask.clone();
        let e = finite_diff_check(
            |t, ww| {
                let y = ops::conv_transpose2d(t, &xc, ww, Some(&bc2), 2, 1)?;
                masked_sum(t, &y, &mask2)
            },
            &w,
            eps,
        )?;
        out.push(CheckReport::new("conv_transpose2d/weight", e));
        let (xc2, wc2) = (x.clone(), w.clone());
        let e = finite_diff_check(
            |t, bb| {
                let y = ops::conv_transpose2d(t, &xc2, &wc2, Some(bb), 2, 1)?;
                masked_sum(t, &y, &mask)
            },
            &b,
            eps,
        )?;
        out.push(CheckReport::new("conv_transpose2d/bias", e));
    }

    // bilinear_resize up and down
    {
        let x = filled(Shape::new(1, 2, 5, 6), &mut st);
        let mask_up = mask_for(Shape::new(1, 2, 9, 11), 4);
        let e = finite_diff_check(
            |t, xx| {
                let y = ops::bilinear_resize(t, xx, 9, 11)?;
                masked_sum(t, &y, &mask_up)
            },
            &x,
            eps,
        )?;
        out.push(CheckReport::new("bilinear_resize/up", e));
        let mask_dn = mask_for(Shape::new(1, 2, 2, 3), 5);
        let e = finite_diff_check(
            |t, xx| {
                let y = ops::bilinear_resize(t, xx, 2, 3)?;
                masked_sum(t, &y, &mask_dn)
            },
            &x,
            eps,
        )?;
        out.push(CheckReport::new("bilinear_resize/down", e));
    }

    // softmax along each axis that matters here
    for axis in [1usize, 3] {
        let x = filled(Shape::new(2, 4, 2, 3), &mut st);
        let mask = mask_for(x.shape(), 6 + axis as u64);
        let e = finite_diff_check(
            |t, xx| {
                let y = ops::softmax(t, xx, axis)?;
                masked_sum(t, &y, &mask)
            },
            &x,
            eps,
        )?;
        out.push(CheckReport::new(format!("softmax/axis {axis}"), e));
    }

    // prelu: input (away from the kink) and slope
    {
        let x = filled_offset(Shape::new(2, 3, 4, 4), &mut st);
        let slope = filled(Shape::new(1, 3, 1, 1), &mut st);
        let mask = mask_for(x.shape(), 8);
        let sc = slope.clone();
        let e = finite_diff_check(
            |t, xx| {
                let y = ops::prelu(t, xx, &sc)?;
                masked_sum(t, &y, &mask)
            },
            &x,
            eps,
        )?;
        out.push(CheckReport::new("prelu/input", e));
        let xc = x.clone();
        let e = finite_diff_check(
            |t, ss| {
                let y = ops::prelu(t, &xc, ss)?;
                masked_sum(t, &y, &mask)
            },
            &slope,
            eps,
        )?;
        out.push(CheckReport::new("prelu/slope", e));
    }

    // concat + narrow round trip
    {
        let x = filled(Shape::new(1, 2, 3, 3), &mut st);
        let other = filled(Shape::new(1, 3, 3, 3), &mut st);
        let mask = mask_for(Shape::new(1, 2, 3, 3), 9);
        let e = finite_diff_check(
            |t, xx| {
                let cat = ops::concat(t, &[xx, &other], 1)?;
                let sl = ops::narrow(t, &cat, 1, 1, 2)?;
                masked_sum(t, &sl, &mask)
            },
            &x,
            eps,
        )?;
        out.push(CheckReport::new("concat+narrow", e));
    }

    // extract/fold pipeline with count normalization
    {
        let x = filled(Shape::new(1, 2, 5, 5), &mut st);
        let mask = mask_for(Shape::new(1, 2, 5, 5), 10);
        let e = finite_diff_check(
            |t, xx| {
                let cols = ops::extract_patches(t, xx, 3, 1, 1)?;
                let (folded, counts) = ops::fold_patches(t, &cols, 5, 5, 3, 1, 1)?;
                let norm = ops::mul_broadcast(t, &folded, &ops::recip_counts(&counts)?)?;
                masked_sum(t, &norm, &mask)
            },
            &x,
            eps,
        )?;
        out.push(CheckReport::new("extract+fold", e));
    }

    // patches_to_filters feeding a dynamic convolution (both roles)
    {
        let x = filled(Shape::new(1, 2, 4, 4), &mut st);
        let feat = filled(Shape::new(1, 2, 4, 4), &mut st);
        let mask = mask_for(Shape::new(1, 16, 4, 4), 11);
        let fc = feat.clone();
        let e = finite_diff_check(
            |t, xx| {
                let cols = ops::extract_patches(t, xx, 1, 1, 0)?;
                let bank = ops::patches_to_filters(t, &cols, 2, 1)?;
                let scores = ops::conv2d(t, &fc, &bank, None, 1, 0)?;
                masked_sum(t, &scores, &mask)
            },
            &x,
            eps,
        )?;
        out.push(CheckReport::new("patches_to_filters/bank", e));
        let xc = x.clone();
        let e = finite_diff_check(
            |t, ff| {
                let cols = ops::extract_patches(t, &xc, 1, 1, 0)?;
                let bank = ops::patches_to_filters(t, &cols, 2, 1)?;
                let scores = ops::conv2d(t, ff, &bank, None, 1, 0)?;
                masked_sum(t, &scores, &mask)
            },
            &feat,
            eps,
        )?;
        out.push(CheckReport::new("patches_to_filters/query", e));
    }

    // padding ops
    {
        let x = filled(Shape::new(1, 2, 3, 4), &mut st);
        let mask = mask_for(Shape::new(1, 2, 7, 8), 12);
        let e = finite_diff_check(
            |t, xx| {
                let y = ops::replicate_pad(t, xx, 2)?;
                masked_sum(t, &y, &mask)
            },
            &x,
            eps,
        )?;
        out.push(CheckReport::new("replicate_pad", e));
        let mask = mask_for(Shape::new(1, 2, 5, 5), 13);
        let e = finite_diff_check(
            |t, xx| {
                let y = ops::zero_pad_bottom_right(t, xx, 2, 1)?;
                masked_sum(t, &y, &mask)
            },
            &x,
            eps,
        )?;
        out.push(CheckReport::new("zero_pad_bottom_right", e));
    }

    // arithmetic ops
    {
        let x = filled(Shape::new(1, 2, 3, 3), &mut st);
        let other = filled(x.shape(), &mut st);
        let bias = filled(Shape::new(1, 2, 1, 1), &mut st);
        let mask = mask_for(x.shape(), 14);
        let oc = other.clone();
        let e = finite_diff_check(
            |t, xx| {
                let y = ops::mul(t, xx, &oc)?;
                masked_sum(t, &y, &mask)
            },
            &x,
            eps,
        )?;
        out.push(CheckReport::new("mul", e));
        let oc = other.clone();
        let e = finite_diff_check(
            |t, xx| {
                let a = ops::add(t, xx, &oc)?;
                let s = ops::sub(t, &a, &oc)?;
                let sc = ops::scale(t, &s, 1.7)?;
                masked_sum(t, &sc, &mask)
            },
            &x,
            eps,
        )?;
        out.push(CheckReport::new("add+sub+scale", e));
        let bc = bias.clone();
        let e = finite_diff_check(
            |t, xx| {
                let y = ops::add_broadcast(t, xx, &bc)?;
                let z = ops::mul_broadcast(t, &y, &bc)?;
                masked_sum(t, &z, &mask)
            },
            &x,
            eps,
        )?;
        out.push(CheckReport::new("broadcast add+mul/input", e));
        let xc = x.clone();
        let e = finite_diff_check(
            |t, bb| {
                let y = ops::add_broadcast(t, &xc, bb)?;
                masked_sum(t, &y, &mask)
            },
            &bias,
            eps,
        )?;
        out.push(CheckReport::new("add_broadcast/bias", e));
        let xc = x.clone();
        let e = finite_diff_check(
            |t, bb| {
                let y = ops::mul_broadcast(t, &xc, bb)?;
                masked_sum(t, &y, &mask)
            },
            &bias,
            eps,
        )?;
        out.push(CheckReport::new("mul_broadcast/scale", e));
        let oc = other.clone();
        let e = finite_diff_check(|t, xx| ops::mean_abs_diff(t, xx, &oc), &x, eps)?;
        out.push(CheckReport::new("mean_abs_diff", e));
    }

    Ok(out)
}
