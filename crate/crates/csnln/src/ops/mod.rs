//! Differentiable tensor operations.
//!
//! Every op is a pure function `(Option<&GradTape>, inputs, attrs) -> Result<Tensor>`.
//! Passing `None` runs the plain forward computation; passing a tape records a
//! backward closure when any input is tracked. The backward kernels live next
//! to their forwards and mirror the forward loops, so each reduction has one
//! fixed, documented accumulation order (row-major over the loop nest written
//! in the code) and results are bit-identical from run to run at a given
//! precision.

mod conv;
mod elementwise;
mod patches;
mod resize;
mod shapeops;

pub use conv::{conv2d, conv_transpose2d};
pub use elementwise::{
    add, add_broadcast, mean_abs_diff, mul, mul_broadcast, prelu, scale, softmax, sub, sum_all,
};
pub use patches::{
    extract_patches, extract_patches_grid, fold_counts, fold_patches, patch_grid_len,
    patches_to_filters, recip_counts,
};
pub use resize::bilinear_resize;
pub use shapeops::{concat, narrow, replicate_pad, zero_pad_bottom_right};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Axis decomposition for per-slice ops (softmax): flat index =
/// `(outer * len + j) * inner + i`.
pub(crate) fn axis_split(dims: [usize; 4], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= 4 {
        return Err(Error::invalid("axis", format!("axis {axis} out of range (0..4)")));
    }
    let outer: usize = dims[..axis].iter().product();
    let len = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    Ok((outer, len, inner))
}

/// Check that `b`'s dims are each 1 or equal to `a`'s (broadcast rule used by
/// bias adds and per-channel scales).
pub(crate) fn check_broadcast<E: Element>(
    op: &'static str,
    a: &Tensor<E>,
    b: &Tensor<E>,
) -> Result<()> {
    let ad = a.shape().dims();
    let bd = b.shape().dims();
    for i in 0..4 {
        if bd[i] != 1 && bd[i] != ad[i] {
            return Err(Error::shape(
                op,
                format!("cannot broadcast {} onto {}", b.shape(), a.shape()),
            ));
        }
    }
    Ok(())
}
