//! 4-D tensors in fixed NCHW layout.
//!
//! Everything in this library is one of these: images, feature maps, filter
//! banks, per-channel parameters, even scalars (as 1x1x1x1). Data is row-major
//! with `w` innermost, immutable after construction, and shared between handles
//! via `Arc`, so cloning a tensor is cheap and never copies the buffer.
//!
//! Training runs at `f32`; gradient verification runs the same code at `f64`.
//! The [`Element`] trait abstracts over the two. Every constructor rejects
//! non-finite values, which is how NaN/Inf surfacing works: an op that produces
//! a non-finite value fails at output construction and the error reaches the
//! caller.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

/// Scalar element type. Implemented for `f32` and `f64` only.
pub trait Element:
    num_traits::Float
    + std::ops::AddAssign
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Element for f32 {
    const NAME: &'static str = "f32";
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    const NAME: &'static str = "f64";
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// NCHW extents. All four are plain counts; `n*c*h*w` is the buffer length.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape { n, c, h, w }
    }

    pub fn count(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Flat index of `(n, c, y, x)` in row-major NCHW order.
    #[inline(always)]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(n < self.n && c < self.c && y < self.h && x < self.w);
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Process-unique identity of a tensor, used as the key for gradient
/// bookkeeping. Two handles to the same tensor share an id; any newly
/// constructed tensor gets a fresh one.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct TensorId(u64);

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> TensorId {
    TensorId(NEXT_ID.fetch_add(1, Ordering::Relaxed))
}

struct Inner<E> {
    id: TensorId,
    shape: Shape,
    requires_grad: bool,
    data: Vec<E>,
}

/// Immutable 4-D array handle.
pub struct Tensor<E: Element> {
    inner: Arc<Inner<E>>,
}

impl<E: Element> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor { inner: Arc::clone(&self.inner) }
    }
}

impl<E: Element> Tensor<E> {
    fn build(shape: Shape, data: Vec<E>, requires_grad: bool) -> Tensor<E> {
        debug_assert_eq!(shape.count(), data.len());
        Tensor { inner: Arc::new(Inner { id: fresh_id(), shape, requires_grad, data }) }
    }

    /// Wrap a buffer. Fails if the length is wrong or any value is non-finite.
    pub fn from_vec(shape: Shape, data: Vec<E>) -> Result<Tensor<E>> {
        Self::op_output("from_vec", shape, data)
    }

    /// Like [`Tensor::from_vec`] but reports `op` as the producer in errors.
    /// Kernels construct their outputs through this so a NaN points at the op
    /// that made it.
    pub fn op_output(op: &'static str, shape: Shape, data: Vec<E>) -> Result<Tensor<E>> {
        if data.len() != shape.count() {
            return Err(Error::shape(
                op,
                format!("buffer of {} values cannot fill {}", data.len(), shape),
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op });
        }
        Ok(Self::build(shape, data, false))
    }

    pub fn zeros(shape: Shape) -> Tensor<E> {
        Self::build(shape, vec![E::zero(); shape.count()], false)
    }

    pub fn full(shape: Shape, v: E) -> Result<Tensor<E>> {
        Self::op_output("full", shape, vec![v; shape.count()])
    }

    pub fn scalar(v: E) -> Result<Tensor<E>> {
        Self::full(Shape::new(1, 1, 1, 1), v)
    }

    /// Build from a function of the NCHW coordinates, iterated row-major.
    pub fn from_fn(
        shape: Shape,
        mut f: impl FnMut(usize, usize, usize, usize) -> E,
    ) -> Result<Tensor<E>> {
        let mut data = Vec::with_capacity(shape.count());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Self::op_output("from_fn", shape, data)
    }

    pub fn id(&self) -> TensorId {
        self.inner.id
    }

    pub fn shape(&self) -> Shape {
        self.inner.shape
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn data(&self) -> &[E] {
        &self.inner.data
    }

    #[inline(always)]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> E {
        self.inner.data[self.inner.shape.at(n, c, y, x)]
    }

    /// Copy of this tensor marked as a differentiation leaf (fresh id).
    pub fn to_param(&self) -> Tensor<E> {
        Self::build(self.shape(), self.data().to_vec(), true)
    }

    /// Copy with the grad flag cleared (fresh id). Used to feed a parameter's
    /// values somewhere without tracking it.
    pub fn detached(&self) -> Tensor<E> {
        Self::build(self.shape(), self.data().to_vec(), false)
    }

    pub fn cast<F: Element>(&self) -> Tensor<F> {
        let data = self.data().iter().map(|v| F::from_f64(v.as_f64())).collect();
        let t = Tensor::<F>::build(self.shape(), data, false);
        if self.requires_grad() {
            t.to_param()
        } else {
            t
        }
    }

    /// Largest absolute elementwise difference, in f64. Panics on shape
    /// mismatch; intended for tests and verification reports.
    pub fn max_abs_diff(&self, other: &Tensor<E>) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Sum of all elements, accumulated row-major in f64.
    pub fn sum_f64(&self) -> f64 {
        self.data().iter().map(|v| v.as_f64()).sum()
    }
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor<{}>({}, id={:?}", E::NAME, self.shape(), self.id())?;
        if self.requires_grad() {
            write!(f, ", param")?;
        }
        write!(f, ")")
    }
}
