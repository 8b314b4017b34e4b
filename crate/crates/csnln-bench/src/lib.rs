//! Shared fixtures for the criterion benches. The crate ships no runtime
//! code; everything interesting lives in `benches/`.

use csnln::rng::Stream;
use csnln::tensor::{Shape, Tensor};
use csnln::{AttentionParams, PsiMode};

/// Deterministic pseudo-random tensor for bench inputs.
pub fn bench_tensor(shape: Shape, seed: u64) -> Tensor<f32> {
    let mut st = Stream::new(seed, 7);
    Tensor::from_fn(shape, |_, _, _, _| st.uniform_symmetric(1.0) as f32).unwrap()
}

/// Random-embedding attention parameters over `c` channels.
pub fn bench_params(c: usize, ce: usize, scale: usize, patch: usize, seed: u64) -> AttentionParams<f32> {
    let mut st = Stream::new(seed, 11);
    let mut fill = |shape| {
        Tensor::from_fn(shape, |_, _, _, _| st.uniform_symmetric(0.5) as f32).unwrap()
    };
    AttentionParams::new(
        fill(Shape::new(ce, c, 1, 1)),
        fill(Shape::new(ce, c, 1, 1)),
        PsiMode::Identity,
        scale,
        patch,
        1,
        (1, 1),
    )
    .unwrap()
}
