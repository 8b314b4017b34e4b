//! Synthetic textures for desk-scale training, plus a constructed probe
//! image for the cross-scale attention heatmap.
//!
//! Each texture renders one crisp random motif in horizontal stripes that
//! alternate between two magnifications. At cell size 1 the motif period
//! sits just above the aliasing limit: bicubic x2 downscaling keeps most
//! of the contrast but folds half of the motif's frequencies onto the
//! other half, so the fine stripes come out of the LR image with half
//! their information per axis irrecoverably scrambled. The pixel-doubled
//! stripes instead survive the downscale as the motif itself, one octave
//! down and at the same phase. The LR image thus still carries, in its
//! doubled stripes, exactly the detail the fine stripes lost;
//! reconstructing the fine stripes means finding that twice-as-large
//! rendition elsewhere in the image and copying it back, which no amount
//! of local filtering can substitute for. Everything is deterministic in
//! the seed.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imgio::{save_png, ImageU8};
use crate::rng::Stream;
use crate::tensor::{Element, Shape, Tensor};

const MOTIF: usize = 6;
const STRIPE: usize = 24;
const STREAM_SYNTH: u64 = 97;

/// One wrap-around-tileable noise motif, range-stretched to `[0,1]`.
fn noise_motif(st: &mut Stream) -> Vec<f64> {
    let v: Vec<f64> = (0..MOTIF * MOTIF).map(|_| st.uniform()).collect();
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);
    v.iter().map(|x| (x - lo) / span).collect()
}

/// A `(1,3,size,size)` texture in `[0,1]`. Horizontal 24-row stripes
/// alternate the motif at cell size 1 (period 6, even stripes) and
/// pixel-doubled (period 12, odd stripes) under one shared phase, so every
/// doubled stripe is literally a x2 blow-up of the fine pattern; channels
/// share the structure under random per-channel gain and offset.
pub fn texture_tensor<E: Element>(size: usize, seed: u64) -> Result<Tensor<E>> {
    if size < 32 || size % 2 != 0 {
        return Err(Error::invalid(
            "texture_tensor",
            format!("size must be even and >= 32, got {size}"),
        ));
    }
    let st = &mut Stream::new(seed, STREAM_SYNTH);
    let motif = noise_motif(st);
    let phase_y = st.below(MOTIF);
    let phase_x = st.below(MOTIF);
    // Per-channel affine into [0.08, 0.95] so channels correlate like a
    // tinted natural texture and quantization to u8 never clips.
    let gains: Vec<(f64, f64)> = (0..3)
        .map(|_| {
            let gain = 0.45 + 0.42 * st.uniform();
            let offset = 0.08 + (0.87 - gain) * st.uniform();
            (gain, offset)
        })
        .collect();
    Tensor::from_fn(Shape::new(1, 3, size, size), |_, c, y, x| {
        let zoom = 1 + (y / STRIPE) % 2;
        let my = (y / zoom + phase_y) % MOTIF;
        let mx = (x / zoom + phase_x) % MOTIF;
        let (gain, offset) = gains[c];
        E::from_f64(offset + gain * motif[my * MOTIF + mx])
    })
}

pub fn texture_image(size: usize, seed: u64) -> Result<ImageU8> {
    crate::imgio::tensor_to_image(&texture_tensor::<f64>(size, seed)?)
}

/// Write `count` texture PNGs into `dir` (created if needed), named
/// `tex_000.png` onward, seeds `seed`, `seed+1`, ... Returns the paths.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    count: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let img = texture_image(size, seed.wrapping_add(i as u64))?;
        let path = dir.join(format!("tex_{i:03}.png"));
        save_png(&path, &img)?;
        paths.push(path);
    }
    Ok(paths)
}

/// An image with a planted 3x3 patch and, elsewhere, its exact
/// pixel-doubled copy; background zero. Returns the image, the query pixel
/// on the small patch, and the candidate-grid position whose downscaled
/// window matches the query exactly.
///
/// Bilinear downscale by 2 averages 2x2 blocks, so the doubled copy
/// collapses to a full-intensity 3x3 window in the candidate pool while the
/// small patch itself survives only as a diluted blob; the exact-match
/// candidate is the unique score maximum by a wide margin.
pub fn cross_scale_probe(size: usize) -> Result<(ImageU8, (usize, usize), (usize, usize))> {
    if size < 24 || size % 2 != 0 {
        return Err(Error::invalid(
            "cross_scale_probe",
            format!("size must be even and >= 24, got {size}"),
        ));
    }
    let mut data = vec![0u8; size * size * 3];
    let mut stamp = |y0: usize, x0: usize, side: usize| {
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                let i = (y * size + x) * 3;
                data[i] = 255;
                data[i + 1] = 255;
                data[i + 2] = 255;
            }
        }
    };
    // 3x3 patch near the top-left corner, 6x6 pixel-doubled copy toward the
    // bottom-right; both keep margins so no window overlaps both.
    let query = (5, 5);
    stamp(4, 4, 3);
    let copy_top_left = (size - 10, size - 10);
    stamp(copy_top_left.0, copy_top_left.1, 6);
    let match_candidate = ((copy_top_left.0 + 2) / 2, (copy_top_left.1 + 2) / 2);
    Ok((ImageU8::new(size, size, data)?, query, match_candidate))
}
