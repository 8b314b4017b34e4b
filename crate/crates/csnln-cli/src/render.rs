//! Heatmap rendering for attention weights: a fixed false-color ramp,
//! nearest-neighbor upscaling to the input size, and a query marker. Every
//! choice is deterministic so golden-image comparisons are bit-exact.

use csnln::imgio::ImageU8;
use csnln::tensor::{Element, Tensor};
use csnln::Result;

/// The query marker color, chosen off the ramp so it never blends in.
pub const MARKER: [u8; 3] = [0, 255, 0];

/// Half-extent of the query cross.
const MARKER_ARM: isize = 2;

/// Piecewise-linear heat ramp over [0, 1]:
/// black (0) -> red (1/3) -> yellow (2/3) -> white (1).
pub fn false_color(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let lerp = |t: f64| (t.clamp(0.0, 1.0) * 255.0).round() as u8;
    let r = lerp(3.0 * v);
    let g = lerp(3.0 * v - 1.0);
    let b = lerp(3.0 * v - 2.0);
    [r, g, b]
}

/// Location of the largest weight in a `(1, 1, ny, nx)` map, row-major
/// first-wins on ties.
pub fn argmax_cell<E: Element>(map: &Tensor<E>) -> (usize, usize) {
    let s = map.shape();
    let mut best = (0, 0);
    let mut best_v = f64::NEG_INFINITY;
    for y in 0..s.h {
        for x in 0..s.w {
            let v = map.at(0, 0, y, x).as_f64();
            if v > best_v {
                best_v = v;
                best = (y, x);
            }
        }
    }
    best
}

/// Render a `(1, 1, ny, nx)` weight map as an `out_w x out_h` false-color
/// image: weights normalized by their maximum, nearest-upscaled, and a cross
/// drawn at `query` (full-resolution row, col).
pub fn heatmap_image<E: Element>(
    map: &Tensor<E>,
    out_w: usize,
    out_h: usize,
    query: (usize, usize),
) -> Result<ImageU8> {
    let s = map.shape();
    let (ny, nx) = (s.h, s.w);
    let max = map
        .data()
        .iter()
        .map(|v| v.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    // Softmax weights are positive, so max > 0; guard anyway for stubs.
    let scale = if max > 0.0 { 1.0 / max } else { 1.0 };
    let mut data = vec![0u8; out_w * out_h * 3];
    for y in 0..out_h {
        let sy = y * ny / out_h;
        for x in 0..out_w {
            let sx = x * nx / out_w;
            let rgb = false_color(map.at(0, 0, sy, sx).as_f64() * scale);
            data[(y * out_w + x) * 3..][..3].copy_from_slice(&rgb);
        }
    }
    let (qi, qj) = (query.0 as isize, query.1 as isize);
    for d in -MARKER_ARM..=MARKER_ARM {
        for (py, px) in [(qi + d, qj), (qi, qj + d)] {
            if (0..out_h as isize).contains(&py) && (0..out_w as isize).contains(&px) {
                let at = (py as usize * out_w + px as usize) * 3;
                data[at..at + 3].copy_from_slice(&MARKER);
            }
        }
    }
    ImageU8::new(out_w, out_h, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use csnln::tensor::Shape;

    #[test]
    fn ramp_anchors() {
        assert_eq!(false_color(0.0), [0, 0, 0]);
        assert_eq!(false_color(1.0 / 3.0), [255, 0, 0]);
        assert_eq!(false_color(2.0 / 3.0), [255, 255, 0]);
        assert_eq!(false_color(1.0), [255, 255, 255]);
        assert_eq!(false_color(-5.0), [0, 0, 0]);
        assert_eq!(false_color(7.0), [255, 255, 255]);
    }

    #[test]
    fn ramp_is_monotone_per_channel() {
        let mut prev = [0u8; 3];
        for k in 0..=100 {
            let c = false_color(k as f64 / 100.0);
            for ch in 0..3 {
                assert!(c[ch] >= prev[ch]);
            }
            prev = c;
        }
    }

    #[test]
    fn argmax_and_tie_break() {
        let m = Tensor::from_vec(
            Shape::new(1, 1, 2, 3),
            vec![0.1, 0.9, 0.3, 0.9, 0.2, 0.0],
        )
        .unwrap();
        assert_eq!(argmax_cell(&m), (0, 1));
    }

    #[test]
    fn uniform_map_renders_white_with_marker() {
        let m = Tensor::full(Shape::new(1, 1, 2, 2), 0.25).unwrap();
        let img = heatmap_image(&m, 8, 8, (3, 3)).unwrap();
        assert_eq!((img.width, img.height), (8, 8));
        for y in 0..8 {
            for x in 0..8 {
                let expect = if (y == 3 && (1..=5).contains(&x))
                    || (x == 3 && (1..=5).contains(&y))
                {
                    MARKER
                } else {
                    [255, 255, 255]
                };
                assert_eq!(img.pixel(y, x), expect, "at ({y}, {x})");
            }
        }
    }

    #[test]
    fn nearest_upscale_blocks() {
        let m = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.0, 1.0]).unwrap();
        let img = heatmap_image(&m, 6, 2, (0, 0)).unwrap();
        // Left half maps to the zero cell, right half saturates; row 1 sits
        // below the marker cross except for its vertical arm at column 0.
        assert_eq!(img.pixel(1, 1), [0, 0, 0]);
        assert_eq!(img.pixel(1, 2), [0, 0, 0]);
        assert_eq!(img.pixel(1, 3), [255, 255, 255]);
        assert_eq!(img.pixel(1, 5), [255, 255, 255]);
    }

    #[test]
    fn marker_clips_at_borders() {
        let m = Tensor::full(Shape::new(1, 1, 1, 1), 1.0).unwrap();
        let img = heatmap_image(&m, 4, 4, (0, 0)).unwrap();
        assert_eq!(img.pixel(0, 0), MARKER);
        assert_eq!(img.pixel(0, 2), MARKER);
        assert_eq!(img.pixel(2, 0), MARKER);
        assert_eq!(img.pixel(3, 3), [255, 255, 255]);
    }
}
