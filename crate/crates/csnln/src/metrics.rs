//! PSNR and SSIM on the luminance channel, 8-bit value convention.
//!
//! Both metrics take same-shaped tensors holding Y values in the 0-255
//! range and compute at 64-bit regardless of the element type. PSNR crops a
//! border first (super-resolution tables conventionally ignore `s` boundary
//! pixels); identical inputs report `+inf`. SSIM uses the standard 11x11
//! Gaussian window, sigma 1.5, K1=0.01, K2=0.03, L=255, averaged over valid
//! (unpadded) window positions.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 6.5025; // (0.01 * 255)^2
const SSIM_C2: f64 = 58.5225; // (0.03 * 255)^2

/// Peak signal-to-noise ratio in dB after cropping `border_crop` pixels on
/// every side. Identical crops give `+inf`.
pub fn psnr<E: Element>(a: &Tensor<E>, b: &Tensor<E>, border_crop: usize) -> Result<f64> {
    let s = a.shape();
    if s != b.shape() {
        return Err(Error::shape(
            "psnr",
            format!("{} vs {}", s, b.shape()),
        ));
    }
    if s.h <= 2 * border_crop || s.w <= 2 * border_crop {
        return Err(Error::invalid(
            "psnr",
            format!("border crop {border_crop} leaves no pixels of {s}"),
        ));
    }
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for n in 0..s.n {
        for c in 0..s.c {
            for y in border_crop..s.h - border_crop {
                for x in border_crop..s.w - border_crop {
                    let d = a.at(n, c, y, x).as_f64() - b.at(n, c, y, x).as_f64();
                    sum += d * d;
                    count += 1;
                }
            }
        }
    }
    let mse = sum / count as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for dy in -half..=half {
        for dx in -half..=half {
            let r2 = (dy * dy + dx * dx) as f64;
            w.push((-r2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean structural similarity over valid 11x11 windows, in `[-1, 1]`.
/// `ssim(a, a)` is exactly 1.
pub fn ssim<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<f64> {
    let s = a.shape();
    if s != b.shape() {
        return Err(Error::shape(
            "ssim",
            format!("{} vs {}", s, b.shape()),
        ));
    }
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim",
            format!("image {s} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let win = gaussian_window();
    let mut total = 0.0f64;
    let mut windows = 0usize;
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..=s.h - SSIM_WINDOW {
                for ox in 0..=s.w - SSIM_WINDOW {
                    let mut mx = 0.0;
                    let mut my = 0.0;
                    let mut xx = 0.0;
                    let mut yy = 0.0;
                    let mut xy = 0.0;
                    let mut wi = 0;
                    for dy in 0..SSIM_WINDOW {
                        for dx in 0..SSIM_WINDOW {
                            let w = win[wi];
                            wi += 1;
                            let va = a.at(n, c, oy + dy, ox + dx).as_f64();
                            let vb = b.at(n, c, oy + dy, ox + dx).as_f64();
                            mx += w * va;
                            my += w * vb;
                            xx += w * va * va;
                            yy += w * vb * vb;
                            xy += w * va * vb;
                        }
                    }
                    let sxx = xx - mx * mx;
                    let syy = yy - my * my;
                    let sxy = xy - mx * my;
                    let num = (2.0 * mx * my + SSIM_C1) * (2.0 * sxy + SSIM_C2);
                    let den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2);
                    total += num / den;
                    windows += 1;
                }
            }
        }
    }
    Ok(total / windows as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use crate::tensor::Shape;

    fn field(h: usize, w: usize, f: impl FnMut(usize, usize, usize, usize) -> f64) -> Tensor<f64> {
        Tensor::from_fn(Shape::new(1, 1, h, w), f).unwrap()
    }

    #[test]
    fn psnr_anchors() {
        let a = field(8, 8, |_, _, _, _| 100.0);
        let same = psnr(&a, &a, 0).unwrap();
        assert!(same.is_infinite() && same > 0.0);

        let b = field(8, 8, |_, _, _, _| 101.0);
        assert!((psnr(&a, &b, 0).unwrap() - 48.130804).abs() < 0.01);

        let c = field(8, 8, |_, _, _, _| 255.0);
        let z = field(8, 8, |_, _, _, _| 0.0);
        assert!(psnr(&c, &z, 0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn psnr_is_symmetric_and_monotone_in_mse() {
        let mut st = Stream::new(2, 23);
        let a = field(10, 10, |_, _, _, _| st.uniform() * 255.0);
        let b = field(10, 10, |_, _, _, _| st.uniform() * 255.0);
        let ab = psnr(&a, &b, 0).unwrap();
        let ba = psnr(&b, &a, 0).unwrap();
        assert!((ab - ba).abs() < 1e-12);

        // Scaling the error up strictly lowers PSNR.
        let further = Tensor::from_fn(a.shape(), |n, c, y, x| {
            a.at(n, c, y, x) + 2.0 * (b.at(n, c, y, x) - a.at(n, c, y, x))
        })
        .unwrap();
        assert!(psnr(&a, &further, 0).unwrap() < ab);
    }

    #[test]
    fn psnr_border_crop() {
        // Error only on the 1-pixel border: cropping it restores +inf.
        let a = field(8, 8, |_, _, _, _| 50.0);
        let b = field(8, 8, |_, _, y, x| {
            if y == 0 || y == 7 || x == 0 || x == 7 {
                80.0
            } else {
                50.0
            }
        });
        assert!(psnr(&a, &b, 0).unwrap().is_finite());
        assert!(psnr(&a, &b, 1).unwrap().is_infinite());
        // On constant images the crop choice does not matter.
        let c = field(8, 8, |_, _, _, _| 70.0);
        assert_eq!(psnr(&a, &c, 0).unwrap(), psnr(&a, &c, 2).unwrap());
        // Degenerate crop and shape mismatch are errors.
        assert!(psnr(&a, &b, 4).is_err());
        let small = field(4, 4, |_, _, _, _| 0.0);
        assert!(psnr(&a, &small, 0).is_err());
    }

    #[test]
    fn ssim_identical_is_exactly_one() {
        let mut st = Stream::new(3, 23);
        let a = field(16, 13, |_, _, _, _| st.uniform() * 255.0);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ssim_constant_fields_match_closed_form() {
        let a = field(11, 11, |_, _, _, _| 100.0);
        let b = field(11, 11, |_, _, _, _| 150.0);
        // Variances vanish, so SSIM reduces to the luminance term
        // (2*100*150 + C1) / (100^2 + 150^2 + C1).
        assert!((ssim(&a, &b).unwrap() - 0.923092310530793).abs() < 1e-9);
    }

    #[test]
    fn ssim_is_symmetric() {
        let mut st = Stream::new(4, 23);
        let a = field(14, 14, |_, _, _, _| st.uniform() * 255.0);
        let b = field(14, 14, |_, _, _, _| st.uniform() * 255.0);
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-9);
    }

    #[test]
    fn ssim_of_independent_noise_is_low() {
        let mut st = Stream::new(5, 23);
        let a = field(24, 24, |_, _, _, _| st.uniform() * 255.0);
        let b = field(24, 24, |_, _, _, _| st.uniform() * 255.0);
        let v = ssim(&a, &b).unwrap();
        assert!(v < 0.3, "{v}");
        assert!(v > -1.0);
    }

    #[test]
    fn ssim_rejects_small_or_mismatched_inputs() {
        let a = field(10, 11, |_, _, _, _| 0.0);
        assert!(ssim(&a, &a).is_err());
        let b = field(11, 11, |_, _, _, _| 0.0);
        let c = field(12, 11, |_, _, _, _| 0.0);
        assert!(ssim(&b, &c).is_err());
    }
}
