//! 8-bit RGB image I/O, tensor conversion, and the luminance transform used
//! for evaluation.
//!
//! File-level images are `ImageU8` (row-major RGB). Tensors carry images as
//! `(1,3,h,w)` reals in `[0,1]` (value/255); converting back clamps to
//! `[0,1]`, scales by 255 and rounds half away from zero. Metrics run on the
//! BT.601 studio-swing Y channel computed from 0-255-ranged values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// An 8-bit RGB image, `data[(y*width + x)*3 + channel]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageU8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl ImageU8 {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<ImageU8> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::Image(format!(
                "buffer of {} bytes does not hold a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(ImageU8 { width, height, data })
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Decode an 8-bit PNG. Grayscale is promoted to three equal channels and an
/// alpha channel is dropped; 16-bit files are rejected.
pub fn load_png(path: impl AsRef<Path>) -> Result<ImageU8> {
    let path = path.as_ref();
    let dynimg = image::open(path)
        .map_err(|e| Error::Image(format!("cannot decode {}: {e}", path.display())))?;
    use image::DynamicImage::*;
    let rgb = match dynimg {
        ImageRgb8(img) => img,
        ImageRgba8(_) | ImageLuma8(_) | ImageLumaA8(_) => dynimg.to_rgb8(),
        ImageLuma16(_) | ImageLumaA16(_) | ImageRgb16(_) | ImageRgba16(_) => {
            return Err(Error::Image(format!(
                "{} is 16-bit; only 8-bit images are supported",
                path.display()
            )));
        }
        other => {
            return Err(Error::Image(format!(
                "{} has unsupported color type {:?}",
                path.display(),
                other.color()
            )));
        }
    };
    ImageU8::new(rgb.width() as usize, rgb.height() as usize, rgb.into_raw())
}

pub fn save_png(path: impl AsRef<Path>, img: &ImageU8) -> Result<()> {
    let buf: image::RgbImage =
        image::ImageBuffer::from_raw(img.width as u32, img.height as u32, img.data.clone())
            .ok_or_else(|| Error::Image("inconsistent image buffer".into()))?;
    buf.save_with_format(path.as_ref(), image::ImageFormat::Png)
        .map_err(|e| Error::Image(format!("cannot write {}: {e}", path.as_ref().display())))
}

/// `(1,3,h,w)` tensor in `[0,1]`, value/255.
pub fn image_to_tensor<E: Element>(img: &ImageU8) -> Tensor<E> {
    Tensor::from_fn(Shape::new(1, 3, img.height, img.width), |_, c, y, x| {
        E::from_f64(img.pixel(y, x)[c] as f64 / 255.0)
    })
    .expect("u8/255 is always finite")
}

/// Clamp to `[0,1]`, scale by 255, round half away from zero.
pub fn tensor_to_image<E: Element>(t: &Tensor<E>) -> Result<ImageU8> {
    let s = t.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::shape(
            "tensor_to_image",
            format!("expected (1,3,h,w), got {s}"),
        ));
    }
    let mut data = Vec::with_capacity(s.h * s.w * 3);
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..3 {
                let v = t.at(0, c, y, x).as_f64().clamp(0.0, 1.0);
                data.push((v * 255.0).round() as u8);
            }
        }
    }
    ImageU8::new(s.w, s.h, data)
}

/// BT.601 studio-swing luminance from `(n,3,h,w)` values in `[0,255]`:
/// `Y = 16 + (65.481 R + 128.553 G + 24.966 B) / 255`, giving `(n,1,h,w)`
/// in `[16,235]`.
pub fn rgb_to_y<E: Element>(rgb255: &Tensor<E>) -> Result<Tensor<E>> {
    let s = rgb255.shape();
    if s.c != 3 {
        return Err(Error::shape(
            "rgb_to_y",
            format!("expected 3 channels, got {s}"),
        ));
    }
    Tensor::from_fn(Shape::new(s.n, 1, s.h, s.w), |n, _, y, x| {
        let r = rgb255.at(n, 0, y, x).as_f64();
        let g = rgb255.at(n, 1, y, x).as_f64();
        let b = rgb255.at(n, 2, y, x).as_f64();
        E::from_f64(16.0 + (65.481 * r + 128.553 * g + 24.966 * b) / 255.0)
    })
}

/// Y channel of an 8-bit image, the evaluation entry point.
pub fn image_to_y<E: Element>(img: &ImageU8) -> Tensor<E> {
    Tensor::from_fn(Shape::new(1, 1, img.height, img.width), |_, _, y, x| {
        let [r, g, b] = img.pixel(y, x);
        E::from_f64(16.0 + (65.481 * r as f64 + 128.553 * g as f64 + 24.966 * b as f64) / 255.0)
    })
    .expect("finite by construction")
}
