//! Planar-interleaved float images and PNG conversion.
//!
//! Pixel values are linear floats, nominally in `[0, 1]`. 8-bit and 16-bit
//! PNG data is converted with round-half-up quantization on write.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};

/// Row-major, channel-interleaved `f32` image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, &vec![0.0; channels])
    }

    pub fn filled(width: usize, height: usize, value: &[f32]) -> Self {
        let channels = value.len();
        let mut data = Vec::with_capacity(width * height * channels);
        for _ in 0..width * height {
            data.extend_from_slice(value);
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, &mut [f32]),
    ) -> Self {
        let mut img = Self::new(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                let i = (y * width + x) * channels;
                f(x, y, &mut img.data[i..i + channels]);
            }
        }
        img
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn row(&self, y: usize) -> &[f32] {
        let stride = self.width * self.channels;
        &self.data[y * stride..(y + 1) * stride]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Mirror columns (x -> width - 1 - x).
    pub fn flip_horizontal(&self) -> Image {
        let mut out = Image::new(self.width, self.height, self.channels);
        for y in 0..self.height {
            for x in 0..self.width {
                out.pixel_mut(self.width - 1 - x, y)
                    .copy_from_slice(self.pixel(x, y));
            }
        }
        out
    }

    /// Bilinear sample at continuous pixel-index coordinates (integer = pixel
    /// center). Columns wrap around, rows clamp. Used for equirectangular data.
    pub fn sample_wrap_x(&self, u: f64, v: f64, out: &mut [f32]) {
        let w = self.width as i64;
        let x0 = u.floor();
        let fx = u - x0;
        let y0 = v.floor();
        let fy = v - y0;
        let xa = (x0 as i64).rem_euclid(w) as usize;
        let xb = (x0 as i64 + 1).rem_euclid(w) as usize;
        let ya = clamp_index(y0 as i64, self.height);
        let yb = clamp_index(y0 as i64 + 1, self.height);
        self.blend(xa, xb, ya, yb, fx, fy, out);
    }

    /// Bilinear sample at continuous pixel-index coordinates with edge clamping
    /// on both axes. Used for cube faces and perspective images.
    pub fn sample_clamped(&self, u: f64, v: f64, out: &mut [f32]) {
        let x0 = u.floor();
        let fx = u - x0;
        let y0 = v.floor();
        let fy = v - y0;
        let xa = clamp_index(x0 as i64, self.width);
        let xb = clamp_index(x0 as i64 + 1, self.width);
        let ya = clamp_index(y0 as i64, self.height);
        let yb = clamp_index(y0 as i64 + 1, self.height);
        self.blend(xa, xb, ya, yb, fx, fy, out);
    }

    #[allow(clippy::too_many_arguments)]
    #[inline]
    fn blend(&self, xa: usize, xb: usize, ya: usize, yb: usize, fx: f64, fy: f64, out: &mut [f32]) {
        let p00 = self.pixel(xa, ya);
        let p10 = self.pixel(xb, ya);
        let p01 = self.pixel(xa, yb);
        let p11 = self.pixel(xb, yb);
        let w00 = (1.0 - fx) * (1.0 - fy);
        let w10 = fx * (1.0 - fy);
        let w01 = (1.0 - fx) * fy;
        let w11 = fx * fy;
        for c in 0..self.channels {
            out[c] = (w00 * p00[c] as f64
                + w10 * p10[c] as f64
                + w01 * p01[c] as f64
                + w11 * p11[c] as f64) as f32;
        }
    }

    /// Round every value to the nearest 8-bit level, as a PNG round trip would.
    pub fn quantized_u8(&self) -> Image {
        Image {
            data: self
                .data
                .iter()
                .map(|&v| quantize_u8(v) as f32 / 255.0)
                .collect(),
            ..self.clone()
        }
    }

    pub fn check_finite_unit(&self) -> Result<()> {
        let bad = self
            .data
            .iter()
            .filter(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
            .count();
        if bad > 0 {
            return Err(Error::data(format!(
                "{bad} channel values outside [0, 1] or non-finite"
            )));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn clamp_index(i: i64, n: usize) -> usize {
    i.clamp(0, n as i64 - 1) as usize
}

/// Round-half-up 8-bit quantization of a `[0, 1]` value.
#[inline]
pub fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8
}

#[inline]
pub fn quantize_u16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) as f64 * 65535.0 + 0.5).floor() as u16
}

/// Load a PNG (8 or 16 bit, gray/RGB/RGBA) as a 3-channel float image.
pub fn load_png_rgb(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png_rgb(&bytes)
}

pub fn decode_png_rgb(bytes: &[u8]) -> Result<Image> {
    let dynimg = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
    Ok(dynamic_to_rgb(dynimg))
}

fn dynamic_to_rgb(dynimg: DynamicImage) -> Image {
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let is16 = matches!(
        dynimg,
        DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
            | DynamicImage::ImageRgb16(_)
            | DynamicImage::ImageRgba16(_)
    );
    if is16 {
        let buf = dynimg.into_rgb16();
        Image {
            width: w,
            height: h,
            channels: 3,
            data: buf.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
        }
    } else {
        let buf = dynimg.into_rgb8();
        Image {
            width: w,
            height: h,
            channels: 3,
            data: buf.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        }
    }
}

/// Encode a 3-channel (or 1-channel) image as 8-bit PNG bytes.
pub fn encode_png8(img: &Image) -> Result<Vec<u8>> {
    let raw: Vec<u8> = img.data.iter().map(|&v| quantize_u8(v)).collect();
    let dynimg = match img.channels {
        3 => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(img.width as u32, img.height as u32, raw)
                .ok_or_else(|| Error::format("image buffer size mismatch"))?,
        ),
        1 => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(img.width as u32, img.height as u32, raw)
                .ok_or_else(|| Error::format("image buffer size mismatch"))?,
        ),
        c => return Err(Error::format(format!("cannot encode {c}-channel image as PNG"))),
    };
    let mut out = std::io::Cursor::new(Vec::new());
    dynimg.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn save_png8(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png8(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_png16(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u16> = img.data.iter().map(|&v| quantize_u16(v)).collect();
    let dynimg = match img.channels {
        3 => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(img.width as u32, img.height as u32, raw)
                .ok_or_else(|| Error::format("image buffer size mismatch"))?,
        ),
        1 => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(img.width as u32, img.height as u32, raw)
                .ok_or_else(|| Error::format("image buffer size mismatch"))?,
        ),
        c => return Err(Error::format(format!("cannot encode {c}-channel image as PNG"))),
    };
    dynimg.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Raw single-channel 16-bit PNG samples, for metric depth stored as integer units.
pub fn load_png_gray16(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u16>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let dynimg = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    Ok((w, h, dynimg.into_luma16().into_raw()))
}
