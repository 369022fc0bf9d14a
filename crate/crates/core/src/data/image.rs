use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bilinear resize of a `[C,H,W]` image using pixel-center alignment,
/// clamping samples at the border.
pub fn resize_bilinear(img: &Tensor<f32>, out_h: usize, out_w: usize) -> Tensor<f32> {
    let s = img.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    if (h, w) == (out_h, out_w) {
        return img.clone();
    }
    let taps = |len: usize, out: usize| -> Vec<(usize, usize, f32)> {
        let scale = len as f32 / out as f32;
        (0..out)
            .map(|o| {
                let src = ((o as f32 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f32);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(len - 1);
                (lo, hi, src - lo as f32)
            })
            .collect()
    };
    let ys = taps(h, out_h);
    let xs = taps(w, out_w);
    let src = img.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::from_parts(vec![c, out_h, out_w], out)
}

/// `[3,H,W]` tensor in [0,1] from an 8-bit RGB buffer.
pub fn rgb_to_tensor(rgb: &image::RgbImage) -> Tensor<f32> {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        for ch in 0..3 {
            data[(ch * h + y as usize) * w + x as usize] = px[ch] as f32 / 255.0;
        }
    }
    Tensor::from_parts(vec![3, h, w], data)
}

/// 8-bit RGB image from a `[3,H,W]` tensor, rounding and clamping.
pub fn tensor_to_rgb(img: &Tensor<f32>) -> image::RgbImage {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let d = img.data();
    image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = |ch: usize| {
            let v = d[(ch * h + y as usize) * w + x as usize];
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        };
        image::Rgb([at(0), at(1), at(2)])
    })
}

pub fn decode(path: &Path) -> Result<image::RgbImage> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(img.into_rgb8())
}

/// Decodes a JPEG or PNG, replicates grayscale to three channels, scales to
/// [0,1] and resizes bilinearly to `size × size`.
pub fn load_and_resize(path: &Path, size: usize) -> Result<Tensor<f32>> {
    let rgb = decode(path)?;
    Ok(resize_bilinear(&rgb_to_tensor(&rgb), size, size))
}

/// Encodes `[3,H,W]` values in [0,1] as a baseline JPEG.
pub fn write_jpeg(img: &Tensor<f32>, path: &Path, quality: u8) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, quality)
        .encode_image(&tensor_to_rgb(img))
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    std::io::Write::flush(&mut out).map_err(|e| Error::io(path, e))
}
