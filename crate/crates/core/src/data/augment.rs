//! Random photometric and geometric augmentation.
//!
//! Ops run in a fixed order: horizontal flip, crop + resize back, brightness,
//! contrast, saturation. There is deliberately no vertical flip.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::resize_bilinear;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub flip: bool,
    pub flip_probability: f32,
    pub crop: bool,
    /// Area fraction of the kept window.
    pub crop_area: [f32; 2],
    pub brightness: bool,
    /// Additive offset.
    pub brightness_delta: [f32; 2],
    pub contrast: bool,
    /// Scale about the image mean.
    pub contrast_factor: [f32; 2],
    pub saturation: bool,
    /// Scale about each pixel's channel mean.
    pub saturation_factor: [f32; 2],
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            flip: true,
            flip_probability: 0.5,
            crop: true,
            crop_area: [0.8, 1.0],
            brightness: true,
            brightness_delta: [-0.1, 0.1],
            contrast: true,
            contrast_factor: [0.8, 1.2],
            saturation: true,
            saturation_factor: [0.8, 1.2],
        }
    }
}

impl AugmentPolicy {
    /// Every op disabled.
    pub fn identity() -> Self {
        Self {
            flip: false,
            crop: false,
            brightness: false,
            contrast: false,
            saturation: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid("augment", what.to_string()));
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return bad("flip_probability must be in [0, 1]");
        }
        for (name, [lo, hi]) in [
            ("crop_area", self.crop_area),
            ("brightness_delta", self.brightness_delta),
            ("contrast_factor", self.contrast_factor),
            ("saturation_factor", self.saturation_factor),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(&format!("{name} needs lo <= hi"));
            }
        }
        if !(self.crop_area[0] > 0.0 && self.crop_area[1] <= 1.0) {
            return bad("crop_area must lie in (0, 1]");
        }
        if self.contrast_factor[0] < 0.0 || self.saturation_factor[0] < 0.0 {
            return bad("contrast and saturation factors must be non-negative");
        }
        Ok(())
    }
}

/// Concrete parameters drawn from a policy for one image.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentDraw {
    pub flip: bool,
    /// `(top, left, height, width)` of the kept window.
    pub crop: Option<(usize, usize, usize, usize)>,
    pub brightness: Option<f32>,
    pub contrast: Option<f32>,
    pub saturation: Option<f32>,
}

fn uniform<R: Rng>(rng: &mut R, [lo, hi]: [f32; 2]) -> f32 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

impl AugmentDraw {
    pub fn sample<R: Rng>(policy: &AugmentPolicy, height: usize, width: usize, rng: &mut R) -> Self {
        let mut d = AugmentDraw::default();
        if policy.flip {
            d.flip = rng.random::<f32>() < policy.flip_probability;
        }
        if policy.crop {
            let side = uniform(rng, policy.crop_area).sqrt();
            let ch = ((height as f32 * side).round() as usize).clamp(1, height);
            let cw = ((width as f32 * side).round() as usize).clamp(1, width);
            let top = rng.random_range(0..=height - ch);
            let left = rng.random_range(0..=width - cw);
            d.crop = Some((top, left, ch, cw));
        }
        if policy.brightness {
            d.brightness = Some(uniform(rng, policy.brightness_delta));
        }
        if policy.contrast {
            d.contrast = Some(uniform(rng, policy.contrast_factor));
        }
        if policy.saturation {
            d.saturation = Some(uniform(rng, policy.saturation_factor));
        }
        d
    }

    pub fn apply(&self, img: &Tensor<f32>) -> Tensor<f32> {
        let (h, w) = (img.shape()[1], img.shape()[2]);
        let mut out = if self.flip {
            flip_horizontal(img)
        } else {
            img.clone()
        };
        if let Some((top, left, ch, cw)) = self.crop {
            out = resize_bilinear(&crop(&out, top, left, ch, cw), h, w);
        }
        if let Some(delta) = self.brightness {
            adjust_brightness(&mut out, delta);
        }
        if let Some(f) = self.contrast {
            adjust_contrast(&mut out, f);
        }
        if let Some(f) = self.saturation {
            adjust_saturation(&mut out, f);
        }
        clamp_unit(&mut out);
        out
    }
}

/// Samples a draw from `policy` and applies it.
pub fn augment<R: Rng>(img: &Tensor<f32>, policy: &AugmentPolicy, rng: &mut R) -> Tensor<f32> {
    AugmentDraw::sample(policy, img.shape()[1], img.shape()[2], rng).apply(img)
}

fn clamp_unit(img: &mut Tensor<f32>) {
    img.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
}

pub fn flip_horizontal(img: &Tensor<f32>) -> Tensor<f32> {
    let w = img.shape()[2];
    let mut out = img.clone();
    for row in out.data_mut().chunks_mut(w) {
        row.reverse();
    }
    out
}

pub fn crop(img: &Tensor<f32>, top: usize, left: usize, height: usize, width: usize) -> Tensor<f32> {
    let s = img.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = Vec::with_capacity(c * height * width);
    for ch in 0..c {
        for y in top..top + height {
            let row = (ch * h + y) * w;
            out.extend_from_slice(&img.data()[row + left..row + left + width]);
        }
    }
    Tensor::from_parts(vec![c, height, width], out)
}

pub fn adjust_brightness(img: &mut Tensor<f32>, delta: f32) {
    img.data_mut().iter_mut().for_each(|v| *v = (*v + delta).clamp(0.0, 1.0));
}

pub fn adjust_contrast(img: &mut Tensor<f32>, factor: f32) {
    let mean = img.data().iter().sum::<f32>() / img.len() as f32;
    img.data_mut()
        .iter_mut()
        .for_each(|v| *v = (mean + factor * (*v - mean)).clamp(0.0, 1.0));
}

pub fn adjust_saturation(img: &mut Tensor<f32>, factor: f32) {
    let s = img.shape();
    let (c, plane) = (s[0], s[1] * s[2]);
    let d = img.data_mut();
    for p in 0..plane {
        let mean = (0..c).map(|ch| d[ch * plane + p]).sum::<f32>() / c as f32;
        for ch in 0..c {
            let v = &mut d[ch * plane + p];
            *v = (mean + factor * (*v - mean)).clamp(0.0, 1.0);
        }
    }
}
