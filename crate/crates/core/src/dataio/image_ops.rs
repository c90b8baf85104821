use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ImageSample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn dims(pixels: &Tensor) -> Result<(usize, usize)> {
    match pixels.shape() {
        [3, h, w] => Ok((*h, *w)),
        other => Err(Error::shape("image", format!("expected [3, H, W], got {other:?}"))),
    }
}

/// Decodes a PNG or JPEG into a `[3, H, W]` tensor with values in [0, 1].
pub fn decode_image(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
    // 16-bit keeps both 8- and 16-bit sources exact: k * 257 / 65535 == k / 255.
    let rgb = img.to_rgb16();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = f64::from(px[c]) / 65535.0;
        }
    }
    Tensor::new(vec![3, h, w], data).map_err(|_| Error::format(path, "image has zero extent"))
}

/// Writes an 8-bit RGB PNG, rounding each value to the nearest level.
pub fn encode_png(pixels: &Tensor, path: &Path) -> Result<()> {
    let (h, w) = dims(pixels)?;
    let d = pixels.data();
    let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: usize| (d[(c * h + y as usize) * w + x as usize].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([at(0), at(1), at(2)])
    });
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Bilinear resize with half-pixel sample centres and edge clamping.
pub fn resize_bilinear(pixels: &Tensor, target_hw: (usize, usize)) -> Result<Tensor> {
    let (h, w) = dims(pixels)?;
    let (th, tw) = target_hw;
    if th == 0 || tw == 0 {
        return Err(Error::Config(format!("resize target {th}x{tw} must be positive")));
    }
    if (th, tw) == (h, w) {
        return Ok(pixels.clone());
    }
    let taps = |out: usize, src: usize| -> Vec<(usize, usize, f64)> {
        let scale = src as f64 / out as f64;
        (0..out)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(src - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let rows = taps(th, h);
    let cols = taps(tw, w);
    let src = pixels.data();
    let mut out = Vec::with_capacity(3 * th * tw);
    for c in 0..3 {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for &(y0, y1, fy) in &rows {
            for &(x0, x1, fx) in &cols {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
            }
        }
    }
    Tensor::new(vec![3, th, tw], out)
}

pub fn preprocess(sample: &ImageSample, target_hw: (usize, usize)) -> Result<ImageSample> {
    Ok(ImageSample {
        pixels: resize_bilinear(&sample.pixels, target_hw)?,
        record: sample.record.clone(),
    })
}

/// Mirrors the width axis.
pub fn flip_horizontal(pixels: &Tensor) -> Result<Tensor> {
    let (h, w) = dims(pixels)?;
    let src = pixels.data();
    let mut out = vec![0.0; src.len()];
    for row in 0..3 * h {
        for x in 0..w {
            out[row * w + x] = src[row * w + w - 1 - x];
        }
    }
    Tensor::new(vec![3, h, w], out)
}

/// Random horizontal flip followed by a multiplicative brightness change.
///
/// One uniform draw is consumed per call whatever `flip_prob` is, so the
/// stream position does not depend on the probability.
pub fn augment_pixels(
    pixels: &Tensor,
    flip_prob: f64,
    brightness_factor: f64,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&flip_prob) {
        return Err(Error::Config(format!("flip_prob {flip_prob} is outside [0, 1]")));
    }
    if !(brightness_factor > 0.0 && brightness_factor.is_finite()) {
        return Err(Error::Config(format!(
            "brightness factor {brightness_factor} must be positive"
        )));
    }
    let flip = rng.gen::<f64>() < flip_prob;
    let mut out = if flip {
        flip_horizontal(pixels)?
    } else {
        pixels.clone()
    };
    if brightness_factor != 1.0 {
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = (*v * brightness_factor).clamp(0.0, 1.0));
    }
    Ok(out)
}

pub fn augment(
    sample: &ImageSample,
    flip_prob: f64,
    brightness_factor: f64,
    rng: &mut impl Rng,
) -> Result<ImageSample> {
    Ok(ImageSample {
        pixels: augment_pixels(&sample.pixels, flip_prob, brightness_factor, rng)?,
        record: sample.record.clone(),
    })
}

/// How the training and validation copies of the images are augmented.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Brightness factors are drawn uniformly from `[1, max_brightness]`.
    pub max_brightness: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_prob: 0.5,
            max_brightness: 1.2,
        }
    }
}

/// Two independently augmented copies of `images`: one to train on and one
/// to validate against. Each copy draws from its own generator.
pub fn training_views(
    images: &[Tensor],
    config: &AugmentConfig,
    train_rng: &mut impl Rng,
    val_rng: &mut impl Rng,
) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    if !(config.max_brightness >= 1.0 && config.max_brightness.is_finite()) {
        return Err(Error::Config(format!(
            "max_brightness {} must be at least 1",
            config.max_brightness
        )));
    }
    Ok((augmented_view(images, config, train_rng)?, augmented_view(images, config, val_rng)?))
}

fn augmented_view(images: &[Tensor], config: &AugmentConfig, rng: &mut impl Rng) -> Result<Vec<Tensor>> {
    images
        .iter()
        .map(|img| {
            let factor = rng.gen_range(1.0..=config.max_brightness);
            augment_pixels(img, config.flip_prob, factor, rng)
        })
        .collect()
}
