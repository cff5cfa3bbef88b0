use std::path::Path;

use image::{Rgb, RgbImage};

use crate::synthdata::AngiogramSample;
use crate::{Error, Result};

pub const FP_COLOR: [u8; 3] = [230, 40, 40];
pub const FN_COLOR: [u8; 3] = [40, 110, 230];
const BACKGROUND: [u8; 3] = [0, 0, 0];
const FOREGROUND: [u8; 3] = [255, 255, 255];

/// Four panels left to right: input, ground truth, binarized prediction,
/// and an error map (false positives and false negatives colored, all
/// other pixels background).
pub fn render_overlay(sample: &AngiogramSample, pred: &[f64], threshold: f64) -> Result<RgbImage> {
    let (h, w) = (sample.height, sample.width);
    if pred.len() != h * w {
        return Err(Error::Shape(format!("prediction has {} pixels, sample {}", pred.len(), h * w)));
    }
    let mut img = RgbImage::new(4 * w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let v = (sample.image[i].clamp(0.0, 1.0) * 255.0).round() as u8;
            let gt = sample.mask[i] != 0;
            let p = pred[i] >= threshold;
            let bin = |b: bool| if b { FOREGROUND } else { BACKGROUND };
            let err = match (p, gt) {
                (true, false) => FP_COLOR,
                (false, true) => FN_COLOR,
                _ => BACKGROUND,
            };
            let (xu, yu) = (x as u32, y as u32);
            img.put_pixel(xu, yu, Rgb([v, v, v]));
            img.put_pixel(xu + w as u32, yu, Rgb(bin(gt)));
            img.put_pixel(xu + 2 * w as u32, yu, Rgb(bin(p)));
            img.put_pixel(xu + 3 * w as u32, yu, Rgb(err));
        }
    }
    Ok(img)
}

pub fn write_overlay(path: &Path, sample: &AngiogramSample, pred: &[f64], threshold: f64) -> Result<()> {
    let img = render_overlay(sample, pred, threshold)?;
    img.save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}
