use image::imageops::{self, FilterType};
use image::{GrayImage, RgbImage};
use rand::Rng;

use crate::data::{ConditionedPair, Mask};
use crate::error::{Error, Result};

/// Bilinear upscale of both images to `resize` (nearest for the region mask),
/// then a crop back to the original size at one shared random offset.
pub fn jitter<R: Rng + ?Sized>(pair: &ConditionedPair, resize: u32, rng: &mut R) -> Result<ConditionedPair> {
    let (w, h) = pair.target.dimensions();
    if resize < w.max(h) {
        return Err(Error::Config(format!("jitter resize {resize} is below the {w}x{h} frame")));
    }
    let ox = rng.random_range(0..=resize - w);
    let oy = rng.random_range(0..=resize - h);
    jitter_at(pair, Some(resize), (ox, oy))
}

/// Deterministic core of [`jitter`]; `resize: None` skips the upscale.
pub fn jitter_at(pair: &ConditionedPair, resize: Option<u32>, offset: (u32, u32)) -> Result<ConditionedPair> {
    let (w, h) = pair.target.dimensions();
    if pair.condition.dimensions() != (w, h) || pair.region.dimensions() != (w, h) {
        return Err(Error::shape("jitter", "condition, target and region differ in size"));
    }
    let big = resize.unwrap_or(w.max(h));
    let (ox, oy) = offset;
    let (bw, bh) = if resize.is_some() { (big, big) } else { (w, h) };
    if ox + w > bw || oy + h > bh {
        return Err(Error::InvalidArgument(format!("crop offset ({ox},{oy}) leaves the {bw}x{bh} image")));
    }
    let scale = |img: &RgbImage| -> RgbImage {
        let img = if resize.is_some() && (bw, bh) != (w, h) {
            imageops::resize(img, bw, bh, FilterType::Triangle)
        } else {
            img.clone()
        };
        imageops::crop_imm(&img, ox, oy, w, h).to_image()
    };
    let region: GrayImage = if resize.is_some() && (bw, bh) != (w, h) {
        imageops::resize(&pair.region.to_gray(), bw, bh, FilterType::Nearest)
    } else {
        pair.region.to_gray()
    };
    let region = imageops::crop_imm(&region, ox, oy, w, h).to_image();
    Ok(ConditionedPair {
        condition: scale(&pair.condition),
        target: scale(&pair.target),
        region: Mask::from_gray(&region),
    })
}
