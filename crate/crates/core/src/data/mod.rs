//! Samples, condition-image construction, phantom fixtures and raster IO.

mod augment;
mod fixtures;
mod io;
mod mask;

use image::{Rgb, RgbImage};
use rand::Rng;

pub use augment::{augment_mask, augment_mask_random, homography, AugmentParams, AugmentRanges};
pub use fixtures::make_fixtures;
pub use io::{load_dataset, png_files, read_mask, read_rgb, write_dataset, write_mask, write_rgb};
pub use mask::{dilate_mask, BBox, Mask, BINARIZE_THRESHOLD};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const DEFAULT_DILATION: u32 = 10;
pub const DEFAULT_PLACEMENT_ATTEMPTS: usize = 100;
pub const P2N_FILL: u8 = 255;
const P2N_SHAPE_DRAWS: usize = 16;

/// A frame with its polyp mask and the identity of the polyp it shows.
#[derive(Clone, Debug, PartialEq)]
pub struct PolypSample {
    pub image: RgbImage,
    pub mask: Mask,
    pub polyp_id: usize,
    pub source_name: String,
}

impl PolypSample {
    pub fn validate(&self) -> Result<()> {
        if self.image.dimensions() != self.mask.dimensions() {
            return Err(Error::Data(format!(
                "{}: image {:?} and mask {:?} differ in size",
                self.source_name,
                self.image.dimensions(),
                self.mask.dimensions()
            )));
        }
        if self.mask.is_empty() {
            return Err(Error::Data(format!("{}: empty polyp mask", self.source_name)));
        }
        Ok(())
    }
}

/// A mask shape, its fill value and its top-left placement in the frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSpec {
    pub shape: Mask,
    pub value: u8,
    pub offset: (u32, u32),
}

impl MaskSpec {
    pub fn new(shape: Mask, value: u8, offset: (u32, u32)) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::InvalidArgument("mask spec shape has no set pixel".into()));
        }
        Ok(MaskSpec { shape, value, offset })
    }

    /// Full-frame spec from a frame-sized mask.
    pub fn full_frame(mask: Mask, value: u8) -> Result<Self> {
        Self::new(mask, value, (0, 0))
    }

    /// The shape rendered into a `width×height` frame.
    pub fn frame_mask(&self, width: u32, height: u32) -> Result<Mask> {
        if self.shape.is_empty() {
            return Err(Error::InvalidArgument("mask spec shape has no set pixel".into()));
        }
        Mask::placed(&self.shape, width, height, self.offset)
    }
}

/// Grayscale identity value per polyp id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValueAssignment {
    values: Vec<u8>,
}

impl ValueAssignment {
    pub fn get(&self, polyp_id: usize) -> Option<u8> {
        self.values.get(polyp_id).copied()
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `k` values `round(255·i/(k−1))`, spanning 0 to 255.
pub fn assign_values(k: usize) -> Result<ValueAssignment> {
    if !(2..=256).contains(&k) {
        return Err(Error::InvalidArgument(format!("value count must lie in 2..=256, got {k}")));
    }
    let values = (0..k)
        .map(|i| (255.0 * i as f64 / (k - 1) as f64).round() as u8)
        .collect();
    Ok(ValueAssignment { values })
}

/// Condition and target rasters plus the frame region the condition overwrites.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionedPair {
    pub condition: RgbImage,
    pub target: RgbImage,
    pub region: Mask,
}

/// `image` with the placed shape overwritten by `spec.value` in every channel.
pub fn compose_condition(image: &RgbImage, spec: &MaskSpec) -> Result<RgbImage> {
    let region = spec.frame_mask(image.width(), image.height())?;
    Ok(fill_region(image, &region, spec.value))
}

fn fill_region(image: &RgbImage, region: &Mask, value: u8) -> RgbImage {
    let mut out = image.clone();
    for (x, y) in region.iter_set() {
        out.put_pixel(x, y, Rgb([value; 3]));
    }
    out
}

/// Uniformly random in-frame offset whose placed shape misses `polyp`.
pub fn place_nonoverlapping<R: Rng + ?Sized>(
    shape: &Mask,
    polyp: &Mask,
    rng: &mut R,
    max_attempts: usize,
) -> Result<MaskSpec> {
    if shape.is_empty() {
        return Err(Error::InvalidArgument("cannot place an empty shape".into()));
    }
    let (fw, fh) = polyp.dimensions();
    let (sw, sh) = shape.dimensions();
    if sw > fw || sh > fh {
        return Err(Error::Data(format!(
            "{sw}x{sh} shape does not fit the {fw}x{fh} frame; shrink the shape"
        )));
    }
    let set: Vec<(u32, u32)> = shape.iter_set().collect();
    for _ in 0..max_attempts {
        let ox = rng.random_range(0..=fw - sw);
        let oy = rng.random_range(0..=fh - sh);
        if !set.iter().any(|&(x, y)| polyp.get(x + ox, y + oy)) {
            return MaskSpec::new(shape.clone(), P2N_FILL, (ox, oy));
        }
    }
    Err(Error::Data(format!(
        "no placement avoiding the polyp in {max_attempts} attempts; shrink the shape"
    )))
}

/// Inpainting pair: an augmented copy of the polyp mask, placed off the polyp
/// and filled white, with the untouched frame as target.
pub fn build_p2n_sample<R: Rng + ?Sized>(s: &PolypSample, rng: &mut R) -> Result<ConditionedPair> {
    s.validate()?;
    let ranges = AugmentRanges {
        translate: false,
        ..AugmentRanges::default()
    };
    let mut last = None;
    for _ in 0..P2N_SHAPE_DRAWS {
        let shape = augment_mask_random(&s.mask, &ranges, rng)?
            .crop_to_content()
            .expect("augmentation never returns an empty mask");
        match place_nonoverlapping(&shape, &s.mask, rng, DEFAULT_PLACEMENT_ATTEMPTS) {
            Ok(spec) => {
                let region = spec.frame_mask(s.image.width(), s.image.height())?;
                return Ok(ConditionedPair {
                    condition: fill_region(&s.image, &region, spec.value),
                    target: s.image.clone(),
                    region,
                });
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one draw"))
}

/// Synthesis pair: the polyp region overwritten by the polyp's identity value.
pub fn build_n2p_sample(s: &PolypSample, va: &ValueAssignment) -> Result<ConditionedPair> {
    s.validate()?;
    let value = va.get(s.polyp_id).ok_or_else(|| {
        Error::Data(format!(
            "{}: polyp id {} has no assigned value ({} assigned)",
            s.source_name,
            s.polyp_id,
            va.len()
        ))
    })?;
    Ok(ConditionedPair {
        condition: fill_region(&s.image, &s.mask, value),
        target: s.image.clone(),
        region: s.mask.clone(),
    })
}

/// Stacks rasters into `[N,3,H,W]` scaled to [−1,1].
pub fn images_to_tensor<T: Element>(images: &[&RgbImage]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("no images to stack".into()))?;
    let (w, h) = first.dimensions();
    let plane = (w * h) as usize;
    let mut data = vec![T::zero(); images.len() * 3 * plane];
    for (n, img) in images.iter().enumerate() {
        if img.dimensions() != (w, h) {
            return Err(Error::shape(
                "images_to_tensor",
                format!("{:?} vs {:?}", img.dimensions(), (w, h)),
            ));
        }
        for (i, px) in img.pixels().enumerate() {
            for c in 0..3 {
                data[(n * 3 + c) * plane + i] = T::from_f64(px[c] as f64 / 127.5 - 1.0);
            }
        }
    }
    Tensor::new(data, &[images.len(), 3, h as usize, w as usize])
}

/// Maps [−1,1] to 0..=255, rounding half to even.
pub fn to_u8(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round_ties_even().clamp(0.0, 255.0) as u8
}

/// Inverse of [`images_to_tensor`] with 8-bit quantization.
pub fn tensor_to_images<T: Element>(t: &Tensor<T>) -> Result<Vec<RgbImage>> {
    let [n, c, h, w]: [usize; 4] = t
        .shape()
        .try_into()
        .map_err(|_| Error::shape("tensor_to_images", format!("expected [N,3,H,W], got {:?}", t.shape())))?;
    if c != 3 {
        return Err(Error::shape("tensor_to_images", format!("{c} channels")));
    }
    let d = t.data();
    let plane = h * w;
    Ok((0..n)
        .map(|s| {
            RgbImage::from_fn(w as u32, h as u32, |x, y| {
                let i = y as usize * w + x as usize;
                Rgb(std::array::from_fn(|ch| to_u8(d[(s * 3 + ch) * plane + i].as_f64())))
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_hits_every_code() {
        assert_eq!(to_u8(-1.0), 0);
        assert_eq!(to_u8(1.0), 255);
        assert_eq!(to_u8(5.0), 255);
        for k in 0..=255u8 {
            assert_eq!(to_u8(k as f64 / 127.5 - 1.0), k);
        }
        assert_eq!(to_u8(-1.0 + 0.4 / 127.5), 0);
        assert_eq!(to_u8(-1.0 + 0.6 / 127.5), 1);
    }

    #[test]
    fn tensor_roundtrip_is_lossless_for_8bit() {
        let img = RgbImage::from_fn(5, 3, |x, y| Rgb([(x * 50) as u8, (y * 100) as u8, 7]));
        let t = images_to_tensor::<f32>(&[&img, &img]).unwrap();
        assert_eq!(t.shape(), [2, 3, 3, 5]);
        let back = tensor_to_images(&t).unwrap();
        assert_eq!(back[1], img);
    }
}
