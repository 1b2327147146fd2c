use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use rand::Rng;

use super::mask::Mask;
use crate::error::{Error, Result};

const MAX_RETRIES: usize = 64;
const MIN_ABS_DET: f64 = 1e-6;

/// Geometric mask augmentation about the frame centre.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub scale: f64,
    /// Pixels, applied after rotation and scaling.
    pub translation: (f64, f64),
    /// Displacement of the four frame corners (clockwise from top-left) as
    /// fractions of width and height.
    pub perspective: [(f64, f64); 4],
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        rotation_deg: 0.0,
        scale: 1.0,
        translation: (0.0, 0.0),
        perspective: [(0.0, 0.0); 4],
    };
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentRanges {
    pub max_rotation_deg: f64,
    pub scale: (f64, f64),
    /// Move the mask centroid to a uniform in-frame position.
    pub translate: bool,
    pub max_perspective: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            max_rotation_deg: 180.0,
            scale: (0.7, 1.3),
            translate: true,
            max_perspective: 0.1,
        }
    }
}

impl AugmentRanges {
    pub fn sample<R: Rng + ?Sized>(&self, mask: &Mask, rng: &mut R) -> AugmentParams {
        let rotation_deg = rng.random_range(-self.max_rotation_deg..=self.max_rotation_deg);
        let scale = if self.scale.0 < self.scale.1 {
            rng.random_range(self.scale.0..=self.scale.1)
        } else {
            self.scale.0
        };
        let translation = if self.translate {
            let (w, h) = (mask.width() as f64, mask.height() as f64);
            let n = mask.count().max(1) as f64;
            let (sx, sy) = mask
                .iter_set()
                .fold((0.0, 0.0), |(a, b), (x, y)| (a + x as f64 + 0.5, b + y as f64 + 0.5));
            // where the centroid lands without translation
            let (dx, dy) = (sx / n - w / 2.0, sy / n - h / 2.0);
            let (sin, cos) = rotation_deg.to_radians().sin_cos();
            let px = w / 2.0 + scale * (cos * dx - sin * dy);
            let py = h / 2.0 + scale * (sin * dx + cos * dy);
            (rng.random_range(0.0..w) - px, rng.random_range(0.0..h) - py)
        } else {
            (0.0, 0.0)
        };
        let p = self.max_perspective;
        let mut perspective = [(0.0, 0.0); 4];
        if p > 0.0 {
            for c in perspective.iter_mut() {
                *c = (rng.random_range(-p..=p), rng.random_range(-p..=p));
            }
        }
        AugmentParams {
            rotation_deg,
            scale,
            translation,
            perspective,
        }
    }
}

/// Source→destination homography for `params` on a `w×h` frame.
pub fn homography(params: &AugmentParams, w: f64, h: f64) -> Option<Matrix3<f64>> {
    let (cx, cy) = (w / 2.0, h / 2.0);
    let (s, c) = params.rotation_deg.to_radians().sin_cos();
    let k = params.scale;
    let (tx, ty) = params.translation;
    let affine = Matrix3::new(
        k * c,
        -k * s,
        cx + tx - k * (c * cx - s * cy),
        k * s,
        k * c,
        cy + ty - k * (s * cx + c * cy),
        0.0,
        0.0,
        1.0,
    );
    if params.perspective.iter().all(|&(a, b)| a == 0.0 && b == 0.0) {
        return Some(affine);
    }
    let corners = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut rhs = SVector::<f64, 8>::zeros();
    for (i, (&(x, y), &(dx, dy))) in corners.iter().zip(&params.perspective).enumerate() {
        let p = affine * Vector3::new(x, y, 1.0);
        let (u, v) = (p.x + dx * w, p.y + dy * h);
        let r = 2 * i;
        a.row_mut(r).copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        rhs[r] = u;
        rhs[r + 1] = v;
    }
    let sol = a.lu().solve(&rhs)?;
    Some(Matrix3::new(sol[0], sol[1], sol[2], sol[3], sol[4], sol[5], sol[6], sol[7], 1.0))
}

/// Warps `mask` with nearest-neighbour sampling at destination pixel centres.
///
/// Fails on a degenerate transform or an empty result.
pub fn augment_mask(mask: &Mask, params: &AugmentParams) -> Result<Mask> {
    if mask.is_empty() {
        return Err(Error::InvalidArgument("cannot augment an empty mask".into()));
    }
    let (w, h) = mask.dimensions();
    let hm = homography(params, w as f64, h as f64)
        .filter(|m| m.determinant().abs() >= MIN_ABS_DET)
        .ok_or_else(|| Error::Numeric("degenerate mask homography".into()))?;
    let inv = hm
        .try_inverse()
        .ok_or_else(|| Error::Numeric("degenerate mask homography".into()))?;
    let out = Mask::from_fn(w, h, |x, y| {
        let p = inv * Vector3::new(x as f64 + 0.5, y as f64 + 0.5, 1.0);
        if p.z <= 0.0 {
            return false;
        }
        let (sx, sy) = ((p.x / p.z).floor(), (p.y / p.z).floor());
        sx >= 0.0 && sy >= 0.0 && sx < w as f64 && sy < h as f64 && mask.get(sx as u32, sy as u32)
    });
    if out.is_empty() {
        return Err(Error::Data("augmented mask is empty".into()));
    }
    Ok(out)
}

/// [`augment_mask`] with parameters drawn from `ranges`, redrawn on failure.
pub fn augment_mask_random<R: Rng + ?Sized>(mask: &Mask, ranges: &AugmentRanges, rng: &mut R) -> Result<Mask> {
    if mask.is_empty() {
        return Err(Error::InvalidArgument("cannot augment an empty mask".into()));
    }
    for _ in 0..MAX_RETRIES {
        let params = ranges.sample(mask, rng);
        if let Ok(m) = augment_mask(mask, &params) {
            return Ok(m);
        }
    }
    Err(Error::Data(format!(
        "mask augmentation produced no usable mask in {MAX_RETRIES} draws"
    )))
}
