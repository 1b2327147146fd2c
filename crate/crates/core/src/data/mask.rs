use image::{GrayImage, Luma};

use crate::error::{Error, Result};

/// Threshold at or above which an 8-bit mask pixel counts as set.
pub const BINARIZE_THRESHOLD: u8 = 128;

/// Axis-aligned box with exclusive end coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

/// Binary raster, row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Mask({}x{}, {} set)", self.width, self.height, self.count())
    }
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Mask {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Mask { width, height, bits }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::InvalidArgument(format!(
                "{} bits for a {width}x{height} mask",
                bits.len()
            )));
        }
        Ok(Mask { width, height, bits })
    }

    /// Pixels `>= 128` are set.
    pub fn from_gray(img: &GrayImage) -> Self {
        Mask {
            width: img.width(),
            height: img.height(),
            bits: img.as_raw().iter().map(|&v| v >= BINARIZE_THRESHOLD).collect(),
        }
    }

    /// Set pixels as 255, others as 0.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| Luma([if self.get(x, y) { 255 } else { 0 }]))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    fn idx(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height && self.bits[self.idx(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let i = self.idx(x, y);
        self.bits[i] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }

    /// Tight extent of the set pixels.
    pub fn bbox(&self) -> Option<BBox> {
        let mut it = self.iter_set();
        let (x, y) = it.next()?;
        let mut b = BBox {
            x1: x,
            y1: y,
            x2: x + 1,
            y2: y + 1,
        };
        for (x, y) in it {
            b.x1 = b.x1.min(x);
            b.y1 = b.y1.min(y);
            b.x2 = b.x2.max(x + 1);
            b.y2 = b.y2.max(y + 1);
        }
        Some(b)
    }

    /// The bounding-box window of the set pixels, or `None` when empty.
    pub fn crop_to_content(&self) -> Option<Mask> {
        let b = self.bbox()?;
        Some(Mask::from_fn(b.x2 - b.x1, b.y2 - b.y1, |x, y| self.get(x + b.x1, y + b.y1)))
    }

    fn same_extent(&self, other: &Mask, op: &'static str) -> Result<()> {
        if self.dimensions() != other.dimensions() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.dimensions(), other.dimensions()),
            ));
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &Mask) -> Result<usize> {
        self.same_extent(other, "mask intersection")?;
        Ok(self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count())
    }

    pub fn union_count(&self, other: &Mask) -> Result<usize> {
        self.same_extent(other, "mask union")?;
        Ok(self.bits.iter().zip(&other.bits).filter(|(a, b)| **a || **b).count())
    }

    /// `true` when every set pixel of `other` is also set here.
    pub fn contains(&self, other: &Mask) -> Result<bool> {
        self.same_extent(other, "mask containment")?;
        Ok(self.bits.iter().zip(&other.bits).all(|(a, b)| *a || !*b))
    }

    /// Jaccard index; two empty masks score 1.
    pub fn jaccard(&self, other: &Mask) -> Result<f64> {
        let u = self.union_count(other)?;
        if u == 0 {
            return Ok(1.0);
        }
        Ok(self.intersection_count(other)? as f64 / u as f64)
    }

    /// Copies `shape` into a `width×height` frame at `offset`.
    pub fn placed(shape: &Mask, width: u32, height: u32, offset: (u32, u32)) -> Result<Mask> {
        let (ox, oy) = offset;
        if ox as u64 + shape.width as u64 > width as u64 || oy as u64 + shape.height as u64 > height as u64 {
            return Err(Error::InvalidArgument(format!(
                "{}x{} shape at ({ox},{oy}) leaves the {width}x{height} frame",
                shape.width, shape.height
            )));
        }
        let mut out = Mask::new(width, height);
        for (x, y) in shape.iter_set() {
            out.set(x + ox, y + oy, true);
        }
        Ok(out)
    }
}

/// Every pixel within Euclidean distance `radius` of a set pixel.
///
/// Only pixels with an unset 4-neighbour stamp the disk: the nearest set pixel
/// to any outside point always has one.
pub fn dilate_mask(mask: &Mask, radius: u32) -> Mask {
    let mut out = mask.clone();
    if radius == 0 {
        return out;
    }
    let r = radius as i64;
    let offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    let (w, h) = (mask.width as i64, mask.height as i64);
    let inside = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h;
    for (x, y) in mask.iter_set() {
        let (x, y) = (x as i64, y as i64);
        let boundary = [(1, 0), (-1, 0), (0, 1), (0, -1)]
            .iter()
            .any(|(dx, dy)| inside(x + dx, y + dy) && !mask.get((x + dx) as u32, (y + dy) as u32));
        if !boundary {
            continue;
        }
        for &(dx, dy) in &offsets {
            let (px, py) = (x + dx, y + dy);
            if inside(px, py) {
                out.set(px as u32, py as u32, true);
            }
        }
    }
    out
}
