use std::f64::consts::PI;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Mask, PolypSample};
use crate::error::{Error, Result};

struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: f64,
}

/// Phantom colon frames: a dark-lumen radial gradient with low-frequency
/// noise and one bright elliptical blob whose tint and stripe texture depend
/// only on the polyp id. Masks cover the blob exactly.
pub fn make_fixtures(n: usize, size: u32, n_ids: usize, seed: u64) -> Result<Vec<PolypSample>> {
    if n == 0 || n_ids == 0 {
        return Err(Error::InvalidArgument(format!(
            "fixtures need n >= 1 and n_ids >= 1, got n={n}, n_ids={n_ids}"
        )));
    }
    if size < 8 {
        return Err(Error::InvalidArgument(format!("fixture size {size} is below 8")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| Ok(frame(i, i % n_ids, size, &mut rng))).collect()
}

fn frame(index: usize, id: usize, size: u32, rng: &mut ChaCha8Rng) -> PolypSample {
    let s = size as f64;
    let lumen = (rng.random_range(0.3..0.7) * s, rng.random_range(0.3..0.7) * s);
    let waves: Vec<Wave> = (0..3)
        .map(|_| Wave {
            fx: rng.random_range(0.5..2.0) / s,
            fy: rng.random_range(0.5..2.0) / s,
            phase: rng.random_range(0.0..2.0 * PI),
            amp: rng.random_range(3.0..8.0),
        })
        .collect();

    let ra = rng.random_range(0.12..0.2) * s;
    let rb = rng.random_range(0.12..0.2) * s;
    let margin = ra.max(rb) + 1.0;
    let centre = (rng.random_range(margin..s - margin), rng.random_range(margin..s - margin));
    let theta = rng.random_range(0.0..PI);
    let (sin, cos) = theta.sin_cos();
    let inside = |x: u32, y: u32| {
        let (dx, dy) = (x as f64 + 0.5 - centre.0, y as f64 + 0.5 - centre.1);
        let u = (cos * dx + sin * dy) / ra;
        let v = (-sin * dx + cos * dy) / rb;
        u * u + v * v <= 1.0
    };
    let mask = Mask::from_fn(size, size, inside);

    // identity → tint and stripe frequency
    let g_tint = 140.0 + 70.0 * frac(id as f64 * 0.381_966);
    let b_tint = 110.0 + 80.0 * frac(id as f64 * 0.618_034);
    let stripes = 2.0 + (id % 4) as f64;
    let rmax = s * std::f64::consts::SQRT_2;

    let image = RgbImage::from_fn(size, size, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        if inside(x, y) {
            let t = 1.0 + 0.08 * (2.0 * PI * stripes * (px + py) / s).sin();
            Rgb([clamp(235.0 * t), clamp(g_tint * t), clamp(b_tint * t)])
        } else {
            let r = ((px - lumen.0).powi(2) + (py - lumen.1).powi(2)).sqrt() / rmax;
            let noise: f64 = waves
                .iter()
                .map(|w| w.amp * (2.0 * PI * (w.fx * px + w.fy * py) + w.phase).sin())
                .sum();
            let lum = 55.0 + 85.0 * r + noise;
            Rgb([clamp(lum * 1.25), clamp(lum * 0.75), clamp(lum * 0.65)])
        }
    });
    PolypSample {
        image,
        mask,
        polyp_id: id,
        source_name: format!("fixture_{index:04}.png"),
    }
}

fn frac(v: f64) -> f64 {
    v - v.floor()
}

fn clamp(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}
