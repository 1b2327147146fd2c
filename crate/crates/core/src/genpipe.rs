//! Inference chain: polyp→negative inpainting, negative→polyp synthesis under
//! a mask spec, labelled corpus export and generator latency benchmarking.

use std::fs;
use std::path::Path;
use std::time::Instant;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{
    augment_mask_random, compose_condition, dilate_mask, images_to_tensor, place_nonoverlapping, tensor_to_images,
    write_mask, write_rgb, AugmentRanges, BBox, Mask, MaskSpec, PolypSample, ValueAssignment, P2N_FILL,
};
use crate::error::{Error, Result};
use crate::checkpoint::Checkpoint;
use crate::nn::{parse_header, Generator};
use crate::train::Task;
use crate::tensor::{no_grad, Element, Mode, Tensor};

/// Published 256×256 generator latency, shown next to local measurements.
pub const REFERENCE_LATENCY_MS: f64 = 51.33;
pub const MANIFEST_HEADER: [&str; 8] = ["filename", "mask_filename", "value", "x1", "y1", "x2", "y2", "seed"];

fn check_frame<T: Element>(g: &Generator<T>, img: &RgbImage) -> Result<()> {
    let cfg = g.config();
    let s = cfg.image_size as u32;
    if img.dimensions() != (s, s) || cfg.in_channels != 3 || cfg.out_channels != 3 {
        return Err(Error::Checkpoint(format!(
            "incompatible checkpoint: generator expects {s}x{s} RGB, frame is {:?}",
            img.dimensions()
        )));
    }
    Ok(())
}

/// Loads a trained generator for `task` from a training checkpoint; rejects
/// other tasks and step-0 (untrained) checkpoints.
pub fn load_generator<T: Element>(path: &Path, task: Task) -> Result<Generator<T>> {
    let ck = Checkpoint::load(path)?;
    let h = parse_header(&ck.header);
    let bad = |why: String| Err(Error::Checkpoint(format!("{}: {why}", path.display())));
    match h.get("task").map(|t| t.parse::<Task>()) {
        Some(Ok(t)) if t == task => {}
        Some(Ok(t)) => return bad(format!("trained for {t}, expected {task}")),
        _ => return bad("no task in header".into()),
    }
    match h.get("step").map(|s| s.parse::<u64>()) {
        Some(Ok(0)) => return bad("untrained (step 0) checkpoint".into()),
        Some(Ok(_)) => {}
        _ => return bad("no step in header".into()),
    }
    Generator::from_checkpoint(&ck)
}

/// Eval-mode forward of one condition raster.
pub fn run_generator<T: Element>(g: &mut Generator<T>, condition: &RgbImage) -> Result<RgbImage> {
    check_frame(g, condition)?;
    let x = images_to_tensor::<T>(&[condition])?;
    // eval mode draws nothing from the stream
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let y = no_grad(|| g.forward(&x, Mode::Eval, &mut rng))?;
    Ok(tensor_to_images(&y)?.remove(0))
}

/// White-fills the polyp mask dilated by `radius` and inpaints it.
pub fn polyp_to_negative<T: Element>(g: &mut Generator<T>, s: &PolypSample, radius: u32) -> Result<RgbImage> {
    s.validate()?;
    let region = dilate_mask(&s.mask, radius);
    let cond = compose_condition(&s.image, &MaskSpec::full_frame(region, P2N_FILL)?)?;
    run_generator(g, &cond)
}

/// Synthesizes a polyp inside `spec` on a negative frame. The returned
/// sample's mask is the request's placed shape, independent of the output.
pub fn negative_to_polyp<T: Element>(g: &mut Generator<T>, negative: &RgbImage, spec: &MaskSpec) -> Result<PolypSample> {
    if spec.shape.is_empty() {
        return Err(Error::InvalidArgument("mask spec shape has no set pixel".into()));
    }
    let mask = spec.frame_mask(negative.width(), negative.height())?;
    let cond = compose_condition(negative, spec)?;
    let image = run_generator(g, &cond)?;
    Ok(PolypSample {
        image,
        mask,
        polyp_id: 0,
        source_name: format!("synthetic_v{}", spec.value),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    /// Goes through polyp→negative first.
    Polyp(PolypSample),
    Negative(RgbImage),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRequest {
    pub source: Source,
    pub mask_spec: MaskSpec,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub filename: String,
    pub mask_filename: String,
    pub value: u8,
    pub bbox: BBox,
    pub seed: u64,
}

/// How the corpus sampler picks identity values.
#[derive(Clone, Debug, PartialEq)]
pub enum ValueChoice {
    Fixed(u8),
    /// Uniform over the assigned set.
    Assigned(ValueAssignment),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSampler {
    pub values: ValueChoice,
    pub ranges: AugmentRanges,
    pub max_attempts: usize,
}

impl CorpusSampler {
    pub fn new(values: ValueChoice) -> Self {
        CorpusSampler {
            values,
            ranges: AugmentRanges {
                translate: false,
                ..AugmentRanges::default()
            },
            max_attempts: 16,
        }
    }

    /// `count` requests cycling over `sources`; request `i` draws its shape
    /// (an augmented library mask, placed uniformly in-frame) and value from
    /// the stream seeded with `seed + i`.
    pub fn sample(&self, sources: &[Source], library: &[Mask], count: usize, seed: u64) -> Result<Vec<GenerationRequest>> {
        if count > 0 && (sources.is_empty() || library.is_empty()) {
            return Err(Error::InvalidArgument("corpus sampling needs sources and library masks".into()));
        }
        (0..count)
            .map(|i| {
                let req_seed = seed.wrapping_add(i as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(req_seed);
                let source = sources[i % sources.len()].clone();
                let frame = match &source {
                    Source::Polyp(s) => s.image.dimensions(),
                    Source::Negative(img) => img.dimensions(),
                };
                let mut spec = self.draw_shape(library, frame, &mut rng)?;
                spec.value = match &self.values {
                    ValueChoice::Fixed(v) => *v,
                    ValueChoice::Assigned(va) => va.values()[rng.random_range(0..va.len())],
                };
                Ok(GenerationRequest {
                    source,
                    mask_spec: spec,
                    seed: req_seed,
                })
            })
            .collect()
    }

    fn draw_shape<R: Rng + ?Sized>(&self, library: &[Mask], frame: (u32, u32), rng: &mut R) -> Result<MaskSpec> {
        let free = Mask::new(frame.0, frame.1);
        let mut last = None;
        for _ in 0..self.max_attempts.max(1) {
            let base = &library[rng.random_range(0..library.len())];
            let shape = augment_mask_random(base, &self.ranges, rng)?
                .crop_to_content()
                .expect("augmentation never returns an empty mask");
            match place_nonoverlapping(&shape, &free, rng, 1) {
                Ok(spec) => return Ok(spec),
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

/// Runs every request and writes `images/`, `masks/` and `manifest.csv`
/// under `out_dir`. Boxes are the tight extent of the request mask with
/// exclusive end coordinates.
pub fn generate_corpus<T: Element>(
    requests: &[GenerationRequest],
    mut p2n: Option<&mut Generator<T>>,
    n2p: &mut Generator<T>,
    radius: u32,
    out_dir: &Path,
) -> Result<Vec<ManifestRow>> {
    let images = out_dir.join("images");
    let masks = out_dir.join("masks");
    for d in [&images, &masks] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let manifest_path = out_dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest_path)?;
    w.write_record(MANIFEST_HEADER)?;
    let mut rows = Vec::with_capacity(requests.len());
    for (i, req) in requests.iter().enumerate() {
        let negative = match &req.source {
            Source::Negative(img) => img.clone(),
            Source::Polyp(s) => {
                let g = p2n
                    .as_deref_mut()
                    .ok_or_else(|| Error::Config("polyp sources need a p2n checkpoint".into()))?;
                polyp_to_negative(g, s, radius)?
            }
        };
        let sample = negative_to_polyp(n2p, &negative, &req.mask_spec)?;
        let bbox = sample.mask.bbox().expect("spec shapes are non-empty");
        let row = ManifestRow {
            filename: format!("synth_{i:05}.png"),
            mask_filename: format!("synth_{i:05}_mask.png"),
            value: req.mask_spec.value,
            bbox,
            seed: req.seed,
        };
        write_rgb(&images.join(&row.filename), &sample.image)?;
        write_mask(&masks.join(&row.mask_filename), &sample.mask)?;
        w.write_record([
            row.filename.clone(),
            row.mask_filename.clone(),
            row.value.to_string(),
            bbox.x1.to_string(),
            bbox.y1.to_string(),
            bbox.x2.to_string(),
            bbox.y2.to_string(),
            row.seed.to_string(),
        ])?;
        rows.push(row);
    }
    w.flush().map_err(|e| Error::io(&manifest_path, e))?;
    Ok(rows)
}

/// Parses `manifest.csv` from a corpus directory.
pub fn read_manifest(out_dir: &Path) -> Result<Vec<ManifestRow>> {
    let path = out_dir.join("manifest.csv");
    let mut r = csv::Reader::from_path(&path)?;
    if r.headers()?.iter().ne(MANIFEST_HEADER) {
        return Err(Error::Data(format!("{}: expected columns {}", path.display(), MANIFEST_HEADER.join(","))));
    }
    r.records()
        .enumerate()
        .map(|(i, row)| {
            let row = row?;
            let bad = |k: usize| Error::Data(format!("{}: row {}: bad {}", path.display(), i + 1, MANIFEST_HEADER[k]));
            let num = |k: usize| row[k].parse::<u32>().map_err(|_| bad(k));
            Ok(ManifestRow {
                filename: row[0].to_string(),
                mask_filename: row[1].to_string(),
                value: row[2].parse().map_err(|_| bad(2))?,
                bbox: BBox {
                    x1: num(3)?,
                    y1: num(4)?,
                    x2: num(5)?,
                    y2: num(6)?,
                },
                seed: row[7].parse().map_err(|_| bad(7))?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyStats {
    pub image_size: usize,
    pub warmup: usize,
    pub samples_ms: Vec<f64>,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
}

impl LatencyStats {
    pub fn from_samples(image_size: usize, warmup: usize, samples_ms: Vec<f64>) -> Result<Self> {
        if samples_ms.is_empty() {
            return Err(Error::InvalidArgument("no latency samples".into()));
        }
        let mut sorted = samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median_ms = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        // nearest rank
        let p95_ms = sorted[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
        Ok(LatencyStats {
            image_size,
            warmup,
            mean_ms: samples_ms.iter().sum::<f64>() / n as f64,
            median_ms,
            p95_ms,
            samples_ms,
        })
    }

    pub fn report(&self) -> String {
        format!(
            "size {s}x{s}: n={n} (warm-up {w}) mean {:.2} ms, median {:.2} ms, p95 {:.2} ms (reference {REFERENCE_LATENCY_MS} ms at 256x256 on GPU)",
            self.mean_ms,
            self.median_ms,
            self.p95_ms,
            s = self.image_size,
            n = self.samples_ms.len(),
            w = self.warmup,
        )
    }
}

/// Wall-clock eval-mode forward latency of a single frame, after `warmup`
/// untimed passes.
pub fn bench_generator<T: Element>(g: &mut Generator<T>, n_runs: usize, warmup: usize) -> Result<LatencyStats> {
    if n_runs < 10 {
        return Err(Error::InvalidArgument(format!("benchmark needs at least 10 runs, got {n_runs}")));
    }
    let s = g.config().image_size;
    let c = g.config().in_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let data: Vec<T> = (0..c * s * s).map(|_| T::from_f64(rng.random_range(-1.0..1.0))).collect();
    let x = Tensor::new(data, &[1, c, s, s])?;
    let mut once = |rng: &mut ChaCha8Rng| no_grad(|| g.forward(&x, Mode::Eval, rng)).map(|_| ());
    for _ in 0..warmup {
        once(&mut rng)?;
    }
    let mut samples = Vec::with_capacity(n_runs);
    for _ in 0..n_runs {
        let t = Instant::now();
        once(&mut rng)?;
        samples.push(t.elapsed().as_secs_f64() * 1e3);
    }
    LatencyStats::from_samples(s, warmup, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latency_statistics() {
        let s = LatencyStats::from_samples(64, 2, (1..=20).map(f64::from).collect()).unwrap();
        assert_eq!(s.mean_ms, 10.5);
        assert_eq!(s.median_ms, 10.5);
        assert_eq!(s.p95_ms, 19.0);
        assert!(s.report().contains("51.33"));
    }
}
