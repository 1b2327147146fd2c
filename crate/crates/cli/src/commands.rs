use std::fs;
use std::path::{Path, PathBuf};

use psyn_core::data::{
    assign_values, load_dataset, make_fixtures, png_files, read_mask, read_rgb, write_dataset, Mask, PolypSample,
};
use psyn_core::eval::{
    detection_report, evaluate_detections, evaluate_segmentation, mean_seg_scores, read_counts, read_detections,
    read_sweep, sweep_report, MetricCounts,
};
use psyn_core::genpipe::{bench_generator, generate_corpus, load_generator, CorpusSampler, Source, ValueChoice};
use psyn_core::nn::{Generator, NetConfig};
use psyn_core::train::{dataset_values, train, LossWeights, Task, TrainConfig};
use psyn_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Fixtures,
    Train(Task),
    Generate,
    EvalDet,
    EvalSeg,
    Sweep,
    Bench,
}

/// Creates `{run.out}/{timestamp}_{seed}`, suffixed if that already exists.
fn run_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let parent = PathBuf::from(cfg.get("run.out").unwrap_or("runs"));
    let stem = format!("{}_{}", chrono::Local::now().format("%Y%m%dT%H%M%S"), cfg.seed()?);
    let mut dir = parent.join(&stem);
    let mut i = 1;
    while dir.exists() {
        dir = parent.join(format!("{stem}_{i}"));
        i += 1;
    }
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn dataset(cfg: &RunConfig) -> Result<Vec<PolypSample>> {
    let images = cfg.require_path("data.images")?;
    let masks = cfg.require_path("data.masks")?;
    for d in [&images, &masks] {
        if !d.is_dir() {
            return Err(Error::Data(format!("{} is not a directory", d.display())));
        }
    }
    load_dataset(&images, &masks, cfg.path("data.id_map").as_deref())
}

/// Runs `cmd`, writing everything under a fresh run directory, and returns it.
pub fn run(cmd: Command, mut cfg: RunConfig) -> Result<PathBuf> {
    // settings that can be checked up front are resolved before the directory exists
    let plan = prepare(cmd, &mut cfg)?;
    let dir = run_dir(&cfg)?;
    let seed = cfg.seed()?;
    cfg.resolve("seed", seed);
    write(&dir.join("config.txt"), &cfg.to_text())?;
    execute(plan, &cfg, &dir)?;
    Ok(dir)
}

enum Plan {
    Fixtures { n: usize, size: u32, ids: usize },
    Train {
        task: Task,
        data: Vec<PolypSample>,
        net: NetConfig,
        train: TrainConfig,
        loss: LossWeights,
    },
    Generate,
    EvalDet,
    EvalSeg,
    Sweep,
    Bench,
}

fn prepare(cmd: Command, cfg: &mut RunConfig) -> Result<Plan> {
    Ok(match cmd {
        Command::Fixtures => {
            let n: usize = cfg.parse("fixtures.n")?;
            let ids = cfg.parse_opt("fixtures.ids")?.unwrap_or(n);
            cfg.resolve("fixtures.ids", ids);
            Plan::Fixtures {
                n,
                size: cfg.parse("fixtures.size")?,
                ids,
            }
        }
        Command::Train(task) => {
            let data = dataset(cfg)?;
            let hint = data.first().map(|s| s.image.width() as usize);
            let net = cfg.net(hint)?;
            let train = cfg.train(&net)?;
            let loss = cfg.loss(&net)?;
            Plan::Train { task, data, net, train, loss }
        }
        Command::Generate => Plan::Generate,
        Command::EvalDet => Plan::EvalDet,
        Command::EvalSeg => Plan::EvalSeg,
        Command::Sweep => Plan::Sweep,
        Command::Bench => Plan::Bench,
    })
}

fn execute(plan: Plan, cfg: &RunConfig, dir: &Path) -> Result<()> {
    match plan {
        Plan::Fixtures { n, size, ids } => {
            let samples = make_fixtures(n, size, ids, cfg.seed()?)?;
            write_dataset(&samples, dir)?;
            println!("wrote {n} fixture frames of {size}x{size} with {ids} polyp ids");
        }
        Plan::Train { task, data, net, train: tc, loss } => {
            let out = train::<f32>(task, &data, &net, &tc, &loss, Some(dir))?;
            if let (Some(first), Some(last)) = (out.log.first(), out.log.last()) {
                println!(
                    "{task}: {} steps on {} frames, L1 {:.4} -> {:.4}",
                    out.log.len(),
                    data.len(),
                    first.gen_l1,
                    last.gen_l1
                );
            }
        }
        Plan::Generate => generate(cfg, dir)?,
        Plan::EvalDet => eval_det(cfg, dir)?,
        Plan::EvalSeg => eval_seg(cfg, dir)?,
        Plan::Sweep => {
            let rows = read_sweep(&cfg.require_path("eval.sweep")?)?;
            let report = sweep_report(&rows)?;
            let table = report.to_table();
            print!("{table}");
            write(&dir.join("sweep.txt"), &table)?;
            write(&dir.join("sweep.csv"), &report.to_csv()?)?;
        }
        Plan::Bench => bench(cfg, dir)?,
    }
    Ok(())
}

fn mask_library(dir: &Path) -> Result<Vec<Mask>> {
    let mut out = Vec::new();
    for p in png_files(dir)? {
        if let Some(m) = read_mask(&p)?.crop_to_content() {
            out.push(m);
        }
    }
    Ok(out)
}

fn generate(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let mut n2p = load_generator::<f32>(&cfg.require_path("gen.n2p")?, Task::N2p)?;
    let data = match cfg.get("data.images") {
        Some(_) => Some(dataset(cfg)?),
        None => None,
    };
    let (sources, mut p2n): (Vec<Source>, _) = match cfg.path("gen.negatives") {
        Some(neg) => {
            let frames = png_files(&neg)?.iter().map(|p| read_rgb(p)).collect::<Result<Vec<_>>>()?;
            (frames.into_iter().map(Source::Negative).collect(), None)
        }
        None => {
            let data = data
                .clone()
                .ok_or_else(|| Error::Config("generate needs gen.negatives or data.images".into()))?;
            let p2n = load_generator::<f32>(&cfg.require_path("gen.p2n")?, Task::P2n)?;
            (data.into_iter().map(Source::Polyp).collect(), Some(p2n))
        }
    };
    let library = match (cfg.path("gen.library"), &data) {
        (Some(lib), _) => mask_library(&lib)?,
        (None, Some(data)) => data.iter().filter_map(|s| s.mask.crop_to_content()).collect(),
        (None, None) => return Err(Error::Config("generate needs gen.library or data.masks".into())),
    };
    if library.is_empty() {
        return Err(Error::Data("mask library has no non-empty masks".into()));
    }
    let values = match cfg.get("gen.value").unwrap_or("assigned") {
        "assigned" => ValueChoice::Assigned(match &data {
            Some(d) => dataset_values(d)?,
            None => assign_values(34)?,
        }),
        v => ValueChoice::Fixed(
            v.parse()
                .map_err(|_| Error::Config(format!("gen.value: expected assigned or 0-255, got {v:?}")))?,
        ),
    };
    let count: usize = cfg.parse("gen.count")?;
    let reqs = CorpusSampler::new(values).sample(&sources, &library, count, cfg.seed()?)?;
    let rows = generate_corpus(&reqs, p2n.as_mut(), &mut n2p, cfg.parse("data.dilation")?, dir)?;
    println!("wrote {} labeled samples and manifest.csv", rows.len());
    Ok(())
}

fn eval_det(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let rows = match cfg.path("eval.counts") {
        Some(counts) => read_counts(&counts)?,
        None => {
            let dets = read_detections(&cfg.require_path("eval.detections")?)?;
            let per_frame = evaluate_detections(&dets, &cfg.require_path("eval.gt")?)?;
            let mut w = csv::Writer::from_path(dir.join("frames.csv"))?;
            w.write_record(["frame_id", "tp", "fp", "fn", "tn"])?;
            for (frame, c) in &per_frame {
                w.write_record([frame.clone(), c.tp.to_string(), c.fp.to_string(), c.fn_.to_string(), c.tn.to_string()])?;
            }
            w.flush().map_err(|e| io_err(dir, e))?;
            let total: MetricCounts = per_frame.values().copied().sum();
            vec![("all".to_string(), total)]
        }
    };
    let table = detection_report(&rows);
    print!("{table}");
    write(&dir.join("report.txt"), &table)
}

fn eval_seg(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let threshold: f64 = cfg.parse("eval.threshold")?;
    let scores = evaluate_segmentation(&cfg.require_path("eval.pred")?, &cfg.require_path("eval.gt")?, threshold)?;
    let mut w = csv::Writer::from_path(dir.join("scores.csv"))?;
    w.write_record(["filename", "jaccard", "dice"])?;
    for (name, s) in &scores {
        w.write_record([name.clone(), s.jaccard.to_string(), s.dice.to_string()])?;
    }
    w.flush().map_err(|e| io_err(dir, e))?;
    let mean = mean_seg_scores(&scores.iter().map(|(_, s)| *s).collect::<Vec<_>>())
        .ok_or_else(|| Error::Data("no predicted masks to score".into()))?;
    let line = format!("{} frames: mean Jaccard {:.4}, mean Dice {:.4}\n", scores.len(), mean.jaccard, mean.dice);
    print!("{line}");
    write(&dir.join("report.txt"), &line)
}

fn bench(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let sizes: Vec<usize> = cfg.list("bench.sizes")?.unwrap_or_default();
    let runs: usize = cfg.parse("bench.runs")?;
    let warmup: usize = cfg.parse("bench.warmup")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed()?);
    let mut w = csv::Writer::from_path(dir.join("latency.csv"))?;
    w.write_record(["image_size", "warmup", "runs", "mean_ms", "median_ms", "p95_ms"])?;
    for size in sizes {
        let mut net = cfg.preset(size)?;
        for key in NetConfig::keys().into_iter().filter(|k| *k != "image_size") {
            if let Some(v) = cfg.get(&format!("net.{key}")) {
                net.set(key, v)?;
            }
        }
        let mut g = Generator::<f32>::new(&net, &mut rng)?;
        let s = bench_generator(&mut g, runs, warmup)?;
        println!("{}", s.report());
        w.write_record([
            size.to_string(),
            warmup.to_string(),
            runs.to_string(),
            format!("{:.3}", s.mean_ms),
            format!("{:.3}", s.median_ms),
            format!("{:.3}", s.p95_ms),
        ])?;
    }
    w.flush().map_err(|e| io_err(dir, e))
}
