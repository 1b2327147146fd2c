use std::fmt;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{critic_loss, generator_loss, jitter, LossWeights, TrainConfig};
use crate::checkpoint::{Checkpoint, Record};
use crate::data::{assign_values, build_n2p_sample, build_p2n_sample, images_to_tensor, PolypSample, ValueAssignment};
use crate::error::{Error, Result};
use crate::nn::{net_header, Critic, Generator, NetConfig};
use crate::optim::adam_step;
use crate::tensor::{no_grad, Element, Mode, Tensor};

pub const METRICS_HEADER: [&str; 7] = ["step", "task", "critic_loss", "gp", "gen_adv", "gen_l1", "total"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    /// Polyp to negative: inpaint a white region.
    P2n,
    /// Negative to polyp: synthesize inside a grey identity region.
    N2p,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::P2n => "p2n",
            Task::N2p => "n2p",
        })
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p2n" => Ok(Task::P2n),
            "n2p" => Ok(Task::N2p),
            other => Err(Error::Config(format!("unknown task {other:?} (p2n|n2p)"))),
        }
    }
}

/// One row of the metrics log. `total` is `gen_adv + λ·gen_l1`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub task: Task,
    pub critic_loss: f64,
    pub gp: f64,
    pub gen_adv: f64,
    pub gen_l1: f64,
    pub total: f64,
}

impl StepRecord {
    fn fields(&self) -> [String; 7] {
        [
            self.step.to_string(),
            self.task.to_string(),
            format!("{:e}", self.critic_loss),
            format!("{:e}", self.gp),
            format!("{:e}", self.gen_adv),
            format!("{:e}", self.gen_l1),
            format!("{:e}", self.total),
        ]
    }

    fn is_finite(&self) -> bool {
        [self.critic_loss, self.gp, self.gen_adv, self.gen_l1, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

pub struct TrainOutcome<T: Element> {
    pub generator: Generator<T>,
    pub critic: Critic<T>,
    pub log: Vec<StepRecord>,
    pub checkpoint: Checkpoint,
}

struct Sampler<'a> {
    data: &'a [PolypSample],
    order: Vec<usize>,
    cursor: usize,
    task: Task,
    values: ValueAssignment,
    resize: u32,
}

impl Sampler<'_> {
    /// Next batch as `(condition, target)` tensors; epochs are reshuffled.
    fn batch<T: Element, R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut pairs = Vec::with_capacity(n);
        for _ in 0..n {
            if self.cursor == 0 {
                self.order.shuffle(rng);
            }
            let s = &self.data[self.order[self.cursor]];
            self.cursor = (self.cursor + 1) % self.order.len();
            let pair = match self.task {
                Task::P2n => build_p2n_sample(s, rng)?,
                Task::N2p => build_n2p_sample(s, &self.values)?,
            };
            pairs.push(jitter(&pair, self.resize, rng)?);
        }
        let conds: Vec<_> = pairs.iter().map(|p| &p.condition).collect();
        let targets: Vec<_> = pairs.iter().map(|p| &p.target).collect();
        Ok((images_to_tensor(&conds)?, images_to_tensor(&targets)?))
    }
}

/// Identity values for a dataset: one per distinct polyp id (at least two).
pub fn dataset_values(data: &[PolypSample]) -> Result<ValueAssignment> {
    let k = data.iter().map(|s| s.polyp_id + 1).max().unwrap_or(0).max(2);
    assign_values(k)
}

fn checkpoint<T: Element>(
    task: Task,
    step: usize,
    cfg: &TrainConfig,
    g: &Generator<T>,
    d: &Critic<T>,
) -> Checkpoint {
    let mut header = net_header(g.config());
    header.push_str(&format!("task={task}\nstep={step}\nseed={}\n", cfg.seed));
    let mut records: Vec<Record> = g.records();
    records.extend(d.records());
    Checkpoint { header, records }
}

struct MetricsLog {
    writer: csv::Writer<File>,
    path: PathBuf,
}

impl MetricsLog {
    fn create(path: PathBuf) -> Result<Self> {
        let mut writer = csv::Writer::from_path(&path)?;
        writer.write_record(METRICS_HEADER)?;
        Ok(MetricsLog { writer, path })
    }

    fn push(&mut self, r: &StepRecord) -> Result<()> {
        self.writer.write_record(r.fields())?;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Alternates `critic_iters_per_gen` critic updates with one generator update
/// for `total_steps` steps. With `out_dir`, writes `metrics.csv`, periodic
/// `step_NNNNNN.psyn` checkpoints and `final.psyn`.
pub fn train<T: Element>(
    task: Task,
    dataset: &[PolypSample],
    net: &NetConfig,
    cfg: &TrainConfig,
    w: &LossWeights,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome<T>> {
    if dataset.is_empty() {
        return Err(Error::Data("training needs a non-empty dataset".into()));
    }
    net.validate()?;
    cfg.validate(net.image_size)?;
    w.validate()?;
    if w.patch_weights.len() != net.critic_patch_levels.len() {
        return Err(Error::Config(format!(
            "{} patch weights for {} critic heads",
            w.patch_weights.len(),
            net.critic_patch_levels.len()
        )));
    }
    for s in dataset {
        s.validate()?;
        if s.image.dimensions() != (net.image_size as u32, net.image_size as u32) {
            return Err(Error::Data(format!(
                "{}: {:?} frame, network expects {}x{}",
                s.source_name,
                s.image.dimensions(),
                net.image_size,
                net.image_size
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut g = Generator::<T>::new(net, &mut rng)?;
    let mut d = Critic::<T>::new(net, &mut rng)?;
    let adam = cfg.adam();
    let mut sampler = Sampler {
        data: dataset,
        order: (0..dataset.len()).collect(),
        cursor: 0,
        task,
        values: dataset_values(dataset)?,
        resize: cfg.jitter_resize,
    };
    let mut metrics = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some(MetricsLog::create(dir.join("metrics.csv"))?)
        }
        None => None,
    };

    let mut log = Vec::with_capacity(cfg.total_steps);
    for step in 0..cfg.total_steps {
        let mut last_critic = None;
        for _ in 0..cfg.critic_iters_per_gen {
            let (cond, real) = sampler.batch::<T, _>(cfg.batch_size, &mut rng)?;
            let fake = no_grad(|| g.forward(&cond, Mode::Train, &mut rng))?;
            let loss = critic_loss(&mut d, &cond, &real, &fake, w, &mut rng)?;
            let grads = d.params().grads(&loss.total, false)?;
            adam_step(d.params_mut(), &grads, &adam)?;
            last_critic = Some((loss.total.item()?.as_f64(), loss.gp));
        }
        let (critic_total, gp) = last_critic.expect("at least one critic iteration");

        let (cond, real) = sampler.batch::<T, _>(cfg.batch_size, &mut rng)?;
        let gl = generator_loss(&mut g, &mut d, &cond, &real, w, &mut rng)?;
        let grads = g.params().grads(&gl.total, false)?;

        let record = StepRecord {
            step,
            task,
            critic_loss: critic_total,
            gp,
            gen_adv: gl.adversarial,
            gen_l1: gl.l1,
            total: gl.adversarial + w.lambda_reconst * gl.l1,
        };
        if !record.is_finite() {
            let mut msg = format!("non-finite loss at step {step}: {record:?}");
            if let Some(dir) = out_dir {
                let snap = dir.join("nan_snapshot.psyn");
                checkpoint(task, step, cfg, &g, &d).save(&snap)?;
                msg.push_str(&format!("; snapshot at {}", snap.display()));
            }
            if let Some(m) = metrics.as_mut() {
                m.flush()?;
            }
            return Err(Error::Numeric(msg));
        }
        adam_step(g.params_mut(), &grads, &adam)?;
        if let Some(m) = metrics.as_mut() {
            m.push(&record)?;
        }
        log.push(record);

        let done = step + 1;
        if let (Some(dir), true) = (out_dir, cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) {
            checkpoint(task, done, cfg, &g, &d).save(&dir.join(format!("step_{done:06}.psyn")))?;
            if let Some(m) = metrics.as_mut() {
                m.flush()?;
            }
        }
    }

    let ck = checkpoint(task, cfg.total_steps, cfg, &g, &d);
    if let Some(dir) = out_dir {
        ck.save(&dir.join("final.psyn"))?;
    }
    if let Some(m) = metrics.as_mut() {
        m.flush()?;
    }
    Ok(TrainOutcome {
        generator: g,
        critic: d,
        log,
        checkpoint: ck,
    })
}
