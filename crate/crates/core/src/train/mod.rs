//! WGAN-GP objective with patch heads, L1 reconstruction, jitter and the
//! alternating training loop.

mod jitter;
mod run;

use rand::Rng;

pub use jitter::{jitter, jitter_at};
pub use run::{dataset_values, train, StepRecord, Task, TrainOutcome, METRICS_HEADER};

use crate::error::{Error, Result};
use crate::nn::{Critic, Generator, NetConfig};
use crate::optim::{AdamConfig, ParamSet};
use crate::tensor::{backward, lerp_per_sample, no_grad, Element, Mode, Tensor};

pub const GP_NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_reconst: f64,
    pub lambda_gp: f64,
    /// One weight per critic head.
    pub patch_weights: Vec<f64>,
}

impl LossWeights {
    /// λ=100, λ_gp=10 and unit weight on each of `heads` patch heads.
    pub fn new(heads: usize) -> Self {
        LossWeights {
            lambda_reconst: 100.0,
            lambda_gp: 10.0,
            patch_weights: vec![1.0; heads],
        }
    }

    pub fn for_net(cfg: &NetConfig) -> Self {
        Self::new(cfg.critic_patch_levels.len())
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_reconst, self.lambda_gp]
            .into_iter()
            .chain(self.patch_weights.iter().copied());
        for v in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weights must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub critic_iters_per_gen: usize,
    pub total_steps: usize,
    pub jitter_resize: u32,
    pub seed: u64,
    /// Save a checkpoint every this many steps; 0 saves only the final one.
    pub checkpoint_every: usize,
}

impl TrainConfig {
    /// Defaults for `image_size`, with the jitter resize `round(1.21875·size)`.
    pub fn for_size(image_size: usize) -> Self {
        TrainConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 1,
            critic_iters_per_gen: 5,
            total_steps: 2000,
            jitter_resize: jitter_size(image_size),
            seed: 0,
            checkpoint_every: 0,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self, image_size: usize) -> Result<()> {
        if self.jitter_resize as usize <= image_size {
            return Err(Error::Config(format!(
                "jitter_resize {} must exceed image_size {image_size}",
                self.jitter_resize
            )));
        }
        if self.batch_size == 0 || self.critic_iters_per_gen == 0 {
            return Err(Error::Config("batch_size and critic_iters_per_gen must be positive".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("need lr > 0 and betas in [0, 1)".into()));
        }
        Ok(())
    }
}

/// 312 for 256, scaled proportionally.
pub fn jitter_size(image_size: usize) -> u32 {
    (image_size as f64 * 312.0 / 256.0).round() as u32
}

/// A critic producing one score map per patch head.
pub trait PatchCritic<T: Element> {
    fn scores(&mut self, cond: &Tensor<T>, image: &Tensor<T>) -> Result<Vec<Tensor<T>>>;
    fn params(&self) -> &ParamSet<T>;
}

impl<T: Element> PatchCritic<T> for Critic<T> {
    fn scores(&mut self, cond: &Tensor<T>, image: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.forward(cond, image, Mode::Train)
    }

    fn params(&self) -> &ParamSet<T> {
        Critic::params(self)
    }
}

/// `Σ_h w_h · mean(map_h)`.
pub fn weighted_patch_mean<T: Element>(maps: &[Tensor<T>], weights: &[f64]) -> Result<Tensor<T>> {
    if maps.len() != weights.len() {
        return Err(Error::Config(format!(
            "{} patch weights for {} critic heads",
            weights.len(),
            maps.len()
        )));
    }
    let mut acc: Option<Tensor<T>> = None;
    for (m, &w) in maps.iter().zip(weights) {
        let term = m.mean().scale(w);
        acc = Some(match acc {
            Some(a) => a.add(&term)?,
            None => term,
        });
    }
    acc.ok_or_else(|| Error::Config("critic has no patch heads".into()))
}

/// Per-sample patch score `Σ_h w_h · mean over positions of map_h[n]`,
/// summed over the batch so each sample's input gradient is its own.
fn per_sample_score_sum<T: Element>(maps: &[Tensor<T>], weights: &[f64]) -> Result<Tensor<T>> {
    let batch = maps.first().map(|m| m.shape()[0]).unwrap_or(1);
    let scaled: Vec<Tensor<T>> = maps.iter().map(|m| m.scale(batch as f64)).collect();
    weighted_patch_mean(&scaled, weights)
}

pub struct CriticLoss<T: Element> {
    pub total: Tensor<T>,
    pub adversarial: f64,
    pub gp: f64,
}

/// Mean over samples of `(‖∂D/∂x̂‖₂ − 1)²` at per-sample random interpolates
/// between `real` and `fake`. Differentiable with respect to the critic.
pub fn gradient_penalty<T: Element, D: PatchCritic<T> + ?Sized, R: Rng + ?Sized>(
    d: &mut D,
    cond: &Tensor<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    patch_weights: &[f64],
    rng: &mut R,
) -> Result<Tensor<T>> {
    if real.shape() != fake.shape() || real.rank() == 0 {
        return Err(Error::shape(
            "gradient_penalty",
            format!("real {:?} vs fake {:?}", real.shape(), fake.shape()),
        ));
    }
    let n = real.shape()[0];
    let eps: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let xhat = no_grad(|| lerp_per_sample(real, fake, &eps))?.requires_grad_();
    let maps = d.scores(cond, &xhat)?;
    let score = per_sample_score_sum(&maps, patch_weights)?;
    let g = backward(&score, &[&xhat], true)?.remove(0);
    let mut per = vec![1; real.rank()];
    per[0] = n;
    let norms = g.square()?.sum_to(&per)?.add_scalar(GP_NORM_EPS).sqrt();
    Ok(norms.add_scalar(-1.0).square()?.mean())
}

/// Wasserstein critic loss `D(fake) − D(real)` over weighted heads plus
/// `λ_gp ·` gradient penalty. `fake` is detached here.
pub fn critic_loss<T: Element, D: PatchCritic<T> + ?Sized, R: Rng + ?Sized>(
    d: &mut D,
    cond: &Tensor<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    w: &LossWeights,
    rng: &mut R,
) -> Result<CriticLoss<T>> {
    let fake = fake.detach();
    let on_fake = weighted_patch_mean(&d.scores(cond, &fake)?, &w.patch_weights)?;
    let on_real = weighted_patch_mean(&d.scores(cond, real)?, &w.patch_weights)?;
    let adversarial = on_fake.sub(&on_real)?;
    let gp = gradient_penalty(d, cond, real, &fake, &w.patch_weights, rng)?;
    let total = adversarial.add(&gp.scale(w.lambda_gp))?;
    Ok(CriticLoss {
        adversarial: adversarial.item()?.as_f64(),
        gp: gp.item()?.as_f64(),
        total,
    })
}

pub struct GenLoss<T: Element> {
    pub total: Tensor<T>,
    pub adversarial: f64,
    pub l1: f64,
    pub fake: Tensor<T>,
}

/// `−Σ_h w_h·mean(maps_h) + λ·mean|fake − target|` for precomputed critic maps.
pub fn generator_objective<T: Element>(
    maps: &[Tensor<T>],
    fake: &Tensor<T>,
    target: &Tensor<T>,
    w: &LossWeights,
) -> Result<GenLoss<T>> {
    let adversarial = weighted_patch_mean(maps, &w.patch_weights)?.neg();
    let l1 = fake.sub(target)?.abs().mean();
    let total = adversarial.add(&l1.scale(w.lambda_reconst))?;
    Ok(GenLoss {
        adversarial: adversarial.item()?.as_f64(),
        l1: l1.item()?.as_f64(),
        total,
        fake: fake.clone(),
    })
}

pub fn generator_loss<T: Element, D: PatchCritic<T> + ?Sized, R: Rng + ?Sized>(
    g: &mut Generator<T>,
    d: &mut D,
    cond: &Tensor<T>,
    target: &Tensor<T>,
    w: &LossWeights,
    rng: &mut R,
) -> Result<GenLoss<T>> {
    let fake = g.forward(cond, Mode::Train, rng)?;
    let maps = d.scores(cond, &fake)?;
    generator_objective(&maps, &fake, target, w)
}
