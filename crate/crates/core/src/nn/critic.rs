use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_input, net_header, parse_header, Layers, NetConfig, NormKind, KERNEL, LEAKY_SLOPE};
use crate::checkpoint::{Checkpoint, Record};
use crate::error::{Error, Result};
use crate::optim::ParamSet;
use crate::tensor::{Element, Mode, Tensor};

pub const PREFIX: &str = "critic/";

/// Patch critic: a stride-2 conv trunk with a 1-channel 1×1 scoring head
/// tapped at each configured resolution. Scores are unbounded.
#[derive(Clone, Debug)]
pub struct Critic<T: Element = f32> {
    cfg: NetConfig,
    layers: Layers<T>,
    /// (trunk level, resolution) per head, in configuration order.
    heads: Vec<(usize, usize)>,
}

impl<T: Element> Critic<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Layers::new();
        for i in 0..cfg.critic_levels {
            let cin = match i {
                0 => Self::input_channels(cfg),
                _ => cfg.width(i - 1),
            };
            let path = format!("critic/trunk{i}");
            let norm = Self::has_norm(cfg, i);
            layers.conv(&path, [cfg.width(i), cin, KERNEL, KERNEL], !norm, rng)?;
            if norm {
                layers.norm(&path, cfg.width(i))?;
            }
        }
        let mut heads = Vec::new();
        for &r in &cfg.critic_patch_levels {
            let level = cfg.patch_head_level(r).expect("validated");
            layers.conv(&format!("critic/head{r}"), [1, cfg.width(level - 1), 1, 1], true, rng)?;
            heads.push((level, r));
        }
        Ok(Critic {
            cfg: cfg.clone(),
            layers,
            heads,
        })
    }

    fn input_channels(cfg: &NetConfig) -> usize {
        if cfg.critic_conditioned {
            cfg.in_channels + cfg.out_channels
        } else {
            cfg.out_channels
        }
    }

    fn has_norm(cfg: &NetConfig, level: usize) -> bool {
        cfg.critic_norm == NormKind::Batch && level != 0
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.layers.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.layers.params
    }

    /// Score-map resolutions in output order.
    pub fn head_resolutions(&self) -> Vec<usize> {
        self.heads.iter().map(|&(_, r)| r).collect()
    }

    /// One `[N,1,r,r]` score map per patch head.
    pub fn forward(&mut self, cond: &Tensor<T>, image: &Tensor<T>, mode: Mode) -> Result<Vec<Tensor<T>>> {
        let s = self.cfg.image_size;
        check_input("critic", image, self.cfg.out_channels, s)?;
        let mut x = if self.cfg.critic_conditioned {
            check_input("critic", cond, self.cfg.in_channels, s)?;
            if cond.shape()[0] != image.shape()[0] {
                return Err(Error::shape(
                    "critic",
                    format!("condition {:?} vs image {:?}", cond.shape(), image.shape()),
                ));
            }
            Tensor::cat(&[cond, image], 1)?
        } else {
            image.clone()
        };
        let deepest = self.heads.iter().map(|&(l, _)| l).max().unwrap_or(0);
        let mut taps = Vec::with_capacity(deepest);
        for i in 0..deepest {
            let path = format!("critic/trunk{i}");
            let k = self.layers.params.get(&format!("{path}/kernel"))?.clone();
            x = x.conv2d(&k, 2, 1)?;
            x = if Self::has_norm(&self.cfg, i) {
                self.layers.apply_norm(&path, &x, mode)?
            } else {
                self.layers.add_bias(&path, x)?
            };
            x = x.leaky_relu(LEAKY_SLOPE);
            taps.push(x.clone());
        }
        self.heads
            .iter()
            .map(|&(level, r)| {
                let path = format!("critic/head{r}");
                let k = self.layers.params.get(&format!("{path}/kernel"))?;
                let y = taps[level - 1].conv2d(k, 1, 0)?;
                self.layers.add_bias(&path, y)
            })
            .collect()
    }

    pub fn records(&self) -> Vec<Record> {
        self.layers.records()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: net_header(&self.cfg),
            records: self.records(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg = NetConfig::from_header(&parse_header(&ck.header))?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = Self::new(&cfg, &mut rng)?;
        d.layers.load(&ck.records, PREFIX)?;
        Ok(d)
    }
}
