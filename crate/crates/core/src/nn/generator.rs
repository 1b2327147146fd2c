use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_input, net_header, parse_header, Layers, NetConfig, KERNEL, LEAKY_SLOPE};
use crate::checkpoint::{Checkpoint, Record};
use crate::error::{Error, Result};
use crate::optim::ParamSet;
use crate::tensor::{dropout, Element, Mode, Tensor};

pub const PREFIX: &str = "gen/";

/// U-Net generator: `log2(S)` stride-2 encoder blocks down to 1×1, a mirrored
/// decoder with skip concatenations, and a tanh output.
#[derive(Clone, Debug)]
pub struct Generator<T: Element = f32> {
    cfg: NetConfig,
    layers: Layers<T>,
}

impl<T: Element> Generator<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let depth = cfg.encoder_depth();
        let mut layers = Layers::new();
        for i in 0..depth {
            let cin = if i == 0 { cfg.in_channels } else { cfg.width(i - 1) };
            let path = format!("gen/enc{i}");
            let norm = Self::enc_has_norm(depth, i);
            layers.conv(&path, [cfg.width(i), cin, KERNEL, KERNEL], !norm, rng)?;
            if norm {
                layers.norm(&path, cfg.width(i))?;
            }
        }
        for j in 0..depth {
            let path = format!("gen/dec{j}");
            let cin = if j == 0 { cfg.width(depth - 1) } else { 2 * cfg.width(depth - 1 - j) };
            if j + 1 == depth {
                layers.conv_t(&path, [cin, cfg.out_channels, KERNEL, KERNEL], true, rng)?;
            } else {
                let cout = cfg.width(depth - 2 - j);
                layers.conv_t(&path, [cin, cout, KERNEL, KERNEL], false, rng)?;
                layers.norm(&path, cout)?;
            }
        }
        Ok(Generator {
            cfg: cfg.clone(),
            layers,
        })
    }

    /// The outermost encoder block and the 1×1 bottleneck carry no batch norm.
    fn enc_has_norm(depth: usize, i: usize) -> bool {
        i != 0 && i + 1 != depth
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

    /// Number of stride-2 encoder levels.
    pub fn depth(&self) -> usize {
        self.cfg.encoder_depth()
    }

    pub fn forward<R: Rng + ?Sized>(&mut self, cond: &Tensor<T>, mode: Mode, rng: &mut R) -> Result<Tensor<T>> {
        self.run(cond, mode, rng, None)
    }

    /// Forward pass with the skip feeding decoder level `level` replaced by zeros.
    pub fn forward_without_skip<R: Rng + ?Sized>(
        &mut self,
        cond: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
        level: usize,
    ) -> Result<Tensor<T>> {
        if level == 0 || level >= self.depth() {
            return Err(Error::InvalidArgument(format!(
                "decoder level {level} has no skip (valid 1..{})",
                self.depth()
            )));
        }
        self.run(cond, mode, rng, Some(level))
    }

    /// Encoder activations from the outermost level down to the 1×1 bottleneck.
    pub fn encode(&mut self, cond: &Tensor<T>, mode: Mode) -> Result<Vec<Tensor<T>>> {
        check_input("generator", cond, self.cfg.in_channels, self.cfg.image_size)?;
        let depth = self.depth();
        let mut feats = Vec::with_capacity(depth);
        let mut x = cond.clone();
        for i in 0..depth {
            let path = format!("gen/enc{i}");
            let k = self.layers.params.get(&format!("{path}/kernel"))?.clone();
            x = x.conv2d(&k, 2, 1)?;
            x = if Self::enc_has_norm(depth, i) {
                self.layers.apply_norm(&path, &x, mode)?
            } else {
                self.layers.add_bias(&path, x)?
            };
            x = x.leaky_relu(LEAKY_SLOPE);
            feats.push(x.clone());
        }
        Ok(feats)
    }

    fn run<R: Rng + ?Sized>(
        &mut self,
        cond: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
        ablate: Option<usize>,
    ) -> Result<Tensor<T>> {
        let skips = self.encode(cond, mode)?;
        let depth = self.depth();
        let mut x = skips[depth - 1].clone();
        for j in 0..depth {
            let path = format!("gen/dec{j}");
            if j > 0 {
                let skip = &skips[depth - 1 - j];
                let skip = if ablate == Some(j) {
                    Tensor::zeros(skip.shape())
                } else {
                    skip.clone()
                };
                x = Tensor::cat(&[&x, &skip], 1)?;
            }
            let k = self.layers.params.get(&format!("{path}/kernel"))?.clone();
            x = x.conv_transpose2d(&k, 2, 1)?;
            if j + 1 == depth {
                x = self.layers.add_bias(&path, x)?.tanh();
            } else {
                x = self.layers.apply_norm(&path, &x, mode)?;
                if j < self.cfg.dropout_layers {
                    x = dropout(&x, self.cfg.dropout_rate, mode, rng)?;
                }
                x = x.relu();
            }
        }
        Ok(x)
    }

    pub fn records(&self) -> Vec<Record> {
        self.layers.records()
    }

    /// Stand-alone checkpoint holding this generator and its config.
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: net_header(&self.cfg),
            records: self.records(),
        }
    }

    /// Rebuilds the generator stored in `ck` (config from the header).
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg = NetConfig::from_header(&parse_header(&ck.header))?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Self::new(&cfg, &mut rng)?;
        g.layers.load(&ck.records, PREFIX)?;
        Ok(g)
    }
}
