//! U-Net generator and multi-patch critic.

mod config;
mod critic;
mod generator;

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use config::{NetConfig, NormKind};
pub use critic::Critic;
pub use generator::Generator;

use crate::checkpoint::Record;
use crate::error::{Error, Result};
use crate::optim::ParamSet;
use crate::tensor::{batch_norm, Element, Mode, RunningStats, Tensor};

pub const INIT_STD: f64 = 0.02;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;
const KERNEL: usize = 4;

/// Parameters plus batch-norm running statistics, keyed by layer path.
#[derive(Clone, Debug)]
pub(crate) struct Layers<T: Element> {
    pub params: ParamSet<T>,
    pub stats: BTreeMap<String, RunningStats<T>>,
}

impl<T: Element> Layers<T> {
    fn new() -> Self {
        Layers {
            params: ParamSet::new(),
            stats: BTreeMap::new(),
        }
    }

    fn gaussian<R: Rng + ?Sized>(&mut self, path: String, shape: &[usize], rng: &mut R) -> Result<()> {
        let normal = Normal::new(0.0, INIT_STD).expect("finite std");
        let n: usize = shape.iter().product();
        let data: Vec<T> = (0..n).map(|_| T::from_f64(normal.sample(rng))).collect();
        self.params.insert(path, Tensor::new(data, shape)?)
    }

    fn conv<R: Rng + ?Sized>(&mut self, path: &str, shape: [usize; 4], bias: bool, rng: &mut R) -> Result<()> {
        self.gaussian(format!("{path}/kernel"), &shape, rng)?;
        if bias {
            self.params.insert(format!("{path}/bias"), Tensor::zeros(&[shape[0]]))?;
        }
        Ok(())
    }

    fn conv_t<R: Rng + ?Sized>(&mut self, path: &str, shape: [usize; 4], bias: bool, rng: &mut R) -> Result<()> {
        self.gaussian(format!("{path}/kernel"), &shape, rng)?;
        if bias {
            self.params.insert(format!("{path}/bias"), Tensor::zeros(&[shape[1]]))?;
        }
        Ok(())
    }

    fn norm(&mut self, path: &str, channels: usize) -> Result<()> {
        self.params.insert(format!("{path}/bn/gamma"), Tensor::ones(&[channels]))?;
        self.params.insert(format!("{path}/bn/beta"), Tensor::zeros(&[channels]))?;
        self.stats.insert(format!("{path}/bn"), RunningStats::new(channels));
        Ok(())
    }

    fn add_bias(&self, path: &str, x: Tensor<T>) -> Result<Tensor<T>> {
        let b = self.params.get(&format!("{path}/bias"))?;
        let c = b.numel();
        x.add(&b.reshape(&[1, c, 1, 1])?.expand(x.shape())?)
    }

    fn apply_norm(&mut self, path: &str, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let gamma = self.params.get(&format!("{path}/bn/gamma"))?.clone();
        let beta = self.params.get(&format!("{path}/bn/beta"))?.clone();
        let stats = self
            .stats
            .get_mut(&format!("{path}/bn"))
            .ok_or_else(|| Error::InvalidArgument(format!("no running stats for {path}")))?;
        batch_norm(x, &gamma, &beta, BN_EPS, mode, stats)
    }

    fn records(&self) -> Vec<Record> {
        let mut out = self.params.to_records();
        for (path, s) in &self.stats {
            let c = s.channels();
            out.push(Record::from_values(format!("{path}@mean"), &s.mean, &[c]));
            out.push(Record::from_values(format!("{path}@var"), &s.var, &[c]));
        }
        out
    }

    /// Replaces parameters and statistics with checkpoint contents after
    /// checking that every path and shape matches this skeleton.
    fn load(&mut self, records: &[Record], prefix: &str) -> Result<()> {
        let params = ParamSet::<T>::from_records(records, prefix)?;
        let expected: Vec<_> = self.params.iter().map(|(p, v)| (p.to_string(), v.value.shape().to_vec())).collect();
        let found: Vec<_> = params.iter().map(|(p, v)| (p.to_string(), v.value.shape().to_vec())).collect();
        if expected != found {
            return Err(Error::Checkpoint(format!(
                "incompatible checkpoint: parameters under {prefix} do not match the configured network"
            )));
        }
        let mut stats = self.stats.clone();
        for (path, s) in stats.iter_mut() {
            for (suffix, slot) in [("@mean", &mut s.mean), ("@var", &mut s.var)] {
                let key = format!("{path}{suffix}");
                let r = records
                    .iter()
                    .find(|r| r.path == key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing record {key}")))?;
                let v: Vec<T> = r.values()?;
                if v.len() != slot.len() {
                    return Err(Error::Checkpoint(format!("{key}: {} values, expected {}", v.len(), slot.len())));
                }
                *slot = v;
            }
        }
        self.params = params;
        self.stats = stats;
        Ok(())
    }
}

fn check_input<T: Element>(what: &'static str, x: &Tensor<T>, channels: usize, size: usize) -> Result<()> {
    if x.shape().len() != 4 || x.shape()[1] != channels || x.shape()[2] != size || x.shape()[3] != size {
        return Err(Error::shape(
            what,
            format!("expected [N,{channels},{size},{size}], got {:?}", x.shape()),
        ));
    }
    Ok(())
}

/// `key=value` lines of a checkpoint header.
pub fn parse_header(header: &str) -> BTreeMap<String, String> {
    header
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Header lines describing `cfg`, each key prefixed with `net.`.
pub fn net_header(cfg: &NetConfig) -> String {
    cfg.to_pairs()
        .into_iter()
        .map(|(k, v)| format!("net.{k}={v}\n"))
        .collect()
}
