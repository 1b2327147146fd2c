//! Critics with known penalty values, shared by the training tests and the
//! acceptance harness.
#![allow(dead_code)]

use psyn_core::nn::{Critic, NetConfig, NormKind};
use psyn_core::optim::ParamSet;
use psyn_core::tensor::Tensor;
use psyn_core::train::{gradient_penalty, PatchCritic};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `D(x)[n] = s_h · Σ_i w_i x[n,i]` for each head scale `s_h`, one score per sample.
pub struct LinearCritic {
    params: ParamSet<f64>,
    head_scales: Vec<f64>,
}

impl LinearCritic {
    pub fn new(w: &[f64], head_scales: &[f64]) -> Self {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::from_f64(w, &[1, 1, 1, w.len()]).unwrap()).unwrap();
        LinearCritic {
            params,
            head_scales: head_scales.to_vec(),
        }
    }
}

impl PatchCritic<f64> for LinearCritic {
    fn scores(&mut self, _cond: &Tensor<f64>, image: &Tensor<f64>) -> psyn_core::Result<Vec<Tensor<f64>>> {
        let n = image.shape()[0];
        let w = self.params.get("w")?.expand(image.shape())?;
        let s = image.mul(&w)?.sum_to(&[n, 1, 1, 1])?;
        Ok(self.head_scales.iter().map(|&k| s.scale(k)).collect())
    }

    fn params(&self) -> &ParamSet<f64> {
        &self.params
    }
}

pub fn t(v: &[f64], shape: &[usize]) -> Tensor<f64> {
    Tensor::from_f64(v, shape).unwrap()
}

/// Penalty of the linear critic `w` at random real/fake batches.
pub fn linear_penalty(w: &[f64], batch: usize, seed: u64) -> f64 {
    let mut d = LinearCritic::new(w, &[1.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [batch, 1, 1, w.len()];
    let real: Vec<f64> = (0..batch * w.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let fake: Vec<f64> = (0..batch * w.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cond = Tensor::zeros(&shape);
    gradient_penalty(&mut d, &cond, &t(&real, &shape), &t(&fake, &shape), &[1.0], &mut rng)
        .unwrap()
        .item()
        .unwrap()
}

/// Two-level real critic with no normalization, small enough for per-weight
/// finite differences.
pub fn toy_critic() -> Critic<f64> {
    let cfg = NetConfig {
        image_size: 32,
        in_channels: 1,
        out_channels: 1,
        base_width: 2,
        width_cap: 2,
        critic_levels: 2,
        critic_patch_levels: vec![8],
        critic_norm: NormKind::None,
        ..NetConfig::desk(32)
    };
    Critic::new(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
}

/// Relative error between the double-backprop penalty gradient and central
/// differences over every toy-critic parameter.
pub fn penalty_gradient_rel_err() -> f64 {
    let mut d = toy_critic();
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let mut img = || {
        let v: Vec<f64> = (0..32 * 32).map(|_| r.random_range(-1.0..1.0)).collect();
        t(&v, &[1, 1, 32, 32])
    };
    let (cond, real, fake) = (img(), img(), img());
    let gp = |d: &mut Critic<f64>| {
        gradient_penalty(d, &cond, &real, &fake, &[1.0], &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    };

    let loss = gp(&mut d);
    let analytic = d.params().grads(&loss, false).unwrap();
    let h = 1e-6;
    let paths: Vec<String> = d.params().paths().map(String::from).collect();
    let (mut num, mut ana) = (Vec::new(), Vec::new());
    for path in &paths {
        let base = d.params().get(path).unwrap().to_f64_vec();
        let shape = d.params().get(path).unwrap().shape().to_vec();
        for i in 0..base.len() {
            let mut eval = |delta: f64| {
                let mut v = base.clone();
                v[i] += delta;
                d.params_mut().replace(path, t(&v, &shape)).unwrap();
                gp(&mut d).item().unwrap()
            };
            num.push((eval(h) - eval(-h)) / (2.0 * h));
            ana.push(analytic[path].to_f64_vec()[i]);
        }
        d.params_mut().replace(path, t(&base, &shape)).unwrap();
    }
    let diff = num.iter().zip(&ana).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = ana.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(scale > 1e-6, "penalty gradient vanished");
    diff / scale
}
