use rand::Rng;

use super::{no_grad, Element, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

pub fn apply_activation<T: Element>(kind: Activation, x: &Tensor<T>) -> Tensor<T> {
    match kind {
        Activation::Relu => x.relu(),
        Activation::LeakyRelu(slope) => x.leaky_relu(slope),
        Activation::Tanh => x.tanh(),
        Activation::Sigmoid => x.sigmoid(),
    }
}

/// Per-channel running mean and (unbiased) variance of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub momentum: f64,
}

impl<T: Element> RunningStats<T> {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            momentum: Self::DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Batch normalization over `(N, H, W)` for each channel of `[N,C,H,W]` input.
///
/// Train mode normalizes with the (biased) batch statistics, differentiably,
/// and folds them into `stats`; eval mode normalizes with `stats`.
pub fn batch_norm<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
    mode: Mode,
    stats: &mut RunningStats<T>,
) -> Result<Tensor<T>> {
    let [n, c, h, w]: [usize; 4] = x.shape().try_into().map_err(|_| {
        Error::shape("batch_norm", format!("expected [N,C,H,W], got {:?}", x.shape()))
    })?;
    if gamma.shape() != [c] || beta.shape() != [c] || stats.channels() != c {
        return Err(Error::shape(
            "batch_norm",
            format!(
                "{c} channels but gamma {:?}, beta {:?}, running stats {}",
                gamma.shape(),
                beta.shape(),
                stats.channels()
            ),
        ));
    }
    let chan = [1, c, 1, 1];
    let shape = x.shape();
    let count = n * h * w;

    let normalized = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::shape(
                    "batch_norm",
                    format!("train mode needs at least 2 values per channel, got {count}"),
                ));
            }
            let inv = 1.0 / count as f64;
            let mean = x.sum_to(&chan)?.scale(inv);
            let centered = x.sub(&mean.expand(shape)?)?;
            let var = centered.square()?.sum_to(&chan)?.scale(inv);
            let std = var.add_scalar(eps).sqrt();

            let unbias = count as f64 / (count - 1) as f64;
            let m = stats.momentum;
            for ch in 0..c {
                let (bm, bv) = (mean.data()[ch].as_f64(), var.data()[ch].as_f64());
                let rm = stats.mean[ch].as_f64();
                let rv = stats.var[ch].as_f64();
                stats.mean[ch] = T::from_f64((1.0 - m) * rm + m * bm);
                stats.var[ch] = T::from_f64((1.0 - m) * rv + m * bv * unbias);
            }
            centered.div(&std.expand(shape)?)?
        }
        Mode::Eval => {
            let mean = Tensor::new(stats.mean.clone(), &chan)?;
            let std: Vec<T> = stats
                .var
                .iter()
                .map(|&v| T::from_f64((v.as_f64() + eps).sqrt()))
                .collect();
            let std = Tensor::new(std, &chan)?;
            x.sub(&mean.expand(shape)?)?.div(&std.expand(shape)?)?
        }
    };
    let gamma = gamma.reshape(&chan)?.expand(shape)?;
    let beta = beta.reshape(&chan)?.expand(shape)?;
    normalized.mul(&gamma)?.add(&beta)
}

/// Inverted dropout: train mode zeroes each element with probability `rate`
/// and scales survivors by `1/(1-rate)`; eval mode is the identity.
pub fn dropout<T: Element, R: Rng + ?Sized>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x.clone());
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.numel())
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    let mask = no_grad(|| Tensor::new(mask, x.shape()))?;
    x.mul(&mask)
}

/// `eps·a + (1-eps)·b`.
pub fn lerp<T: Element>(a: &Tensor<T>, b: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "lerp",
            format!("operands differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    a.scale(eps).add(&b.scale(1.0 - eps))
}

/// [`lerp`] with one coefficient per leading-axis sample.
pub fn lerp_per_sample<T: Element>(a: &Tensor<T>, b: &Tensor<T>, eps: &[f64]) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "lerp",
            format!("operands differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let n = a.shape().first().copied().unwrap_or(1);
    if eps.len() != n {
        return Err(Error::shape(
            "lerp",
            format!("{} coefficients for {n} samples", eps.len()),
        ));
    }
    let mut coef_shape = vec![1; a.rank()];
    coef_shape[0] = n;
    let e = Tensor::<T>::from_f64(eps, &coef_shape)?.expand(a.shape())?;
    let one_minus: Vec<f64> = eps.iter().map(|v| 1.0 - v).collect();
    let f = Tensor::<T>::from_f64(&one_minus, &coef_shape)?.expand(a.shape())?;
    a.mul(&e)?.add(&b.mul(&f)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn batch_norm_two_values() {
        let x = Tensor::<f64>::from_f64(&[1.0, 3.0], &[2, 1, 1, 1]).unwrap();
        let mut stats = RunningStats::new(1);
        let y = batch_norm(&x, &Tensor::ones(&[1]), &Tensor::zeros(&[1]), 0.0, Mode::Train, &mut stats)
            .unwrap();
        assert_eq!(y.to_vec(), vec![-1.0, 1.0]);
        // running stats: mean 0.9·0 + 0.1·2, var 0.9·1 + 0.1·2 (unbiased)
        assert!((stats.mean[0] - 0.2).abs() < 1e-15);
        assert!((stats.var[0] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn batch_norm_standardized_input_unchanged() {
        let v = [-1.5, -0.5, 0.5, 1.5];
        let var: f64 = v.iter().map(|x| x * x).sum::<f64>() / 4.0;
        let data: Vec<f64> = v.iter().map(|x| x / var.sqrt()).collect();
        let x = Tensor::<f64>::from_f64(&data, &[1, 1, 2, 2]).unwrap();
        let mut stats = RunningStats::new(1);
        let y = batch_norm(&x, &Tensor::ones(&[1]), &Tensor::zeros(&[1]), 0.0, Mode::Train, &mut stats)
            .unwrap();
        for (a, b) in y.to_vec().iter().zip(&data) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn batch_norm_single_value_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 2, 1, 1]);
        let mut stats = RunningStats::new(2);
        let r = batch_norm(&x, &Tensor::ones(&[2]), &Tensor::zeros(&[2]), 1e-5, Mode::Train, &mut stats);
        assert!(r.is_err());
        // eval mode has no such restriction
        assert!(batch_norm(&x, &Tensor::ones(&[2]), &Tensor::zeros(&[2]), 1e-5, Mode::Eval, &mut stats).is_ok());
    }

    #[test]
    fn activations_pointwise() {
        let x = Tensor::<f64>::from_f64(&[-1.0, 3.0, -5.0, 0.0], &[4]).unwrap();
        assert_eq!(apply_activation(Activation::LeakyRelu(0.2), &x).to_vec(), vec![-0.2, 3.0, -1.0, 0.0]);
        assert_eq!(apply_activation(Activation::Relu, &x).to_vec(), vec![0.0, 3.0, 0.0, 0.0]);
        assert_eq!(apply_activation(Activation::Tanh, &x).to_vec()[3], 0.0);
        assert_eq!(apply_activation(Activation::Sigmoid, &x).to_vec()[3], 0.5);
    }

    #[test]
    fn dropout_modes_and_rate_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::from_f64(&[1.0, 2.0, 3.0], &[3]).unwrap();
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap().to_vec(), x.to_vec());
        assert_eq!(dropout(&x, 0.5, Mode::Eval, &mut rng).unwrap().to_vec(), x.to_vec());
        assert!(dropout(&x, 1.0, Mode::Train, &mut rng).is_err());
        assert!(dropout(&x, -0.1, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_monte_carlo() {
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::<f64>::ones(&[n]);
        let y = dropout(&x, 0.5, Mode::Train, &mut rng).unwrap();
        let survivors = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
        assert!((survivors - 0.5).abs() < 0.01, "survivor fraction {survivors}");
        let mean = y.data().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn lerp_endpoints() {
        let a = Tensor::<f64>::full(&[2], 2.0);
        let b = Tensor::<f64>::full(&[2], 4.0);
        assert_eq!(lerp(&a, &b, 1.0).unwrap().to_vec(), vec![2.0; 2]);
        assert_eq!(lerp(&a, &b, 0.0).unwrap().to_vec(), vec![4.0; 2]);
        assert_eq!(lerp(&a, &b, 0.5).unwrap().to_vec(), vec![3.0; 2]);
        assert!(lerp(&a, &Tensor::zeros(&[3]), 0.5).is_err());
        let per = lerp_per_sample(&a, &b, &[1.0, 0.0]).unwrap();
        assert_eq!(per.to_vec(), vec![2.0, 4.0]);
    }
}
