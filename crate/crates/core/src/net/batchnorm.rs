use super::tensor::{Real, Tensor};
use crate::error::{invalid, Result};

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics.
    Eval,
}

/// Per-channel batch normalization over `(batch, height, width)`.
///
/// Running statistics follow `running = momentum * running + (1 - momentum) * batch`
/// and use the biased batch variance.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm2d<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub epsilon: T,
    /// Whether the running statistics have seen any batch (or were loaded).
    pub stats_initialized: bool,
}

/// What the backward pass needs from a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    x_hat: Tensor<T>,
    inv_std: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BnGrads<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self::with_hyper(channels, T::lit(DEFAULT_MOMENTUM), T::lit(DEFAULT_EPSILON))
    }

    pub fn with_hyper(channels: usize, momentum: T, epsilon: T) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum,
            epsilon,
            stats_initialized: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.channels() {
            return Err(invalid(format!(
                "batch norm expects {} channels, got {}",
                self.channels(),
                x.channels()
            )));
        }
        Ok(())
    }

    /// Evaluation-mode forward pass using the running statistics.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        if !self.stats_initialized {
            log::debug!("batch norm evaluated before any running-statistics update; using (0, 1)");
        }
        let mut out = x.clone();
        let hw = x.plane_len();
        let c = self.channels();
        for (i, chunk) in out.data_mut().chunks_mut(hw).enumerate() {
            let ch = i % c;
            let scale = self.gamma[ch] / (self.running_var[ch] + self.epsilon).sqrt();
            let shift = self.beta[ch] - self.running_mean[ch] * scale;
            chunk.iter_mut().for_each(|v| *v = *v * scale + shift);
        }
        Ok(out)
    }

    /// Training-mode forward pass: normalizes with batch statistics and folds
    /// them into the running statistics.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>)> {
        self.check_input(x)?;
        let [n, c, h, w] = x.shape();
        let hw = h * w;
        let count = (n * hw) as f64;
        if count == 0.0 {
            return Err(invalid("batch norm over an empty batch"));
        }
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        for (i, chunk) in x.data().chunks(hw).enumerate() {
            mean[i % c] += chunk.iter().map(|&v| v.to_f64()).sum::<f64>();
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for (i, chunk) in x.data().chunks(hw).enumerate() {
            let m = mean[i % c];
            var[i % c] += chunk.iter().map(|&v| (v.to_f64() - m).powi(2)).sum::<f64>();
        }
        var.iter_mut().for_each(|v| *v /= count);

        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (T::lit(v) + self.epsilon).sqrt()).collect();
        let mut x_hat = x.clone();
        let mut out = x.clone();
        for (i, (xh, o)) in x_hat.data_mut().chunks_mut(hw).zip(out.data_mut().chunks_mut(hw)).enumerate() {
            let ch = i % c;
            let m = T::lit(mean[ch]);
            for (a, b) in xh.iter_mut().zip(o.iter_mut()) {
                *a = (*a - m) * inv_std[ch];
                *b = self.gamma[ch] * *a + self.beta[ch];
            }
        }

        let keep = self.momentum;
        let blend = T::one() - keep;
        for ch in 0..c {
            self.running_mean[ch] = keep * self.running_mean[ch] + blend * T::lit(mean[ch]);
            self.running_var[ch] = keep * self.running_var[ch] + blend * T::lit(var[ch]);
        }
        self.stats_initialized = true;
        Ok((out, BnCache { x_hat, inv_std }))
    }

    pub fn backward(&self, cache: &BnCache<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, BnGrads<T>)> {
        grad_out.expect_shape(cache.x_hat.shape())?;
        let [n, c, h, w] = grad_out.shape();
        let hw = h * w;
        let count = (n * hw) as f64;
        let mut sum_dy = vec![0.0f64; c];
        let mut sum_dy_xhat = vec![0.0f64; c];
        for (i, (dy, xh)) in grad_out.data().chunks(hw).zip(cache.x_hat.data().chunks(hw)).enumerate() {
            let ch = i % c;
            for (&g, &x) in dy.iter().zip(xh) {
                sum_dy[ch] += g.to_f64();
                sum_dy_xhat[ch] += (g * x).to_f64();
            }
        }
        // dx = gamma * inv_std / M * (M * dy - sum(dy) - x_hat * sum(dy * x_hat))
        let mut grad_in = grad_out.clone();
        for (i, (dx, xh)) in grad_in.data_mut().chunks_mut(hw).zip(cache.x_hat.data().chunks(hw)).enumerate() {
            let ch = i % c;
            let scale = self.gamma[ch] * cache.inv_std[ch];
            let mean_dy = T::lit(sum_dy[ch] / count);
            let mean_dy_xhat = T::lit(sum_dy_xhat[ch] / count);
            for (d, &x) in dx.iter_mut().zip(xh) {
                *d = scale * (*d - mean_dy - x * mean_dy_xhat);
            }
        }
        let grads = BnGrads {
            gamma: sum_dy_xhat.iter().map(|&v| T::lit(v)).collect(),
            beta: sum_dy.iter().map(|&v| T::lit(v)).collect(),
        };
        Ok((grad_in, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tensor<f64> {
        Tensor::from_vec([3, 2, 2, 3], (0..36).map(|v| (v as f64 * 1.3).sin() * 4.0 + 2.0).collect()).unwrap()
    }

    #[test]
    fn train_mode_normalizes() {
        let mut bn = BatchNorm2d::<f64>::new(2);
        let (out, _) = bn.forward_train(&sample()).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|n| out.item(n)[ch * 6..(ch + 1) * 6].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-5);
        }
        assert!(bn.running_var.iter().all(|&v| v >= 0.0));
        assert!(bn.stats_initialized);
    }

    #[test]
    fn constant_channel_outputs_beta() {
        let mut bn = BatchNorm2d::<f32>::new(1);
        bn.beta[0] = 0.25;
        let (out, _) = bn.forward_train(&Tensor::filled([4, 1, 3, 3], 7.0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn eval_uses_running_stats() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        let x = Tensor::filled([1, 1, 2, 2], 3.0);
        assert_eq!(bn.forward_eval(&x).unwrap().data()[0], 3.0 / (1.0 + 1e-5f64).sqrt());
        bn.running_mean[0] = 1.0;
        bn.running_var[0] = 4.0 - 1e-5;
        bn.gamma[0] = 2.0;
        bn.beta[0] = -1.0;
        assert!((bn.forward_eval(&x).unwrap().data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        let x = Tensor::from_vec([1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
        bn.forward_train(&x).unwrap();
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-12);
        assert!((bn.running_var[0] - (0.9 + 0.1)).abs() < 1e-12);
    }
}
