//! Mean-reduced losses with gradients with respect to the prediction.

use super::tensor::{Real, Tensor};
use crate::error::{invalid, Result};

/// Predictions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the logs.
pub const BCE_CLAMP: f64 = 1e-7;

/// Binary cross entropy `mean(-[t ln p + (1 - t) ln(1 - p)])`.
///
/// The gradient is that of the clamped expression, so it is zero wherever
/// the clamp is active.
pub fn bce_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    pred.expect_shape(target.shape())?;
    if let Some(pos) = target.data().iter().position(|&t| t != T::zero() && t != T::one()) {
        return Err(invalid(format!("BCE target {} at index {pos} is not 0 or 1", target.data()[pos])));
    }
    let lo = T::lit(BCE_CLAMP);
    let hi = T::one() - lo;
    let n = pred.len() as f64;
    let inv_n = T::lit(1.0 / n);
    let mut total = 0.0f64;
    let mut grad = pred.clone();
    for (g, (&p, &t)) in grad.data_mut().iter_mut().zip(pred.data().iter().zip(target.data())) {
        let pc = p.max(lo).min(hi);
        let on = t == T::one();
        total -= if on { pc.ln() } else { (T::one() - pc).ln() }.to_f64();
        *g = if p < lo || p > hi {
            T::zero()
        } else if on {
            -inv_n / pc
        } else {
            inv_n / (T::one() - pc)
        };
    }
    Ok((T::lit(total / n), grad))
}

/// Mean squared error with gradient `2 (pred - target) / n`.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    pred.expect_shape(target.shape())?;
    let n = pred.len() as f64;
    let scale = T::lit(2.0 / n);
    let mut total = 0.0f64;
    let mut grad = pred.clone();
    for (g, (&p, &t)) in grad.data_mut().iter_mut().zip(pred.data().iter().zip(target.data())) {
        let d = p - t;
        total += (d * d).to_f64();
        *g = scale * d;
    }
    Ok((T::lit(total / n), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(v: Vec<f64>) -> Tensor<f64> {
        let n = v.len();
        Tensor::from_vec([1, 1, 1, n], v).unwrap()
    }

    #[test]
    fn bce_examples() {
        let target = t(vec![1.0, 0.0, 1.0]);
        let (perfect, _) = bce_loss(&target, &target).unwrap();
        assert!(perfect <= -(1.0f64 - 1e-7).ln() + 1e-15);
        let (half, _) = bce_loss(&t(vec![0.5; 3]), &target).unwrap();
        assert!((half - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce_loss(&t(vec![0.5]), &t(vec![0.5])).is_err());
        assert!(bce_loss(&t(vec![0.5]), &t(vec![0.5, 0.5])).is_err());
    }

    #[test]
    fn bce_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p: Vec<f64> = (0..200).map(|_| rng.random_range(0.001..0.999)).collect();
        let y: Vec<f64> = (0..200).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
        let mut oracle = 0.0;
        for i in 0..200 {
            oracle += -(y[i] * p[i].ln() + (1.0 - y[i]) * (1.0 - p[i]).ln());
        }
        oracle /= 200.0;
        let (loss, _) = bce_loss(&t(p), &t(y)).unwrap();
        assert!((loss - oracle).abs() < 1e-9);
    }

    #[test]
    fn mse_examples() {
        let a = t(vec![0.3, 0.7]);
        assert_eq!(mse_loss(&a, &a).unwrap().0, 0.0);
        let (l, g) = mse_loss(&t(vec![1.0]), &t(vec![0.0])).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(g.data(), &[2.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p: Vec<f64> = (0..64).map(|_| rng.random_range(-3.0..3.0)).collect();
        let q: Vec<f64> = (0..64).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut oracle = 0.0;
        for i in 0..64 {
            oracle += (p[i] - q[i]) * (p[i] - q[i]);
        }
        oracle /= 64.0;
        assert!((mse_loss(&t(p), &t(q)).unwrap().0 - oracle).abs() < 1e-9);
    }
}
