use super::tensor::{Real, Tensor};
use crate::error::Result;

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// `grad * [x > 0]`, taking the derivative at zero as zero.
pub fn relu_backward<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.expect_shape(x.shape())?;
    let mut g = grad_out.clone();
    g.data_mut().iter_mut().zip(x.data()).for_each(|(d, &v)| {
        if v <= T::zero() {
            *d = T::zero();
        }
    });
    Ok(g)
}

#[inline]
fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Logistic function. Results are kept inside the open interval `(0, 1)`:
/// where the exact value would round to 0 or 1 it is pinned one step inside.
pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let lo = T::min_positive_value();
    let hi = T::one() - T::epsilon() / T::lit(2.0);
    x.map(|v| sigmoid_scalar(v).max(lo).min(hi))
}

/// Backward pass written in terms of the forward output `y`: `grad * y * (1 - y)`.
pub fn sigmoid_backward<T: Real>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.expect_shape(y.shape())?;
    let mut g = grad_out.clone();
    g.data_mut().iter_mut().zip(y.data()).for_each(|(d, &s)| *d = *d * s * (T::one() - s));
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        let x = Tensor::from_vec([1, 1, 1, 2], vec![-2.0f32, 3.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 3.0]);
        let g = relu_backward(&x, &Tensor::filled([1, 1, 1, 2], 5.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 5.0]);
    }

    #[test]
    fn sigmoid_values() {
        let x = Tensor::from_vec([1, 1, 1, 3], vec![0.0f32, 200.0, -200.0]).unwrap();
        let y = sigmoid(&x);
        assert_eq!(y.data()[0], 0.5);
        assert!(y.data()[1] < 1.0 && y.data()[1] > 0.99);
        assert!(y.data()[2] > 0.0 && y.data()[2] < 1e-30);
        let wide = Tensor::from_vec([1, 1, 1, 5], vec![-50.0f64, -3.0, 0.1, 7.0, 40.0]).unwrap();
        assert!(sigmoid(&wide).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
