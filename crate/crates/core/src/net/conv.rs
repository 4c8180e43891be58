//! 3x3, stride 1, zero-padding 1 cross-correlation.
//!
//! Each batch item is lowered with im2col and multiplied by the weight matrix.
//! Items run in parallel; weight and bias gradients are summed in item order
//! afterwards, so results do not depend on how rayon splits the batch.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::tensor::{Real, Tensor};
use crate::error::{invalid, Result};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[out][in][3][3]`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Lowers one `channels x h x w` item into a `(channels * 9) x (h * w)` matrix.
fn im2col<T: Real>(x: &[T], channels: usize, h: usize, w: usize, col: &mut [T]) {
    let hw = h * w;
    for c in 0..channels {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut col[((c * TAPS) + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let out = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            out[0] = T::zero();
                            out[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => out.copy_from_slice(src),
                        _ => {
                            out[..w - 1].copy_from_slice(&src[1..]);
                            out[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the item.
fn col2im<T: Real>(col: &[T], channels: usize, h: usize, w: usize, x: &mut [T]) {
    let hw = h * w;
    x.fill(T::zero());
    for c in 0..channels {
        let plane = &mut x[c * hw..(c + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &col[((c * TAPS) + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, &s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, &s)| *d += s),
                    }
                }
            }
        }
    }
}

impl<T: Real> Conv2d<T> {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            weight: vec![T::zero(); out_channels * in_channels * TAPS],
            bias: vec![T::zero(); out_channels],
        }
    }

    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero bias.
    pub fn he_normal<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        let std = (2.0 / (in_channels * TAPS) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let mut layer = Self::zeros(in_channels, out_channels);
        layer.weight.iter_mut().for_each(|w| *w = T::lit(normal.sample(rng)));
        layer
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.in_channels {
            return Err(invalid(format!(
                "convolution expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        if x.height() == 0 || x.width() == 0 {
            return Err(invalid("convolution input has no pixels"));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let [n, cin, h, w] = x.shape();
        let hw = h * w;
        let cout = self.out_channels;
        let k = cin * TAPS;
        let mut out = Tensor::zeros([n, cout, h, w]);
        out.data_mut()
            .par_chunks_mut(cout * hw)
            .zip(x.data().par_chunks(cin * hw))
            .for_each(|(o, xi)| {
                let mut col = vec![T::zero(); k * hw];
                im2col(xi, cin, h, w, &mut col);
                for (row, &b) in o.chunks_mut(hw).zip(&self.bias) {
                    row.fill(b);
                }
                T::gemm(cout, k, hw, &self.weight, (k, 1), &col, (hw, 1), T::one(), o, (hw, 1));
            });
        Ok(out)
    }

    /// Gradients of the forward map at input `x`, given `d loss / d output`.
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, ConvGrads<T>)> {
        self.check_input(x)?;
        let [n, cin, h, w] = x.shape();
        grad_out.expect_shape([n, self.out_channels, h, w])?;
        let hw = h * w;
        let cout = self.out_channels;
        let k = cin * TAPS;
        let mut grad_in = Tensor::zeros(x.shape());
        let per_item: Vec<(Vec<T>, Vec<T>)> = grad_in
            .data_mut()
            .par_chunks_mut(cin * hw)
            .zip(x.data().par_chunks(cin * hw))
            .zip(grad_out.data().par_chunks(cout * hw))
            .map(|((dx, xi), dy)| {
                let mut col = vec![T::zero(); k * hw];
                im2col(xi, cin, h, w, &mut col);
                let mut dw = vec![T::zero(); cout * k];
                // dW = dY * col^T
                T::gemm(cout, hw, k, dy, (hw, 1), &col, (1, hw), T::zero(), &mut dw, (k, 1));
                // dcol = W^T * dY, reusing the column buffer.
                T::gemm(k, cout, hw, &self.weight, (1, k), dy, (hw, 1), T::zero(), &mut col, (hw, 1));
                col2im(&col, cin, h, w, dx);
                let db = dy.chunks(hw).map(|row| row.iter().copied().sum()).collect();
                (dw, db)
            })
            .collect();
        let mut grads = ConvGrads { weight: vec![T::zero(); cout * k], bias: vec![T::zero(); cout] };
        for (dw, db) in per_item {
            grads.weight.iter_mut().zip(dw).for_each(|(g, v)| *g += v);
            grads.bias.iter_mut().zip(db).for_each(|(g, v)| *g += v);
        }
        Ok((grad_in, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Direct 6-deep loop over the definition.
    fn naive_forward(layer: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let [n, cin, h, w] = x.shape();
        let mut out = Tensor::zeros([n, layer.out_channels, h, w]);
        for b in 0..n {
            for o in 0..layer.out_channels {
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = layer.bias[o];
                        for c in 0..cin {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let sy = y as isize + ky as isize - 1;
                                    let sx = xx as isize + kx as isize - 1;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    acc += layer.weight[((o * cin + c) * 3 + ky) * 3 + kx]
                                        * x.data()[((b * cin + c) * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                        out.data_mut()[((b * layer.out_channels + o) * h + y) * w + xx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ones_kernel_counts_overlap() {
        let mut layer = Conv2d::<f64>::zeros(1, 1);
        layer.weight.fill(1.0);
        let x = Tensor::filled([1, 1, 3, 3], 1.0);
        let out = layer.forward(&x).unwrap();
        assert_eq!(out.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn centre_tap_is_identity() {
        let mut layer = Conv2d::<f32>::zeros(3, 3);
        for c in 0..3 {
            layer.weight[(c * 3 + c) * 9 + 4] = 1.0;
        }
        let x = Tensor::from_vec([2, 3, 4, 5], (0..120).map(|v| v as f32 * 0.1).collect()).unwrap();
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut layer = Conv2d::<f64>::he_normal(3, 4, &mut rng);
        layer.bias = vec![0.1, -0.2, 0.3, 0.0];
        let x = Tensor::from_vec([2, 3, 5, 1], (0..30).map(|v| (v as f64 * 0.7).cos()).collect()).unwrap();
        let fast = layer.forward(&x).unwrap();
        let slow = naive_forward(&layer, &x);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let x = Tensor::from_vec([1, 3, 4, 6], (0..72).map(|v| (v as f64 * 0.3).sin()).collect()).unwrap();
        let fast = layer.forward(&x).unwrap();
        let slow = naive_forward(&layer, &x);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let (ch, h, w) = (2, 3, 4);
        let x: Vec<f64> = (0..ch * h * w).map(|v| (v as f64).sin()).collect();
        let c: Vec<f64> = (0..ch * 9 * h * w).map(|v| (v as f64 * 0.37).cos()).collect();
        let mut col = vec![0.0; c.len()];
        im2col(&x, ch, h, w, &mut col);
        let mut back = vec![0.0; x.len()];
        col2im(&c, ch, h, w, &mut back);
        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn rejects_channel_mismatch() {
        let layer = Conv2d::<f32>::zeros(3, 8);
        assert!(layer.forward(&Tensor::zeros([1, 1, 4, 4])).is_err());
    }

    #[test]
    fn gradients_do_not_depend_on_thread_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layer = Conv2d::<f32>::he_normal(3, 8, &mut rng);
        let x = Tensor::from_vec([6, 3, 7, 7], (0..882).map(|v| (v as f32 * 0.11).sin()).collect()).unwrap();
        let dy = Tensor::from_vec([6, 8, 7, 7], (0..2352).map(|v| (v as f32 * 0.07).cos()).collect()).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| layer.backward(&x, &dy).unwrap())
        };
        let (a_in, a) = run(1);
        let (b_in, b) = run(4);
        assert_eq!(a_in, b_in);
        assert_eq!(a, b);
    }
}
