//! Central finite-difference checks of every backward pass, in `f64`.
//!
//! Layers are checked through the scalar `L = sum(out * R)` with a fixed random
//! `R`; losses are checked directly. Relative error per entry is
//! `|analytic - numeric| / max(|analytic|, |numeric|, DENOM_FLOOR)`.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::activation::{relu, relu_backward, sigmoid, sigmoid_backward};
use super::batchnorm::BatchNorm2d;
use super::conv::Conv2d;
use super::loss::{bce_loss, mse_loss};
use super::network::{BitplaneNetwork, NetworkMeta};
use super::tensor::Tensor;
use crate::error::{invalid, Error, Result};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Lower bound on the relative-error denominator, so gradients that are zero
/// up to rounding do not blow up the ratio.
pub const DENOM_FLOOR: f64 = 1e-3;
/// Parameter entries sampled per tensor in the full-network check.
pub const NETWORK_SAMPLES_PER_TENSOR: usize = 24;

pub const LAYER_TOLERANCE: f64 = 1e-6;
pub const NETWORK_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Conv,
    BatchNorm,
    Relu,
    Sigmoid,
    Bce,
    Mse,
    /// A depth-1 network followed by BCE.
    Network,
}

impl Component {
    pub const ALL: [Component; 7] = [
        Component::Conv,
        Component::BatchNorm,
        Component::Relu,
        Component::Sigmoid,
        Component::Bce,
        Component::Mse,
        Component::Network,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Conv => "conv",
            Component::BatchNorm => "batch_norm",
            Component::Relu => "relu",
            Component::Sigmoid => "sigmoid",
            Component::Bce => "bce",
            Component::Mse => "mse",
            Component::Network => "network",
        }
    }

    pub fn default_tolerance(self) -> f64 {
        match self {
            Component::Network => NETWORK_TOLERANCE,
            _ => LAYER_TOLERANCE,
        }
    }

    pub fn default_input_shape(self) -> [usize; 4] {
        match self {
            Component::Network => [2, 3, 8, 8],
            Component::BatchNorm => [3, 4, 5, 4],
            _ => [2, 3, 5, 6],
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| invalid(format!("unknown gradient-check component `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupResult {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub component: Component,
    pub tolerance: f64,
    pub groups: Vec<GroupResult>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<10} max rel error {:.3e} (tol {:.0e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.component.name(),
            self.max_rel_error(),
            self.tolerance
        )?;
        for g in &self.groups {
            write!(f, "\n    {:<24} {:.3e} over {} entries", g.name, g.max_rel_error, g.checked)?;
        }
        Ok(())
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

fn uniform(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches")
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Compares `analytic` with central differences of `loss` over `indices` of `values`.
fn check_entries(
    name: &str,
    values: &mut [f64],
    analytic: &[f64],
    indices: &[usize],
    loss: &mut dyn FnMut(&[f64]) -> Result<f64>,
) -> Result<GroupResult> {
    let mut worst = 0.0f64;
    for &i in indices {
        let orig = values[i];
        values[i] = orig + STEP;
        let up = loss(values)?;
        values[i] = orig - STEP;
        let down = loss(values)?;
        values[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(GroupResult { name: name.to_string(), max_rel_error: worst, checked: indices.len() })
}

fn all(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn check_tensor_input(
    name: &str,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    indices: &[usize],
    f: &dyn Fn(&Tensor<f64>) -> Result<f64>,
) -> Result<GroupResult> {
    let shape = x.shape();
    let mut values = x.data().to_vec();
    check_entries(name, &mut values, analytic.data(), indices, &mut |v| {
        f(&Tensor::from_vec(shape, v.to_vec())?)
    })
}

/// Runs the check for one component on an input of `input_shape`.
pub fn grad_check(component: Component, input_shape: [usize; 4], tolerance: f64) -> Result<GradCheckReport> {
    if input_shape.contains(&0) {
        return Err(invalid("gradient check needs a non-empty input"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164 ^ component as u64);
    let groups = match component {
        Component::Conv => check_conv(&mut rng, input_shape)?,
        Component::BatchNorm => check_batch_norm(&mut rng, input_shape)?,
        Component::Relu => check_relu(&mut rng, input_shape)?,
        Component::Sigmoid => check_sigmoid(&mut rng, input_shape)?,
        Component::Bce => check_bce(&mut rng, input_shape)?,
        Component::Mse => check_mse(&mut rng, input_shape)?,
        Component::Network => check_network(&mut rng, input_shape)?,
    };
    let passed = groups.iter().all(|g| g.max_rel_error < tolerance && g.max_rel_error.is_finite());
    Ok(GradCheckReport { component, tolerance, groups, passed })
}

/// Every component at its default shape and tolerance.
pub fn standard_suite() -> Result<Vec<GradCheckReport>> {
    Component::ALL
        .into_iter()
        .map(|c| grad_check(c, c.default_input_shape(), c.default_tolerance()))
        .collect()
}

fn check_conv(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Result<Vec<GroupResult>> {
    let out_ch = 4;
    let mut conv = Conv2d::<f64>::he_normal(shape[1], out_ch, rng);
    conv.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    let x = uniform(rng, shape, -1.0, 1.0);
    let r = uniform(rng, [shape[0], out_ch, shape[2], shape[3]], -1.0, 1.0);
    let (gx, grads) = conv.backward(&x, &r)?;

    let input = check_tensor_input("input", &x, &gx, &all(x.len()), &|x| Ok(dot(&conv.forward(x)?, &r)))?;
    let mut weight = conv.weight.clone();
    let w = check_entries("weight", &mut weight, &grads.weight, &all(conv.weight.len()), &mut |v| {
        let mut c = conv.clone();
        c.weight.copy_from_slice(v);
        Ok(dot(&c.forward(&x)?, &r))
    })?;
    let mut bias = conv.bias.clone();
    let b = check_entries("bias", &mut bias, &grads.bias, &all(out_ch), &mut |v| {
        let mut c = conv.clone();
        c.bias.copy_from_slice(v);
        Ok(dot(&c.forward(&x)?, &r))
    })?;
    Ok(vec![input, w, b])
}

fn check_batch_norm(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Result<Vec<GroupResult>> {
    let mut bn = BatchNorm2d::<f64>::new(shape[1]);
    bn.gamma.iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
    bn.beta.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    let x = uniform(rng, shape, -2.0, 2.0);
    let r = uniform(rng, shape, -1.0, 1.0);
    let (_, cache) = bn.clone().forward_train(&x)?;
    let (gx, grads) = bn.backward(&cache, &r)?;
    let loss = |b: &BatchNorm2d<f64>, x: &Tensor<f64>| -> Result<f64> { Ok(dot(&b.clone().forward_train(x)?.0, &r)) };

    let input = check_tensor_input("input", &x, &gx, &all(x.len()), &|x| loss(&bn, x))?;
    let mut gamma = bn.gamma.clone();
    let g = check_entries("gamma", &mut gamma, &grads.gamma, &all(shape[1]), &mut |v| {
        let mut b = bn.clone();
        b.gamma.copy_from_slice(v);
        loss(&b, &x)
    })?;
    let mut beta = bn.beta.clone();
    let b = check_entries("beta", &mut beta, &grads.beta, &all(shape[1]), &mut |v| {
        let mut b = bn.clone();
        b.beta.copy_from_slice(v);
        loss(&b, &x)
    })?;
    Ok(vec![input, g, b])
}

fn check_relu(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Result<Vec<GroupResult>> {
    // Keep inputs away from the kink at zero.
    let mut x = uniform(rng, shape, 0.1, 1.0);
    x.data_mut().iter_mut().for_each(|v| {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    });
    let r = uniform(rng, shape, -1.0, 1.0);
    let gx = relu_backward(&x, &r)?;
    Ok(vec![check_tensor_input("input", &x, &gx, &all(x.len()), &|x| Ok(dot(&relu(x), &r)))?])
}

fn check_sigmoid(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Result<Vec<GroupResult>> {
    let x = uniform(rng, shape, -4.0, 4.0);
    let r = uniform(rng, shape, -1.0, 1.0);
    let gx = sigmoid_backward(&sigmoid(&x), &r)?;
    Ok(vec![check_tensor_input("input", &x, &gx, &all(x.len()), &|x| Ok(dot(&sigmoid(x), &r)))?])
}

fn binary(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect())
        .expect("shape matches")
}

fn check_bce(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Result<Vec<GroupResult>> {
    let p = uniform(rng, shape, 0.05, 0.95);
    let t = binary(rng, shape);
    let (_, gp) = bce_loss(&p, &t)?;
    Ok(vec![check_tensor_input("pred", &p, &gp, &all(p.len()), &|p| Ok(bce_loss(p, &t)?.0))?])
}

fn check_mse(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Result<Vec<GroupResult>> {
    let p = uniform(rng, shape, -1.0, 1.0);
    let t = uniform(rng, shape, -1.0, 1.0);
    let (_, gp) = mse_loss(&p, &t)?;
    Ok(vec![check_tensor_input("pred", &p, &gp, &all(p.len()), &|p| Ok(mse_loss(p, &t)?.0))?])
}

fn check_network(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Result<Vec<GroupResult>> {
    let channels = shape[1] as u32;
    let mut net = BitplaneNetwork::<f64>::new(NetworkMeta::bitplane(1, channels, 3, 4, 8), rng)?;
    for (name, p) in net.parameter_names().into_iter().zip(net.parameters_mut()) {
        if !name.ends_with(".weight") {
            let (lo, hi) = if name.ends_with(".gamma") { (0.5, 1.5) } else { (-0.2, 0.2) };
            p.iter_mut().for_each(|v| *v = rng.random_range(lo..hi));
        }
    }
    let x = uniform(rng, shape, 0.0, 1.0);
    let t = binary(rng, shape);
    let loss = |n: &BitplaneNetwork<f64>, x: &Tensor<f64>| -> Result<f64> {
        Ok(bce_loss(&n.clone().forward_train(x)?.0, &t)?.0)
    };
    let (out, cache) = net.clone().forward_train(&x)?;
    let (_, g_out) = bce_loss(&out, &t)?;
    let grads = net.backward(&cache, &g_out)?;

    let mut groups = Vec::new();
    let pick = |rng: &mut ChaCha8Rng, n: usize| -> Vec<usize> {
        if n <= NETWORK_SAMPLES_PER_TENSOR {
            all(n)
        } else {
            let mut idx = sample(rng, n, NETWORK_SAMPLES_PER_TENSOR).into_vec();
            idx.sort_unstable();
            idx
        }
    };
    let idx = pick(rng, x.len());
    groups.push(check_tensor_input("input", &x, &grads.input, &idx, &|x| loss(&net, x))?);
    let names = net.parameter_names();
    for (t_idx, name) in names.iter().enumerate() {
        let mut values = net.parameters()[t_idx].to_vec();
        let idx = pick(rng, values.len());
        groups.push(check_entries(name, &mut values, &grads.params[t_idx], &idx, &mut |v| {
            let mut n = net.clone();
            n.parameters_mut()[t_idx].copy_from_slice(v);
            loss(&n, &x)
        })?);
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layers_pass_at_layer_tolerance() {
        for c in [Component::Conv, Component::Relu, Component::Sigmoid, Component::Bce, Component::Mse] {
            let report = grad_check(c, c.default_input_shape(), LAYER_TOLERANCE).unwrap();
            assert!(report.passed, "{report}");
        }
    }

    #[test]
    fn batch_norm_passes() {
        let report = grad_check(Component::BatchNorm, [3, 4, 5, 4], 1e-6).unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn component_names_round_trip() {
        for c in Component::ALL {
            assert_eq!(c.name().parse::<Component>().unwrap(), c);
        }
        assert!("dense".parse::<Component>().is_err());
    }
}
