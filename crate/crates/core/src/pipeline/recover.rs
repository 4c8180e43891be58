//! Sequential plane-by-plane recovery and single-shot residual recovery.

use super::bundle::{BundleModels, ModelBundle};
use super::train::stack;
use crate::bitcore::{apply_bitplane, extract_bitplane, Bitplane, ImageTensor, RecoveryRange, Role, Shape};
use crate::error::{invalid, Result};
use crate::net::{BitplaneNetwork, TargetKind, Tensor};

/// Probability threshold for a set bit; a probability of exactly 0.5 sets it.
pub const BINARIZE_THRESHOLD: f32 = 0.5;

/// Something that predicts the plane restored at step `k`.
pub trait PlanePredictor {
    /// Per-element probability that the plane is set. `current` holds the
    /// current estimate as (possibly fractional) codes in planar layout.
    fn plane_probability(&self, k: u32, current: &[f32], shape: Shape) -> Result<Vec<f32>>;
}

/// The trained networks of a bitplane-wise bundle.
pub struct NetworkPredictor<'a> {
    nets: &'a [BitplaneNetwork<f32>],
}

impl<'a> NetworkPredictor<'a> {
    pub fn new(nets: &'a [BitplaneNetwork<f32>]) -> Self {
        Self { nets }
    }
}

fn to_tensor(values: &[f32], shape: Shape, scale: f32) -> Tensor<f32> {
    Tensor::from_vec([1, shape.channels, shape.height, shape.width], values.iter().map(|&v| v / scale).collect())
        .expect("shape matches")
}

impl PlanePredictor for NetworkPredictor<'_> {
    fn plane_probability(&self, k: u32, current: &[f32], shape: Shape) -> Result<Vec<f32>> {
        let net = self
            .nets
            .get((k as usize).wrapping_sub(1))
            .ok_or_else(|| invalid(format!("no network for step {k}")))?;
        let meta = net.meta();
        let scale = meta.normalization();
        let out = net.forward(&to_tensor(current, shape, scale))?.into_vec();
        Ok(match meta.target {
            TargetKind::Bitplane => out,
            // The plane implied by the predicted next image.
            TargetKind::NextImage | TargetKind::Residual => {
                let weight = (1u32 << meta.plane_index) as f32;
                out.iter().zip(current).map(|(&y, &c)| ((y * scale - c) / weight).clamp(0.0, 1.0)).collect()
            }
        })
    }
}

/// Emits the true planes of a known ground truth.
pub struct OraclePredictor<'a> {
    truth: &'a ImageTensor,
    range: RecoveryRange,
}

impl<'a> OraclePredictor<'a> {
    pub fn new(truth: &'a ImageTensor, range: RecoveryRange) -> Self {
        Self { truth, range }
    }
}

impl PlanePredictor for OraclePredictor<'_> {
    fn plane_probability(&self, k: u32, _current: &[f32], shape: Shape) -> Result<Vec<f32>> {
        if shape != self.truth.shape() {
            return Err(invalid("oracle ground truth has a different shape"));
        }
        let plane = extract_bitplane(self.truth, self.range.plane_for_step(k)?)?;
        Ok(plane.bits().iter().map(|&b| f32::from(b)).collect())
    }
}

/// The same probability everywhere.
pub struct ConstantPredictor(pub f32);

impl PlanePredictor for ConstantPredictor {
    fn plane_probability(&self, _k: u32, current: &[f32], _shape: Shape) -> Result<Vec<f32>> {
        Ok(vec![self.0; current.len()])
    }
}

fn check_input(img_q: &ImageTensor, range: RecoveryRange) -> Result<()> {
    if img_q.role() == Role::Residual
        || img_q.effective_bits() != range.source_bits()
        || img_q.container_bits() != range.target_bits()
    {
        return Err(invalid(format!(
            "expected a {}-bit image in a {}-bit container, got {} of {} bits",
            range.source_bits(),
            range.target_bits(),
            img_q.effective_bits(),
            img_q.container_bits()
        )));
    }
    Ok(())
}

/// Runs every step and returns the estimate after each: element `k` has `k`
/// planes restored, element 0 is the input.
///
/// Binarized mode thresholds each probability map and adds it with
/// [`apply_bitplane`]. Raw mode accumulates `2^p * probability` in floating
/// point and rounds only when materializing each stage.
pub fn recover_with_stages(
    img_q: &ImageTensor,
    predictor: &dyn PlanePredictor,
    range: RecoveryRange,
    binarize: bool,
) -> Result<Vec<ImageTensor>> {
    check_input(img_q, range)?;
    let shape = img_q.shape();
    let n = range.target_bits();
    let mut stages = vec![img_q.clone()];
    let mut acc: Vec<f32> = img_q.codes().iter().map(|&c| f32::from(c)).collect();
    for k in 1..=range.steps() {
        let p = range.plane_for_step(k)?;
        let prob = predictor.plane_probability(k, &acc, shape)?;
        if prob.len() != acc.len() {
            return Err(invalid(format!("step {k} predicted {} values for {} elements", prob.len(), acc.len())));
        }
        let next = if binarize {
            let bits = prob.iter().map(|&v| u8::from(v >= BINARIZE_THRESHOLD)).collect();
            let next = apply_bitplane(stages.last().expect("stage 0 exists"), &Bitplane::new(shape, bits, p)?)?;
            acc = next.codes().iter().map(|&c| f32::from(c)).collect();
            next
        } else {
            let weight = (1u32 << p) as f32;
            for (a, &v) in acc.iter_mut().zip(&prob) {
                *a += weight * v.clamp(0.0, 1.0);
            }
            let peak = ((1u32 << n) - 1) as f32;
            let codes = acc.iter().map(|&a| a.round().clamp(0.0, peak) as u16).collect();
            ImageTensor::new(shape, codes, n)?
        };
        stages.push(next);
    }
    Ok(stages)
}

/// `q + R_hat` with `R_hat = round(prediction * (2^N - 1))` clamped to the
/// residual range `[0, 2^(N-q) - 1]`. `prediction` is the normalized residual.
pub fn apply_residual_prediction(img_q: &ImageTensor, prediction: &[f32]) -> Result<ImageTensor> {
    let (q, n) = (img_q.effective_bits(), img_q.container_bits());
    if img_q.role() == Role::Residual || q >= n {
        return Err(invalid("residual prediction needs a quantized image"));
    }
    if prediction.len() != img_q.codes().len() {
        return Err(invalid(format!("{} predictions for {} elements", prediction.len(), img_q.codes().len())));
    }
    let scale = ((1u32 << n) - 1) as f32;
    let max_r = ((1u32 << (n - q)) - 1) as f32;
    let codes = img_q
        .codes()
        .iter()
        .zip(prediction)
        .map(|(&c, &r)| c + (r * scale).round().clamp(0.0, max_r) as u16)
        .collect();
    ImageTensor::new(img_q.shape(), codes, n)
}

pub fn single_shot_recover(img_q: &ImageTensor, net: &BitplaneNetwork<f32>) -> Result<ImageTensor> {
    let meta = net.meta();
    let range = RecoveryRange::new(meta.input_bits, meta.container_bits)?;
    check_input(img_q, range)?;
    let out = net.forward(&stack(std::slice::from_ref(img_q), meta.normalization()))?;
    apply_residual_prediction(img_q, out.data())
}

/// Stage estimates for any bundle. Oracle bundles need `truth`. Single-shot
/// bundles yield two stages: the input and the final estimate.
pub fn recover_stages(img_q: &ImageTensor, bundle: &ModelBundle, truth: Option<&ImageTensor>) -> Result<Vec<ImageTensor>> {
    let range = bundle.range();
    let binarize = bundle.config().binarize_at_inference;
    match bundle.models() {
        BundleModels::Bitplanewise(nets) => recover_with_stages(img_q, &NetworkPredictor::new(nets), range, binarize),
        BundleModels::SingleShot(net) => Ok(vec![img_q.clone(), single_shot_recover(img_q, net)?]),
        BundleModels::Oracle => {
            let truth = truth.ok_or_else(|| invalid("an oracle bundle can only be evaluated against ground truth"))?;
            recover_with_stages(img_q, &OraclePredictor::new(truth, range), range, true)
        }
    }
}

/// Restores a `q`-bit image to `N` bits with a trained bundle.
pub fn recover(img_q: &ImageTensor, bundle: &ModelBundle) -> Result<ImageTensor> {
    let stages = recover_stages(img_q, bundle, None)?;
    Ok(stages.into_iter().last().expect("at least one stage").into_full())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::zero_pad;
    use crate::bitcore::quantize;
    use crate::net::NetworkMeta;
    use crate::pipeline::train::single_shot_meta;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(shape: Shape, bits: u32, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(shape, bits, |_, _, _| rng.random_range(0..(1u32 << bits)) as u16).unwrap()
    }

    #[test]
    fn oracle_reconstructs_exactly() {
        let o = random_image(Shape::new(5, 7, 3), 12, 1);
        for q in 1..12 {
            let range = RecoveryRange::new(q, 12).unwrap();
            let stages = recover_with_stages(&quantize(&o, q).unwrap(), &OraclePredictor::new(&o, range), range, true).unwrap();
            assert_eq!(stages.len() as u32, 13 - q);
            for (k, s) in stages.iter().enumerate() {
                assert_eq!(s, &quantize(&o, q + k as u32).unwrap());
            }
            assert_eq!(stages.last().unwrap().codes(), o.codes());
        }
    }

    #[test]
    fn constant_half_ties_round_up() {
        let o = random_image(Shape::new(4, 4, 1), 8, 2);
        let range = RecoveryRange::new(5, 8).unwrap();
        let iq = quantize(&o, 5).unwrap();
        let out = recover_with_stages(&iq, &ConstantPredictor(0.5), range, true).unwrap();
        let last = out.last().unwrap();
        assert!(last.codes().iter().zip(iq.codes()).all(|(&r, &i)| r == i | 0b111));
        let zero = recover_with_stages(&iq, &ConstantPredictor(0.49), range, true).unwrap();
        assert_eq!(zero.last().unwrap().codes(), zero_pad(&iq).unwrap().codes());
    }

    #[test]
    fn raw_mode_rounds_at_the_end_only() {
        let iq = quantize(&random_image(Shape::new(3, 3, 1), 8, 3), 4).unwrap();
        let range = RecoveryRange::new(4, 8).unwrap();
        let raw = recover_with_stages(&iq, &ConstantPredictor(0.5), range, false).unwrap();
        // 0.5 * (8 + 4 + 2 + 1) = 7.5, rounded once to 8.
        assert!(raw.last().unwrap().codes().iter().zip(iq.codes()).all(|(&r, &i)| r == i + 8));
        let bin = recover_with_stages(&iq, &ConstantPredictor(0.5), range, true).unwrap();
        assert!(bin.last().unwrap().codes().iter().zip(iq.codes()).all(|(&r, &i)| r == i + 15));
    }

    #[test]
    fn never_decreases_and_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let nets: Vec<_> = (1..=3)
            .map(|k| BitplaneNetwork::new(NetworkMeta::bitplane(1, 1, 3 - k, 4 + k, 8), &mut rng).unwrap())
            .collect();
        let range = RecoveryRange::new(5, 8).unwrap();
        let iq = quantize(&random_image(Shape::new(6, 6, 1), 8, 5), 5).unwrap();
        for binarize in [true, false] {
            let stages = recover_with_stages(&iq, &NetworkPredictor::new(&nets), range, binarize).unwrap();
            for pair in stages.windows(2) {
                assert!(pair[0].codes().iter().zip(pair[1].codes()).all(|(a, b)| a <= b && *b < 256));
            }
        }
        assert!(recover_with_stages(&quantize(&iq, 4).unwrap(), &ConstantPredictor(0.0), range, true).is_err());
    }

    #[test]
    fn zero_weight_single_shot_is_zero_pad() {
        let range = RecoveryRange::new(4, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = BitplaneNetwork::new(single_shot_meta(range, 1, 3), &mut rng).unwrap();
        assert_eq!(net.meta().depth, 4);
        net.zero_weights();
        let iq = quantize(&random_image(Shape::new(5, 5, 3), 8, 7), 4).unwrap();
        assert_eq!(single_shot_recover(&iq, &net).unwrap(), zero_pad(&iq).unwrap());
    }

    #[test]
    fn true_residual_prediction_reconstructs() {
        for (q, n) in [(4, 8), (3, 16), (15, 16)] {
            let o = random_image(Shape::new(6, 4, 3), n, u64::from(q));
            let iq = quantize(&o, q).unwrap();
            let r = crate::bitcore::residual(&o, &iq).unwrap();
            let scale = ((1u32 << n) - 1) as f32;
            let pred: Vec<f32> = r.codes().iter().map(|&c| f32::from(c) / scale).collect();
            assert_eq!(apply_residual_prediction(&iq, &pred).unwrap(), o);
        }
    }
}
