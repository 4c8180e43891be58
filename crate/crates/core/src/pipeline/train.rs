//! Mini-batch training of the per-plane networks and the single-shot network.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::bundle::{BundleModels, ModelBundle};
use super::config::{LossKind, TrainConfig, TrainMode, TrainTarget};
use super::pairs::{extract_patches, make_training_pair, Augmentation, PairTarget};
use crate::bitcore::{quantize, residual, ImageTensor, RecoveryRange, Role};
use crate::error::{invalid, Result};
use crate::net::loss::{bce_loss, mse_loss};
use crate::net::{AdamConfig, AdamState, BitplaneNetwork, Head, NetworkMeta, TargetKind, Tensor};

/// One optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogRecord {
    pub epoch: u32,
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
}

impl TrainingLog {
    /// Mean loss of each epoch, in order.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.records {
            let idx = (r.epoch - 1) as usize;
            if out.len() <= idx {
                out.resize(idx + 1, (0.0, 0));
            }
            out[idx].0 += r.loss;
            out[idx].1 += 1;
        }
        out.into_iter().map(|(s, n)| s / n as f64).collect()
    }

    /// `epoch,step,lr,loss` with a header row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).expect("in-memory CSV write");
        }
        String::from_utf8(w.into_inner().expect("in-memory CSV flush")).expect("CSV is UTF-8")
    }
}

/// Seed of the generator that drives one network's initialization, shuffling
/// and augmentation. Distinct planes get unrelated streams.
pub fn network_seed(seed: u64, plane_index: u32, single_shot: bool) -> u64 {
    // SplitMix64 finalizer.
    let mut z = seed ^ (u64::from(plane_index) + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ u64::from(single_shot) << 63;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_corpus(corpus: &[ImageTensor], range: RecoveryRange) -> Result<usize> {
    let first = corpus.first().ok_or_else(|| invalid("training corpus is empty"))?;
    for (i, img) in corpus.iter().enumerate() {
        if img.role() != Role::Full || img.container_bits() != range.target_bits() {
            return Err(invalid(format!(
                "corpus image {i} is not a full {}-bit image",
                range.target_bits()
            )));
        }
        if img.channels() != first.channels() {
            return Err(invalid(format!("corpus image {i} has a different channel count")));
        }
    }
    Ok(first.channels())
}

fn patches_of(corpus: &[ImageTensor], config: &TrainConfig) -> Result<Vec<ImageTensor>> {
    let patches: Vec<ImageTensor> = corpus.iter().flat_map(|img| extract_patches(img, config.patch_size)).collect();
    if patches.len() < config.batch_size {
        return Err(invalid(format!(
            "corpus yields {} patches of {}x{}, fewer than one batch of {}",
            patches.len(),
            config.patch_size,
            config.patch_size,
            config.batch_size
        )));
    }
    Ok(patches)
}

/// Stacks codes into an `[n, c, h, w]` tensor scaled by `1 / scale`.
pub(crate) fn stack(images: &[ImageTensor], scale: f32) -> Tensor<f32> {
    let s = images[0].shape();
    let mut data = Vec::with_capacity(images.len() * s.len());
    for img in images {
        data.extend(img.codes().iter().map(|&c| f32::from(c) / scale));
    }
    Tensor::from_vec([images.len(), s.channels, s.height, s.width], data).expect("uniform patch shapes")
}

/// Builds `(input, target)` tensors for one batch of augmented patches.
type BatchFn<'a> = dyn Fn(&[ImageTensor]) -> Result<(Tensor<f32>, Tensor<f32>)> + Sync + 'a;

fn fit(
    net: &mut BitplaneNetwork<f32>,
    patches: &[ImageTensor],
    config: &TrainConfig,
    loss: LossKind,
    rng: &mut ChaCha8Rng,
    make_batch: &BatchFn<'_>,
) -> Result<TrainingLog> {
    let adam = AdamConfig { lr: config.lr, beta1: config.beta1, beta2: config.beta2, epsilon: config.adam_epsilon };
    let mut state = AdamState::<f32>::new(adam, &net.parameter_sizes());
    let mut order: Vec<usize> = (0..patches.len()).collect();
    let mut log = TrainingLog::default();
    let mut step = 0u64;
    for epoch in 1..=config.epochs {
        let lr = config.lr_for_epoch(epoch);
        order.shuffle(rng);
        for chunk in order.chunks_exact(config.batch_size) {
            let augs: Vec<Augmentation> = chunk
                .iter()
                .map(|_| if config.augment { Augmentation::random(rng) } else { Augmentation::default() })
                .collect();
            let batch: Vec<ImageTensor> = chunk
                .par_iter()
                .zip(&augs)
                .map(|(&i, aug)| aug.apply(&patches[i]))
                .collect::<Result<_>>()?;
            let (x, t) = make_batch(&batch)?;
            let (out, cache) = net.forward_train(&x)?;
            let (value, grad) = match loss {
                LossKind::Bce => bce_loss(&out, &t)?,
                LossKind::Mse => mse_loss(&out, &t)?,
            };
            let grads = net.backward(&cache, &grad)?;
            let grad_refs: Vec<&[f32]> = grads.params.iter().map(Vec::as_slice).collect();
            state.step(&mut net.parameters_mut(), &grad_refs, lr)?;
            step += 1;
            log.records.push(LogRecord { epoch, step, lr, loss: f64::from(value) });
        }
        if let Some(mean) = log.epoch_means().last() {
            log::info!(
                "plane {} epoch {epoch}/{} lr {lr:.1e} loss {mean:.6}",
                net.meta().plane_index,
                config.epochs
            );
        }
    }
    Ok(log)
}

/// Trains network `k` of `range`: input `quantize(O, q + k - 1)`, target plane
/// `N - (q + k)` (or the next image), on patches of the ground-truth corpus.
pub fn train_bitplane_network(
    corpus: &[ImageTensor],
    k: u32,
    range: RecoveryRange,
    config: &TrainConfig,
) -> Result<(BitplaneNetwork<f32>, TrainingLog)> {
    config.validate()?;
    let channels = check_corpus(corpus, range)?;
    let plane = range.plane_for_step(k)?;
    let input_bits = range.input_bits_for_step(k)?;
    let patches = patches_of(corpus, config)?;
    let mut meta = NetworkMeta::bitplane(config.depth, channels as u32, plane, input_bits, range.target_bits());
    if config.target == TrainTarget::NextImage {
        meta.target = TargetKind::NextImage;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(network_seed(config.seed, plane, false));
    let mut net = BitplaneNetwork::new(meta, &mut rng)?;
    let scale = meta.normalization();
    let target = config.target;
    let make_batch = move |batch: &[ImageTensor]| -> Result<(Tensor<f32>, Tensor<f32>)> {
        let pairs = batch
            .par_iter()
            .map(|p| make_training_pair(p, k, range, target))
            .collect::<Result<Vec<_>>>()?;
        let inputs: Vec<ImageTensor> = pairs.iter().map(|p| p.input.clone()).collect();
        let targets: Vec<ImageTensor> = pairs
            .into_iter()
            .map(|p| match p.target {
                PairTarget::Plane(b) => ImageTensor::new(b.shape(), b.bits().iter().map(|&v| u16::from(v)).collect(), 2)
                    .expect("binary codes fit"),
                PairTarget::Image(img) => img,
            })
            .collect();
        let target_scale = if target == TrainTarget::Bitplane { 1.0 } else { scale };
        Ok((stack(&inputs, scale), stack(&targets, target_scale)))
    };
    let log = fit(&mut net, &patches, config, config.loss, &mut rng, &make_batch)?;
    Ok((net, log))
}

/// Trains the `N - q` networks independently, most significant plane first.
/// Every network sees ground-truth quantized inputs, never predictions.
pub fn train_all(
    corpus: &[ImageTensor],
    range: RecoveryRange,
    config: &TrainConfig,
) -> Result<(ModelBundle, Vec<TrainingLog>)> {
    if config.mode == TrainMode::SingleShot {
        let (net, log) = train_single_shot(corpus, range, config)?;
        let bundle = ModelBundle::new(range, config.clone(), BundleModels::SingleShot(net))?;
        return Ok((bundle, vec![log]));
    }
    let mut nets = Vec::with_capacity(range.steps() as usize);
    let mut logs = Vec::with_capacity(range.steps() as usize);
    for k in 1..=range.steps() {
        let (net, log) = train_bitplane_network(corpus, k, range, config)?;
        nets.push(net);
        logs.push(log);
    }
    Ok((ModelBundle::new(range, config.clone(), BundleModels::Bitplanewise(nets))?, logs))
}

/// Metadata of the single-shot network: `(N - q) * D` blocks, linear head,
/// normalized-residual target.
pub fn single_shot_meta(range: RecoveryRange, depth: u32, channels: u32) -> NetworkMeta {
    let mut meta = NetworkMeta::bitplane(
        range.steps() * depth,
        channels,
        range.plane_for_step(1).expect("range has a first step"),
        range.source_bits(),
        range.target_bits(),
    );
    meta.head = Head::Linear;
    meta.target = TargetKind::Residual;
    meta
}

/// One network regressing `R / (2^N - 1)` from `quantize(O, q)` with MSE.
pub fn train_single_shot(
    corpus: &[ImageTensor],
    range: RecoveryRange,
    config: &TrainConfig,
) -> Result<(BitplaneNetwork<f32>, TrainingLog)> {
    config.validate()?;
    let channels = check_corpus(corpus, range)?;
    let patches = patches_of(corpus, config)?;
    let meta = single_shot_meta(range, config.depth, channels as u32);
    let mut rng = ChaCha8Rng::seed_from_u64(network_seed(config.seed, meta.plane_index, true));
    let mut net = BitplaneNetwork::new(meta, &mut rng)?;
    let scale = meta.normalization();
    let q = range.source_bits();
    let make_batch = move |batch: &[ImageTensor]| -> Result<(Tensor<f32>, Tensor<f32>)> {
        let pairs = batch
            .par_iter()
            .map(|o| {
                let iq = quantize(o, q)?;
                let r = residual(o, &iq)?;
                Ok((iq, r))
            })
            .collect::<Result<Vec<_>>>()?;
        let (inputs, targets): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        Ok((stack(&inputs, scale), stack(&targets, scale)))
    };
    let log = fit(&mut net, &patches, config, LossKind::Mse, &mut rng, &make_batch)?;
    Ok((net, log))
}
