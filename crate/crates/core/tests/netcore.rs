use bitrec::bitcore::{ImageTensor, RecoveryRange, Shape};
use bitrec::net::gradcheck::{grad_check, standard_suite, Component};
use bitrec::net::model_io::{load_model, save_model};
use bitrec::net::{BitplaneNetwork, NetworkMeta, Tensor};
use bitrec::pipeline::{train_all, train_bitplane_network, TrainConfig};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn full_network_gradients_match_finite_differences() {
    let report = grad_check(Component::Network, [2, 3, 8, 8], 1e-4).unwrap();
    println!("{report}");
    assert!(report.passed, "{report}");
    assert!(report.groups.len() > 10);
}

#[test]
fn batch_norm_gradients_pass_at_stated_tolerance() {
    let report = grad_check(Component::BatchNorm, [4, 3, 6, 5], 1e-5).unwrap();
    assert!(report.passed, "{report}");
}

#[test]
fn standard_suite_passes() {
    let reports = standard_suite().unwrap();
    assert_eq!(reports.len(), 7);
    for r in reports {
        assert!(r.passed, "{r}");
    }
}

#[test]
fn loaded_model_forward_is_bitwise_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = BitplaneNetwork::<f32>::new(NetworkMeta::bitplane(3, 3, 4, 3, 8), &mut rng).unwrap();
    let copy = load_model(&save_model(&net)).unwrap();
    let x = Tensor::from_vec([2, 3, 9, 11], (0..594).map(|_| rng.random::<f32>()).collect()).unwrap();
    let (a, b) = (net.forward(&x).unwrap(), copy.forward(&x).unwrap());
    assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
}

fn gradient_images(count: usize, seed: u64) -> Vec<ImageTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let (a, b, c) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(0..64));
            ImageTensor::from_fn(Shape::new(16, 16, 1), 8, |_, y, x| ((a * x + b * y + c) % 256) as u16).unwrap()
        })
        .collect()
}

fn small_config() -> TrainConfig {
    TrainConfig { patch_size: 8, batch_size: 8, epochs: 4, depth: 1, seed: 11, lr: 3e-3, ..TrainConfig::default() }
}

#[test]
fn training_reduces_bce_on_ramps() {
    let range = RecoveryRange::new(4, 8).unwrap();
    let corpus = gradient_images(16, 1);
    let cfg = TrainConfig { epochs: 5, ..small_config() };
    let (_, log) = train_bitplane_network(&corpus, 1, range, &cfg).unwrap();
    let means = log.epoch_means();
    println!("{means:?}");
    assert!(log.records.len() >= 40);
    assert!(means.last().unwrap() < means.first().unwrap());
}

#[test]
fn constant_corpus_learns_an_empty_plane() {
    let range = RecoveryRange::new(4, 8).unwrap();
    let corpus: Vec<ImageTensor> =
        (0..4).map(|_| ImageTensor::new(Shape::new(16, 16, 1), vec![0b1010_0000; 256], 8).unwrap()).collect();
    let cfg = TrainConfig { epochs: 40, augment: false, lr: 1e-2, lr_drop_epoch: 30, ..small_config() };
    let (net, log) = train_bitplane_network(&corpus, 1, range, &cfg).unwrap();
    let last = *log.epoch_means().last().unwrap();
    assert!(last < 0.01, "final BCE {last}");
    let x = Tensor::filled([1, 1, 8, 8], 160.0 / 255.0);
    assert!(net.forward(&x).unwrap().data().iter().all(|&p| p < 0.05));
}

#[test]
fn training_is_deterministic_and_networks_independent() {
    let corpus = gradient_images(8, 2);
    let cfg = TrainConfig { epochs: 2, ..small_config() };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (a, _) = pool.install(|| train_all(&corpus, RecoveryRange::new(5, 8).unwrap(), &cfg)).unwrap();
    let (b, _) = pool.install(|| train_all(&corpus, RecoveryRange::new(5, 8).unwrap(), &cfg)).unwrap();
    assert_eq!(a.model_files(), b.model_files());
    // Multi-threaded training reduces in a fixed order and gives the same bytes.
    let (c, _) = train_all(&corpus, RecoveryRange::new(5, 8).unwrap(), &cfg).unwrap();
    assert_eq!(a.model_files(), c.model_files());

    // Retraining one plane with other settings leaves the other files untouched.
    let range = RecoveryRange::new(5, 8).unwrap();
    let other = TrainConfig { epochs: 1, lr: 5e-3, ..cfg.clone() };
    let (retrained, _) = train_bitplane_network(&corpus, 2, range, &other).unwrap();
    let mut files = a.model_files();
    files[1].1 = save_model(&retrained);
    let original = a.model_files();
    assert_eq!(files[0], original[0]);
    assert_eq!(files[2], original[2]);
    assert_ne!(files[1], original[1]);
}
