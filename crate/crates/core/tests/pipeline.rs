use bitrec::baselines::Baseline;
use bitrec::bitcore::{quantize, ImageTensor, RecoveryRange};
use bitrec::io::generate_synthetic;
use bitrec::pipeline::recover::{recover_with_stages, OraclePredictor};
use bitrec::pipeline::{
    evaluate, recover, train_all, BundleModels, EvalImage, ModelBundle, TrainConfig, TrainMode, TrainTarget,
};

fn config() -> TrainConfig {
    TrainConfig { patch_size: 8, batch_size: 8, epochs: 1, depth: 1, ..TrainConfig::default() }
}

fn corpus() -> Vec<ImageTensor> {
    generate_synthetic(4, 16, 8, 3).unwrap()
}

#[test]
fn bundle_structure_follows_range() {
    let (one, logs) = train_all(&corpus(), RecoveryRange::new(7, 8).unwrap(), &config()).unwrap();
    assert_eq!(logs.len(), 1);
    let BundleModels::Bitplanewise(nets) = one.models() else { panic!("expected bitplane-wise bundle") };
    assert_eq!(nets.len(), 1);

    let (four, _) = train_all(&corpus(), RecoveryRange::new(4, 8).unwrap(), &config()).unwrap();
    let BundleModels::Bitplanewise(nets) = four.models() else { panic!("expected bitplane-wise bundle") };
    assert_eq!(nets.iter().map(|n| n.meta().plane_index).collect::<Vec<_>>(), vec![3, 2, 1, 0]);
    for (k, net) in nets.iter().enumerate() {
        assert_eq!(net.meta().input_bits, 4 + k as u32);
        assert_eq!(net.meta().container_bits, 8);
    }
}

#[test]
fn trained_bundle_round_trips_and_recovers() {
    let range = RecoveryRange::new(5, 8).unwrap();
    let (bundle, _) = train_all(&corpus(), range, &config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    bundle.save(dir.path()).unwrap();
    let loaded = ModelBundle::load(dir.path()).unwrap();
    assert_eq!(loaded.model_files(), bundle.model_files());

    let o = &generate_synthetic(1, 20, 8, 99).unwrap()[0];
    let iq = quantize(o, 5).unwrap();
    let out = recover(&iq, &loaded).unwrap();
    assert_eq!(out.effective_bits(), 8);
    assert!(out.codes().iter().zip(iq.codes()).all(|(r, i)| r >= i && *r < 256));
    assert_eq!(quantize(&out, 5).unwrap().codes(), iq.codes());
    assert!(recover(&quantize(o, 4).unwrap(), &loaded).is_err());
}

#[test]
fn ablation_and_single_shot_modes_train_and_evaluate() {
    let range = RecoveryRange::new(6, 8).unwrap();
    let held_out: Vec<EvalImage> = generate_synthetic(2, 16, 8, 7)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, image)| EvalImage { id: format!("h{i}"), image })
        .collect();
    let modes = [
        TrainConfig { loss: bitrec::pipeline::LossKind::Mse, ..config() },
        TrainConfig { loss: bitrec::pipeline::LossKind::Mse, target: TrainTarget::NextImage, ..config() },
        TrainConfig { binarize_at_inference: false, ..config() },
        TrainConfig { mode: TrainMode::SingleShot, ..config() },
    ];
    for cfg in modes {
        let (bundle, _) = train_all(&corpus(), range, &cfg).unwrap();
        let report = evaluate(&held_out, &bundle, &Baseline::ALL).unwrap();
        assert_eq!(report.images.len(), 2);
        assert_eq!(report.methods.len(), 4);
        let dir = tempfile::tempdir().unwrap();
        bundle.save(dir.path()).unwrap();
        let again = evaluate(&held_out, &ModelBundle::load(dir.path()).unwrap(), &Baseline::ALL).unwrap();
        assert_eq!(report.to_json(), again.to_json(), "{}", bundle.inference_mode());
    }
}

#[test]
fn single_shot_depth_scales_with_missing_planes() {
    let cfg = TrainConfig { mode: TrainMode::SingleShot, depth: 4, ..config() };
    let (bundle, _) = train_all(&corpus(), RecoveryRange::new(4, 8).unwrap(), &cfg).unwrap();
    let BundleModels::SingleShot(net) = bundle.models() else { panic!("expected single-shot bundle") };
    assert_eq!(net.blocks.len(), 16);
}

#[test]
fn oracle_planes_reconstruct_sixteen_bit_images() {
    for (i, o) in generate_synthetic(3, 12, 16, 5).unwrap().iter().enumerate() {
        for q in 3..=15 {
            let range = RecoveryRange::new(q, 16).unwrap();
            let stages = recover_with_stages(&quantize(o, q).unwrap(), &OraclePredictor::new(o, range), range, true).unwrap();
            assert_eq!(stages.last().unwrap().codes(), o.codes(), "image {i} q {q}");
        }
    }
}
