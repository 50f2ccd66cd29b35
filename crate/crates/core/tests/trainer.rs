use std::sync::Arc;

use filtergraft::archzoo::{build_model, ArchSpec, Model};
use filtergraft::datahub::{load_dataset, make_loaders, Augment, ChannelStats, DatasetHandle, Split};
use filtergraft::scalar::Dtype;
use filtergraft::surgery::{extract_depthwise, transplant, Depth, FreezeMask, Provenance, TransferPlan};
use filtergraft::trainer::*;
use filtergraft::Error;
use rand::{Rng, SeedableRng};

fn key(tag: &str, spec: &ArchSpec, data: &DatasetHandle, config: &TrainConfig) -> RunKey {
    RunKey {
        tag: tag.into(),
        role: "test".into(),
        arch: spec.clone(),
        model_seed: 0,
        dataset: data.name.clone(),
        dataset_digest: data.content_digest.clone(),
        config: config.clone(),
        plan: None,
        source: None,
        replicate: 0,
        dtype: Dtype::F32,
    }
}

fn ctx(k: RunKey) -> RunContext {
    RunContext {
        key: k,
        plan_summary: None,
        checkpoint_dir: None,
    }
}

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch: 64,
        warmup_epochs: 0,
        ..TrainConfig::default()
    }
}

/// 500 training images drawn from synth10.
fn synth_small() -> DatasetHandle {
    let dir = tempfile::tempdir().unwrap();
    let full = load_dataset("synth10", dir.path()).unwrap();
    let take = |s: &Split, n: usize| Split {
        images: s.images[..n * s.image_len()].to_vec(),
        labels: s.labels[..n].to_vec(),
        ..s.clone()
    };
    DatasetHandle {
        train: Arc::new(take(&full.train, 500)),
        test: Arc::new(take(&full.test, 200)),
        ..full
    }
}

fn noise_dataset(n: usize, seed: u64) -> DatasetHandle {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let split = Split {
        images: (0..n * 16 * 16 * 3).map(|_| rng.gen()).collect(),
        labels: (0..n as u16).map(|i| i % 10).collect(),
        height: 16,
        width: 16,
        channels: 3,
    };
    DatasetHandle {
        name: "noise".into(),
        class_names: (0..10).map(|i| format!("c{i}")).collect(),
        stats: ChannelStats::compute(&split),
        train: Arc::new(split.clone()),
        test: Arc::new(split),
        cache_hit: false,
        content_digest: format!("noise-{seed}"),
    }
}

#[test]
fn zero_epochs_rejected() {
    let data = noise_dataset(10, 0);
    let spec = ArchSpec::micro_convnext();
    let mut m: Model<f32> = build_model(&spec, 0).unwrap();
    let c = small_config(0);
    let err = train(&mut m, &data, &c, &FreezeMask::empty(), &ctx(key("t", &spec, &data, &c))).unwrap_err();
    assert!(matches!(err, Error::InvalidSpec { ref field, .. } if field == "epochs"));
}

#[test]
fn untrained_accuracy_is_near_chance_and_deterministic() {
    let data = synth_small();
    let m: Model<f32> = build_model(&ArchSpec::micro_convnext(), 3).unwrap();
    let a = evaluate_dataset(&m, &data, 50).unwrap();
    assert!((0.05..=0.20).contains(&a), "{a}");
    assert_eq!(a, evaluate_dataset(&m, &data, 64).unwrap());
}

#[test]
fn memorizes_ten_images() {
    let data = noise_dataset(10, 1);
    let spec = ArchSpec::micro_convnext();
    let mut m: Model<f32> = build_model(&spec, 0).unwrap();
    let c = TrainConfig {
        epochs: 80,
        batch: 10,
        warmup_epochs: 0,
        weight_decay: 0.0,
        label_smoothing: 0.0,
        augment: Augment::None,
        ..TrainConfig::default()
    };
    let r = train(&mut m, &data, &c, &FreezeMask::empty(), &ctx(key("t", &spec, &data, &c))).unwrap();
    assert_eq!(r.final_acc, 1.0);
    assert!(r.per_epoch.last().unwrap().train_loss < 0.05);
}

#[test]
fn selffer_freeze_holds_and_run_is_deterministic() {
    let data = synth_small();
    let spec = ArchSpec::micro_gated();
    let base: Model<f32> = build_model(&spec, 5).unwrap();
    let bank = extract_depthwise(&base, Provenance::new("micro_gated", "synth10", "base")).unwrap();
    let c = small_config(1);
    let run = || {
        let t = transplant(build_model(&spec, 6).unwrap(), &bank, &TransferPlan::layerwise(Depth::All)).unwrap();
        let mut m = t.model;
        let r = train(&mut m, &data, &c, &t.mask, &ctx(key("t", &spec, &data, &c))).unwrap();
        (r, m)
    };
    let (r1, m1) = run();
    assert!(r1.frozen_verified);
    assert_eq!(r1.frozen_params, 24);
    assert!(r1.is_completed());
    r1.validate().unwrap();
    for e in &bank.entries {
        let name = format!("blocks.{:02}.dw.weight", e.layer_id);
        assert_eq!(m1.params.get(&name).unwrap(), &e.kernels);
    }
    let (r2, m2) = run();
    assert_eq!(r1.final_acc, r2.final_acc);
    assert_eq!(m1.checksum(), m2.checksum());
    assert_eq!(r1.config_digest, r2.config_digest);
}

#[test]
fn frozen_layers_still_pass_gradients() {
    let data = synth_small();
    let spec = ArchSpec::micro_convnext();
    let mut m: Model<f64> = build_model(&spec, 1).unwrap();
    let mask = FreezeMask::capture(&m, ["blocks.05.dw.weight".to_string(), "blocks.05.dw.bias".to_string()]).unwrap();
    let c = TrainConfig {
        batch: 32,
        ..small_config(1)
    };
    let loaders = make_loaders(&data, 32, Augment::None, 0).unwrap();
    let batch = loaders.train.epoch::<f64>(0).next().unwrap();
    let (logits, tape) = m.forward_train(&batch.images);
    let (_, dlogits) = filtergraft::backend::cross_entropy(&logits, &batch.labels, 10, 0.0);
    let grads = m.backward(&tape, &dlogits);
    for name in ["stem.conv.weight", "blocks.02.dw.weight", "blocks.04.pw1.weight"] {
        let s = m.params.slot(name).unwrap();
        assert!(grads[s].iter().any(|g| g.abs() > 0.0), "{name} got no gradient");
    }
    let before = m.params.get("stem.conv.weight").unwrap().clone();
    let r = train(&mut m, &data, &c, &mask, &ctx(key("t", &spec, &data, &c))).unwrap();
    assert!(r.frozen_verified);
    assert_ne!(m.params.get("stem.conv.weight").unwrap(), &before);
}

#[test]
fn divergence_is_a_failed_record() {
    let data = synth_small();
    let spec = ArchSpec::micro_convnext();
    let mut m: Model<f32> = build_model(&spec, 0).unwrap();
    let c = TrainConfig {
        lr: 1e30,
        weight_decay: 0.0,
        ..small_config(2)
    };
    let r = train(&mut m, &data, &c, &FreezeMask::empty(), &ctx(key("t", &spec, &data, &c))).unwrap();
    assert_eq!(r.status, RunStatus::Failed);
    assert!(r.failure.as_deref().unwrap().contains("non-finite"));
}

#[test]
fn corrupted_frozen_tensor_is_a_mask_violation() {
    let data = noise_dataset(10, 2);
    let spec = ArchSpec::micro_convnext();
    let m: Model<f32> = build_model(&spec, 0).unwrap();
    let bank = extract_depthwise(&m, Provenance::new("a", "b", "c")).unwrap();
    let mut t = transplant(m, &bank, &TransferPlan::layerwise(Depth::N(2))).unwrap();
    t.model.params.get_mut("blocks.01.dw.bias").unwrap().data[0] = 9.0;
    let c = small_config(1);
    let err = train(&mut t.model, &data, &c, &t.mask, &ctx(key("t", &spec, &data, &c))).unwrap_err();
    assert!(matches!(err, Error::MaskViolation(name) if name == "blocks.01.dw.bias"));
}

#[test]
fn head_is_rebuilt_for_class_count_and_checkpoint_roundtrips() {
    let mut data = noise_dataset(12, 3);
    data.class_names.truncate(4);
    let split = Split {
        labels: data.train.labels.iter().map(|l| l % 4).collect(),
        ..(*data.train).clone()
    };
    data.train = Arc::new(split.clone());
    data.test = Arc::new(split);
    let spec = ArchSpec::micro_gated();
    let mut m: Model<f32> = build_model(&spec, 0).unwrap();
    let c = small_config(1);
    let dir = tempfile::tempdir().unwrap();
    let context = RunContext {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..ctx(key("t", &spec, &data, &c))
    };
    let r = train(&mut m, &data, &c, &FreezeMask::empty(), &context).unwrap();
    assert_eq!(m.spec.num_classes, 4);
    assert_eq!(m.params.get("head.fc.weight").unwrap().shape, vec![4, 48]);
    let (back, run_id) = load_checkpoint::<f32>(&checkpoint_path(dir.path(), &r.run_id)).unwrap();
    assert_eq!(run_id, r.run_id);
    assert_eq!(back.checksum(), m.checksum());
    assert_eq!(back.checksum(), r.param_checksum);
    let stored: RunRecord =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(&r.run_id).join("record.json")).unwrap()).unwrap();
    assert_eq!(stored, r);
}

#[test]
fn input_shape_must_match() {
    let data = noise_dataset(10, 0);
    let spec = ArchSpec::mini_convnext();
    let mut m: Model<f32> = build_model(&spec, 0).unwrap();
    let c = small_config(1);
    assert!(matches!(
        train(&mut m, &data, &c, &FreezeMask::empty(), &ctx(key("t", &spec, &data, &c))),
        Err(Error::ShapeMismatch(_))
    ));
}
