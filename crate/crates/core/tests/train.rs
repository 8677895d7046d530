use ddx_core::model::{trainable_param_count, ModelConfig, ModelState};
use ddx_core::numerics::Tensor;
use ddx_core::records::{generate_dataset, PathologyCatalog, Vocabulary};
use ddx_core::train::{
    decode_checkpoint, encode_checkpoint, encode_records, load_checkpoint, save_checkpoint, train, train_with,
    write_history_csv, Checkpoint, CheckpointError, Example, Task, TrainConfig, TrainError,
};

fn setup(n: usize, seed: u64) -> (ModelState, Vec<Example>) {
    let catalog = PathologyCatalog::builtin();
    let vocab = Vocabulary::from_catalog(&catalog);
    let records = generate_dataset(&catalog, n, seed).unwrap();
    let config = ModelConfig::new(vocab.len());
    let examples = encode_records(&records, &vocab, config.max_seq_len).unwrap();
    (ModelState::new(config, seed).unwrap(), examples)
}

fn frozen_snapshot(model: &ModelState) -> Vec<(String, Tensor)> {
    model.params().iter().filter(|(_, p)| !p.trainable).map(|(_, p)| (p.name.clone(), p.tensor.clone())).collect()
}

#[test]
fn default_ratio_is_under_five_percent_for_the_shipped_vocabulary() {
    let vocab = Vocabulary::from_catalog(&PathologyCatalog::builtin());
    let config = ModelConfig::new(vocab.len());
    let (trainable, total) = trainable_param_count(&config).unwrap();
    assert_eq!(ModelState::new(config, 0).unwrap().param_counts(), (trainable, total));
    assert!((trainable as f64) / (total as f64) < 0.05);
}

#[test]
fn frozen_tensors_survive_100_steps_bit_for_bit() {
    for task in [Task::Pathology, Task::Ddx] {
        let (model, examples) = setup(200, 1);
        let before = frozen_snapshot(&model);
        let trainable_before: Vec<Tensor> =
            model.params().iter().filter(|(_, p)| p.trainable).map(|(_, p)| p.tensor.clone()).collect();
        let config = TrainConfig { epochs: 1, ..TrainConfig::new(task) };
        let out = train(model, &examples, &config).unwrap();
        assert_eq!(out.checkpoint.history.len(), 100);
        let after = &out.checkpoint.model;
        assert_eq!(frozen_snapshot(after), before);
        let changed = after
            .params()
            .iter()
            .filter(|(_, p)| p.trainable)
            .zip(&trainable_before)
            .filter(|((_, p), t)| p.tensor != **t)
            .count();
        assert!(changed > 0);
    }
}

#[test]
fn untouched_model_matches_fresh_model() {
    let (model, examples) = setup(10, 2);
    let fresh = model.clone();
    let bytes = encode_checkpoint(&Checkpoint { model, task: Task::Pathology, history: vec![] }).unwrap();
    let restored = decode_checkpoint(&bytes).unwrap().model;
    for ex in &examples {
        assert_eq!(restored.forward(&ex.tokens, false).unwrap(), fresh.forward(&ex.tokens, false).unwrap());
    }
}

#[test]
fn training_is_deterministic_and_epoch_loss_falls() {
    let (model, examples) = setup(200, 3);
    let config = TrainConfig { epochs: 3, seed: 9, ..TrainConfig::new(Task::Pathology) };
    let a = train(model.clone(), &examples, &config).unwrap();
    let b = train(model, &examples, &config).unwrap();
    assert_eq!(a.checkpoint.history, b.checkpoint.history);
    assert_eq!(a.checkpoint.model, b.checkpoint.model);
    assert!(a.epoch_losses.windows(2).all(|w| w[1] < w[0]), "{:?}", a.epoch_losses);
}

#[test]
fn ddx_epoch_loss_falls() {
    let (model, examples) = setup(200, 4);
    let config = TrainConfig { epochs: 3, ..TrainConfig::new(Task::Ddx) };
    let out = train(model, &examples, &config).unwrap();
    assert!(out.epoch_losses.windows(2).all(|w| w[1] < w[0]), "{:?}", out.epoch_losses);
}

#[test]
fn progress_callback_fires_every_n_steps() {
    let (model, examples) = setup(20, 5);
    let config = TrainConfig { eval_every: 3, ..TrainConfig::new(Task::Pathology) };
    let mut steps = Vec::new();
    train_with(model, &examples, &config, |p, _| steps.push(p.step)).unwrap();
    assert_eq!(steps, [3, 6, 9]);
}

#[test]
fn invalid_inputs_are_rejected() {
    let (model, examples) = setup(4, 6);
    assert!(matches!(train(model.clone(), &[], &TrainConfig::new(Task::Ddx)), Err(TrainError::Validation(_))));
    for bad in [
        TrainConfig { epochs: 0, ..TrainConfig::new(Task::Ddx) },
        TrainConfig { batch_size: 0, ..TrainConfig::new(Task::Ddx) },
        TrainConfig { learning_rate: 0.0, ..TrainConfig::new(Task::Ddx) },
        TrainConfig { learning_rate: f32::NAN, ..TrainConfig::new(Task::Ddx) },
    ] {
        assert!(matches!(train(model.clone(), &examples, &bad), Err(TrainError::Validation(_))));
    }
    let mut broken = examples.clone();
    broken[0].tokens[0] = 5;
    assert!(matches!(train(model, &broken, &TrainConfig::new(Task::Ddx)), Err(TrainError::Model(_))));
}

#[test]
fn exploding_updates_abort_with_the_step_index() {
    let (model, examples) = setup(40, 7);
    let config = TrainConfig { learning_rate: 1e30, epochs: 5, ..TrainConfig::new(Task::Pathology) };
    match train(model, &examples, &config) {
        Err(TrainError::NonFinite { step }) => assert!(step >= 2),
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}

fn trained_checkpoint() -> (Checkpoint, Vec<Example>) {
    let (model, examples) = setup(30, 8);
    let out = train(model, &examples, &TrainConfig::new(Task::Ddx)).unwrap();
    (out.checkpoint, examples)
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (ckpt, examples) = trained_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &ckpt).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, ckpt);
    for ex in examples.iter().take(10) {
        let a = ckpt.model.forward(&ex.tokens, true).unwrap();
        let b = loaded.model.forward(&ex.tokens, true).unwrap();
        assert_eq!(a, b);
    }
    assert_eq!(encode_checkpoint(&loaded).unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let (ckpt, _) = trained_checkpoint();
    let bytes = encode_checkpoint(&ckpt).unwrap();

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad_magic), Err(CheckpointError::Format(_))));

    let mut v2 = bytes.clone();
    v2[4..8].copy_from_slice(&2u32.to_le_bytes());
    match decode_checkpoint(&v2) {
        Err(CheckpointError::Format(msg)) => assert!(msg.contains("upgrade"), "{msg}"),
        other => panic!("{other:?}"),
    }

    for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(CheckpointError::Io(_))), "cut {cut}");
    }

    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(decode_checkpoint(&trailing), Err(CheckpointError::Format(_))));
}

#[test]
fn shape_disagreement_is_an_integrity_error() {
    let (ckpt, _) = trained_checkpoint();
    let bytes = encode_checkpoint(&ckpt).unwrap();
    let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let meta: serde_json::Value = serde_json::from_slice(&bytes[16..16 + meta_len]).unwrap();

    // Claim a larger vocabulary than the stored embedding table holds.
    let mut bigger = meta.clone();
    bigger["config"]["vocab_size"] = serde_json::json!(ckpt.model.config().vocab_size + 1);
    let new_meta = serde_json::to_vec(&bigger).unwrap();
    let mut forged = bytes[..8].to_vec();
    forged.extend_from_slice(&(new_meta.len() as u64).to_le_bytes());
    forged.extend_from_slice(&new_meta);
    forged.extend_from_slice(&bytes[16 + meta_len..]);
    assert!(matches!(decode_checkpoint(&forged), Err(CheckpointError::Integrity(_))));
}

#[test]
fn history_csv_layout() {
    let mut buf = Vec::new();
    write_history_csv(&mut buf, &[0.5, 0.25]).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "step,loss\n1,0.5\n2,0.25\n");
}
