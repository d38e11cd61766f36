//! Library-level pipeline checks that cut across modules.

use tcl_core::backbone::init_params;
use tcl_core::dataset::generate_splits;
use tcl_core::metrics::{evaluate, mpjpe_curve};
use tcl_core::synth::GenerationConfig;
use tcl_core::trainer::{backbone_for, train, TrainConfig, TrainMode};
use tcl_core::RealArray;

fn small_gen() -> GenerationConfig {
    GenerationConfig {
        num_sequences: 10,
        frames_per_sequence: 40,
        joints: 4,
        ..GenerationConfig::default()
    }
}

/// The untrained residual model is exactly the last-frame-replication
/// baseline, so its evaluation must match the baseline computed directly
/// from the data.
#[test]
fn untrained_model_matches_replication_baseline() {
    let [train_ds, _, test_ds] = generate_splits(&small_gen()).unwrap();
    let config = TrainConfig {
        hidden_dims: vec![24],
        alpha_head_hidden: 6,
        ..TrainConfig::default()
    };
    let backbone = backbone_for(&config, &train_ds);
    let store = init_params(&backbone).unwrap();
    let norm = tcl_core::dataset::NormStats::fit(&train_ds).unwrap();
    let eval = evaluate(&store, &backbone, &norm, &test_ds, &[1, 5, 25]).unwrap();

    let cols = test_ds.coord_cols();
    let preds: Vec<RealArray> = test_ds
        .samples
        .iter()
        .map(|s| {
            let last = &s.history.data()[(test_ds.t_h - 1) * cols..];
            let mut tiled = Vec::with_capacity(test_ds.t_p * cols);
            for _ in 0..test_ds.t_p {
                tiled.extend_from_slice(last);
            }
            RealArray::from_vec(vec![test_ds.t_p, cols], tiled).unwrap()
        })
        .collect();
    let gts: Vec<RealArray> = test_ds.samples.iter().map(|s| s.future.clone()).collect();
    let oracle = mpjpe_curve(&preds, &gts, test_ds.joints, test_ds.dims).unwrap();

    for (h, (got, want)) in eval.curve.iter().zip(&oracle).enumerate() {
        assert!(
            (got - want).abs() < 1e-9,
            "horizon {}: {} vs baseline {}",
            h + 1,
            got,
            want
        );
    }
}

/// Training the first segment must beat the replication baseline on it,
/// and the initial training loss equals the baseline loss by construction
/// (zero-initialized prediction head).
#[test]
fn stage1_training_beats_replication_baseline_on_its_segment() {
    let [train_ds, val_ds, test_ds] = generate_splits(&small_gen()).unwrap();
    let config = TrainConfig {
        mode: TrainMode::OneStage,
        segment_lengths: vec![25],
        stage_epochs: vec![12],
        hidden_dims: vec![32],
        alpha_head_hidden: 6,
        seed: 2,
        ..TrainConfig::default()
    };
    let outcome = train(config.clone(), &train_ds, &val_ds).unwrap();
    let eval = evaluate(
        &outcome.store,
        &outcome.backbone,
        &outcome.norm,
        &test_ds,
        &[1],
    )
    .unwrap();

    let backbone = backbone_for(&config, &train_ds);
    let init_store = init_params(&backbone).unwrap();
    let baseline = evaluate(&init_store, &backbone, &outcome.norm, &test_ds, &[1]).unwrap();
    assert!(
        eval.avg_error < baseline.avg_error,
        "trained {} vs baseline {}",
        eval.avg_error,
        baseline.avg_error
    );
}

/// Drift accumulates with horizon in the synthetic dynamics, so the
/// replication baseline's error curve rises with the horizon.
#[test]
fn baseline_error_grows_with_horizon() {
    let [train_ds, _, test_ds] = generate_splits(&GenerationConfig::default()).unwrap();
    let config = TrainConfig::default();
    let backbone = backbone_for(&config, &train_ds);
    let store = init_params(&backbone).unwrap();
    let norm = tcl_core::dataset::NormStats::fit(&train_ds).unwrap();
    let eval = evaluate(&store, &backbone, &norm, &test_ds, &[1]).unwrap();
    let violations = eval.curve.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(
        violations == 0,
        "replication baseline curve dips {violations} times: {:?}",
        eval.curve
    );
}

/// Evaluating a restored checkpoint must reproduce the in-memory
/// evaluation bit for bit (parameters travel as raw f64, normalization
/// stats through the JSON header).
#[test]
fn checkpoint_eval_is_bit_identical_to_in_memory_eval() {
    let gen = GenerationConfig {
        num_sequences: 8,
        frames_per_sequence: 20,
        joints: 3,
        t_h: 3,
        t_p: 5,
        split_fractions: [0.5, 0.25, 0.25],
        ..GenerationConfig::default()
    };
    let [train_ds, val_ds, test_ds] = generate_splits(&gen).unwrap();
    let config = TrainConfig {
        mode: TrainMode::Tcl,
        segment_lengths: vec![2, 3],
        stage_epochs: vec![2, 4],
        batch_size: 16,
        seed: 4,
        hidden_dims: vec![16],
        alpha_head_hidden: 4,
        ..TrainConfig::default()
    };
    let mut session = tcl_core::trainer::TrainSession::new(config, &train_ds, &val_ds).unwrap();
    session.advance(usize::MAX).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    session.save_checkpoint(&path).unwrap();
    let outcome = session.into_outcome();
    let ckpt = tcl_core::checkpoint::restore(&path).unwrap();

    assert_eq!(outcome.store.flat_values(), ckpt.store.flat_values());
    assert_eq!(outcome.norm, ckpt.norm);
    let in_memory = evaluate(
        &outcome.store,
        &outcome.backbone,
        &outcome.norm,
        &test_ds,
        &[1],
    )
    .unwrap();
    let restored = evaluate(&ckpt.store, &ckpt.backbone, &ckpt.norm, &test_ds, &[1]).unwrap();
    for (a, b) in in_memory.curve.iter().zip(&restored.curve) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

/// On constant sequences the last-frame replication predictor is exact,
/// so the untrained model evaluates to zero error at every horizon.
#[test]
fn replication_on_constant_sequences_is_exact() {
    let gen = GenerationConfig {
        num_sequences: 8,
        frames_per_sequence: 40,
        joints: 4,
        amp_range: [0.0, 0.0],
        noise_std: 0.0,
        out_of_plane_amp: 0.0,
        ..GenerationConfig::default()
    };
    let [train_ds, _, test_ds] = generate_splits(&gen).unwrap();
    let config = TrainConfig {
        hidden_dims: vec![8],
        alpha_head_hidden: 3,
        ..TrainConfig::default()
    };
    let backbone = backbone_for(&config, &train_ds);
    let store = init_params(&backbone).unwrap();
    let norm = tcl_core::dataset::NormStats::fit(&train_ds).unwrap();
    let eval = evaluate(&store, &backbone, &norm, &test_ds, &[1, 13, 25]).unwrap();
    for (h, e) in eval.curve.iter().enumerate() {
        assert!(
            e.abs() < 1e-9,
            "horizon {}: error {e} on constant sequences",
            h + 1
        );
    }
    assert!(eval.avg_error.abs() < 1e-9);
}
