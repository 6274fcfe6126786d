//! Cross-module integration checks that sit below the acceptance suite:
//! warm-start initialization, crop-based training on larger-than-model
//! clips, and checkpoint/eval interplay.

use fdin::config::TrainConfig;
use fdin::data::{synth_generate, FillMethod, Split, SynthParams};
use fdin::eval::evaluate;
use fdin::model::{FdinModel, ModelConfig};
use fdin::train::train;

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        resolution: (16, 16),
        t_c: 2,
        channels: vec![4, 8],
        ..ModelConfig::default()
    }
}

fn tiny_train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        lr_halve_epoch: 2,
        epochs: 2,
        batch_size: 4,
        seed: 3,
        stride: 2,
        flip_prob: 0.0,
        ..TrainConfig::default()
    }
}

#[test]
fn pretrained_weights_warm_start() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_generate(
        &SynthParams {
            seed: 3,
            n_clips: 2,
            t: 4,
            h: 16,
            w: 16,
            method: FillMethod::DiffusionFill,
        },
        &dir.path().join("data"),
        Split::Train,
    )
    .unwrap();
    let model_cfg = tiny_model_config();
    let first = train(
        &manifest,
        &model_cfg,
        &tiny_train_config(),
        &dir.path().join("first"),
        "d1",
    )
    .unwrap();

    // warm start from the first checkpoint
    let warm_cfg = TrainConfig {
        pretrained_weights: Some(first.checkpoint.clone()),
        ..tiny_train_config()
    };
    let second = train(
        &manifest,
        &model_cfg,
        &warm_cfg,
        &dir.path().join("second"),
        "d2",
    )
    .unwrap();
    // the warm-started run continues from trained weights, so its first
    // loss should match the cold run's last region, not ln 2
    assert!(second.losses[0] < first.losses[0]);

    // a mismatched architecture is rejected before training
    let other_cfg = ModelConfig {
        channels: vec![8, 16],
        ..tiny_model_config()
    };
    let err = train(
        &manifest,
        &other_cfg,
        &warm_cfg,
        &dir.path().join("third"),
        "d3",
    )
    .unwrap_err();
    assert!(err.to_string().contains("different model config"), "{err}");
}

#[test]
fn training_crops_larger_clips_to_model_resolution() {
    let dir = tempfile::tempdir().unwrap();
    // 24x24 clips, 16x16 model: augmentation must crop every window
    let manifest = synth_generate(
        &SynthParams {
            seed: 4,
            n_clips: 2,
            t: 3,
            h: 24,
            w: 24,
            method: FillMethod::BlurFill,
        },
        &dir.path().join("data"),
        Split::Train,
    )
    .unwrap();
    let artifacts = train(
        &manifest,
        &tiny_model_config(),
        &TrainConfig {
            flip_prob: 0.5,
            ..tiny_train_config()
        },
        &dir.path().join("run"),
        "d",
    )
    .unwrap();
    assert!(artifacts.losses.iter().all(|l| l.is_finite()));

    // but evaluation requires the exact model resolution
    let (mut model, _) = FdinModel::load_checkpoint(&artifacts.checkpoint).unwrap();
    let err = evaluate(&mut model, &manifest, 0.5, "u", 0, "d", None).unwrap_err();
    assert!(err.to_string().contains("resolution mismatch"), "{err}");
}

#[test]
fn undersized_clips_are_rejected_for_training() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_generate(
        &SynthParams {
            seed: 5,
            n_clips: 1,
            t: 3,
            h: 16,
            w: 16,
            method: FillMethod::BlurFill,
        },
        &dir.path().join("data"),
        Split::Train,
    )
    .unwrap();
    let model_cfg = ModelConfig {
        resolution: (32, 32),
        ..tiny_model_config()
    };
    let err = train(
        &manifest,
        &model_cfg,
        &tiny_train_config(),
        &dir.path().join("run"),
        "d",
    )
    .unwrap_err();
    assert!(err.to_string().contains("resolution mismatch"), "{err}");
}
