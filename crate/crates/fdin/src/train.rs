//! Training harness: per-pixel binary cross-entropy on logits, Adam with a
//! single mid-run learning-rate halving, JSONL step logging, and a
//! per-epoch checkpoint.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{s, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::data::{augment, sliding_windows, ClipWindow, DatasetManifest};
use crate::error::{FdinError, Result};
use crate::model::{FdinModel, ModelConfig};
use crate::nn::{Adam, Phase, Tensors, Vol5};

/// Mean over all pixels of the numerically-stable binary cross-entropy on
/// logits, and its gradient with respect to the logits.
///
/// Per pixel with logit `z` and target `y`:
/// `loss = max(z, 0) - z*y + ln(1 + exp(-|z|))`, `dz = (sigmoid(z) - y) / N`.
pub fn bce_with_logits(logits: &Vol5, targets: &Array4<f32>) -> Result<(f64, Vol5)> {
    let (b, t, c, h, w) = logits.dim();
    if c != 1 {
        return Err(FdinError::ShapeMismatch(format!(
            "logits must have one channel, got {c}"
        )));
    }
    if targets.dim() != (b, t, h, w) {
        return Err(FdinError::ShapeMismatch(format!(
            "targets {:?} do not match logits {:?}",
            targets.dim(),
            logits.dim()
        )));
    }
    let n = (b * t * h * w) as f64;
    let mut grad = Vol5::zeros(logits.raw_dim());
    let mut total = 0.0f64;
    for bi in 0..b {
        for ti in 0..t {
            for y in 0..h {
                for x in 0..w {
                    let z = logits[[bi, ti, 0, y, x]] as f64;
                    let tgt = targets[[bi, ti, y, x]] as f64;
                    total += z.max(0.0) - z * tgt + (-z.abs()).exp().ln_1p();
                    let sig = 1.0 / (1.0 + (-z).exp());
                    grad[[bi, ti, 0, y, x]] = ((sig - tgt) / n) as f32;
                }
            }
        }
    }
    Ok((total / n, grad))
}

/// One logged optimization step.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub losses: Vec<f64>,
    pub steps: usize,
}

/// Load every manifest clip and cut training windows. Clip resolutions may
/// exceed the model resolution (augmentation crops down) but not undershoot
/// it.
pub fn load_training_windows(
    manifest: &DatasetManifest,
    t_c: usize,
    stride: usize,
    resolution: (usize, usize),
) -> Result<Vec<ClipWindow>> {
    if manifest.is_empty() {
        return Err(FdinError::Config("empty dataset manifest".into()));
    }
    let mut windows = Vec::new();
    for rec in &manifest.records {
        let (clip, masks) = rec.load()?;
        let (h, w) = clip.hw();
        if h < resolution.0 || w < resolution.1 {
            return Err(FdinError::ResolutionMismatch {
                context: format!("clip {}", rec.clip_id),
                expected_h: resolution.0,
                expected_w: resolution.1,
                got_h: h,
                got_w: w,
            });
        }
        windows.extend(sliding_windows(&clip, &masks, &rec.clip_id, t_c, stride)?);
    }
    Ok(windows)
}

/// Stack augmented windows into batch tensors.
fn assemble_batch(
    windows: &[&ClipWindow],
    rng: &mut ChaCha8Rng,
    crop_hw: (usize, usize),
    flip_prob: f64,
) -> Result<(Vol5, Array4<f32>)> {
    let b = windows.len();
    let t = windows[0].t_c();
    let (h, w) = crop_hw;
    let mut frames = Vol5::zeros((b, t, 3, h, w));
    let mut masks = Array4::<f32>::zeros((b, t, h, w));
    for (bi, win) in windows.iter().enumerate() {
        let aug = augment(win, rng, crop_hw, flip_prob)?;
        frames
            .slice_mut(s![bi, .., .., .., ..])
            .assign(&aug.frames);
        masks
            .slice_mut(s![bi, .., .., ..])
            .assign(&aug.masks.mapv(|v| v as f32));
    }
    Ok((frames, masks))
}

/// Train a model on the manifest clips. Deterministic for a fixed seed:
/// window shuffling, augmentation draws, and parameter updates all flow
/// from `cfg.seed`.
pub fn train(
    manifest: &DatasetManifest,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: &Path,
    config_digest: &str,
) -> Result<TrainArtifacts> {
    cfg.validate()?;
    model_cfg.validate()?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| FdinError::io(format!("create {}", out_dir.display()), e))?;
    let windows = load_training_windows(
        manifest,
        model_cfg.t_c,
        cfg.stride,
        model_cfg.resolution,
    )?;
    let mut model = match &cfg.pretrained_weights {
        Some(path) => {
            let (model, header) = FdinModel::load_checkpoint(path)?;
            if header.model != *model_cfg {
                return Err(FdinError::Config(format!(
                    "pretrained weights at {} were trained with a different model config",
                    path.display()
                )));
            }
            model
        }
        None => FdinModel::build(model_cfg.clone(), cfg.seed)?,
    };
    let mut adam = Adam::new();
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    aug_rng.set_stream(0xau64);

    let log_path = out_dir.join("training_log.jsonl");
    let ckpt_path = out_dir.join("checkpoint_last.fdin");
    let mut log = std::io::BufWriter::new(
        std::fs::File::create(&log_path)
            .map_err(|e| FdinError::io(format!("create {}", log_path.display()), e))?,
    );

    let mut losses = Vec::new();
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at_epoch(epoch);
        let mut order: Vec<usize> = (0..windows.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        shuffle_rng.set_stream(0x5000 + epoch as u64);
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let batch: Vec<&ClipWindow> = chunk.iter().map(|&i| &windows[i]).collect();
            let (frames, targets) =
                assemble_batch(&batch, &mut aug_rng, model_cfg.resolution, cfg.flip_prob)?;
            let (logits, cache) = model.forward(&frames, Phase::Train)?;
            let cache = cache.expect("training forward returns a cache");
            let (loss, dlogits) = bce_with_logits(&logits, &targets)?;
            if !loss.is_finite() {
                return Err(FdinError::NonFiniteLoss { step });
            }
            model.zero_grad();
            model.backward(&cache, &dlogits);
            adam.step_with(lr as f32, |f| model.visit_params("", f));
            losses.push(loss);
            let record = StepRecord {
                step,
                epoch,
                lr,
                loss,
            };
            let line = serde_json::to_string(&record)
                .map_err(|e| FdinError::Config(format!("log encode: {e}")))?;
            writeln!(log, "{line}")
                .map_err(|e| FdinError::io(format!("write {}", log_path.display()), e))?;
        }
        log.flush()
            .map_err(|e| FdinError::io(format!("flush {}", log_path.display()), e))?;
        // checkpoint each epoch (atomic overwrite of the rolling file)
        let tmp = out_dir.join("checkpoint_last.fdin.tmp");
        model.save_checkpoint(&tmp, config_digest)?;
        std::fs::rename(&tmp, &ckpt_path)
            .map_err(|e| FdinError::io(format!("rename to {}", ckpt_path.display()), e))?;
    }
    Ok(TrainArtifacts {
        checkpoint: ckpt_path,
        log: log_path,
        losses,
        steps: step,
    })
}

/// Parse a training log back into records (for tests and the acceptance
/// suite).
pub fn read_training_log(path: &Path) -> Result<Vec<StepRecord>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| FdinError::io(format!("read {}", path.display()), e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| FdinError::Config(format!("log parse: {e}")))
        })
        .collect()
}
