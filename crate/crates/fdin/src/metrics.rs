//! Segmentation metrics over binary mask sequences: per-frame IoU and F1
//! of the positive (inpainted) class, averaged per frame. A frame whose
//! prediction and ground truth are both empty scores 1 for both metrics.

use ndarray::{Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{FdinError, Result};

fn validate_pair(pred: &Array3<u8>, gt: &Array3<u8>) -> Result<()> {
    if pred.dim() != gt.dim() {
        return Err(FdinError::ShapeMismatch(format!(
            "mask shapes differ: {:?} vs {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    if pred.iter().chain(gt.iter()).any(|&v| v > 1) {
        return Err(FdinError::ShapeMismatch(
            "masks must be binary (0 or 1)".into(),
        ));
    }
    Ok(())
}

fn frame_counts(pred: ArrayView2<u8>, gt: ArrayView2<u8>) -> (usize, usize, usize) {
    let mut inter = 0;
    let mut np = 0;
    let mut ng = 0;
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        np += p as usize;
        ng += g as usize;
        inter += (p & g) as usize;
    }
    (inter, np, ng)
}

/// Per-frame IoU values of the positive class; empty-union frames score 1.
pub fn frame_ious(pred: &Array3<u8>, gt: &Array3<u8>) -> Result<Vec<f64>> {
    validate_pair(pred, gt)?;
    Ok((0..pred.dim().0)
        .map(|t| {
            let (inter, np, ng) = frame_counts(
                pred.index_axis(ndarray::Axis(0), t),
                gt.index_axis(ndarray::Axis(0), t),
            );
            let union = np + ng - inter;
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        })
        .collect())
}

/// Per-frame F1 values; frames with no positives on either side score 1.
pub fn frame_f1s(pred: &Array3<u8>, gt: &Array3<u8>) -> Result<Vec<f64>> {
    validate_pair(pred, gt)?;
    Ok((0..pred.dim().0)
        .map(|t| {
            let (inter, np, ng) = frame_counts(
                pred.index_axis(ndarray::Axis(0), t),
                gt.index_axis(ndarray::Axis(0), t),
            );
            if np + ng == 0 {
                1.0
            } else {
                2.0 * inter as f64 / (np + ng) as f64
            }
        })
        .collect())
}

/// Mean over frames of the positive-class IoU.
pub fn compute_miou(pred: &Array3<u8>, gt: &Array3<u8>) -> Result<f64> {
    let ious = frame_ious(pred, gt)?;
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

/// Mean over frames of the positive-class F1.
pub fn compute_f1(pred: &Array3<u8>, gt: &Array3<u8>) -> Result<f64> {
    let f1s = frame_f1s(pred, gt)?;
    Ok(f1s.iter().sum::<f64>() / f1s.len() as f64)
}

/// Per-clip metric summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub clip_id: String,
    pub frames: usize,
    pub miou: f64,
    pub f1: f64,
}

/// Metrics for one evaluation condition. The aggregate is the mean of the
/// per-frame values across all clips (not the mean of per-clip means).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub condition: String,
    pub seed: u64,
    pub config_digest: String,
    pub per_clip: Vec<ClipMetrics>,
    pub frames_total: usize,
    pub miou: f64,
    pub f1: f64,
}

impl MetricsReport {
    /// Assemble a report from per-clip, per-frame metric values.
    pub fn from_frames(
        condition: &str,
        seed: u64,
        config_digest: &str,
        clips: Vec<(String, Vec<f64>, Vec<f64>)>,
    ) -> MetricsReport {
        let mut per_clip = Vec::with_capacity(clips.len());
        let mut iou_sum = 0.0;
        let mut f1_sum = 0.0;
        let mut frames_total = 0;
        for (clip_id, ious, f1s) in clips {
            let frames = ious.len();
            let miou = ious.iter().sum::<f64>() / frames.max(1) as f64;
            let f1 = f1s.iter().sum::<f64>() / frames.max(1) as f64;
            iou_sum += ious.iter().sum::<f64>();
            f1_sum += f1s.iter().sum::<f64>();
            frames_total += frames;
            per_clip.push(ClipMetrics {
                clip_id,
                frames,
                miou,
                f1,
            });
        }
        MetricsReport {
            condition: condition.to_string(),
            seed,
            config_digest: config_digest.to_string(),
            per_clip,
            frames_total,
            miou: iou_sum / frames_total.max(1) as f64,
            f1: f1_sum / frames_total.max(1) as f64,
        }
    }

    /// One JSON record per clip plus one aggregate record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for c in &self.per_clip {
            let rec = serde_json::json!({
                "record": "clip",
                "condition": self.condition,
                "clip_id": c.clip_id,
                "frames": c.frames,
                "miou": c.miou,
                "f1": c.f1,
            });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        let agg = serde_json::json!({
            "record": "aggregate",
            "condition": self.condition,
            "seed": self.seed,
            "config_digest": self.config_digest,
            "frames": self.frames_total,
            "miou": self.miou,
            "f1": self.f1,
        });
        out.push_str(&agg.to_string());
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn masks_from(frames: Vec<Vec<u8>>, h: usize, w: usize) -> Array3<u8> {
        let t = frames.len();
        Array3::from_shape_vec((t, h, w), frames.concat()).unwrap()
    }

    /// Independent oracle: classify every pixel into the confusion matrix
    /// and derive the metrics from TP/FP/FN.
    fn oracle(pred: &Array3<u8>, gt: &Array3<u8>) -> (f64, f64) {
        let t = pred.dim().0;
        let mut iou_sum = 0.0;
        let mut f1_sum = 0.0;
        for ti in 0..t {
            let (mut tp, mut fp, mut fund) = (0usize, 0usize, 0usize);
            for (p, g) in pred
                .index_axis(ndarray::Axis(0), ti)
                .iter()
                .zip(gt.index_axis(ndarray::Axis(0), ti).iter())
            {
                match (p, g) {
                    (1, 1) => tp += 1,
                    (1, 0) => fp += 1,
                    (0, 1) => fund += 1,
                    _ => {}
                }
            }
            iou_sum += if tp + fp + fund == 0 {
                1.0
            } else {
                tp as f64 / (tp + fp + fund) as f64
            };
            f1_sum += if 2 * tp + fp + fund == 0 {
                1.0
            } else {
                2.0 * tp as f64 / (2 * tp + fp + fund) as f64
            };
        }
        (iou_sum / t as f64, f1_sum / t as f64)
    }

    #[test]
    fn perfect_and_disjoint_predictions() {
        let gt = masks_from(vec![vec![1, 1, 0, 0]], 2, 2);
        assert_eq!(compute_miou(&gt, &gt).unwrap(), 1.0);
        assert_eq!(compute_f1(&gt, &gt).unwrap(), 1.0);
        let pred = masks_from(vec![vec![0, 0, 1, 1]], 2, 2);
        assert_eq!(compute_miou(&pred, &gt).unwrap(), 0.0);
        assert_eq!(compute_f1(&pred, &gt).unwrap(), 0.0);
    }

    #[test]
    fn overlapping_blocks_match_hand_counts() {
        // pred: 2x2 block at (0,0); gt: 2x2 block at (0,1); overlap 2 px
        let mut pred = Array3::<u8>::zeros((1, 3, 3));
        let mut gt = Array3::<u8>::zeros((1, 3, 3));
        for y in 0..2 {
            for x in 0..2 {
                pred[[0, y, x]] = 1;
                gt[[0, y, x + 1]] = 1;
            }
        }
        let miou = compute_miou(&pred, &gt).unwrap();
        assert!((miou - 2.0 / 6.0).abs() < 1e-12, "iou {miou}");
        // |pred| = 4, |gt| = 4, overlap 2 -> F1 = 4/8
        let f1 = compute_f1(&pred, &gt).unwrap();
        assert!((f1 - 0.5).abs() < 1e-12, "f1 {f1}");
    }

    #[test]
    fn empty_empty_scores_one_and_empty_pred_scores_zero() {
        let zero = Array3::<u8>::zeros((2, 4, 4));
        assert_eq!(compute_miou(&zero, &zero).unwrap(), 1.0);
        assert_eq!(compute_f1(&zero, &zero).unwrap(), 1.0);
        let mut gt = Array3::<u8>::zeros((1, 4, 4));
        gt[[0, 1, 1]] = 1;
        let empty = Array3::<u8>::zeros((1, 4, 4));
        assert_eq!(compute_miou(&empty, &gt).unwrap(), 0.0);
        assert_eq!(compute_f1(&empty, &gt).unwrap(), 0.0);
    }

    #[test]
    fn oracle_equivalence_on_1000_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..1000 {
            let density_p: f64 = rng.gen_range(0.0..1.0);
            let density_g: f64 = rng.gen_range(0.0..1.0);
            let pred = Array3::from_shape_fn((1, 8, 8), |_| u8::from(rng.gen_bool(density_p)));
            let gt = Array3::from_shape_fn((1, 8, 8), |_| u8::from(rng.gen_bool(density_g)));
            let (oi, of) = oracle(&pred, &gt);
            let miou = compute_miou(&pred, &gt).unwrap();
            let f1 = compute_f1(&pred, &gt).unwrap();
            assert!((miou - oi).abs() < 1e-12);
            assert!((f1 - of).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_are_symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(124);
        for _ in 0..200 {
            let pred = Array3::from_shape_fn((2, 6, 6), |_| u8::from(rng.gen_bool(0.4)));
            let gt = Array3::from_shape_fn((2, 6, 6), |_| u8::from(rng.gen_bool(0.4)));
            let a = compute_miou(&pred, &gt).unwrap();
            let b = compute_miou(&gt, &pred).unwrap();
            assert_eq!(a, b);
            let c = compute_f1(&pred, &gt).unwrap();
            let d = compute_f1(&gt, &pred).unwrap();
            assert_eq!(c, d);
            for v in [a, c] {
                assert!((0.0..=1.0).contains(&v));
            }
            // 1 exactly iff identical per-frame masks
            if pred == gt {
                assert_eq!(a, 1.0);
            } else {
                assert!(a < 1.0);
            }
        }
    }

    #[test]
    fn shape_and_binary_violations_error() {
        let a = Array3::<u8>::zeros((1, 4, 4));
        let b = Array3::<u8>::zeros((1, 4, 5));
        assert!(compute_miou(&a, &b).is_err());
        let mut c = Array3::<u8>::zeros((1, 4, 4));
        c[[0, 0, 0]] = 2;
        assert!(compute_miou(&a, &c).is_err());
    }

    #[test]
    fn aggregate_is_per_frame_mean() {
        // clip A: 2 frames at IoU 1.0; clip B: 1 frame at IoU 0.0
        // per-frame aggregate = 2/3, not the per-clip mean 0.5
        let report = MetricsReport::from_frames(
            "uncompressed",
            0,
            "digest",
            vec![
                ("a".into(), vec![1.0, 1.0], vec![1.0, 1.0]),
                ("b".into(), vec![0.0], vec![0.0]),
            ],
        );
        assert!((report.miou - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.frames_total, 3);
        let jsonl = report.to_jsonl();
        assert_eq!(jsonl.lines().count(), 3);
        assert!(jsonl.contains("\"record\":\"aggregate\""));
    }
}
