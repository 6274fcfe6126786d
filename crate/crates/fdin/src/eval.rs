//! Evaluation harnesses: windowed inference with overlap averaging,
//! manifest-level metric reports, external-prediction scoring, and the
//! compression-robustness sweep.

use std::path::Path;

use ndarray::{s, Array4};

use crate::data::{coverage_starts, load_mask_dir, recompress_qf, MaskSequence, VideoClip};
use crate::decoder::binarize;
use crate::error::{FdinError, Result};
use crate::metrics::{frame_f1s, frame_ious, MetricsReport};
use crate::model::FdinModel;
use crate::nn::Vol5;

/// Sliding-window logits for a whole clip at stride `t_c`, with a final
/// window anchored at `T - t_c` when the tail would otherwise be
/// uncovered. Overlapping frames average their logits per pixel.
pub fn infer_logits(model: &mut FdinModel, clip: &VideoClip) -> Result<Array4<f32>> {
    let (h, w) = clip.hw();
    let (mh, mw) = model.config.resolution;
    if (h, w) != (mh, mw) {
        return Err(FdinError::ResolutionMismatch {
            context: "inference clip".into(),
            expected_h: mh,
            expected_w: mw,
            got_h: h,
            got_w: w,
        });
    }
    let t_c = model.config.t_c;
    let t = clip.len();
    let starts = coverage_starts(t, t_c, t_c)?;
    let all = clip.to_array();
    let mut batch = Vol5::zeros((starts.len(), t_c, 3, h, w));
    for (bi, &start) in starts.iter().enumerate() {
        batch
            .slice_mut(s![bi, .., .., .., ..])
            .assign(&all.slice(s![start..start + t_c, .., .., ..]));
    }
    let logits = model.infer(&batch)?;
    let mut sum = Array4::<f32>::zeros((t, 1, h, w));
    let mut counts = vec![0f32; t];
    for (bi, &start) in starts.iter().enumerate() {
        for ti in 0..t_c {
            let mut dst = sum.slice_mut(s![start + ti, .., .., ..]);
            dst += &logits.slice(s![bi, ti, .., .., ..]);
            counts[start + ti] += 1.0;
        }
    }
    for (ti, &c) in counts.iter().enumerate() {
        debug_assert!(c > 0.0, "frame {ti} uncovered");
        sum.slice_mut(s![ti, .., .., ..]).mapv_inplace(|v| v / c);
    }
    Ok(sum)
}

/// Windowed inference binarized at `threshold`.
pub fn infer_masks(model: &mut FdinModel, clip: &VideoClip, threshold: f32) -> Result<MaskSequence> {
    let logits = infer_logits(model, clip)?;
    let (t, _, h, w) = logits.dim();
    let batched = logits
        .into_shape_with_order((1, t, 1, h, w))
        .expect("contiguous logits");
    let masks = binarize(&batched, threshold)?;
    MaskSequence::new(masks.into_iter().next().expect("one sequence"))
}

/// Evaluate a model over every manifest clip, optionally recompressing the
/// frames at quality `qf` first (ground truth is untouched).
pub fn evaluate(
    model: &mut FdinModel,
    manifest: &crate::data::DatasetManifest,
    threshold: f32,
    condition: &str,
    seed: u64,
    config_digest: &str,
    qf: Option<u8>,
) -> Result<MetricsReport> {
    if manifest.is_empty() {
        return Err(FdinError::Config("empty dataset manifest".into()));
    }
    let mut clips = Vec::with_capacity(manifest.len());
    for rec in &manifest.records {
        let (clip, gt) = rec.load()?;
        let clip = match qf {
            Some(q) => recompress_qf(&clip, q)?,
            None => clip,
        };
        let pred = infer_masks(model, &clip, threshold)?;
        let ious = frame_ious(&pred.masks, &gt.masks)?;
        let f1s = frame_f1s(&pred.masks, &gt.masks)?;
        clips.push((rec.clip_id.clone(), ious, f1s));
    }
    Ok(MetricsReport::from_frames(
        condition,
        seed,
        config_digest,
        clips,
    ))
}

/// Score an external prediction set: `predictions_dir/<clip_id>/` holds one
/// mask image per frame, compared against the manifest's ground truth.
pub fn evaluate_predictions(
    predictions_dir: &Path,
    manifest: &crate::data::DatasetManifest,
    seed: u64,
    config_digest: &str,
) -> Result<MetricsReport> {
    if manifest.is_empty() {
        return Err(FdinError::Config("empty dataset manifest".into()));
    }
    let mut clips = Vec::with_capacity(manifest.len());
    for rec in &manifest.records {
        let (_, gt) = rec.load()?;
        let pred = load_mask_dir(&predictions_dir.join(&rec.clip_id))?;
        let ious = frame_ious(&pred.masks, &gt.masks)?;
        let f1s = frame_f1s(&pred.masks, &gt.masks)?;
        clips.push((rec.clip_id.clone(), ious, f1s));
    }
    Ok(MetricsReport::from_frames(
        "predictions",
        seed,
        config_digest,
        clips,
    ))
}

/// Robustness sweep: the uncompressed condition plus one condition per
/// distinct quality factor, strongest quality first.
pub fn robustness(
    model: &mut FdinModel,
    manifest: &crate::data::DatasetManifest,
    qf_list: &[u8],
    threshold: f32,
    seed: u64,
    config_digest: &str,
) -> Result<Vec<MetricsReport>> {
    let mut qfs: Vec<u8> = qf_list.to_vec();
    qfs.sort_unstable();
    qfs.dedup();
    qfs.reverse();
    let mut reports = Vec::with_capacity(qfs.len() + 1);
    reports.push(evaluate(
        model,
        manifest,
        threshold,
        "uncompressed",
        seed,
        config_digest,
        None,
    )?);
    for qf in qfs {
        reports.push(evaluate(
            model,
            manifest,
            threshold,
            &format!("QF{qf}"),
            seed,
            config_digest,
            Some(qf),
        )?);
    }
    Ok(reports)
}

/// Tab-separated condition table for the robustness plot.
pub fn robustness_summary_tsv(reports: &[MetricsReport]) -> String {
    let mut out = String::from("condition\tmiou\tf1\n");
    for r in reports {
        out.push_str(&format!("{}\t{:.6}\t{:.6}\n", r.condition, r.miou, r.f1));
    }
    out
}

/// Minimal SVG line chart of mIoU and F1 per condition.
pub fn robustness_plot_svg(reports: &[MetricsReport]) -> String {
    let (width, height, ml, mb, mt, mr) = (640.0, 400.0, 70.0, 60.0, 30.0, 30.0);
    let plot_w = width - ml - mr;
    let plot_h = height - mt - mb;
    let n = reports.len().max(1);
    let x_of = |i: usize| {
        if n == 1 {
            ml + plot_w / 2.0
        } else {
            ml + plot_w * i as f64 / (n - 1) as f64
        }
    };
    let y_of = |v: f64| mt + plot_h * (1.0 - v.clamp(0.0, 1.0));
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"monospace\" font-size=\"13\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    ));
    // axes and horizontal grid
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let y = y_of(v);
        svg.push_str(&format!(
            "<line x1=\"{ml}\" y1=\"{y}\" x2=\"{:.1}\" y2=\"{y}\" stroke=\"#dddddd\"/>\n",
            width - mr
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.1}</text>\n",
            ml - 8.0,
            y + 4.0
        ));
    }
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        height - mb
    ));
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        height - mb,
        width - mr,
        height - mb
    ));
    // condition labels
    for (i, r) in reports.iter().enumerate() {
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            x_of(i),
            height - mb + 20.0,
            r.condition
        ));
    }
    // series
    for (metric, color, dy) in [("miou", "#1f77b4", 0.0), ("f1", "#d62728", 16.0)] {
        let pts: Vec<String> = reports
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let v = if metric == "miou" { r.miou } else { r.f1 };
                format!("{:.1},{:.1}", x_of(i), y_of(v))
            })
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            pts.join(" ")
        ));
        for (i, r) in reports.iter().enumerate() {
            let v = if metric == "miou" { r.miou } else { r.f1 };
            svg.push_str(&format!(
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>\n",
                x_of(i),
                y_of(v)
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{}</text>\n",
            width - mr - 60.0,
            mt + 16.0 + dy,
            metric
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, Split, SynthParams};
    use crate::model::{FdinModel, ModelConfig};
    use tempfile::tempdir;

    fn tiny_model() -> FdinModel {
        FdinModel::build(
            ModelConfig {
                resolution: (16, 16),
                t_c: 2,
                channels: vec![4, 8],
                ..ModelConfig::default()
            },
            1,
        )
        .unwrap()
    }

    fn tiny_dataset(dir: &Path) -> crate::data::DatasetManifest {
        synth_generate(
            &SynthParams {
                seed: 2,
                n_clips: 2,
                t: 5,
                h: 16,
                w: 16,
                method: crate::data::FillMethod::BlurFill,
            },
            dir,
            Split::Test,
        )
        .unwrap()
    }

    #[test]
    fn windowed_inference_covers_every_frame() {
        let dir = tempdir().unwrap();
        let manifest = tiny_dataset(dir.path());
        let mut model = tiny_model();
        let rec = &manifest.records[0];
        let (clip, _) = rec.load().unwrap();
        // 5 frames, t_c = 2: windows at 0, 2, and an anchored tail at 3
        let logits = infer_logits(&mut model, &clip).unwrap();
        assert_eq!(logits.dim(), (5, 1, 16, 16));
        assert!(logits.iter().all(|v| v.is_finite()));
        let masks = infer_masks(&mut model, &clip, 0.5).unwrap();
        assert_eq!(masks.len(), 5);
    }

    #[test]
    fn evaluate_produces_bounded_metrics() {
        let dir = tempdir().unwrap();
        let manifest = tiny_dataset(dir.path());
        let mut model = tiny_model();
        let report = evaluate(&mut model, &manifest, 0.5, "uncompressed", 0, "d", None).unwrap();
        assert_eq!(report.per_clip.len(), 2);
        assert_eq!(report.frames_total, 10);
        assert!((0.0..=1.0).contains(&report.miou));
        assert!((0.0..=1.0).contains(&report.f1));
    }

    #[test]
    fn aggregate_recomputes_from_per_clip_records() {
        let dir = tempdir().unwrap();
        let manifest = tiny_dataset(dir.path());
        let mut model = tiny_model();
        let report = evaluate(&mut model, &manifest, 0.5, "uncompressed", 0, "d", None).unwrap();
        let weighted: f64 = report
            .per_clip
            .iter()
            .map(|c| c.miou * c.frames as f64)
            .sum();
        let frames: usize = report.per_clip.iter().map(|c| c.frames).sum();
        assert!((report.miou - weighted / frames as f64).abs() < 1e-12);
        let weighted_f1: f64 = report
            .per_clip
            .iter()
            .map(|c| c.f1 * c.frames as f64)
            .sum();
        assert!((report.f1 - weighted_f1 / frames as f64).abs() < 1e-12);
    }

    #[test]
    fn ground_truth_as_predictions_scores_one() {
        let dir = tempdir().unwrap();
        let manifest = tiny_dataset(dir.path());
        // point the prediction tree at the ground-truth masks themselves
        let pred_root = dir.path().join("preds");
        for rec in &manifest.records {
            let dst = pred_root.join(&rec.clip_id);
            std::fs::create_dir_all(&dst).unwrap();
            for entry in std::fs::read_dir(&rec.mask_dir).unwrap() {
                let p = entry.unwrap().path();
                std::fs::copy(&p, dst.join(p.file_name().unwrap())).unwrap();
            }
        }
        let report = evaluate_predictions(&pred_root, &manifest, 0, "d").unwrap();
        assert_eq!(report.miou, 1.0);
        assert_eq!(report.f1, 1.0);
    }

    #[test]
    fn resolution_mismatch_is_an_error() {
        let dir = tempdir().unwrap();
        let manifest = tiny_dataset(dir.path());
        let mut model = FdinModel::build(
            ModelConfig {
                resolution: (32, 32),
                t_c: 2,
                channels: vec![4, 8],
                ..ModelConfig::default()
            },
            1,
        )
        .unwrap();
        let err = evaluate(&mut model, &manifest, 0.5, "u", 0, "d", None).unwrap_err();
        assert!(matches!(err, FdinError::ResolutionMismatch { .. }));
    }

    #[test]
    fn robustness_emits_expected_conditions() {
        let dir = tempdir().unwrap();
        let manifest = tiny_dataset(dir.path());
        let mut model = tiny_model();
        let reports = robustness(&mut model, &manifest, &[70, 90], 0.5, 0, "d").unwrap();
        let labels: Vec<&str> = reports.iter().map(|r| r.condition.as_str()).collect();
        assert_eq!(labels, vec!["uncompressed", "QF90", "QF70"]);
        for r in &reports {
            assert!((0.0..=1.0).contains(&r.miou) && r.miou.is_finite());
            assert!((0.0..=1.0).contains(&r.f1) && r.f1.is_finite());
        }
        let tsv = robustness_summary_tsv(&reports);
        assert_eq!(tsv.lines().count(), 4);
        assert!(tsv.starts_with("condition\tmiou\tf1"));
        let svg = robustness_plot_svg(&reports);
        assert!(svg.contains("<svg"));
        assert!(svg.contains("QF70"));
        assert!(svg.contains("uncompressed"));
    }
}
