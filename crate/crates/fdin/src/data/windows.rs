//! Temporal windowing of clips.

use ndarray::s;

use super::{ClipWindow, MaskSequence, VideoClip};
use crate::error::{FdinError, Result};

/// Cut `t_c`-frame windows starting at 0, stride, 2*stride, ... while the
/// window fits. Clips shorter than `t_c` are rejected, not padded.
pub fn sliding_windows(
    clip: &VideoClip,
    masks: &MaskSequence,
    clip_id: &str,
    t_c: usize,
    stride: usize,
) -> Result<Vec<ClipWindow>> {
    if t_c < 1 || stride < 1 {
        return Err(FdinError::Config(format!(
            "window size and stride must be at least 1 (t_c={t_c}, stride={stride})"
        )));
    }
    let t = clip.len();
    if masks.len() != t {
        return Err(FdinError::ShapeMismatch(format!(
            "clip has {t} frames but {} masks",
            masks.len()
        )));
    }
    if t < t_c {
        return Err(FdinError::ClipTooShort { t, t_c });
    }
    let all = clip.to_array();
    let mut out = Vec::new();
    let mut start = 0;
    while start + t_c <= t {
        out.push(ClipWindow {
            frames: all.slice(s![start..start + t_c, .., .., ..]).to_owned(),
            masks: masks
                .masks
                .slice(s![start..start + t_c, .., ..])
                .to_owned(),
            source_clip_id: clip_id.to_string(),
            start_index: start,
        });
        start += stride;
    }
    Ok(out)
}

/// Window start indices covering every frame of a `t`-frame clip: regular
/// stride steps plus, when the tail is not covered, a final window anchored
/// at `t - t_c`.
pub fn coverage_starts(t: usize, t_c: usize, stride: usize) -> Result<Vec<usize>> {
    if t_c < 1 || stride < 1 {
        return Err(FdinError::Config(format!(
            "window size and stride must be at least 1 (t_c={t_c}, stride={stride})"
        )));
    }
    if t < t_c {
        return Err(FdinError::ClipTooShort { t, t_c });
    }
    let mut starts = Vec::new();
    let mut start = 0;
    while start + t_c <= t {
        starts.push(start);
        start += stride;
    }
    let last = *starts.last().expect("at least one window");
    if last + t_c < t {
        starts.push(t - t_c);
    }
    Ok(starts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Frame;
    use ndarray::Array3;

    fn toy_clip(t: usize, h: usize, w: usize) -> (VideoClip, MaskSequence) {
        let frames = (0..t)
            .map(|ti| Frame {
                pixels: Array3::from_elem((3, h, w), ti as f32 / t as f32),
            })
            .collect();
        let clip = VideoClip::new(frames, None).unwrap();
        let masks = MaskSequence::new(Array3::zeros((t, h, w))).unwrap();
        (clip, masks)
    }

    #[test]
    fn exact_fit_gives_one_window() {
        let (clip, masks) = toy_clip(8, 4, 4);
        let ws = sliding_windows(&clip, &masks, "c", 8, 8).unwrap();
        assert_eq!(ws.len(), 1);
        assert_eq!(ws[0].start_index, 0);
        assert_eq!(ws[0].frames.dim(), (8, 3, 4, 4));
    }

    #[test]
    fn stride_one_matches_brute_force_enumeration() {
        let (clip, masks) = toy_clip(10, 4, 4);
        let ws = sliding_windows(&clip, &masks, "c", 8, 1).unwrap();
        // brute force: every start with start + t_c <= T
        let expected: Vec<usize> = (0..10).filter(|s| s + 8 <= 10).collect();
        assert_eq!(expected, vec![0, 1, 2]);
        let got: Vec<usize> = ws.iter().map(|w| w.start_index).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn short_clip_is_an_error() {
        let (clip, masks) = toy_clip(4, 4, 4);
        let err = sliding_windows(&clip, &masks, "c", 8, 1).unwrap_err();
        assert!(err.to_string().contains("clip shorter than window"), "{err}");
    }

    #[test]
    fn window_count_formula_holds() {
        for (t, t_c, stride) in [(10, 8, 1), (16, 8, 8), (17, 8, 4), (9, 3, 2)] {
            let (clip, masks) = toy_clip(t, 2, 2);
            let ws = sliding_windows(&clip, &masks, "c", t_c, stride).unwrap();
            assert_eq!(ws.len(), (t - t_c) / stride + 1, "t={t} t_c={t_c} s={stride}");
        }
    }

    #[test]
    fn stride1_coverage_multiplicity() {
        // every frame is covered; frame i appears
        // min(i, T-1-i, T-t_c, t_c-1) + 1 times (count of window starts
        // s in [max(0, i-t_c+1), min(i, T-t_c)])
        for (t, t_c) in [(10usize, 8usize), (12, 5), (8, 8), (9, 3)] {
            let (clip, masks) = toy_clip(t, 2, 2);
            let ws = sliding_windows(&clip, &masks, "c", t_c, 1).unwrap();
            let mut counts = vec![0usize; t];
            for w in &ws {
                for c in counts.iter_mut().skip(w.start_index).take(t_c) {
                    *c += 1;
                }
            }
            for (i, &c) in counts.iter().enumerate() {
                assert!(c > 0, "frame {i} uncovered");
                // brute-force count of covering windows
                let brute = (0..=t - t_c).filter(|s| *s <= i && i < s + t_c).count();
                assert_eq!(c, brute, "frame {i} (t={t}, t_c={t_c})");
                let closed = i.min(t - 1 - i).min(t - t_c).min(t_c - 1) + 1;
                assert_eq!(c, closed, "closed form, frame {i} (t={t}, t_c={t_c})");
            }
        }
    }

    #[test]
    fn coverage_anchors_the_tail() {
        assert_eq!(coverage_starts(10, 8, 8).unwrap(), vec![0, 2]);
        assert_eq!(coverage_starts(16, 8, 8).unwrap(), vec![0, 8]);
        assert_eq!(coverage_starts(8, 8, 8).unwrap(), vec![0]);
        assert_eq!(coverage_starts(20, 8, 8).unwrap(), vec![0, 8, 12]);
        assert!(coverage_starts(4, 8, 8).is_err());
    }
}
