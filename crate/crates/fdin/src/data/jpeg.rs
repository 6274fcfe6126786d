//! Per-frame JPEG recompression at a given quality factor. Motion-JPEG is
//! per-frame JPEG, so compressing each frame independently reproduces its
//! artifact structure without modeling an inter-frame codec.

use image::codecs::jpeg::JpegEncoder;
use image::{ImageReader, RgbImage};
use ndarray::Array3;

use super::{Frame, VideoClip};
use crate::error::{FdinError, Result};

/// Re-encode every frame as JPEG at quality `qf` and decode it back.
/// Shapes are unchanged; values stay in [0, 1].
pub fn recompress_qf(clip: &VideoClip, qf: u8) -> Result<VideoClip> {
    if !(1..=100).contains(&qf) {
        return Err(FdinError::Config(format!(
            "quality factor must be in [1, 100], got {qf}"
        )));
    }
    let (h, w) = clip.hw();
    let mut frames = Vec::with_capacity(clip.len());
    for (ti, frame) in clip.frames.iter().enumerate() {
        let codec = |reason: String| FdinError::Codec { frame: ti, reason };
        let rgb = RgbImage::from_raw(w as u32, h as u32, frame.to_rgb8())
            .ok_or_else(|| codec("frame buffer size mismatch".into()))?;
        let mut encoded = Vec::new();
        JpegEncoder::new_with_quality(&mut encoded, qf)
            .encode_image(&rgb)
            .map_err(|e| codec(e.to_string()))?;
        let decoded = ImageReader::new(std::io::Cursor::new(&encoded))
            .with_guessed_format()
            .map_err(|e| codec(e.to_string()))?
            .decode()
            .map_err(|e| codec(e.to_string()))?
            .to_rgb8();
        if decoded.dimensions() != (w as u32, h as u32) {
            return Err(codec(format!(
                "decoded size {:?} differs from input {}x{}",
                decoded.dimensions(),
                w,
                h
            )));
        }
        let mut pixels = Array3::zeros((3, h, w));
        for (x, y, p) in decoded.enumerate_pixels() {
            for c in 0..3 {
                pixels[[c, y as usize, x as usize]] =
                    (p.0[c] as f32 / 255.0).clamp(0.0, 1.0);
            }
        }
        frames.push(Frame { pixels });
    }
    VideoClip::new(frames, clip.fps)
}

/// Peak signal-to-noise ratio between two same-shape frames, in dB over
/// the unit dynamic range. Identical frames give infinity.
pub fn psnr(a: &Frame, b: &Frame) -> f64 {
    debug_assert_eq!(a.pixels.dim(), b.pixels.dim());
    let n = a.pixels.len() as f64;
    let mse: f64 = a
        .pixels
        .iter()
        .zip(b.pixels.iter())
        .map(|(x, y)| {
            let d = (*x - *y) as f64;
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Mean per-frame PSNR between two clips.
pub fn mean_psnr(a: &VideoClip, b: &VideoClip) -> f64 {
    let sum: f64 = a
        .frames
        .iter()
        .zip(b.frames.iter())
        .map(|(x, y)| psnr(x, y))
        .sum();
    sum / a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_clip, FillMethod};

    fn textured_clip() -> VideoClip {
        let clip = synth_clip(11, 0, 4, 48, 48, FillMethod::BlurFill).unwrap();
        let frames = clip
            .inpainted
            .iter()
            .map(|f| Frame {
                pixels: f.mapv(|v| v as f32 / 255.0),
            })
            .collect();
        VideoClip::new(frames, None).unwrap()
    }

    #[test]
    fn qf100_roundtrip_is_high_fidelity() {
        let clip = textured_clip();
        let rt = recompress_qf(&clip, 100).unwrap();
        for (a, b) in clip.frames.iter().zip(rt.frames.iter()) {
            let p = psnr(a, b);
            assert!(p > 40.0, "qf=100 PSNR {p}");
        }
    }

    #[test]
    fn higher_quality_means_higher_psnr() {
        let clip = textured_clip();
        let q90 = recompress_qf(&clip, 90).unwrap();
        let q70 = recompress_qf(&clip, 70).unwrap();
        let p90 = mean_psnr(&clip, &q90);
        let p70 = mean_psnr(&clip, &q70);
        assert!(p90 >= p70, "PSNR(q90)={p90} < PSNR(q70)={p70}");
    }

    #[test]
    fn shape_and_range_preserved_across_qf() {
        let clip = textured_clip();
        for qf in [1u8, 25, 50, 75, 100] {
            let rt = recompress_qf(&clip, qf).unwrap();
            assert_eq!(rt.len(), clip.len());
            assert_eq!(rt.hw(), clip.hw());
            assert!(rt
                .frames
                .iter()
                .all(|f| f.pixels.iter().all(|v| (0.0..=1.0).contains(v))));
        }
    }

    #[test]
    fn invalid_qf_is_rejected() {
        let clip = textured_clip();
        assert!(recompress_qf(&clip, 0).is_err());
        assert!(recompress_qf(&clip, 101).is_err());
    }
}
