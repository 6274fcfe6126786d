//! Video data pipeline: clip/mask loading, deterministic synthetic dataset
//! generation, temporal windowing, augmentation, and per-frame JPEG
//! recompression.

mod augment;
mod io;
mod jpeg;
mod manifest;
mod synth;
mod windows;

pub use augment::augment;
pub use io::{load_clip, load_frames, load_mask_dir, save_mask_images, write_frame_png, write_mask_png};
pub use jpeg::{mean_psnr, psnr, recompress_qf};
pub use manifest::{DatasetManifest, ManifestRecord, Split};
pub use synth::{synth_clip, synth_generate, FillMethod, SynthClip, SynthParams};
pub use windows::{coverage_starts, sliding_windows};

use ndarray::{Array3, Array4};

use crate::error::{FdinError, Result};

/// One RGB frame, channel-first `(3, H, W)`, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub pixels: Array3<f32>,
}

impl Frame {
    pub fn new(pixels: Array3<f32>) -> Result<Self> {
        let (c, _, _) = pixels.dim();
        if c != 3 {
            return Err(FdinError::ShapeMismatch(format!(
                "frames are 3-channel, got {c}"
            )));
        }
        if !pixels.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(FdinError::NonFinite("frame pixels outside [0, 1]".into()));
        }
        Ok(Frame { pixels })
    }

    pub fn hw(&self) -> (usize, usize) {
        let (_, h, w) = self.pixels.dim();
        (h, w)
    }

    /// Quantize to 8-bit RGB, pixel-interleaved.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let (_, h, w) = self.pixels.dim();
        let mut buf = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    buf.push((self.pixels[[c, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        buf
    }
}

/// Ordered frame sequence with a shared resolution.
#[derive(Debug, Clone)]
pub struct VideoClip {
    pub frames: Vec<Frame>,
    pub fps: Option<f32>,
}

impl VideoClip {
    pub fn new(frames: Vec<Frame>, fps: Option<f32>) -> Result<Self> {
        if frames.is_empty() {
            return Err(FdinError::ShapeMismatch("clip with zero frames".into()));
        }
        let hw = frames[0].hw();
        if frames.iter().any(|f| f.hw() != hw) {
            return Err(FdinError::ShapeMismatch(
                "frames in a clip must share one resolution".into(),
            ));
        }
        if let Some(fps) = fps {
            if !(fps.is_finite() && fps > 0.0) {
                return Err(FdinError::Config(format!("fps must be positive, got {fps}")));
            }
        }
        Ok(VideoClip { frames, fps })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn hw(&self) -> (usize, usize) {
        self.frames[0].hw()
    }

    /// Stack into `(T, 3, H, W)`.
    pub fn to_array(&self) -> Array4<f32> {
        let (h, w) = self.hw();
        let t = self.len();
        let mut out = Array4::zeros((t, 3, h, w));
        for (ti, f) in self.frames.iter().enumerate() {
            out.index_axis_mut(ndarray::Axis(0), ti).assign(&f.pixels);
        }
        out
    }
}

/// Binary ground-truth or predicted masks, `(T, H, W)` in {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSequence {
    pub masks: Array3<u8>,
}

impl MaskSequence {
    pub fn new(masks: Array3<u8>) -> Result<Self> {
        if masks.iter().any(|&v| v > 1) {
            return Err(FdinError::ShapeMismatch(
                "mask values must be binary (0 or 1)".into(),
            ));
        }
        Ok(MaskSequence { masks })
    }

    pub fn len(&self) -> usize {
        self.masks.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hw(&self) -> (usize, usize) {
        let (_, h, w) = self.masks.dim();
        (h, w)
    }
}

/// `t_c` consecutive frames and their aligned masks, cut from one clip.
#[derive(Debug, Clone)]
pub struct ClipWindow {
    /// `(T_C, 3, H, W)`
    pub frames: Array4<f32>,
    /// `(T_C, H, W)`
    pub masks: Array3<u8>,
    pub source_clip_id: String,
    pub start_index: usize,
}

impl ClipWindow {
    pub fn t_c(&self) -> usize {
        self.frames.dim().0
    }

    pub fn hw(&self) -> (usize, usize) {
        let (_, _, h, w) = self.frames.dim();
        (h, w)
    }
}
