//! Frame and mask image IO. Frames are 8-bit RGB `frame_%05d` files, masks
//! 8-bit single-channel `mask_%05d` files; mask pixels above 127 load as 1.

use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader, RgbImage};
use ndarray::{Array2, Array3};

use super::{Frame, MaskSequence, VideoClip};
use crate::error::{FdinError, Result};

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(FdinError::MissingDirectory(dir.to_path_buf()));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| FdinError::io(format!("list {}", dir.display()), e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("png") | Some("jpg") | Some("jpeg") | Some("bmp")
                )
        })
        .collect();
    files.sort();
    Ok(files)
}

fn decode_rgb(path: &Path) -> Result<RgbImage> {
    let img = ImageReader::open(path)
        .map_err(|e| FdinError::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .decode()
        .map_err(|e| FdinError::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    Ok(img.to_rgb8())
}

fn decode_gray(path: &Path) -> Result<GrayImage> {
    let img = ImageReader::open(path)
        .map_err(|e| FdinError::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .decode()
        .map_err(|e| FdinError::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    Ok(img.to_luma8())
}

fn rgb_to_frame(img: &RgbImage) -> Frame {
    let (w, h) = img.dimensions();
    let mut pixels = Array3::zeros((3, h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            pixels[[c, y as usize, x as usize]] = p.0[c] as f32 / 255.0;
        }
    }
    Frame { pixels }
}

/// Load a clip's frames without masks (inference input).
pub fn load_frames(frame_dir: &Path) -> Result<VideoClip> {
    let files = list_images(frame_dir)?;
    if files.is_empty() {
        return Err(FdinError::Decode {
            path: frame_dir.to_path_buf(),
            reason: "no image files found".into(),
        });
    }
    let mut frames = Vec::with_capacity(files.len());
    let mut hw: Option<(usize, usize)> = None;
    for path in &files {
        let img = decode_rgb(path)?;
        let frame = rgb_to_frame(&img);
        match hw {
            None => hw = Some(frame.hw()),
            Some((h, w)) if frame.hw() != (h, w) => {
                let (gh, gw) = frame.hw();
                return Err(FdinError::ResolutionMismatch {
                    context: format!("frame {}", path.display()),
                    expected_h: h,
                    expected_w: w,
                    got_h: gh,
                    got_w: gw,
                });
            }
            _ => {}
        }
        frames.push(frame);
    }
    VideoClip::new(frames, None)
}

/// Load paired frame and mask directories into a clip and its ground truth.
pub fn load_clip(frame_dir: &Path, mask_dir: &Path) -> Result<(VideoClip, MaskSequence)> {
    let clip = load_frames(frame_dir)?;
    let mask_files = list_images(mask_dir)?;
    if mask_files.len() != clip.len() {
        return Err(FdinError::CountMismatch {
            dir: format!("{} vs {}", frame_dir.display(), mask_dir.display()),
            frames: clip.len(),
            masks: mask_files.len(),
        });
    }
    let (h, w) = clip.hw();
    let mut masks = Array3::zeros((clip.len(), h, w));
    for (ti, path) in mask_files.iter().enumerate() {
        let img = decode_gray(path)?;
        let (iw, ih) = img.dimensions();
        if (ih as usize, iw as usize) != (h, w) {
            return Err(FdinError::ResolutionMismatch {
                context: format!("mask {}", path.display()),
                expected_h: h,
                expected_w: w,
                got_h: ih as usize,
                got_w: iw as usize,
            });
        }
        for (x, y, p) in img.enumerate_pixels() {
            masks[[ti, y as usize, x as usize]] = u8::from(p.0[0] > 127);
        }
    }
    Ok((clip, MaskSequence::new(masks)?))
}

/// Load a directory of mask images into a binary sequence (pixels above
/// 127 map to 1).
pub fn load_mask_dir(dir: &Path) -> Result<MaskSequence> {
    let files = list_images(dir)?;
    if files.is_empty() {
        return Err(FdinError::Decode {
            path: dir.to_path_buf(),
            reason: "no mask images found".into(),
        });
    }
    let first = decode_gray(&files[0])?;
    let (w, h) = first.dimensions();
    let mut masks = Array3::zeros((files.len(), h as usize, w as usize));
    for (ti, path) in files.iter().enumerate() {
        let img = decode_gray(path)?;
        if img.dimensions() != (w, h) {
            return Err(FdinError::ResolutionMismatch {
                context: format!("mask {}", path.display()),
                expected_h: h as usize,
                expected_w: w as usize,
                got_h: img.dimensions().1 as usize,
                got_w: img.dimensions().0 as usize,
            });
        }
        for (x, y, p) in img.enumerate_pixels() {
            masks[[ti, y as usize, x as usize]] = u8::from(p.0[0] > 127);
        }
    }
    MaskSequence::new(masks)
}

/// Write an 8-bit RGB frame `(3, H, W)`.
pub fn write_frame_png(path: &Path, pixels: &Array3<u8>) -> Result<()> {
    let (c, h, w) = pixels.dim();
    debug_assert_eq!(c, 3);
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            img.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([pixels[[0, y, x]], pixels[[1, y, x]], pixels[[2, y, x]]]),
            );
        }
    }
    img.save(path)
        .map_err(|e| FdinError::io(format!("write {}", path.display()), std::io::Error::other(e)))
}

/// Write a binary mask `(H, W)` of {0, 1} as an 8-bit 0/255 image.
pub fn write_mask_png(path: &Path, mask: &Array2<u8>) -> Result<()> {
    let (h, w) = mask.dim();
    let mut img = GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            img.put_pixel(
                x as u32,
                y as u32,
                image::Luma([if mask[[y, x]] > 0 { 255 } else { 0 }]),
            );
        }
    }
    img.save(path)
        .map_err(|e| FdinError::io(format!("write {}", path.display()), std::io::Error::other(e)))
}

/// Write a predicted mask sequence as `mask_%05d.png` files under `dir`.
pub fn save_mask_images(dir: &Path, masks: &MaskSequence) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| FdinError::io(format!("create {}", dir.display()), e))?;
    for ti in 0..masks.len() {
        let plane = masks.masks.index_axis(ndarray::Axis(0), ti).to_owned();
        write_mask_png(&dir.join(format!("mask_{ti:05}.png")), &plane)?;
    }
    Ok(())
}
