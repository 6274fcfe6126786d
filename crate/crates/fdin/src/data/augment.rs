//! Training-time augmentation: one random crop offset and one horizontal
//! flip decision per window, applied identically to every frame and mask.

use ndarray::s;
use rand::Rng;

use super::ClipWindow;
use crate::error::{FdinError, Result};

/// Crop to `crop_hw` at a random offset, then flip horizontally with
/// probability `flip_prob`. The draw order is fixed (offset y, offset x,
/// flip), so results are deterministic for a given generator state.
pub fn augment<R: Rng>(
    window: &ClipWindow,
    rng: &mut R,
    crop_hw: (usize, usize),
    flip_prob: f64,
) -> Result<ClipWindow> {
    let (h, w) = window.hw();
    let (ch, cw) = crop_hw;
    if ch > h || cw > w || ch == 0 || cw == 0 {
        return Err(FdinError::Config(format!(
            "crop {ch}x{cw} does not fit frames of {h}x{w}"
        )));
    }
    if !(0.0..=1.0).contains(&flip_prob) {
        return Err(FdinError::Config(format!(
            "flip probability must be in [0, 1], got {flip_prob}"
        )));
    }
    let oy = rng.gen_range(0..=h - ch);
    let ox = rng.gen_range(0..=w - cw);
    let flip = rng.gen_bool(flip_prob);
    let mut frames = window
        .frames
        .slice(s![.., .., oy..oy + ch, ox..ox + cw])
        .to_owned();
    let mut masks = window
        .masks
        .slice(s![.., oy..oy + ch, ox..ox + cw])
        .to_owned();
    if flip {
        frames = frames.slice(s![.., .., .., ..;-1]).to_owned();
        masks = masks.slice(s![.., .., ..;-1]).to_owned();
    }
    Ok(ClipWindow {
        frames: frames.as_standard_layout().to_owned(),
        masks: masks.as_standard_layout().to_owned(),
        source_clip_id: window.source_clip_id.clone(),
        start_index: window.start_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array3, Array4};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_window(t: usize, h: usize, w: usize) -> ClipWindow {
        ClipWindow {
            frames: Array4::from_shape_fn((t, 3, h, w), |(ti, c, y, x)| {
                (ti * 1000 + c * 100 + y * 10 + x) as f32
            }),
            masks: Array3::from_shape_fn((t, h, w), |(ti, y, x)| ((ti + y + x) % 2) as u8),
            source_clip_id: "c".into(),
            start_index: 0,
        }
    }

    #[test]
    fn crop_shapes_match_request() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let win = toy_window(8, 64, 64);
        let out = augment(&win, &mut rng, (32, 32), 0.0).unwrap();
        assert_eq!(out.frames.dim(), (8, 3, 32, 32));
        assert_eq!(out.masks.dim(), (8, 32, 32));
    }

    #[test]
    fn flip_is_an_involution() {
        let win = toy_window(4, 8, 8);
        // force the flip decision twice with identical crop
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let once = augment(&win, &mut rng, (8, 8), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let twice = augment(&once, &mut rng, (8, 8), 1.0).unwrap();
        assert_eq!(win.frames, twice.frames);
        assert_eq!(win.masks, twice.masks);
    }

    #[test]
    fn flipped_mask_mirrors_pixelwise() {
        let win = toy_window(4, 6, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let flipped = augment(&win, &mut rng, (6, 10), 1.0).unwrap();
        let (_, _, w) = win.masks.dim();
        for ((t, y, x), &v) in flipped.masks.indexed_iter() {
            assert_eq!(v, win.masks[[t, y, w - 1 - x]]);
        }
        for ((t, c, y, x), &v) in flipped.frames.indexed_iter() {
            assert_eq!(v, win.frames[[t, c, y, w - 1 - x]]);
        }
    }

    #[test]
    fn one_transform_per_window() {
        // all frames in the window see the same crop: pixel values encode
        // coordinates, so a shared offset keeps per-frame differences constant
        let win = toy_window(5, 16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = augment(&win, &mut rng, (8, 8), 0.5).unwrap();
        for ti in 1..5 {
            let base = &out.frames.index_axis(ndarray::Axis(0), 0);
            let cur = &out.frames.index_axis(ndarray::Axis(0), ti);
            for (a, b) in base.iter().zip(cur.iter()) {
                assert_eq!(b - a, (ti * 1000) as f32);
            }
        }
    }

    #[test]
    fn oversized_crop_is_an_error() {
        let win = toy_window(2, 8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(augment(&win, &mut rng, (9, 8), 0.0).is_err());
    }
}
