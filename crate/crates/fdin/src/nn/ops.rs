//! Parameter-free tensor ops: ReLU, nearest-neighbor spatial upsampling,
//! and channel concatenation/splitting.

use ndarray::{concatenate, Axis};

use super::Vol5;

pub fn relu(x: &Vol5) -> Vol5 {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through ReLU given the forward *output* (the mask `y > 0`
/// equals the mask of the pre-activation up to measure zero).
pub fn relu_backward(gout: &Vol5, y: &Vol5) -> Vol5 {
    let mut g = gout.clone();
    g.zip_mut_with(y, |gv, &yv| {
        if yv <= 0.0 {
            *gv = 0.0;
        }
    });
    g
}

/// Nearest-neighbor x2 spatial upsampling.
pub fn upsample2x(x: &Vol5) -> Vol5 {
    let (b, t, c, h, w) = x.dim();
    Vol5::from_shape_fn((b, t, c, 2 * h, 2 * w), |(bi, ti, ci, y, xx)| {
        x[[bi, ti, ci, y / 2, xx / 2]]
    })
}

/// Gradient of [`upsample2x`]: sum each 2x2 block.
pub fn upsample2x_backward(gout: &Vol5) -> Vol5 {
    let (b, t, c, h2, w2) = gout.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Vol5::zeros((b, t, c, h, w));
    for bi in 0..b {
        for ti in 0..t {
            for ci in 0..c {
                for y in 0..h2 {
                    for xx in 0..w2 {
                        dx[[bi, ti, ci, y / 2, xx / 2]] += gout[[bi, ti, ci, y, xx]];
                    }
                }
            }
        }
    }
    dx
}

/// Concatenate along the channel axis.
pub fn concat_channels(a: &Vol5, b: &Vol5) -> Vol5 {
    concatenate(Axis(2), &[a.view(), b.view()])
        .expect("channel concat shapes agree")
        .as_standard_layout()
        .to_owned()
}

/// Split along the channel axis at `c_first`, returning owned halves.
pub fn split_channels_at(x: &Vol5, c_first: usize) -> (Vol5, Vol5) {
    let c = x.dim().2;
    assert!(c_first > 0 && c_first < c, "split must leave both sides nonempty");
    let a = x
        .slice(ndarray::s![.., .., 0..c_first, .., ..])
        .as_standard_layout()
        .to_owned();
    let b = x
        .slice(ndarray::s![.., .., c_first.., .., ..])
        .as_standard_layout()
        .to_owned();
    (a, b)
}
