//! Mask refinement decoder: a top-down pathway that upsamples the deepest
//! features stage by stage, merges the matching encoder skip level, and
//! finishes with one more upsample to frame resolution and a single-channel
//! logit head.

use ndarray::Array3;
use rand::Rng;

use crate::error::{FdinError, Result};
use crate::nn::{
    concat_channels, join, split_channels_at, upsample2x, upsample2x_backward, Conv3d, ConvBnRelu,
    ConvBnReluCache, NamedTensor, Param, Phase, TensorMap, Tensors, Vol5,
};

/// Per-frame inpainting probability logits, `(B, T, 1, H, W)` at frame
/// resolution.
pub type LogitMask = Vol5;

pub struct Decoder {
    /// One merge per skip level, deepest first. Stage `i` maps
    /// `(carried + skip) -> skip` channels with a 3x3x3 conv.
    stages: Vec<ConvBnRelu>,
    head: Conv3d,
    channels: Vec<usize>,
}

pub struct DecoderCache {
    /// (carried channel count, merge-stage cache) per merge, deepest first.
    merges: Vec<(usize, ConvBnReluCache)>,
    head_in: Vol5,
}

impl Decoder {
    /// `channels` is the encoder pyramid channel plan, shallowest first.
    pub fn new<R: Rng>(channels: &[usize], rng: &mut R) -> Self {
        assert!(channels.len() >= 2, "decoder needs at least two pyramid levels");
        let mut stages = Vec::new();
        // deepest-first merges: carried channels start at the pyramid top
        let mut carried = *channels.last().unwrap();
        for &skip in channels[..channels.len() - 1].iter().rev() {
            stages.push(ConvBnRelu::new(carried + skip, skip, (3, 3, 3), 1, rng));
            carried = skip;
        }
        let head = Conv3d::new(channels[0], 1, (3, 3, 3), 1, rng);
        Decoder {
            stages,
            head,
            channels: channels.to_vec(),
        }
    }

    /// Decode from `deep` (the possibly FFCA-refined deepest level) using
    /// `pyramid[0..len-1]` as skips, shallowest first.
    pub fn forward(
        &mut self,
        pyramid: &[Vol5],
        deep: &Vol5,
        phase: Phase,
    ) -> Result<(LogitMask, DecoderCache)> {
        if pyramid.len() != self.channels.len() {
            return Err(FdinError::ShapeMismatch(format!(
                "decoder built for {} pyramid levels, got {}",
                self.channels.len(),
                pyramid.len()
            )));
        }
        if deep.dim() != pyramid[pyramid.len() - 1].dim() {
            return Err(FdinError::ShapeMismatch(
                "deep features do not match the deepest pyramid level".into(),
            ));
        }
        let mut x = deep.clone();
        let mut merges = Vec::with_capacity(self.stages.len());
        for (si, skip_level) in (0..pyramid.len() - 1).rev().enumerate() {
            let up = upsample2x(&x);
            let skip = &pyramid[skip_level];
            if up.dim().3 != skip.dim().3 || up.dim().4 != skip.dim().4 {
                return Err(FdinError::ShapeMismatch(format!(
                    "skip level {skip_level} is {}x{}, upsampled carry is {}x{}",
                    skip.dim().3,
                    skip.dim().4,
                    up.dim().3,
                    up.dim().4
                )));
            }
            let carried_c = up.dim().2;
            let cat = concat_channels(&up, skip);
            let (y, cache) = self.stages[si].forward(&cat, phase);
            merges.push((carried_c, cache));
            x = y;
        }
        let head_in = upsample2x(&x);
        let logits = self.head.forward(&head_in);
        Ok((
            logits,
            DecoderCache {
                merges,
                head_in,
            },
        ))
    }

    /// Returns the gradient for `deep` and one gradient per skip level
    /// (shallowest first, deepest entry zero).
    pub fn backward(&mut self, cache: &DecoderCache, gout: &Vol5) -> (Vol5, Vec<Vol5>) {
        let g = self.head.backward(&cache.head_in, gout);
        let mut g = upsample2x_backward(&g);
        let levels = self.channels.len();
        let mut dskips: Vec<Option<Vol5>> = vec![None; levels];
        for (si, skip_level) in (0..levels - 1).rev().enumerate().rev() {
            let (carried_c, merge_cache) = &cache.merges[si];
            let g_cat = self.stages[si].backward(merge_cache, &g);
            let (g_up, g_skip) = split_channels_at(&g_cat, *carried_c);
            dskips[skip_level] = Some(g_skip);
            g = upsample2x_backward(&g_up);
        }
        // the deepest level receives its gradient via the carried path, not
        // as a skip; its slot stays zero
        let deep_dims = g.raw_dim();
        let dskips = dskips
            .into_iter()
            .map(|d| d.unwrap_or_else(|| Vol5::zeros(deep_dims)))
            .collect::<Vec<_>>();
        (g, dskips)
    }
}

/// Binarize logits at a probability threshold with a `>=` tie rule:
/// mask = 1 where `sigmoid(logit) >= threshold`.
pub fn binarize(logits: &LogitMask, threshold: f32) -> Result<Vec<Array3<u8>>> {
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(FdinError::Config(format!(
            "threshold must be in (0, 1), got {threshold}"
        )));
    }
    let (b, t, c, h, w) = logits.dim();
    if c != 1 {
        return Err(FdinError::ShapeMismatch(format!(
            "logit mask must have one channel, got {c}"
        )));
    }
    // sigmoid(z) >= thr  <=>  z >= logit(thr)
    let cut = (threshold / (1.0 - threshold)).ln();
    let mut out = Vec::with_capacity(b);
    for bi in 0..b {
        let mut m = Array3::<u8>::zeros((t, h, w));
        for ti in 0..t {
            for y in 0..h {
                for x in 0..w {
                    if logits[[bi, ti, 0, y, x]] >= cut {
                        m[[ti, y, x]] = 1;
                    }
                }
            }
        }
        out.push(m);
    }
    Ok(out)
}

impl Tensors for Decoder {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit_params(&join(prefix, &format!("merge{i}")), f);
        }
        self.head.visit_params(&join(prefix, "head"), f);
    }

    fn collect_tensors(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        for (i, s) in self.stages.iter().enumerate() {
            s.collect_tensors(&join(prefix, &format!("merge{i}")), out);
        }
        self.head.collect_tensors(&join(prefix, "head"), out);
    }

    fn load_tensors(&mut self, prefix: &str, src: &mut TensorMap) -> Result<()> {
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.load_tensors(&join(prefix, &format!("merge{i}")), src)?;
        }
        self.head.load_tensors(&join(prefix, "head"), src)
    }
}
