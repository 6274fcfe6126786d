//! Fast Fourier convolution attention: split channels into a local branch
//! (3D convolution) and a global branch (spatial real FFT, pointwise
//! spectral refinement, inverse FFT), concatenate, and fuse residually
//! with the block input.

use ndarray::{s, Array2};
use num_complex::Complex;
use rand::Rng;

use crate::error::{FdinError, Result};
use crate::nn::{
    concat_channels, join, relu, relu_backward, split_channels_at, BatchNorm3d, BnCache, Conv3d,
    ConvBnRelu, ConvBnReluCache, NamedTensor, Param, Phase, TensorMap, Tensors, Vol5,
};
use crate::spectral::{irfft2, irfft2_adjoint, rfft2, rfft2_adjoint, spectrum_width};

/// Channel split sizes: `c_global = round(ratio_global * c)`, remainder
/// local. Errors when either side would be empty.
pub fn split_sizes(c: usize, ratio_global: f64) -> Result<(usize, usize)> {
    if !(0.0..1.0).contains(&ratio_global) || ratio_global <= 0.0 {
        return Err(FdinError::Config(format!(
            "ratio_global must be in (0, 1), got {ratio_global}"
        )));
    }
    let c_global = (ratio_global * c as f64).round() as usize;
    let c_local = c - c_global.min(c);
    if c_global == 0 || c_local == 0 {
        return Err(FdinError::Config(format!(
            "channel split {c} @ {ratio_global} leaves an empty branch \
             (local {c_local}, global {c_global})"
        )));
    }
    Ok((c_local, c_global))
}

#[derive(Debug, Clone)]
pub struct Ffca {
    c_local: usize,
    c_global: usize,
    pub lfu: ConvBnRelu,
    /// Pointwise conv over the stacked (re, im) spectral channels.
    pub gfu_conv: Conv3d,
    pub gfu_bn: BatchNorm3d,
    /// 1x1x1 fusion back to the input channel count.
    pub fuse: Conv3d,
}

pub struct GfuCache {
    stacked: Vol5,
    conv_out_bn: Option<BnCache>,
    activated: Vol5,
    hw: (usize, usize),
}

pub struct FfcaCache {
    z: Vol5,
    lfu: ConvBnReluCache,
    gfu: GfuCache,
    concat: Vol5,
}

impl Ffca {
    pub fn new<R: Rng>(channels: usize, ratio_global: f64, rng: &mut R) -> Result<Self> {
        let (c_local, c_global) = split_sizes(channels, ratio_global)?;
        Ok(Ffca {
            c_local,
            c_global,
            lfu: ConvBnRelu::new(c_local, c_local, (3, 3, 3), 1, rng),
            gfu_conv: Conv3d::new(2 * c_global, 2 * c_global, (1, 1, 1), 1, rng),
            gfu_bn: BatchNorm3d::new(2 * c_global),
            fuse: Conv3d::new(channels, channels, (1, 1, 1), 1, rng),
        })
    }

    pub fn split(&self) -> (usize, usize) {
        (self.c_local, self.c_global)
    }

    /// Global branch: rfft over (H, W), stack re/im as channels, pointwise
    /// conv + norm + ReLU, unstack, inverse rfft.
    pub fn gfu_forward(&mut self, z_global: &Vol5, phase: Phase) -> Result<(Vol5, GfuCache)> {
        let (b, t, c, h, w) = z_global.dim();
        debug_assert_eq!(c, self.c_global);
        let wf = spectrum_width(w);
        let mut stacked = Vol5::zeros((b, t, 2 * c, h, wf));
        for bi in 0..b {
            for ti in 0..t {
                for ci in 0..c {
                    let spec = rfft2(z_global.slice(s![bi, ti, ci, .., ..]));
                    stacked
                        .slice_mut(s![bi, ti, ci, .., ..])
                        .assign(&spec.mapv(|v| v.re));
                    stacked
                        .slice_mut(s![bi, ti, c + ci, .., ..])
                        .assign(&spec.mapv(|v| v.im));
                }
            }
        }
        let conv_out = self.gfu_conv.forward(&stacked);
        let (bn_out, bn_cache) = self.gfu_bn.forward(&conv_out, phase);
        let activated = relu(&bn_out);
        if !activated.iter().all(|v| v.is_finite()) {
            return Err(FdinError::NonFinite("gfu spectrum".into()));
        }
        let mut out = Vol5::zeros((b, t, c, h, w));
        for bi in 0..b {
            for ti in 0..t {
                for ci in 0..c {
                    let re = activated.slice(s![bi, ti, ci, .., ..]);
                    let im = activated.slice(s![bi, ti, c + ci, .., ..]);
                    let spec = Array2::from_shape_fn((h, wf), |(y, x)| {
                        Complex::new(re[[y, x]], im[[y, x]])
                    });
                    let plane = irfft2(spec.view(), (h, w))?;
                    out.slice_mut(s![bi, ti, ci, .., ..]).assign(&plane);
                }
            }
        }
        Ok((
            out,
            GfuCache {
                stacked,
                conv_out_bn: bn_cache,
                activated,
                hw: (h, w),
            },
        ))
    }

    pub fn gfu_backward(&mut self, cache: &GfuCache, gout: &Vol5) -> Vol5 {
        let (b, t, c, _, _) = gout.dim();
        let (h, w) = cache.hw;
        let wf = spectrum_width(w);
        // adjoint of the inverse transform, back into stacked channels
        let mut g_stacked = Vol5::zeros((b, t, 2 * c, h, wf));
        for bi in 0..b {
            for ti in 0..t {
                for ci in 0..c {
                    let spec = irfft2_adjoint(gout.slice(s![bi, ti, ci, .., ..]));
                    g_stacked
                        .slice_mut(s![bi, ti, ci, .., ..])
                        .assign(&spec.mapv(|v| v.re));
                    g_stacked
                        .slice_mut(s![bi, ti, c + ci, .., ..])
                        .assign(&spec.mapv(|v| v.im));
                }
            }
        }
        let g = relu_backward(&g_stacked, &cache.activated);
        let g = self.gfu_bn.backward(
            cache.conv_out_bn.as_ref().expect("training-mode cache"),
            &g,
        );
        let g = self.gfu_conv.backward(&cache.stacked, &g);
        // adjoint of the forward transform, back to the spatial domain
        let mut dz = Vol5::zeros((b, t, c, h, w));
        for bi in 0..b {
            for ti in 0..t {
                for ci in 0..c {
                    let re = g.slice(s![bi, ti, ci, .., ..]);
                    let im = g.slice(s![bi, ti, c + ci, .., ..]);
                    let spec = Array2::from_shape_fn((h, wf), |(y, x)| {
                        Complex::new(re[[y, x]], im[[y, x]])
                    });
                    let plane = rfft2_adjoint(spec.view(), (h, w)).expect("shapes agree");
                    dz.slice_mut(s![bi, ti, ci, .., ..]).assign(&plane);
                }
            }
        }
        dz
    }

    /// `out = z + fuse(concat(lfu(z_local), gfu(z_global)))`.
    pub fn forward(&mut self, z: &Vol5, phase: Phase) -> Result<(Vol5, FfcaCache)> {
        let c = z.dim().2;
        if c != self.c_local + self.c_global {
            return Err(FdinError::ShapeMismatch(format!(
                "ffca configured for {} channels, got {c}",
                self.c_local + self.c_global
            )));
        }
        let (z_local, z_global) = split_channels_at(z, self.c_local);
        let (l_out, lfu_cache) = self.lfu.forward(&z_local, phase);
        let (g_out, gfu_cache) = self.gfu_forward(&z_global, phase)?;
        let cat = concat_channels(&l_out, &g_out);
        let fused = self.fuse.forward(&cat);
        let out = z + &fused;
        Ok((
            out,
            FfcaCache {
                z: z.clone(),
                lfu: lfu_cache,
                gfu: gfu_cache,
                concat: cat,
            },
        ))
    }

    pub fn backward(&mut self, cache: &FfcaCache, gout: &Vol5) -> Vol5 {
        let g_cat = self.fuse.backward(&cache.concat, gout);
        let (g_l, g_g) = split_channels_at(&g_cat, self.c_local);
        let dz_l = self.lfu.backward(&cache.lfu, &g_l);
        let dz_g = self.gfu_backward(&cache.gfu, &g_g);
        let mut dz = concat_channels(&dz_l, &dz_g);
        dz += gout; // residual path
        debug_assert_eq!(dz.dim(), cache.z.dim());
        dz
    }
}

impl Tensors for Ffca {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.lfu.visit_params(&join(prefix, "lfu"), f);
        self.gfu_conv.visit_params(&join(prefix, "gfu_conv"), f);
        self.gfu_bn.visit_params(&join(prefix, "gfu_bn"), f);
        self.fuse.visit_params(&join(prefix, "fuse"), f);
    }

    fn collect_tensors(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.lfu.collect_tensors(&join(prefix, "lfu"), out);
        self.gfu_conv.collect_tensors(&join(prefix, "gfu_conv"), out);
        self.gfu_bn.collect_tensors(&join(prefix, "gfu_bn"), out);
        self.fuse.collect_tensors(&join(prefix, "fuse"), out);
    }

    fn load_tensors(&mut self, prefix: &str, src: &mut TensorMap) -> Result<()> {
        self.lfu.load_tensors(&join(prefix, "lfu"), src)?;
        self.gfu_conv.load_tensors(&join(prefix, "gfu_conv"), src)?;
        self.gfu_bn.load_tensors(&join(prefix, "gfu_bn"), src)?;
        self.fuse.load_tensors(&join(prefix, "fuse"), src)
    }
}

#[allow(unused_imports)]
use ndarray::Array5; // used by tests
